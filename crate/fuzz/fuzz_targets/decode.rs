#![no_main]

use grouptest::formats::{parse_matrix_json, parse_outcomes_csv};
use grouptest::nonadaptive::{decode_blockwise, decode_comp};
use libfuzzer_sys::fuzz_target;

// Input: matrix JSON, a NUL byte, outcomes CSV, a NUL byte, then zero-assigned
// item ids as bytes. Decoders must reject mismatches rather than panic, and
// agree whenever both accept.
fuzz_target!(|data: &[u8]| {
    let mut parts = data.splitn(3, |&b| b == 0);
    let (Some(m), Some(y)) = (parts.next(), parts.next()) else { return };
    let zero: Vec<usize> = parts.next().unwrap_or_default().iter().map(|&b| usize::from(b)).collect();
    let (Ok(m), Ok(y)) = (std::str::from_utf8(m), std::str::from_utf8(y)) else { return };
    let (Ok((m, _)), Ok(y)) = (parse_matrix_json(m), parse_outcomes_csv(y)) else { return };
    let whole = decode_comp(&m, &y, &zero);
    let blocks = decode_blockwise(&m, &y, &zero);
    if let (Ok(a), Ok(b)) = (&whole, &blocks) {
        if m.check_direct_sum().is_ok() {
            assert_eq!(a, b);
        }
    }
});
