#![no_main]

use libfuzzer_sys::fuzz_target;

// First byte picks the population size.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(s) = std::str::from_utf8(rest) {
        let _ = grouptest::formats::parse_matrix_csv(s, usize::from(n));
    }
});
