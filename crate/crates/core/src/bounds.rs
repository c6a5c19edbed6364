//! Closed-form test-count and error-probability bounds.
//!
//! Entropies are in bits; the coupon-collector bound uses the natural log.

use std::f64::consts::E;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonadaptive::cca_test_count;
use crate::partition::{is_skewed, measure_factor};
use crate::priors::PriorVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    /// Entropy lower bound.
    T1,
    /// Adaptive expectation.
    T2,
    /// Adaptive concentration.
    T3,
    /// Coupon-collector design.
    T4,
    /// Block design.
    T5,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub test_bound: f64,
    /// Clamped to `[0, 1]`; the raw value is recorded in `notes` when clamped.
    pub error_bound: f64,
    pub applicable: bool,
    pub notes: String,
}

/// Smallest slack for which the concentration bound is proven.
pub const MIN_CONCENTRATION_DELTA: f64 = 2.0 * E - 1.0;

fn clamp_error(raw: f64, notes: &mut Vec<String>) -> f64 {
    if raw.is_nan() {
        notes.push("error bound undefined".into());
        return 1.0;
    }
    let clamped = raw.clamp(0.0, 1.0);
    if clamped != raw {
        notes.push(format!("raw error bound {raw} clamped to {clamped}"));
    }
    clamped
}

fn report(theorem: Theorem, test_bound: f64, raw_error: f64, mut notes: Vec<String>) -> BoundReport {
    let error_bound = clamp_error(raw_error, &mut notes);
    BoundReport {
        theorem,
        test_bound,
        error_bound,
        applicable: !notes.iter().any(|n| n.starts_with("not applicable")),
        notes: notes.join("; "),
    }
}

/// `(1 - pe) H`.
pub fn lower_bound(p: &PriorVector, pe: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&pe) {
        return Err(Error::Domain(format!("pe must lie in [0, 1), got {pe}")));
    }
    Ok((1.0 - pe) * p.entropy())
}

/// `2H + 2 mu`.
pub fn adaptive_expected_upper(p: &PriorVector) -> f64 {
    2.0 * p.entropy() + 2.0 * p.mu()
}

/// `4(1 + delta)(gamma + 3) H` tests with error `(N / mu)^{-(1 + delta) mu} + eps / 2`.
pub fn adaptive_concentration(p: &PriorVector, eps: f64, delta: f64) -> Result<BoundReport> {
    let gamma = measure_factor(p.len(), eps)? as f64;
    let (n, mu, h) = (p.len() as f64, p.mu(), p.entropy());
    let tail = if mu > 0.0 {
        (-(1.0 + delta) * mu * (n / mu).ln()).exp()
    } else {
        0.0
    };
    let mut notes = Vec::new();
    if delta < MIN_CONCENTRATION_DELTA {
        notes.push(format!("not applicable: delta {delta} < 2e - 1"));
    }
    if is_skewed(p, eps)? {
        notes.push("not applicable: prior is skewed".into());
    }
    Ok(report(
        Theorem::T3,
        4.0 * (1.0 + delta) * (gamma + 3.0) * h,
        tail + eps / 2.0,
        notes,
    ))
}

/// `4e(1 + delta) mu ln N` tests with error `N^{-delta}`.
pub fn cca_upper(p: &PriorVector, delta: f64) -> BoundReport {
    let n = p.len() as f64;
    let mut notes = Vec::new();
    if p.max_prob() >= 0.5 {
        notes.push("not applicable: some p_i >= 1/2".into());
    }
    let mut r = report(
        Theorem::T4,
        4.0 * E * (1.0 + delta) * p.mu() * n.ln(),
        n.powf(-delta),
        notes,
    );
    let rows = cca_test_count(n, p.mu(), delta);
    r.notes = if r.notes.is_empty() {
        format!("rows {rows}")
    } else {
        format!("rows {rows}; {}", r.notes)
    };
    r
}

/// `(12e + 2)(1 + delta) H` tests with error `min(1, 2 gamma^{1 - delta} + eps / 2)`.
pub fn block_upper(p: &PriorVector, eps: f64, delta: f64) -> Result<BoundReport> {
    let gamma = measure_factor(p.len(), eps)? as f64;
    let mut notes = Vec::new();
    if p.max_prob() >= 0.5 {
        notes.push("not applicable: some p_i >= 1/2".into());
    }
    if is_skewed(p, eps)? {
        notes.push("not applicable: prior is skewed".into());
    }
    Ok(report(
        Theorem::T5,
        (12.0 * E + 2.0) * (1.0 + delta) * p.entropy(),
        2.0 * gamma.powf(1.0 - delta) + eps / 2.0,
        notes,
    ))
}

/// All five reports. The lower bound's error field carries `pe`.
pub fn all_bounds(p: &PriorVector, eps: f64, delta: f64, pe: f64) -> Result<Vec<BoundReport>> {
    Ok(vec![
        report(Theorem::T1, lower_bound(p, pe)?, pe, Vec::new()),
        report(Theorem::T2, adaptive_expected_upper(p), 0.0, Vec::new()),
        adaptive_concentration(p, eps, delta)?,
        cca_upper(p, delta),
        block_upper(p, eps, delta)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{generate_prior, PriorFamily};
    use approx::assert_abs_diff_eq;

    fn prior(v: &[f64]) -> PriorVector {
        PriorVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn lower_bound_examples() {
        let p = prior(&[0.5; 10]);
        assert_abs_diff_eq!(lower_bound(&p, 0.1).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lower_bound(&p, 0.0).unwrap(), 10.0, epsilon = 1e-12);
        assert!(lower_bound(&p, 1.0).is_err());
    }

    #[test]
    fn expectation_examples() {
        assert_abs_diff_eq!(adaptive_expected_upper(&prior(&[0.5, 0.5])), 6.0, epsilon = 1e-12);
        assert_eq!(adaptive_expected_upper(&prior(&[0.0; 3])), 0.0);
        let u = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        assert_abs_diff_eq!(adaptive_expected_upper(&u), 2.0 * 67.221545 + 16.0, epsilon = 1e-4);
    }

    #[test]
    fn concentration_arithmetic() {
        // Gamma = 5 at N = 1000, eps = 0.01.
        let u = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        let r = adaptive_concentration(&u, 0.01, MIN_CONCENTRATION_DELTA).unwrap();
        let h = u.entropy();
        assert_abs_diff_eq!(r.test_bound, 4.0 * (2.0 * E) * 8.0 * h, epsilon = 1e-9);
        assert_abs_diff_eq!(r.test_bound / h * 100.0, 17397.0, epsilon = 0.1);
        assert!(r.applicable);
        let low = adaptive_concentration(&u, 0.01, 1.0).unwrap();
        assert!(!low.applicable);
        let skewed = prior(&[0.3, 0.3]);
        assert!(!adaptive_concentration(&skewed, 0.01, 5.0).unwrap().applicable);
    }

    #[test]
    fn cca_bound_examples() {
        let u = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        let r = cca_upper(&u, 1.0);
        let direct = 4.0 * E * 2.0 * 8.0 * 1000f64.ln();
        assert_abs_diff_eq!(r.test_bound, direct, epsilon = 1e-9);
        assert_abs_diff_eq!(r.test_bound, 1201.742, epsilon = 1e-3);
        assert_abs_diff_eq!(r.error_bound, 1e-3, epsilon = 1e-15);
        assert!(r.applicable);
        assert_eq!(cca_upper(&prior(&[0.0; 5]), 1.0).test_bound, 0.0);
        assert!(!cca_upper(&prior(&[0.6, 0.1]), 1.0).applicable);
    }

    #[test]
    fn block_bound_examples() {
        let u = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        let r = block_upper(&u, 0.01, 2.0).unwrap();
        assert_abs_diff_eq!(r.test_bound / u.entropy() * 50.0, 5192.91, epsilon = 0.01);
        let vac = block_upper(&u, 0.01, 1.0).unwrap();
        assert_eq!(vac.error_bound, 1.0);
        assert!(vac.notes.contains("clamped"));
        assert!(!block_upper(&prior(&[0.3, 0.3]), 0.01, 2.0).unwrap().applicable);
    }

    #[test]
    fn uniform_entropy_exceeds_log_sum_bound() {
        for mu in [2.0, 8.0, 32.0, 100.0] {
            let p = generate_prior(PriorFamily::Uniform, 1000, mu).unwrap();
            assert!(p.entropy() > mu / 2.0 * (1000.0 / mu).log2());
        }
    }

    #[test]
    fn five_reports() {
        let u = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        let all = all_bounds(&u, 0.01, 1.0, 0.0).unwrap();
        let tags: Vec<Theorem> = all.iter().map(|r| r.theorem).collect();
        assert_eq!(tags, vec![Theorem::T1, Theorem::T2, Theorem::T3, Theorem::T4, Theorem::T5]);
        assert_abs_diff_eq!(all[0].test_bound, u.entropy(), epsilon = 1e-12);
    }
}
