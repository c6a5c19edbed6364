//! Brute-force reference computations used to cross-check the algorithms.

use std::time::Instant;

use num_rational::Ratio;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::adaptive::{run_adaptive, Construction, NestedPlan, PlanOptions};
use crate::bounds::adaptive_expected_upper;
use crate::error::{Error, Result};
use crate::nonadaptive::{build_cca_matrix, run_nonadaptive, TestMatrix};
use crate::numeric::compensated_sum;
use crate::priors::{PopulationVector, PriorVector};

pub const MAX_LEMMA2_N: u32 = 25;
pub const MAX_STOPPING_N: usize = 20;
pub const MAX_PLAN_N: usize = 12;
pub const MAX_MATRIX_N: usize = 15;

fn guard(what: &'static str, got: usize, limit: usize) -> Result<()> {
    if got > limit {
        return Err(Error::SizeGuard { what, got, limit });
    }
    Ok(())
}

/// If `prod (1 - p_i) >= 1/2` then `sum p_i <= 1`. Vacuously true otherwise.
pub fn check_lemma1(p: &[f64]) -> bool {
    let prod: f64 = p.iter().map(|x| 1.0 - x).product();
    prod < 0.5 || p.iter().sum::<f64>() <= 1.0
}

/// Both sides of `sum_r (-1)^{r-1} C(n, r) / r = sum_r 1 / r`, exactly.
pub fn check_lemma2(n: u32) -> Result<(Ratio<i128>, Ratio<i128>)> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    guard("lemma n", n as usize, MAX_LEMMA2_N as usize)?;
    let mut lhs = Ratio::<i128>::zero();
    let mut rhs = Ratio::<i128>::zero();
    let mut binom: i128 = 1;
    for r in 1..=n as i128 {
        binom = binom * (n as i128 - r + 1) / r;
        let term = Ratio::new(binom, r);
        if r % 2 == 1 {
            lhs += term;
        } else {
            lhs -= term;
        }
        rhs += Ratio::new(1, r);
    }
    Ok((lhs, rhs))
}

/// Expected number of draws from `p_hat` until every index has appeared,
/// by inclusion-exclusion over all nonempty subsets.
pub fn exact_stopping_time(p_hat: &[f64]) -> Result<f64> {
    let n = p_hat.len();
    if n == 0 {
        return Err(Error::Domain("empty distribution".into()));
    }
    guard("stopping-time n", n, MAX_STOPPING_N)?;
    if let Some(i) = p_hat.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!(
            "entry {i} is {}, stopping time is infinite",
            p_hat[i]
        )));
    }
    let mut sums = vec![0.0f64; 1 << n];
    let terms = (1..1usize << n).map(|mask| {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + p_hat[low];
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        sign / sums[mask]
    });
    Ok(compensated_sum(terms.collect::<Vec<_>>()))
}

/// Mean and standard error of simulated coupon-collection times.
pub fn monte_carlo_stopping_time(p_hat: &[f64], runs: usize, seed: u64) -> Result<(f64, f64)> {
    let dist = WeightedAliasIndex::new(p_hat.to_vec())
        .map_err(|e| Error::Domain(format!("cannot sample from p_hat: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p_hat.len();
    let times: Vec<f64> = (0..runs)
        .map(|_| {
            let mut seen = vec![false; n];
            let (mut left, mut t) = (n, 0u64);
            while left > 0 {
                let i = dist.sample(&mut rng);
                t += 1;
                if !std::mem::replace(&mut seen[i], true) {
                    left -= 1;
                }
            }
            t as f64
        })
        .collect();
    let mean = times.iter().sum::<f64>() / runs as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0).max(1.0);
    Ok((mean, (var / runs as f64).sqrt()))
}

/// `Pr[truth = mask]` under independent priors.
fn mask_probability(p: &PriorVector, mask: u64) -> f64 {
    p.probs()
        .iter()
        .enumerate()
        .map(|(i, &x)| if mask >> i & 1 == 1 { x } else { 1.0 - x })
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactExpectation {
    pub value: f64,
    pub terms: usize,
}

/// Exact `E[T]` of `plan` by enumerating all `2^N` truths (no shortcut).
pub fn exact_expected_tests(plan: &NestedPlan, p: &PriorVector) -> Result<ExactExpectation> {
    let n = p.len();
    guard("plan n", n, MAX_PLAN_N)?;
    if plan.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: plan.n(),
        });
    }
    let mut rec = vec![false; n];
    let weighted: Vec<f64> = (0..1u64 << n)
        .map(|mask| {
            let truth = PopulationVector::from_mask(n, mask);
            let tests = plan.execute(truth.bits(), &mut rec, None);
            mask_probability(p, mask) * tests as f64
        })
        .collect();
    Ok(ExactExpectation {
        value: compensated_sum(weighted),
        terms: 1 << n,
    })
}

/// True when `plan` recovers every truth exactly. Truths that contradict an
/// item with prior 0 or 1 have probability zero and are skipped; for priors
/// strictly inside (0, 1) all `2^N` truths are checked.
pub fn exhaustive_plan_check(plan: &NestedPlan) -> Result<bool> {
    let n = plan.n();
    guard("plan n", n, MAX_PLAN_N)?;
    let must_be_set: u64 = plan.auto_defective().iter().map(|&i| 1u64 << i).sum();
    let must_be_clear: u64 = plan.auto_clear().iter().map(|&i| 1u64 << i).sum();
    for mask in 0..1u64 << n {
        if mask & must_be_set != must_be_set || mask & must_be_clear != 0 {
            continue;
        }
        let truth = PopulationVector::from_mask(n, mask);
        if !run_adaptive(plan, &truth, None)?.recovered.matches(&truth) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixCheck {
    /// Recovered dominates truth outside the zero-assigned set, for every truth.
    pub one_sided: bool,
    /// `sum over truths of Pr[truth] * [recovered != truth]`.
    pub error_probability: f64,
}

pub fn exhaustive_matrix_check(m: &TestMatrix, p: &PriorVector, zero_assigned: &[usize]) -> Result<MatrixCheck> {
    let n = p.len();
    guard("matrix n", n, MAX_MATRIX_N)?;
    if m.n != n {
        return Err(Error::Dimension { expected: n, got: m.n });
    }
    let mut zero = vec![false; n];
    for &i in zero_assigned {
        zero[i] = true;
    }
    let mut one_sided = true;
    let mut errors = Vec::new();
    for mask in 0..1u64 << n {
        let truth = PopulationVector::from_mask(n, mask);
        let (_, rec) = run_nonadaptive(m, &truth, zero_assigned)?;
        one_sided &= (0..n).all(|i| zero[i] || rec.0[i] || !truth.0[i]);
        if !rec.matches(&truth) {
            errors.push(mask_probability(p, mask));
        }
    }
    Ok(MatrixCheck {
        one_sided,
        error_probability: compensated_sum(errors),
    })
}

/// Empirical error frequency of `m` over `trials` seeded truths.
pub fn monte_carlo_matrix_error(
    m: &TestMatrix,
    p: &PriorVector,
    zero_assigned: &[usize],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for _ in 0..trials {
        let truth = PopulationVector(p.probs().iter().map(|&x| rng.random_bool(x)).collect());
        if !run_nonadaptive(m, &truth, zero_assigned)?.1.matches(&truth) {
            failures += 1;
        }
    }
    Ok(failures as f64 / trials as f64)
}

/// Result of one named check in [`run_all_checks`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed_ms: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Harmonic number `H_n`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|r| 1.0 / r as f64).sum()
}

/// The fixed battery run by the command-line `oracle` command. With
/// `inject_fault`, one recovered bit is flipped in the exhaustive decode check
/// so the battery must fail.
pub fn run_all_checks(seed: u64, inject_fault: bool) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_prior = |n: usize, rng: &mut ChaCha8Rng| {
        PriorVector::new((0..n).map(|_| rng.random_range(0.01..0.5)).collect()).unwrap()
    };
    let lemma1_inputs: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let k = rng.random_range(1..=8);
            (0..k).map(|_| rng.random_range(0.0..0.3)).collect()
        })
        .collect();
    let decode_priors: Vec<PriorVector> = (0..10).map(|i| random_prior(3 + i % 8, &mut rng)).collect();
    let expectation_priors: Vec<PriorVector> = (0..10).map(|i| random_prior(2 + i % 9, &mut rng)).collect();
    let cca_prior = PriorVector::new(vec![0.1; 10]).unwrap();
    let stopping_inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();

    vec![
        timed("lemma1", || {
            let bad = lemma1_inputs.iter().filter(|t| !check_lemma1(t)).count();
            Ok((bad == 0, format!("{} tuples, {bad} violations", lemma1_inputs.len())))
        }),
        timed("lemma2", || {
            for n in 1..=20 {
                let (l, r) = check_lemma2(n)?;
                if l != r {
                    return Ok((false, format!("n = {n}: {l} != {r}")));
                }
            }
            Ok((true, "n = 1..20 exact".into()))
        }),
        timed("stopping_time_uniform", || {
            let worst = (1..=12)
                .map(|n| {
                    let e = exact_stopping_time(&vec![1.0 / n as f64; n]).unwrap();
                    (e - n as f64 * harmonic(n)).abs()
                })
                .fold(0.0, f64::max);
            Ok((worst <= 1e-9, format!("max deviation {worst:.3e}")))
        }),
        timed("stopping_time_monte_carlo", || {
            for (k, ph) in stopping_inputs.iter().enumerate() {
                let exact = exact_stopping_time(ph)?;
                let (mean, se) = monte_carlo_stopping_time(ph, 10_000, seed ^ k as u64)?;
                if (mean - exact).abs() > 3.0 * se {
                    return Ok((false, format!("input {k}: exact {exact:.4}, simulated {mean:.4}")));
                }
            }
            Ok((true, format!("{} inputs within 3 se", stopping_inputs.len())))
        }),
        timed("adaptive_exhaustive_decode", || {
            for (k, p) in decode_priors.iter().enumerate() {
                for c in [Construction::MaxEntropy, Construction::ShannonFano, Construction::Huffman] {
                    let plan = NestedPlan::build(p, c, PlanOptions::default());
                    let mut ok = exhaustive_plan_check(&plan)?;
                    if inject_fault && k == 0 {
                        let truth = PopulationVector::from_mask(p.len(), 1);
                        let mut rec = run_adaptive(&plan, &truth, None)?.recovered;
                        rec.0[0] = !rec.0[0];
                        ok &= rec.matches(&truth);
                    }
                    if !ok {
                        return Ok((false, format!("prior {k}, {}: recovery mismatch", c.name())));
                    }
                }
            }
            Ok((true, format!("{} priors x 3 constructions", decode_priors.len())))
        }),
        timed("nonadaptive_exhaustive_decode", || {
            let m = build_cca_matrix(&cca_prior, 5, 5, seed)?;
            let check = exhaustive_matrix_check(&m, &cca_prior, &[])?;
            Ok((
                check.one_sided,
                format!("exact error probability {:.6}", check.error_probability),
            ))
        }),
        timed("expected_tests_vs_bound", || {
            for (k, p) in expectation_priors.iter().enumerate() {
                for c in [Construction::MaxEntropy, Construction::Huffman] {
                    let plan = NestedPlan::build(p, c, PlanOptions::default());
                    let e = exact_expected_tests(&plan, p)?.value;
                    let bound = adaptive_expected_upper(p);
                    if e > bound {
                        return Ok((false, format!("prior {k}, {}: {e:.4} > {bound:.4}", c.name())));
                    }
                }
            }
            Ok((true, format!("{} priors x 2 constructions", expectation_priors.len())))
        }),
    ]
}
