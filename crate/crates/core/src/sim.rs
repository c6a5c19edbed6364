//! Seeded Monte Carlo campaigns.
//!
//! Seed splitting: the trial seed is `derive(derive(base_seed, point), trial)`,
//! where `derive(parent, stream)` mixes both through the SplitMix64 finalizer.
//! Inside a trial, stream 0 of the trial seed draws the truth and stream 1
//! seeds any random matrix. Every algorithm in a trial sees the same truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::adaptive::{run_adaptive, Construction, NestedPlan, PlanOptions, PrepartitionedPlan};
use crate::error::{Error, Result};
use crate::nonadaptive::{
    block_test_counts, build_block_matrix, build_block_matrix_with, build_cca_matrix, num_tests_cca,
    optimal_g, run_nonadaptive,
};
use crate::numeric::derive_seed;
use crate::partition::build_partition;
use crate::priors::{generate_prior, PopulationVector, PriorFamily, PriorVector};

/// The documented seed-splitting function.
pub fn split_seed(parent: u64, stream: u64) -> u64 {
    derive_seed(parent, stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    AdaptiveMe,
    AdaptiveSf,
    AdaptiveHuffman,
    PrepartitionedMe,
    PrepartitionedSf,
    PrepartitionedHuffman,
    Cca,
    Block,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::AdaptiveMe,
        Algorithm::AdaptiveSf,
        Algorithm::AdaptiveHuffman,
        Algorithm::PrepartitionedMe,
        Algorithm::PrepartitionedSf,
        Algorithm::PrepartitionedHuffman,
        Algorithm::Cca,
        Algorithm::Block,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::AdaptiveMe => "adaptive-me",
            Algorithm::AdaptiveSf => "adaptive-sf",
            Algorithm::AdaptiveHuffman => "adaptive-huffman",
            Algorithm::PrepartitionedMe => "prepartitioned-me",
            Algorithm::PrepartitionedSf => "prepartitioned-sf",
            Algorithm::PrepartitionedHuffman => "prepartitioned-huffman",
            Algorithm::Cca => "cca",
            Algorithm::Block => "block",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or_else(|| Error::Unsupported(format!("unknown algorithm `{tag}`")))
    }

    pub fn is_adaptive(&self) -> bool {
        self.construction().is_some()
    }

    /// Tree construction for adaptive tags.
    pub fn construction(&self) -> Option<Construction> {
        match self {
            Algorithm::AdaptiveMe | Algorithm::PrepartitionedMe => Some(Construction::MaxEntropy),
            Algorithm::AdaptiveSf | Algorithm::PrepartitionedSf => Some(Construction::ShannonFano),
            Algorithm::AdaptiveHuffman | Algorithm::PrepartitionedHuffman => Some(Construction::Huffman),
            Algorithm::Cca | Algorithm::Block => None,
        }
    }
}

/// Independent Bernoulli draws, one per item.
pub fn draw_truth(p: &PriorVector, seed: u64) -> PopulationVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PopulationVector(p.probs().iter().map(|&x| rng.random_bool(x)).collect())
}

fn default_eps() -> f64 {
    0.01
}

fn default_delta() -> f64 {
    1.0
}

/// A sweep over target `mu` at fixed family and `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub n: usize,
    /// Target `mu` per sweep point.
    pub sweep: Vec<f64>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Enable the `mu < eps` shortcut for plain adaptive runs.
    #[serde(default)]
    pub shortcut: bool,
}

impl Campaign {
    pub fn validate(&self) -> Result<PriorFamily> {
        let bad = |m: String| Err(Error::InvalidCampaign(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep must contain at least one point".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if !(self.eps.is_finite() && self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let family = PriorFamily::from_name(&self.family, self.rho)?;
        for &mu in &self.sweep {
            generate_prior(family, self.n, mu)?;
        }
        Ok(family)
    }

    /// Seed of trial `trial` at sweep point `point`.
    pub fn trial_seed(&self, point: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.base_seed, point as u64), trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub n: usize,
    pub mu: f64,
    pub entropy: f64,
    pub tests: usize,
    pub success: bool,
    #[serde(skip)]
    pub point: usize,
}

/// Per-point artifacts that do not depend on the trial.
enum Prepared {
    Plan(NestedPlan),
    Prepartitioned(PrepartitionedPlan),
    Cca { t: usize, g: usize },
    Block,
}

fn prepare(p: &PriorVector, alg: Algorithm, c: &Campaign) -> Result<Prepared> {
    Ok(match alg {
        Algorithm::AdaptiveMe | Algorithm::AdaptiveSf | Algorithm::AdaptiveHuffman => Prepared::Plan(
            NestedPlan::build(p, alg.construction().unwrap(), PlanOptions::default()),
        ),
        Algorithm::PrepartitionedMe | Algorithm::PrepartitionedSf | Algorithm::PrepartitionedHuffman => {
            Prepared::Prepartitioned(PrepartitionedPlan::build(p, c.eps, alg.construction().unwrap())?)
        }
        Algorithm::Cca => Prepared::Cca {
            t: num_tests_cca(p, c.delta),
            g: optimal_g(p)?,
        },
        Algorithm::Block => Prepared::Block,
    })
}

fn run_one(
    p: &PriorVector,
    prepared: &Prepared,
    truth: &PopulationVector,
    matrix_seed: u64,
    c: &Campaign,
) -> Result<(usize, bool)> {
    match prepared {
        Prepared::Plan(plan) => {
            let r = run_adaptive(plan, truth, c.shortcut.then_some(c.eps))?;
            Ok((r.tests_used, r.recovered.matches(truth)))
        }
        Prepared::Prepartitioned(plan) => {
            let r = plan.run(truth)?;
            Ok((r.tests_used, r.recovered.matches(truth)))
        }
        Prepared::Cca { t, g } => {
            let m = build_cca_matrix(p, *t, *g, matrix_seed)?;
            let (_, rec) = run_nonadaptive(&m, truth, &[])?;
            Ok((m.num_tests(), rec.matches(truth)))
        }
        Prepared::Block => {
            let d = build_block_matrix(p, c.eps, c.delta, matrix_seed)?;
            let (_, rec) = run_nonadaptive(&d.matrix, truth, d.partition.zero_assigned())?;
            Ok((d.matrix.num_tests(), rec.matches(truth)))
        }
    }
}

/// Run every (point, trial, algorithm) combination. Reports come back sorted
/// by point, then trial, then the campaign's algorithm order, independent of
/// thread scheduling.
pub fn run_campaign(c: &Campaign) -> Result<Vec<TrialReport>> {
    let family = c.validate()?;
    let mut reports = Vec::with_capacity(c.sweep.len() * c.trials * c.algorithms.len());
    for (point, &target) in c.sweep.iter().enumerate() {
        let p = generate_prior(family, c.n, target)?;
        let (mu, entropy) = (p.mu(), p.entropy());
        let prepared: Vec<(Algorithm, Prepared)> = c
            .algorithms
            .iter()
            .map(|&a| prepare(&p, a, c).map(|x| (a, x)))
            .collect::<Result<_>>()?;
        let per_trial: Vec<Vec<TrialReport>> = (0..c.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = c.trial_seed(point, trial);
                let truth = draw_truth(&p, derive_seed(seed, 0));
                prepared
                    .iter()
                    .map(|(alg, prep)| {
                        let (tests, success) = run_one(&p, prep, &truth, derive_seed(seed, 1), c)?;
                        Ok(TrialReport {
                            trial_id: point * c.trials + trial,
                            seed,
                            algorithm: *alg,
                            n: c.n,
                            mu,
                            entropy,
                            tests,
                            success,
                            point,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        reports.extend(per_trial.into_iter().flatten());
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub point: usize,
    pub mu: f64,
    pub entropy: f64,
    pub trials: usize,
    pub mean_tests: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_tests: f64,
    pub success_rate: f64,
    pub bound_2h_2mu: f64,
}

impl SummaryRow {
    pub fn std_error(&self) -> f64 {
        self.std_tests / (self.trials as f64).sqrt()
    }
}

/// Aggregate reports per (algorithm, point), sorted by algorithm then point.
pub fn summarize(reports: &[TrialReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Algorithm, usize)> = reports.iter().map(|r| (r.algorithm, r.point)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(algorithm, point)| {
            let rows: Vec<&TrialReport> = reports
                .iter()
                .filter(|r| r.algorithm == algorithm && r.point == point)
                .collect();
            let k = rows.len() as f64;
            let mean = rows.iter().map(|r| r.tests as f64).sum::<f64>() / k;
            let var = if rows.len() > 1 {
                rows.iter().map(|r| (r.tests as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let (mu, entropy) = (rows[0].mu, rows[0].entropy);
            SummaryRow {
                algorithm,
                point,
                mu,
                entropy,
                trials: rows.len(),
                mean_tests: mean,
                std_tests: var.sqrt(),
                success_rate: rows.iter().filter(|r| r.success).count() as f64 / k,
                bound_2h_2mu: 2.0 * entropy + 2.0 * mu,
            }
        })
        .collect()
}

/// Ordinary least squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Domain("slope needs at least two points".into()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("slope undefined: all x values are equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Split `total` across blocks in proportion to `weights`, largest
/// remainder first, ties to the lower index.
pub fn allocate_budget(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - out[a] as f64, exact[b] - out[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Exact-recovery frequency of a non-adaptive design at each row budget.
///
/// Every (budget, trial) pair gets its own truth and matrix. For `block`,
/// individually tested items always keep their singleton rows and the
/// remaining budget is spread over the ample blocks in proportion to their
/// default row counts.
pub fn success_curve(
    p: &PriorVector,
    algorithm: Algorithm,
    t_grid: &[usize],
    trials: usize,
    seed: u64,
    eps: f64,
    delta: f64,
) -> Result<Vec<(usize, f64)>> {
    if algorithm.is_adaptive() {
        return Err(Error::Unsupported(format!(
            "{} has no fixed test budget",
            algorithm.tag()
        )));
    }
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let g = optimal_g(p)?;
    let partition = build_partition(p, eps)?;
    let defaults = block_test_counts(p, &partition, delta);
    let individual = partition.individual_items().len();
    t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let point_seed = derive_seed(seed, k as u64);
            let successes: Result<Vec<bool>> = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let s = derive_seed(point_seed, trial as u64);
                    let truth = draw_truth(p, derive_seed(s, 0));
                    let mseed = derive_seed(s, 1);
                    let rec = match algorithm {
                        Algorithm::Cca => {
                            let m = build_cca_matrix(p, t, g, mseed)?;
                            run_nonadaptive(&m, &truth, &[])?.1
                        }
                        _ => {
                            let budgets = allocate_budget(t.saturating_sub(individual), &defaults);
                            let d = build_block_matrix_with(p, partition.clone(), &budgets, mseed)?;
                            run_nonadaptive(&d.matrix, &truth, d.partition.zero_assigned())?.1
                        }
                    };
                    Ok(rec.matches(&truth))
                })
                .collect();
            let rate = successes?.iter().filter(|s| **s).count() as f64 / trials as f64;
            Ok((t, rate))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

impl MannKendall {
    /// Significant increasing trend at level `alpha`.
    pub fn increasing(&self, alpha: f64) -> bool {
        self.s > 0 && self.p_value < alpha
    }
}

/// Mann-Kendall trend test with the tie-corrected variance and the
/// continuity-corrected normal approximation.
pub fn mann_kendall(series: &[f64]) -> Result<MannKendall> {
    let n = series.len();
    if n < 3 {
        return Err(Error::Domain("trend test needs at least three values".into()));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match series[j].partial_cmp(&series[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    let z = if variance <= 0.0 {
        0.0
    } else if s > 0 {
        (s - 1) as f64 / variance.sqrt()
    } else if s < 0 {
        (s + 1) as f64 / variance.sqrt()
    } else {
        0.0
    };
    Ok(MannKendall {
        s,
        variance,
        z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}
