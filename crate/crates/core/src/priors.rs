//! Prior probability vectors and the experiment families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Default decay of the exponential family.
pub const DEFAULT_RHO: f64 = 0.99;

/// Binary entropy in bits, with `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Per-item prior probabilities of being defective. Item `i` has id `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorVector {
    probs: Vec<f64>,
}

impl PriorVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPrior("prior must contain at least one item".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::InvalidPrior(format!(
                "item {i} has probability {p}, expected a value in [0, 1]"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, item: usize) -> f64 {
        self.probs[item]
    }

    /// Expected number of defective items, `sum p_i`.
    pub fn mu(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    /// Entropy of the population vector in bits, `sum h(p_i)`.
    pub fn entropy(&self) -> f64 {
        compensated_sum(self.probs.iter().map(|&p| binary_entropy(p)))
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// The sub-prior over `items`, in the given order.
    pub fn restrict(&self, items: &[usize]) -> Result<Self> {
        Self::new(items.iter().map(|&i| self.probs[i]).collect())
    }

    /// Item ids sorted ascending by `(p_i, id)`.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| self.probs[a].total_cmp(&self.probs[b]).then(a.cmp(&b)));
        order
    }
}

/// The true defectiveness of each item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PopulationVector(pub Vec<bool>);

/// A decoder's estimate of the population vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecoveredVector(pub Vec<bool>);

macro_rules! bit_vector_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(n: usize) -> Self {
                Self(vec![false; n])
            }

            pub fn bits(&self) -> &[bool] {
                &self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn count_ones(&self) -> usize {
                self.0.iter().filter(|b| **b).count()
            }

            /// Truth vector with bit `i` set iff bit `i` of `mask` is set.
            pub fn from_mask(n: usize, mask: u64) -> Self {
                Self((0..n).map(|i| mask >> i & 1 == 1).collect())
            }
        }
    };
}

bit_vector_impl!(PopulationVector);
bit_vector_impl!(RecoveredVector);

impl RecoveredVector {
    /// Exact recovery.
    pub fn matches(&self, truth: &PopulationVector) -> bool {
        self.0 == truth.0
    }
}

/// Parametric prior families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    Uniform,
    /// Weights `i + 1`.
    Linear,
    /// Weights `rho^i`.
    Exponential { rho: f64 },
}

impl PriorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PriorFamily::Uniform => "uniform",
            PriorFamily::Linear => "linear",
            PriorFamily::Exponential { .. } => "exponential",
        }
    }

    /// Parse a family name; `rho` only matters for the exponential family.
    pub fn from_name(name: &str, rho: Option<f64>) -> Result<Self> {
        match name {
            "uniform" => Ok(PriorFamily::Uniform),
            "linear" => Ok(PriorFamily::Linear),
            "exponential" => Ok(PriorFamily::Exponential {
                rho: rho.unwrap_or(DEFAULT_RHO),
            }),
            other => Err(Error::InvalidPrior(format!("unknown prior family `{other}`"))),
        }
    }
}

/// Generate a prior of `n` items from `family`, scaled so that `mu = target_mu`.
///
/// Every generated entry lies strictly inside `(0, 1/2)`; parameters that would
/// push an entry to `1/2` or above are rejected.
pub fn generate_prior(family: PriorFamily, n: usize, target_mu: f64) -> Result<PriorVector> {
    if n == 0 {
        return Err(Error::InvalidPrior("n must be at least 1".into()));
    }
    if !(target_mu.is_finite() && target_mu > 0.0 && target_mu < n as f64 / 2.0) {
        return Err(Error::InvalidPrior(format!(
            "target mu {target_mu} must lie in (0, n/2) = (0, {})",
            n as f64 / 2.0
        )));
    }
    let weights: Vec<f64> = match family {
        PriorFamily::Uniform => vec![1.0; n],
        PriorFamily::Linear => (1..=n).map(|w| w as f64).collect(),
        PriorFamily::Exponential { rho } => {
            if !(rho.is_finite() && rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidPrior(format!("rho {rho} must lie in (0, 1]")));
            }
            (0..n).map(|i| rho.powi(i as i32)).collect()
        }
    };
    let total = compensated_sum(weights.iter().copied());
    let probs: Vec<f64> = weights.iter().map(|w| target_mu * w / total).collect();
    if let Some((i, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| **p >= 0.5 || **p <= 0.0)
    {
        return Err(Error::InvalidPrior(format!(
            "{} prior with n={n}, mu={target_mu} gives p_{i} = {p}, outside (0, 1/2)",
            family.name()
        )));
    }
    PriorVector::new(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_of_fair_bits() {
        let p = PriorVector::new(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(p.entropy(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mu(), 1.0);
    }

    #[test]
    fn degenerate_entries_contribute_nothing() {
        let p = PriorVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(p.entropy(), 0.0);
        let z = PriorVector::new(vec![0.0; 10]).unwrap();
        assert_eq!(z.mu(), 0.0);
    }

    #[test]
    fn uniform_entropy_matches_direct_summation() {
        // Independent oracle: plain left-to-right summation of the closed form.
        let p = 0.008f64;
        let mut oracle = 0.0;
        for _ in 0..1000 {
            oracle += -p * p.ln() / 2f64.ln() - (1.0 - p) * (1.0 - p).ln() / 2f64.ln();
        }
        let prior = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        assert_abs_diff_eq!(prior.entropy(), oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(prior.entropy(), 67.221545, epsilon = 1e-5);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(PriorVector::new(vec![]).is_err());
        assert!(PriorVector::new(vec![0.2, 1.5]).is_err());
        assert!(PriorVector::new(vec![f64::NAN]).is_err());
        assert!(PriorVector::new(vec![-0.1]).is_err());
    }

    #[test]
    fn uniform_family() {
        let p = generate_prior(PriorFamily::Uniform, 4, 1.0).unwrap();
        assert_eq!(p.probs(), &[0.25; 4]);
    }

    #[test]
    fn linear_family() {
        let p = generate_prior(PriorFamily::Linear, 4, 1.0).unwrap();
        for (got, want) in p.probs().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        let big = generate_prior(PriorFamily::Linear, 1000, 8.0).unwrap();
        assert_abs_diff_eq!(big.mu(), 8.0, epsilon = 1e-9);
    }

    #[test]
    fn exponential_family_is_geometric() {
        let rho = 0.7;
        let p = generate_prior(PriorFamily::Exponential { rho }, 3, 0.9).unwrap();
        // Closed form: p_0 = mu / (1 + rho + rho^2).
        let p0 = 0.9 / (1.0 + rho + rho * rho);
        assert_abs_diff_eq!(p.get(0), p0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(1) / p.get(0), rho, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(2) / p.get(1), rho, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mu(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn generator_rejects_heavy_entries() {
        assert!(generate_prior(PriorFamily::Uniform, 4, 2.0).is_err());
        assert!(generate_prior(PriorFamily::Linear, 4, 1.5).is_err());
        // Exponential with rho = 0.99, n = 1000 saturates near mu = 50.
        assert!(generate_prior(PriorFamily::Exponential { rho: 0.99 }, 1000, 49.0).is_ok());
        assert!(generate_prior(PriorFamily::Exponential { rho: 0.99 }, 1000, 50.5).is_err());
        assert!(generate_prior(PriorFamily::Uniform, 0, 0.1).is_err());
        assert!(generate_prior(PriorFamily::Uniform, 10, 0.0).is_err());
    }

    #[test]
    fn ascending_order_is_stable() {
        let p = PriorVector::new(vec![0.3, 0.1, 0.3, 0.0]).unwrap();
        assert_eq!(p.ascending_order(), vec![3, 1, 0, 2]);
    }
}
