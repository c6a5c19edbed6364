//! The pre-partitioned model.
//!
//! Items are sorted by prior and split into three regions:
//!
//! * the zero-assigned set, `p_i <= eps / 2N`, declared non-defective untested;
//! * middle intervals covering `(eps / 2N, 1/2)` with squared boundaries
//!   `b_0 = 1/2, b_{k+1} = b_k^2`, so every interval `[b_{k+1}, b_k)` satisfies
//!   `p_i^2 <= p_j` for all members (well-balanced);
//! * the tail, `p_i >= 1/2`, tested individually.
//!
//! Middle intervals with at least `gamma` members are *ample* and group tested;
//! the others are tested item by item.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::priors::PriorVector;

/// `ceil(log2(log2(2n / eps)))`, at least 1.
pub fn measure_factor(n: usize, eps: f64) -> Result<u32> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let ratio = 2.0 * n as f64 / eps;
    if ratio <= 2.0 || !ratio.is_finite() {
        return Err(Error::Domain(format!(
            "measure factor needs 2n/eps > 2, got 2*{n}/{eps} = {ratio}"
        )));
    }
    let gamma = ratio.log2().log2().ceil();
    Ok((gamma as u32).max(1))
}

/// Measure parameters `(n, eps, gamma)` with `gamma` derived from the other two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureParams {
    pub n: usize,
    pub eps: f64,
    pub gamma: u32,
}

impl MeasureParams {
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            n,
            eps,
            gamma: measure_factor(n, eps)?,
        })
    }

    /// Items at or below this probability are zero-assigned.
    pub fn lower_bound(&self) -> f64 {
        self.eps / (2.0 * self.n as f64)
    }
}

/// True when `H(X) <= max(2 mu, gamma^2)`, i.e. the concentration guarantees
/// of the pre-partitioned model are unavailable.
pub fn is_skewed(p: &PriorVector, eps: f64) -> Result<bool> {
    let gamma = measure_factor(p.len(), eps)? as f64;
    Ok(p.entropy() <= f64::max(2.0 * p.mu(), gamma * gamma))
}

/// The middle intervals `[lo, hi)` in descending order of `hi`, starting at
/// `[1/4, 1/2)`. The last interval's lower edge is clipped to `eps / 2N` and is
/// exclusive there.
pub fn interval_bounds(params: &MeasureParams) -> Vec<(f64, f64)> {
    let floor = params.lower_bound();
    let mut bounds = Vec::new();
    let mut hi = 0.5f64;
    while hi > floor {
        let next = hi * hi;
        bounds.push((next.max(floor), hi));
        hi = next;
    }
    bounds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetKind {
    /// Declared non-defective without testing.
    Zero,
    /// Group tested.
    Group,
    /// Each member tested on its own.
    Individual,
}

/// A set of items with the probability interval `[lo, hi)` it was cut from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub kind: SubsetKind,
    pub members: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mass(&self, p: &PriorVector) -> f64 {
        compensated_sum(self.members.iter().map(|&i| p.get(i)))
    }
}

/// Outcome of [`combine_for_concentration`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    /// Number of ample subsets merged (or inspected, when the threshold was
    /// never reached).
    pub lambda: usize,
    /// Whether the merged mass reached 1/2.
    pub reached_half: bool,
    pub merged_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub n: usize,
    pub eps: f64,
    pub gamma: u32,
    /// Item ids sorted ascending by `(p_i, id)`.
    pub ordering: Vec<usize>,
    pub zero: Subset,
    /// Middle subsets in ascending probability order.
    pub middle: Vec<Subset>,
    pub tail: Subset,
    pub combination: Option<Combination>,
}

impl Partition {
    /// Total subset count `L` (zero set, middle subsets, tail).
    pub fn subset_count(&self) -> usize {
        self.middle.len() + 2
    }

    pub fn zero_assigned(&self) -> &[usize] {
        &self.zero.members
    }

    /// Ample middle subsets, in ascending probability order.
    pub fn group_subsets(&self) -> impl Iterator<Item = &Subset> {
        self.middle.iter().filter(|s| s.kind == SubsetKind::Group)
    }

    /// Items tested one at a time: members of non-ample middle subsets, then
    /// the tail.
    pub fn individual_items(&self) -> Vec<usize> {
        self.middle
            .iter()
            .filter(|s| s.kind == SubsetKind::Individual)
            .chain(std::iter::once(&self.tail))
            .flat_map(|s| s.members.iter().copied())
            .collect()
    }

    pub fn subsets(&self) -> impl Iterator<Item = &Subset> {
        std::iter::once(&self.zero)
            .chain(self.middle.iter())
            .chain(std::iter::once(&self.tail))
    }

    /// Check the disjoint-cover invariant.
    pub fn check_cover(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for s in self.subsets() {
            for &i in &s.members {
                if i >= self.n {
                    return Err(Error::InvalidPartition(format!(
                        "item {i} out of range for n = {}",
                        self.n
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!("item {i} appears twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("item {i} is not covered")));
        }
        Ok(())
    }
}

/// `(max p)^2 <= min p` over `members`; vacuously true when empty.
pub fn is_well_balanced(members: &[usize], p: &PriorVector) -> bool {
    let (lo, hi) = members.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &i| {
        (lo.min(p.get(i)), hi.max(p.get(i)))
    });
    members.is_empty() || hi * hi <= lo
}

/// Sort items by prior and cut them into the zero set, squared-boundary
/// middle intervals and the tail. Skewed priors are partitioned all the same.
pub fn build_partition(p: &PriorVector, eps: f64) -> Result<Partition> {
    let params = MeasureParams::new(p.len(), eps)?;
    let floor = params.lower_bound();
    let bounds = interval_bounds(&params);
    let ordering = p.ascending_order();

    let mut zero = Vec::new();
    let mut tail = Vec::new();
    // Indexed like `bounds`: 0 is [1/4, 1/2).
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bounds.len()];
    for &i in &ordering {
        let pi = p.get(i);
        if pi <= floor {
            zero.push(i);
        } else if pi >= 0.5 {
            tail.push(i);
        } else {
            let k = bounds
                .iter()
                .position(|&(lo, _)| pi >= lo)
                .unwrap_or(bounds.len() - 1);
            buckets[k].push(i);
        }
    }

    let gamma = params.gamma as usize;
    let middle = bounds
        .iter()
        .zip(buckets)
        .rev()
        .map(|(&(lo, hi), members)| Subset {
            kind: if members.len() >= gamma {
                SubsetKind::Group
            } else {
                SubsetKind::Individual
            },
            members,
            lo,
            hi,
        })
        .collect();

    Ok(Partition {
        n: p.len(),
        eps,
        gamma: params.gamma,
        ordering,
        zero: Subset {
            kind: SubsetKind::Zero,
            members: zero,
            lo: 0.0,
            hi: floor,
        },
        middle,
        tail: Subset {
            kind: SubsetKind::Individual,
            members: tail,
            lo: 0.5,
            hi: 1.0,
        },
        combination: None,
    })
}

/// Merge the leading ample subsets (lowest probabilities first) until the
/// merged mass reaches 1/2. When the ample subsets together never reach 1/2
/// the partition is returned unmerged with `reached_half = false`.
///
/// The merged subset is not re-checked for well-balancedness.
pub fn combine_for_concentration(part: &Partition, p: &PriorVector) -> Partition {
    let ample: Vec<usize> = part
        .middle
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SubsetKind::Group)
        .map(|(i, _)| i)
        .collect();

    let mut mass = 0.0;
    let mut take = None;
    for (k, &idx) in ample.iter().enumerate() {
        mass += part.middle[idx].mass(p);
        if mass >= 0.5 {
            take = Some(k + 1);
            break;
        }
    }

    let mut out = part.clone();
    let Some(lambda) = take else {
        out.combination = Some(Combination {
            lambda: ample.len(),
            reached_half: false,
            merged_mass: mass,
        });
        return out;
    };

    let merged_idx = &ample[..lambda];
    let mut merged = Subset {
        kind: SubsetKind::Group,
        members: Vec::new(),
        lo: f64::INFINITY,
        hi: 0.0,
    };
    for &idx in merged_idx {
        let s = &part.middle[idx];
        merged.members.extend_from_slice(&s.members);
        merged.lo = merged.lo.min(s.lo);
        merged.hi = merged.hi.max(s.hi);
    }
    out.middle = part
        .middle
        .iter()
        .enumerate()
        .filter_map(|(idx, s)| {
            if idx == merged_idx[0] {
                Some(merged.clone())
            } else if merged_idx.contains(&idx) {
                None
            } else {
                Some(s.clone())
            }
        })
        .collect();
    out.combination = Some(Combination {
        lambda,
        reached_half: true,
        merged_mass: mass,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{generate_prior, PriorFamily};

    #[test]
    fn measure_factor_examples() {
        assert_eq!(measure_factor(512, 1.0).unwrap(), 4);
        assert_eq!(measure_factor(1000, 0.01).unwrap(), 5);
        assert_eq!(measure_factor(2, 1.0).unwrap(), 1);
        assert!(measure_factor(1, 1.0).is_err());
        assert!(measure_factor(10, 0.0).is_err());
        assert!(measure_factor(10, f64::NAN).is_err());
    }

    #[test]
    fn skewness_examples() {
        let uniform = generate_prior(PriorFamily::Uniform, 1000, 8.0).unwrap();
        assert!(!is_skewed(&uniform, 0.01).unwrap());
        let single = PriorVector::new(vec![0.5]).unwrap();
        assert!(is_skewed(&single, 0.01).unwrap());
        let zeros = PriorVector::new(vec![0.0; 20]).unwrap();
        assert!(is_skewed(&zeros, 0.01).unwrap());
    }

    #[test]
    fn boundaries_square_down_to_the_floor() {
        let params = MeasureParams::new(1000, 0.01).unwrap();
        let bounds = interval_bounds(&params);
        let his: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        assert_eq!(his, vec![0.5, 0.25, 0.0625, 0.00390625, 0.00390625f64.powi(2)]);
        assert_eq!(bounds.len(), params.gamma as usize);
        assert_eq!(bounds.last().unwrap().0, 5e-6);
        for w in bounds.windows(2) {
            assert_eq!(w[1].1, w[0].1 * w[0].1);
        }
    }

    #[test]
    fn interval_count_equals_gamma_across_parameters() {
        for n in [2usize, 3, 10, 100, 1000, 100_000] {
            for eps in [1.0, 0.5, 0.1, 0.01, 1e-6] {
                if let Ok(params) = MeasureParams::new(n, eps) {
                    assert_eq!(interval_bounds(&params).len(), params.gamma as usize);
                }
            }
        }
    }

    #[test]
    fn heavy_items_go_to_the_tail() {
        let p = PriorVector::new(vec![0.6, 0.7]).unwrap();
        let part = build_partition(&p, 0.01).unwrap();
        assert_eq!(part.tail.members, vec![0, 1]);
        assert!(part.middle.iter().all(|s| s.is_empty()));
        assert_eq!(part.individual_items(), vec![0, 1]);
    }

    #[test]
    fn tiny_items_are_zero_assigned() {
        let mut probs = vec![0.01; 1000];
        probs[17] = 1e-9;
        let p = PriorVector::new(probs).unwrap();
        let part = build_partition(&p, 0.01).unwrap();
        assert_eq!(part.zero_assigned(), &[17]);
        part.check_cover().unwrap();
    }

    #[test]
    fn boundary_ties_go_up() {
        let p = PriorVector::new(vec![0.25, 0.0625, 0.5, 0.0]).unwrap();
        let part = build_partition(&p, 0.01).unwrap();
        let find = |item| {
            part.middle
                .iter()
                .find(|s| s.members.contains(&item))
                .map(|s| (s.lo, s.hi))
        };
        assert_eq!(find(0), Some((0.25, 0.5)));
        assert_eq!(find(1), Some((0.0625, 0.25)));
        assert_eq!(part.tail.members, vec![2]);
        assert_eq!(part.zero_assigned(), &[3]);
    }

    #[test]
    fn ample_threshold_is_gamma() {
        // gamma = 5 for n = 1000, eps = 0.01.
        let mut probs = vec![0.01; 996];
        probs.extend([0.3; 4]);
        let p = PriorVector::new(probs).unwrap();
        let part = build_partition(&p, 0.01).unwrap();
        let top = part.middle.last().unwrap();
        assert_eq!(top.len(), 4);
        assert_eq!(top.kind, SubsetKind::Individual);
        assert_eq!(part.group_subsets().count(), 1);
        assert_eq!(part.individual_items().len(), 4);
    }

    fn partition_with_masses(masses: &[f64], size: usize) -> (Partition, PriorVector) {
        // Build a partition by hand: one middle subset per mass.
        let mut probs = Vec::new();
        let mut middle = Vec::new();
        for &m in masses {
            let start = probs.len();
            probs.extend(std::iter::repeat_n(m / size as f64, size));
            middle.push(Subset {
                kind: SubsetKind::Group,
                members: (start..probs.len()).collect(),
                lo: 0.0,
                hi: 0.5,
            });
        }
        let n = probs.len();
        let part = Partition {
            n,
            eps: 0.01,
            gamma: 5,
            ordering: (0..n).collect(),
            zero: Subset { kind: SubsetKind::Zero, members: vec![], lo: 0.0, hi: 0.0 },
            middle,
            tail: Subset { kind: SubsetKind::Individual, members: vec![], lo: 0.5, hi: 1.0 },
            combination: None,
        };
        (part, PriorVector::new(probs).unwrap())
    }

    #[test]
    fn combining_single_heavy_subset() {
        let (part, p) = partition_with_masses(&[0.6], 6);
        let merged = combine_for_concentration(&part, &p);
        let c = merged.combination.unwrap();
        assert_eq!(c.lambda, 1);
        assert!(c.reached_half);
        assert_eq!(merged.middle, part.middle);
    }

    #[test]
    fn combining_crosses_at_third_subset() {
        let (part, p) = partition_with_masses(&[0.2, 0.2, 0.2, 0.3], 6);
        let merged = combine_for_concentration(&part, &p);
        let c = merged.combination.unwrap();
        assert_eq!(c.lambda, 3);
        assert!(c.reached_half);
        assert_eq!(merged.middle.len(), 2);
        assert_eq!(merged.middle[0].len(), 18);
        merged.check_cover().unwrap();
    }

    #[test]
    fn combining_exhausts_tiny_masses() {
        let (part, p) = partition_with_masses(&[0.01, 0.02, 0.03], 6);
        let merged = combine_for_concentration(&part, &p);
        let c = merged.combination.unwrap();
        assert_eq!(c.lambda, 3);
        assert!(!c.reached_half);
        assert_eq!(merged.middle, part.middle);
    }

    #[test]
    fn combining_skips_non_ample_subsets() {
        let (mut part, p) = partition_with_masses(&[0.3, 0.1, 0.3], 6);
        part.middle[1].kind = SubsetKind::Individual;
        let merged = combine_for_concentration(&part, &p);
        assert_eq!(merged.combination.unwrap().lambda, 2);
        assert_eq!(merged.middle.len(), 2);
        assert_eq!(merged.middle[1], part.middle[1]);
        merged.check_cover().unwrap();
    }
}
