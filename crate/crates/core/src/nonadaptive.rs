//! Non-adaptive designs: the coupon-collector matrix, the block (direct-sum)
//! matrix over the pre-partition, and negative-test elimination decoding.

use std::f64::consts::E;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, derive_seed};
use crate::partition::{build_partition, Partition, SubsetKind};
use crate::priors::{PopulationVector, PriorVector, RecoveredVector};

/// One block of a direct-sum design: a contiguous row range whose rows only
/// touch `members`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub kind: SubsetKind,
    pub rows: Range<usize>,
    pub members: Vec<usize>,
    /// Index into the partition's middle subsets; `None` for the block of
    /// individually tested items.
    pub subset: Option<usize>,
}

/// Boolean test matrix stored as one sorted id list per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestMatrix {
    pub n: usize,
    pub rows: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockSpan>>,
}

impl TestMatrix {
    pub fn new(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let m = Self {
            n,
            rows,
            blocks: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_tests(&self) -> usize {
        self.rows.len()
    }

    /// Ids in range and, when blocks are present, the direct-sum structure.
    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            if let Some(&i) = row.iter().find(|&&i| i >= self.n) {
                return Err(Error::InvalidMatrix(format!(
                    "row {r} includes item {i}, but n = {}",
                    self.n
                )));
            }
        }
        if self.blocks.is_some() {
            self.check_direct_sum()?;
        }
        Ok(())
    }

    /// Blocks have disjoint member sets, tile the rows in order, and every
    /// row stays inside its block's members.
    pub fn check_direct_sum(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMatrix(m));
        let Some(blocks) = &self.blocks else {
            return bad("matrix has no block layout".into());
        };
        let mut owner: Vec<Option<usize>> = vec![None; self.n];
        let mut next_row = 0;
        for (b, span) in blocks.iter().enumerate() {
            if span.rows.start != next_row || span.rows.end < span.rows.start {
                return bad(format!("block {b} rows {:?} do not follow row {next_row}", span.rows));
            }
            next_row = span.rows.end;
            for &i in &span.members {
                if i >= self.n {
                    return bad(format!("block {b} member {i} out of range"));
                }
                if let Some(prev) = owner[i].replace(b) {
                    return bad(format!("item {i} belongs to blocks {prev} and {b}"));
                }
            }
        }
        if next_row != self.rows.len() {
            return bad(format!(
                "blocks cover {next_row} rows, matrix has {}",
                self.rows.len()
            ));
        }
        for (b, span) in blocks.iter().enumerate() {
            for r in span.rows.clone() {
                if let Some(&i) = self.rows[r].iter().find(|&&i| owner[i] != Some(b)) {
                    return bad(format!("row {r} of block {b} touches item {i} outside the block"));
                }
            }
        }
        Ok(())
    }
}

/// `p_hat_i = (1 - p_i) / (N - mu)`.
pub fn sampling_distribution(p: &PriorVector) -> Result<Vec<f64>> {
    let denom = compensated_sum(p.probs().iter().map(|&x| 1.0 - x));
    if denom <= 0.0 {
        return Err(Error::Domain(
            "sampling distribution undefined when every item is certainly defective".into(),
        ));
    }
    Ok(p.probs().iter().map(|&x| (1.0 - x) / denom).collect())
}

/// Real-valued optimum `-1 / ln(sum p_hat_i (1 - p_i))`.
pub fn optimal_g_real(p: &PriorVector) -> Result<f64> {
    let p_hat = sampling_distribution(p)?;
    let inner = compensated_sum(p_hat.iter().zip(p.probs()).map(|(h, x)| h * (1.0 - x)));
    if !(inner > 0.0 && inner < 1.0) {
        return Err(Error::Domain(format!(
            "optimal g needs 0 < sum p_hat (1 - p) < 1, got {inner}"
        )));
    }
    Ok(-1.0 / inner.ln())
}

/// [`optimal_g_real`] rounded to the nearest integer, at least 1.
pub fn optimal_g(p: &PriorVector) -> Result<usize> {
    Ok((optimal_g_real(p)?.round() as usize).max(1))
}

/// `ceil(4e(1 + delta) mu ln n)`, clamped at 0.
pub fn cca_test_count(n: f64, mu: f64, delta: f64) -> usize {
    let t = 4.0 * E * (1.0 + delta) * mu * n.ln();
    if t > 0.0 {
        t.ceil() as usize
    } else {
        0
    }
}

/// Test count for the coupon-collector design. The error guarantee only
/// applies when every `p_i < 1/2`; see [`crate::bounds::cca_upper`].
pub fn num_tests_cca(p: &PriorVector, delta: f64) -> usize {
    cca_test_count(p.len() as f64, p.mu(), delta)
}

fn sample_rows(p_hat: &[f64], t: usize, g: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let dist = WeightedAliasIndex::new(p_hat.to_vec())
        .map_err(|e| Error::Domain(format!("cannot sample from p_hat: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..t)
        .map(|_| {
            let mut row: Vec<usize> = (0..g).map(|_| dist.sample(&mut rng)).collect();
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect())
}

/// `t` rows, each the distinct ids among `g` draws from `p_hat`.
pub fn build_cca_matrix(p: &PriorVector, t: usize, g: usize, seed: u64) -> Result<TestMatrix> {
    if g == 0 {
        return Err(Error::Domain("g must be at least 1".into()));
    }
    let p_hat = sampling_distribution(p)?;
    Ok(TestMatrix {
        n: p.len(),
        rows: sample_rows(&p_hat, t, g, seed)?,
        blocks: None,
    })
}

/// A block matrix together with the partition it was laid over.
#[derive(Debug, Clone)]
pub struct BlockDesign {
    pub matrix: TestMatrix,
    pub partition: Partition,
}

/// Row budget of each ample block for the given `delta`.
pub fn block_test_counts(p: &PriorVector, partition: &Partition, delta: f64) -> Vec<usize> {
    partition
        .group_subsets()
        .map(|s| cca_test_count(s.len() as f64, s.mass(p), delta))
        .collect()
}

/// Direct-sum design: one coupon-collector block per ample middle subset,
/// with its own `p_hat`, `g` and `T_s = ceil(4e(1 + delta) mu_s ln n_s)`,
/// followed by one singleton row per individually tested item.
pub fn build_block_matrix(p: &PriorVector, eps: f64, delta: f64, seed: u64) -> Result<BlockDesign> {
    let partition = build_partition(p, eps)?;
    let budgets = block_test_counts(p, &partition, delta);
    build_block_matrix_with(p, partition, &budgets, seed)
}

/// As [`build_block_matrix`] but with explicit per-block row counts, one per
/// ample subset in ascending order.
pub fn build_block_matrix_with(
    p: &PriorVector,
    partition: Partition,
    budgets: &[usize],
    seed: u64,
) -> Result<BlockDesign> {
    let groups: Vec<(usize, &crate::partition::Subset)> = partition
        .middle
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SubsetKind::Group)
        .collect();
    if groups.len() != budgets.len() {
        return Err(Error::Dimension {
            expected: groups.len(),
            got: budgets.len(),
        });
    }
    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    for (b, ((idx, subset), &t)) in groups.iter().zip(budgets).enumerate() {
        let sub = p.restrict(&subset.members)?;
        let g = optimal_g(&sub)?;
        let local = sample_rows(&sampling_distribution(&sub)?, t, g, derive_seed(seed, b as u64))?;
        let start = rows.len();
        rows.extend(local.into_iter().map(|row| {
            let mut global: Vec<usize> = row.into_iter().map(|j| subset.members[j]).collect();
            global.sort_unstable();
            global
        }));
        blocks.push(BlockSpan {
            kind: SubsetKind::Group,
            rows: start..rows.len(),
            members: subset.members.clone(),
            subset: Some(*idx),
        });
    }
    let individual = partition.individual_items();
    if !individual.is_empty() {
        let start = rows.len();
        rows.extend(individual.iter().map(|&i| vec![i]));
        blocks.push(BlockSpan {
            kind: SubsetKind::Individual,
            rows: start..rows.len(),
            members: individual,
            subset: None,
        });
    }
    let matrix = TestMatrix {
        n: p.len(),
        rows,
        blocks: Some(blocks),
    };
    Ok(BlockDesign { matrix, partition })
}

/// Noiseless OR outcome of every row.
pub fn test_outcomes(m: &TestMatrix, truth: &PopulationVector) -> Result<Vec<bool>> {
    if truth.len() != m.n {
        return Err(Error::Dimension {
            expected: m.n,
            got: truth.len(),
        });
    }
    let bits = truth.bits();
    Ok(m.rows.iter().map(|row| row.iter().any(|&i| bits[i])).collect())
}

/// Clear every item in a negative row and every zero-assigned item; declare
/// the rest defective.
pub fn decode_comp(m: &TestMatrix, outcomes: &[bool], zero_assigned: &[usize]) -> Result<RecoveredVector> {
    if outcomes.len() != m.rows.len() {
        return Err(Error::Dimension {
            expected: m.rows.len(),
            got: outcomes.len(),
        });
    }
    let mut rec = vec![true; m.n];
    for (row, _) in m.rows.iter().zip(outcomes).filter(|(_, &y)| !y) {
        for &i in row {
            rec[i] = false;
        }
    }
    for &i in zero_assigned {
        if i >= m.n {
            return Err(Error::Dimension {
                expected: m.n,
                got: i + 1,
            });
        }
        rec[i] = false;
    }
    Ok(RecoveredVector(rec))
}

/// Decode each block on its own rows and members and stitch the results.
/// Items outside every block follow the whole-matrix rule.
pub fn decode_blockwise(m: &TestMatrix, outcomes: &[bool], zero_assigned: &[usize]) -> Result<RecoveredVector> {
    let blocks = m
        .blocks
        .as_ref()
        .ok_or_else(|| Error::InvalidMatrix("matrix has no block layout".into()))?;
    if outcomes.len() != m.rows.len() {
        return Err(Error::Dimension {
            expected: m.rows.len(),
            got: outcomes.len(),
        });
    }
    let mut rec = vec![true; m.n];
    for &i in zero_assigned {
        *rec.get_mut(i).ok_or(Error::Dimension {
            expected: m.n,
            got: i + 1,
        })? = false;
    }
    for span in blocks {
        // Local sub-matrix over the block's members.
        let index: std::collections::HashMap<usize, usize> =
            span.members.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        let local = TestMatrix {
            n: span.members.len(),
            rows: m.rows[span.rows.clone()]
                .iter()
                .map(|row| row.iter().map(|i| index[i]).collect())
                .collect(),
            blocks: None,
        };
        let zero_local: Vec<usize> = zero_assigned.iter().filter_map(|i| index.get(i).copied()).collect();
        let part = decode_comp(&local, &outcomes[span.rows.clone()], &zero_local)?;
        for (j, &i) in span.members.iter().enumerate() {
            rec[i] = part.0[j];
        }
    }
    Ok(RecoveredVector(rec))
}

/// Outcomes of `m` on `truth`, decoded.
pub fn run_nonadaptive(
    m: &TestMatrix,
    truth: &PopulationVector,
    zero_assigned: &[usize],
) -> Result<(Vec<bool>, RecoveredVector)> {
    let y = test_outcomes(m, truth)?;
    let rec = decode_comp(m, &y, zero_assigned)?;
    Ok((y, rec))
}
