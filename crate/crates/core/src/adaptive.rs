//! Nested (laminar) adaptive test plans.
//!
//! A plan is a forest of binary trees over item ids. Every root group is
//! tested; a positive node has both children tested in turn, and leaves are
//! single items. Two constructions are provided:
//!
//! * maximum entropy: first-stage groups and every later split are chosen so
//!   that the probability of a positive outcome, conditioned on the parent
//!   being positive, is as close to 1/2 as contiguous prefixes allow;
//! * source codes: first-stage groups keep `prod (1 - p_j) >= 1/2`, which
//!   bounds the group mass by 1, and each group is then laid out as a
//!   Shannon-Fano or Huffman code tree on weights `p_i`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{build_partition, combine_for_concentration, Partition};
use crate::priors::{PopulationVector, PriorVector, RecoveredVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    MaxEntropy,
    ShannonFano,
    Huffman,
}

impl Construction {
    pub fn name(&self) -> &'static str {
        match self {
            Construction::MaxEntropy => "max_entropy",
            Construction::ShannonFano => "shannon_fano",
            Construction::Huffman => "huffman",
        }
    }
}

/// Order in which items are laid out before greedy grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOrder {
    /// Prior vector order.
    #[default]
    Given,
    /// Ascending by `(p_i, id)`.
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    pub order: ItemOrder,
    /// Test both children of every positive node. When false, a second child
    /// whose sibling tested negative is inferred positive without a test.
    pub counts_both_children: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            order: ItemOrder::Given,
            counts_both_children: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub members: Vec<usize>,
    /// Indices of the two children, `None` for a leaf.
    pub children: Option<[usize; 2]>,
}

/// A laminar family of tests over (a subset of) `n` items.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedPlan {
    n: usize,
    construction: Construction,
    counts_both_children: bool,
    nodes: Vec<PlanNode>,
    roots: Vec<usize>,
    auto_defective: Vec<usize>,
    auto_clear: Vec<usize>,
    mu: f64,
}

/// One performed test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub members: Vec<usize>,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveRunResult {
    pub recovered: RecoveredVector,
    pub tests_used: usize,
    pub transcript: Vec<TestRecord>,
}

fn prefix_products<'a>(p: &'a PriorVector, items: &'a [usize]) -> impl Iterator<Item = f64> + 'a {
    items.iter().scan(1.0f64, move |prod, &i| {
        *prod *= 1.0 - p.get(i);
        Some(*prod)
    })
}

/// Greedy first-stage grouping for the maximum-entropy construction.
///
/// Repeatedly takes the prefix of the remaining items whose probability of
/// containing no defective, `prod (1 - p_j)`, is closest to 1/2. Ties go to
/// the shorter prefix.
pub fn me_first_stage(p: &PriorVector, items: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let rest = &items[start..];
        let mut best = (f64::INFINITY, 1);
        for (k, prod) in prefix_products(p, rest).enumerate() {
            let dist = (prod - 0.5).abs();
            if dist < best.0 {
                best = (dist, k + 1);
            } else if prod < 0.5 {
                break;
            }
        }
        groups.push(rest[..best.1].to_vec());
        start += best.1;
    }
    groups
}

/// Split a positive subset into a prefix and the remainder so that the
/// probability of the prefix being positive, given the subset is positive,
/// is closest to 1/2. Ties go to the shorter prefix.
///
/// # Panics
/// If `subset` has fewer than two items.
pub fn me_split(subset: &[usize], p: &PriorVector) -> (Vec<usize>, Vec<usize>) {
    assert!(subset.len() >= 2, "cannot split a subset of {} items", subset.len());
    // log prod (1 - p_j) for precision when the p_j are tiny.
    let logs: Vec<f64> = subset.iter().map(|&i| (-p.get(i)).ln_1p()).collect();
    let total: f64 = logs.iter().sum();
    let denom = -total.exp_m1();
    let mut k_best = subset.len() / 2;
    if denom > 0.0 {
        let mut best = f64::INFINITY;
        let mut acc = 0.0;
        for (k, l) in logs[..subset.len() - 1].iter().enumerate() {
            acc += l;
            let ratio = -acc.exp_m1() / denom;
            let dist = (ratio - 0.5).abs();
            if dist < best {
                best = dist;
                k_best = k + 1;
            }
        }
    }
    (subset[..k_best].to_vec(), subset[k_best..].to_vec())
}

/// Greedy first-stage grouping for the source-code constructions: maximal
/// prefixes keeping `prod (1 - p_j) >= 1/2`. An item with `p_j > 1/2` forms
/// a singleton group.
pub fn sf_first_stage(p: &PriorVector, items: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let rest = &items[start..];
        let len = prefix_products(p, rest)
            .take_while(|&prod| prod >= 0.5)
            .count()
            .max(1);
        groups.push(rest[..len].to_vec());
        start += len;
    }
    groups
}

/// Codeword length `ceil(log2(1 / w))` for `0 < w <= 1`.
pub fn shannon_length(w: f64) -> u32 {
    let mut l = (-w.log2()).ceil().max(0.0) as i32;
    while l > 0 && 2f64.powi(-(l - 1)) <= w {
        l -= 1;
    }
    while 2f64.powi(-l) > w {
        l += 1;
    }
    l as u32
}

struct TreeBuilder<'a> {
    p: &'a PriorVector,
    nodes: Vec<PlanNode>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, item: usize) -> usize {
        self.nodes.push(PlanNode {
            members: vec![item],
            children: None,
        });
        self.nodes.len() - 1
    }

    fn join(&mut self, left: usize, right: usize) -> usize {
        let mut members = self.nodes[left].members.clone();
        members.extend_from_slice(&self.nodes[right].members);
        self.nodes.push(PlanNode {
            members,
            children: Some([left, right]),
        });
        self.nodes.len() - 1
    }

    /// Build a subtree with an explicit stack; returns the root index.
    fn build<F>(&mut self, items: Vec<usize>, mut split: F) -> usize
    where
        F: FnMut(&[usize], usize, &PriorVector) -> (Vec<usize>, Vec<usize>),
    {
        enum Work {
            Visit(Vec<usize>, usize),
            Join,
        }
        let mut work = vec![Work::Visit(items, 0)];
        let mut done: Vec<usize> = Vec::new();
        while let Some(w) = work.pop() {
            match w {
                Work::Visit(items, depth) => {
                    if items.len() == 1 {
                        let id = self.leaf(items[0]);
                        done.push(id);
                    } else {
                        let (left, right) = split(&items, depth, self.p);
                        work.push(Work::Join);
                        work.push(Work::Visit(right, depth + 1));
                        work.push(Work::Visit(left, depth + 1));
                    }
                }
                Work::Join => {
                    let right = done.pop().expect("right subtree");
                    let left = done.pop().expect("left subtree");
                    let id = self.join(left, right);
                    done.push(id);
                }
            }
        }
        done.pop().expect("root")
    }

    fn max_entropy(&mut self, group: Vec<usize>) -> usize {
        self.build(group, |items, _, p| me_split(items, p))
    }

    fn shannon_fano(&mut self, group: Vec<usize>) -> usize {
        let p = self.p;
        let (mut weighted, zeros): (Vec<usize>, Vec<usize>) =
            group.into_iter().partition(|&i| p.get(i) > 0.0);
        if weighted.is_empty() {
            return self.caterpillar(zeros);
        }
        weighted.sort_by(|&a, &b| p.get(b).total_cmp(&p.get(a)).then(a.cmp(&b)));
        let lengths: Vec<(usize, u32)> = weighted.iter().map(|&i| (i, shannon_length(p.get(i)))).collect();
        let lookup = |i: usize| lengths.iter().find(|(j, _)| *j == i).map(|(_, l)| *l).unwrap();
        let root = self.build(weighted, |items, depth, p| {
            sf_split(items, depth, p, &lookup)
        });
        self.append_zeros(root, zeros)
    }

    fn huffman(&mut self, group: Vec<usize>) -> usize {
        #[derive(PartialEq)]
        struct Entry {
            weight: f64,
            tiebreak: usize,
            node: usize,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                // Reversed: BinaryHeap is a max-heap.
                other
                    .weight
                    .total_cmp(&self.weight)
                    .then(other.tiebreak.cmp(&self.tiebreak))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let n = self.p.len();
        let mut heap: BinaryHeap<Entry> = group
            .iter()
            .map(|&i| Entry {
                weight: self.p.get(i),
                tiebreak: i,
                node: self.leaf(i),
            })
            .collect();
        let mut created = 0;
        while heap.len() > 1 {
            let a = heap.pop().unwrap();
            let b = heap.pop().unwrap();
            let node = self.join(a.node, b.node);
            heap.push(Entry {
                weight: a.weight + b.weight,
                tiebreak: n + created,
                node,
            });
            created += 1;
        }
        heap.pop().expect("non-empty group").node
    }

    fn caterpillar(&mut self, items: Vec<usize>) -> usize {
        let mut rev = items.into_iter().rev();
        let mut acc = self.leaf(rev.next().expect("non-empty"));
        for i in rev {
            let leaf = self.leaf(i);
            acc = self.join(leaf, acc);
        }
        acc
    }

    /// Hang `zeros` below the deepest leaf of the subtree at `root`.
    fn append_zeros(&mut self, root: usize, zeros: Vec<usize>) -> usize {
        if zeros.is_empty() {
            return root;
        }
        // Path to the deepest leaf, first in left-to-right order.
        let mut path: Vec<usize> = Vec::new();
        let mut stack = vec![vec![root]];
        while let Some(trail) = stack.pop() {
            let node = *trail.last().unwrap();
            match self.nodes[node].children {
                Some([l, r]) => {
                    for child in [r, l] {
                        let mut t = trail.clone();
                        t.push(child);
                        stack.push(t);
                    }
                }
                None if trail.len() > path.len() => path = trail,
                None => {}
            }
        }
        let zero_tree = self.caterpillar(zeros);
        let leaf = *path.last().unwrap();
        let mut replacement = self.join(leaf, zero_tree);
        // Rebuild ancestors bottom-up so member lists stay consistent.
        for w in path.windows(2).rev() {
            let (parent, child) = (w[0], w[1]);
            let [l, r] = self.nodes[parent].children.unwrap();
            replacement = if l == child {
                self.join(replacement, r)
            } else {
                self.join(l, replacement)
            };
        }
        replacement
    }
}

/// Weight-balanced split of `items` (sorted by descending weight) at tree
/// depth `depth`, restricted to split points where both halves still satisfy
/// Kraft's inequality for the target lengths. This keeps every leaf at depth
/// at most its Shannon length.
fn sf_split(
    items: &[usize],
    depth: usize,
    p: &PriorVector,
    length: &dyn Fn(usize) -> u32,
) -> (Vec<usize>, Vec<usize>) {
    // Kraft terms 2^{-(l_i - depth)} as fixed-point integers scaled by 2^SCALE.
    const SCALE: u32 = 120;
    let term = |i: usize| -> u128 {
        let e = length(i) as i64 - depth as i64;
        if e <= 0 {
            1u128 << SCALE
        } else if e as u32 > SCALE {
            0
        } else {
            1u128 << (SCALE - e as u32)
        }
    };
    let half = 1u128 << (SCALE - 1);
    let terms: Vec<u128> = items.iter().map(|&i| term(i)).collect();
    let total_kraft: u128 = terms.iter().sum();
    let weights: Vec<f64> = items.iter().map(|&i| p.get(i)).collect();
    let total_w: f64 = weights.iter().sum();

    let mut best: Option<(f64, usize)> = None;
    let mut fallback = (f64::INFINITY, 1usize);
    let (mut kraft, mut w) = (0u128, 0.0f64);
    for k in 1..items.len() {
        kraft += terms[k - 1];
        w += weights[k - 1];
        let imbalance = (2.0 * w - total_w).abs();
        if imbalance < fallback.0 {
            fallback = (imbalance, k);
        }
        if kraft <= half && total_kraft - kraft <= half && best.is_none_or(|(b, _)| imbalance < b) {
            best = Some((imbalance, k));
        }
    }
    let k = best.map_or(fallback.1, |(_, k)| k);
    (items[..k].to_vec(), items[k..].to_vec())
}

/// Build a code tree over `group` with weights `p_i`. The returned plan has
/// the whole group as its single root.
pub fn sf_build_tree(group: &[usize], p: &PriorVector, kind: Construction) -> Result<NestedPlan> {
    if group.is_empty() {
        return Err(Error::InvalidPlan("cannot build a tree over an empty group".into()));
    }
    let mut b = TreeBuilder {
        p,
        nodes: Vec::new(),
    };
    let root = match kind {
        Construction::ShannonFano => b.shannon_fano(group.to_vec()),
        Construction::Huffman => b.huffman(group.to_vec()),
        Construction::MaxEntropy => b.max_entropy(group.to_vec()),
    };
    let mu = group.iter().map(|&i| p.get(i)).sum();
    Ok(NestedPlan::assemble(p.len(), kind, true, b.nodes, vec![root], vec![], vec![], mu))
}

impl NestedPlan {
    /// Plan over every item of `p`.
    pub fn build(p: &PriorVector, construction: Construction, opts: PlanOptions) -> NestedPlan {
        let mut items: Vec<usize> = (0..p.len()).collect();
        if opts.order == ItemOrder::Ascending {
            items = p.ascending_order();
        }
        Self::build_for_items(p, &items, construction, opts.counts_both_children)
    }

    /// Plan over `items` (in the given order). Items with `p = 1` are declared
    /// defective and items with `p = 0` non-defective, both without tests.
    pub fn build_for_items(
        p: &PriorVector,
        items: &[usize],
        construction: Construction,
        counts_both_children: bool,
    ) -> NestedPlan {
        let mut auto_defective = Vec::new();
        let mut auto_clear = Vec::new();
        let mut grouped = Vec::new();
        for &i in items {
            match p.get(i) {
                x if x >= 1.0 => auto_defective.push(i),
                x if x <= 0.0 => auto_clear.push(i),
                _ => grouped.push(i),
            }
        }
        let groups = match construction {
            Construction::MaxEntropy => me_first_stage(p, &grouped),
            Construction::ShannonFano | Construction::Huffman => sf_first_stage(p, &grouped),
        };
        let mut b = TreeBuilder {
            p,
            nodes: Vec::new(),
        };
        let roots = groups
            .into_iter()
            .map(|g| match construction {
                Construction::MaxEntropy => b.max_entropy(g),
                Construction::ShannonFano => b.shannon_fano(g),
                Construction::Huffman => b.huffman(g),
            })
            .collect();
        let mu = items.iter().map(|&i| p.get(i)).sum();
        Self::assemble(
            p.len(),
            construction,
            counts_both_children,
            b.nodes,
            roots,
            auto_defective,
            auto_clear,
            mu,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n: usize,
        construction: Construction,
        counts_both_children: bool,
        nodes: Vec<PlanNode>,
        roots: Vec<usize>,
        auto_defective: Vec<usize>,
        auto_clear: Vec<usize>,
        mu: f64,
    ) -> NestedPlan {
        NestedPlan {
            n,
            construction,
            counts_both_children,
            nodes,
            roots,
            auto_defective,
            auto_clear,
            mu,
        }
    }

    /// Assemble a plan from raw parts, checking the laminar invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n: usize,
        construction: Construction,
        counts_both_children: bool,
        nodes: Vec<PlanNode>,
        roots: Vec<usize>,
        auto_defective: Vec<usize>,
        auto_clear: Vec<usize>,
        mu: f64,
    ) -> Result<NestedPlan> {
        let plan = Self::assemble(
            n,
            construction,
            counts_both_children,
            nodes,
            roots,
            auto_defective,
            auto_clear,
            mu,
        );
        plan.validate()?;
        Ok(plan)
    }

    /// Check that children partition their parent, leaves are singletons,
    /// and no item is covered twice.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if !self.mu.is_finite() || self.mu < 0.0 {
            return bad(format!("mu must be finite and non-negative, got {}", self.mu));
        }
        let mut covered = vec![false; self.n];
        let claim = |i: usize, covered: &mut Vec<bool>| -> Result<()> {
            if i >= self.n {
                return Err(Error::InvalidPlan(format!("item {i} out of range for n = {}", self.n)));
            }
            if std::mem::replace(&mut covered[i], true) {
                return Err(Error::InvalidPlan(format!("item {i} is covered twice")));
            }
            Ok(())
        };
        for &i in self.auto_defective.iter().chain(&self.auto_clear) {
            claim(i, &mut covered)?;
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = Vec::new();
        for &r in &self.roots {
            if r >= self.nodes.len() {
                return bad(format!("root {r} is not a node"));
            }
            for &i in &self.nodes[r].members {
                claim(i, &mut covered)?;
            }
            stack.push(r);
        }
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut visited[id], true) {
                return bad(format!("node {id} is reachable twice"));
            }
            let node = &self.nodes[id];
            match node.children {
                None => {
                    if node.members.len() != 1 {
                        return bad(format!("leaf {id} has {} members", node.members.len()));
                    }
                }
                Some([l, r]) => {
                    if l >= self.nodes.len() || r >= self.nodes.len() {
                        return bad(format!("node {id} has a dangling child"));
                    }
                    let (left, right) = (&self.nodes[l].members, &self.nodes[r].members);
                    if left.is_empty() || right.is_empty() {
                        return bad(format!("node {id} has an empty child"));
                    }
                    let mut joined: Vec<usize> = left.iter().chain(right).copied().collect();
                    let mut parent = node.members.clone();
                    joined.sort_unstable();
                    parent.sort_unstable();
                    if joined != parent || joined.windows(2).any(|w| w[0] == w[1]) {
                        return bad(format!("children of node {id} do not partition it"));
                    }
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn counts_both_children(&self) -> bool {
        self.counts_both_children
    }

    pub fn with_counts_both_children(mut self, flag: bool) -> Self {
        self.counts_both_children = flag;
        self
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn root_groups(&self) -> impl Iterator<Item = &[usize]> {
        self.roots.iter().map(|&r| self.nodes[r].members.as_slice())
    }

    pub fn auto_defective(&self) -> &[usize] {
        &self.auto_defective
    }

    pub fn auto_clear(&self) -> &[usize] {
        &self.auto_clear
    }

    /// Sum of priors over the plan's items.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Depth of each item's leaf below its root group (root = 0); `None` for
    /// items not in any tree.
    pub fn leaf_depths(&self) -> Vec<Option<usize>> {
        let mut depths = vec![None; self.n];
        let mut stack: Vec<(usize, usize)> = self.roots.iter().map(|&r| (r, 0)).collect();
        while let Some((id, d)) = stack.pop() {
            match self.nodes[id].children {
                Some([l, r]) => {
                    stack.push((l, d + 1));
                    stack.push((r, d + 1));
                }
                None => depths[self.nodes[id].members[0]] = Some(d),
            }
        }
        depths
    }

    /// Run the plan against `truth`, writing decisions for the plan's items
    /// into `recovered`. Returns the number of tests performed.
    pub(crate) fn execute(
        &self,
        truth: &[bool],
        recovered: &mut [bool],
        mut transcript: Option<&mut Vec<TestRecord>>,
    ) -> usize {
        let mut tests = 0;
        let mut test = |id: usize, transcript: &mut Option<&mut Vec<TestRecord>>| -> bool {
            let members = &self.nodes[id].members;
            let positive = members.iter().any(|&i| truth[i]);
            tests += 1;
            if let Some(t) = transcript.as_deref_mut() {
                t.push(TestRecord {
                    members: members.clone(),
                    positive,
                });
            }
            positive
        };
        for &i in &self.auto_defective {
            recovered[i] = true;
        }
        for &i in &self.auto_clear {
            recovered[i] = false;
        }
        // Nodes known to be positive whose children still need resolving.
        let mut positive_nodes: Vec<usize> = Vec::new();
        for &r in &self.roots {
            for &i in &self.nodes[r].members {
                recovered[i] = false;
            }
            if test(r, &mut transcript) {
                positive_nodes.push(r);
            }
            while let Some(id) = positive_nodes.pop() {
                let Some([l, rt]) = self.nodes[id].children else {
                    recovered[self.nodes[id].members[0]] = true;
                    continue;
                };
                let left_pos = test(l, &mut transcript);
                let right_pos = if !self.counts_both_children && !left_pos {
                    true
                } else {
                    test(rt, &mut transcript)
                };
                // Right pushed first so the left subtree is resolved first.
                if right_pos {
                    positive_nodes.push(rt);
                }
                if left_pos {
                    positive_nodes.push(l);
                }
            }
        }
        tests
    }
}

/// Execute `plan` against `truth`. With `shortcut_eps = Some(eps)` and the
/// plan's `mu < eps`, every item is declared non-defective without testing.
pub fn run_adaptive(
    plan: &NestedPlan,
    truth: &PopulationVector,
    shortcut_eps: Option<f64>,
) -> Result<AdaptiveRunResult> {
    if truth.len() != plan.n {
        return Err(Error::Dimension {
            expected: plan.n,
            got: truth.len(),
        });
    }
    let mut recovered = vec![false; plan.n];
    if shortcut_eps.is_some_and(|eps| plan.mu < eps) {
        return Ok(AdaptiveRunResult {
            recovered: RecoveredVector(recovered),
            tests_used: 0,
            transcript: Vec::new(),
        });
    }
    let mut transcript = Vec::new();
    let tests_used = plan.execute(truth.bits(), &mut recovered, Some(&mut transcript));
    Ok(AdaptiveRunResult {
        recovered: RecoveredVector(recovered),
        tests_used,
        transcript,
    })
}

/// Nested plans laid over the pre-partitioned model: zero-assigned items are
/// declared non-defective, tail and non-ample items are tested one by one,
/// and each ample subset (after concentration combining) gets its own plan.
#[derive(Debug, Clone)]
pub struct PrepartitionedPlan {
    pub partition: Partition,
    pub plans: Vec<NestedPlan>,
    /// Items tested individually.
    pub individual: Vec<usize>,
    /// Tail items with `p = 1`, declared defective untested.
    pub certain: Vec<usize>,
}

impl PrepartitionedPlan {
    pub fn build(p: &PriorVector, eps: f64, construction: Construction) -> Result<Self> {
        let partition = combine_for_concentration(&build_partition(p, eps)?, p);
        let plans = partition
            .group_subsets()
            .map(|s| NestedPlan::build_for_items(p, &s.members, construction, true))
            .collect();
        let (certain, individual) = partition
            .individual_items()
            .into_iter()
            .partition(|&i| p.get(i) >= 1.0);
        Ok(Self {
            partition,
            plans,
            individual,
            certain,
        })
    }

    pub fn run(&self, truth: &PopulationVector) -> Result<AdaptiveRunResult> {
        let n = self.partition.n;
        if truth.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: truth.len(),
            });
        }
        let bits = truth.bits();
        let mut recovered = vec![false; n];
        let mut transcript = Vec::new();
        for &i in &self.certain {
            recovered[i] = true;
        }
        for &i in &self.individual {
            recovered[i] = bits[i];
            transcript.push(TestRecord {
                members: vec![i],
                positive: bits[i],
            });
        }
        let mut tests_used = self.individual.len();
        for plan in &self.plans {
            tests_used += plan.execute(bits, &mut recovered, Some(&mut transcript));
        }
        Ok(AdaptiveRunResult {
            recovered: RecoveredVector(recovered),
            tests_used,
            transcript,
        })
    }
}

/// Build the pre-partitioned plan for `p` and run it once against `truth`.
pub fn run_prepartitioned_adaptive(
    p: &PriorVector,
    eps: f64,
    truth: &PopulationVector,
    construction: Construction,
) -> Result<AdaptiveRunResult> {
    PrepartitionedPlan::build(p, eps, construction)?.run(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn prior(v: &[f64]) -> PriorVector {
        PriorVector::new(v.to_vec()).unwrap()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn me_first_stage_examples() {
        let p = prior(&[0.5, 0.3]);
        assert_eq!(me_first_stage(&p, &all(2))[0], vec![0]);
        let p = prior(&[0.3; 4]);
        assert_eq!(me_first_stage(&p, &all(4)), vec![vec![0, 1], vec![2, 3]]);
        let p = prior(&[0.9]);
        assert_eq!(me_first_stage(&p, &all(1)), vec![vec![0]]);
    }

    #[test]
    fn me_split_examples() {
        let p = prior(&[0.5, 0.5]);
        assert_eq!(me_split(&all(2), &p), (vec![0], vec![1]));
        let p = prior(&[0.1; 4]);
        assert_eq!(me_split(&all(4), &p), (vec![0, 1], vec![2, 3]));
    }

    #[test]
    fn me_split_is_optimal_among_prefixes() {
        // Exhaustive scan oracle with the direct product formula.
        let p = prior(&[0.05, 0.2, 0.01, 0.4, 0.12, 0.33, 0.07]);
        let items = all(7);
        let objective = |k: usize| {
            let all_prod: f64 = items.iter().map(|&i| 1.0 - p.get(i)).product();
            let pre: f64 = items[..k].iter().map(|&i| 1.0 - p.get(i)).product();
            ((1.0 - pre) / (1.0 - all_prod) - 0.5).abs()
        };
        let (left, _) = me_split(&items, &p);
        for k in 1..items.len() {
            assert!(objective(left.len()) <= objective(k) + 1e-12);
        }
    }

    #[test]
    fn sf_first_stage_examples() {
        let p = prior(&[0.3, 0.3, 0.3]);
        assert_eq!(sf_first_stage(&p, &all(3))[0], vec![0]);
        let p = prior(&[0.2, 0.2, 0.2]);
        assert_eq!(sf_first_stage(&p, &all(3)), vec![vec![0, 1, 2]]);
        let p = prior(&[0.6]);
        assert_eq!(sf_first_stage(&p, &all(1)), vec![vec![0]]);
    }

    #[test]
    fn shannon_lengths() {
        assert_eq!(shannon_length(1.0), 0);
        assert_eq!(shannon_length(0.5), 1);
        assert_eq!(shannon_length(0.3), 2);
        assert_eq!(shannon_length(0.25), 2);
        assert_eq!(shannon_length(0.2), 3);
        assert_eq!(shannon_length(0.001), 10);
    }

    #[test]
    fn huffman_textbook_depths() {
        let p = prior(&[0.5, 0.25, 0.25]);
        let plan = sf_build_tree(&all(3), &p, Construction::Huffman).unwrap();
        let d: Vec<usize> = plan.leaf_depths().into_iter().map(Option::unwrap).collect();
        assert_eq!(d, vec![1, 2, 2]);
    }

    #[test]
    fn two_equal_weights_give_depth_one() {
        let p = prior(&[0.25, 0.25]);
        for kind in [Construction::Huffman, Construction::ShannonFano] {
            let plan = sf_build_tree(&all(2), &p, kind).unwrap();
            assert_eq!(plan.leaf_depths(), vec![Some(1), Some(1)]);
        }
    }

    #[test]
    fn zero_weights_hang_deepest() {
        let p = prior(&[0.3, 0.0, 0.2, 0.0]);
        let plan = sf_build_tree(&all(4), &p, Construction::ShannonFano).unwrap();
        plan.validate().unwrap();
        let d = plan.leaf_depths();
        let max_pos = d[0].unwrap().max(d[2].unwrap());
        assert!(d[1].unwrap() > max_pos && d[3].unwrap() > max_pos);

        let only_zeros = prior(&[0.0, 0.0, 0.0]);
        let plan = sf_build_tree(&all(3), &only_zeros, Construction::ShannonFano).unwrap();
        plan.validate().unwrap();
    }

    #[test]
    fn trivial_runs() {
        let p = prior(&[0.3, 0.3, 0.3, 0.3, 0.3, 0.3]);
        let plan = NestedPlan::build(&p, Construction::MaxEntropy, PlanOptions::default());
        assert_eq!(plan.roots().len(), 3);
        let r = run_adaptive(&plan, &PopulationVector::zeros(6), None).unwrap();
        assert_eq!(r.tests_used, 3);
        assert!(r.transcript.iter().all(|t| !t.positive));
        assert_eq!(r.recovered, RecoveredVector::zeros(6));

        let single = prior(&[0.4]);
        let plan = NestedPlan::build(&single, Construction::MaxEntropy, PlanOptions::default());
        let r = run_adaptive(&plan, &PopulationVector(vec![true]), None).unwrap();
        assert_eq!(r.tests_used, 1);
        assert_eq!(r.recovered.bits(), &[true]);
    }

    /// Straight-line reference executor for a two-level tree: root tested,
    /// then children tested in order, recursing depth-first.
    #[test]
    fn me_run_matches_hand_walk() {
        let p = prior(&[0.3; 4]);
        let plan = NestedPlan::build(&p, Construction::MaxEntropy, PlanOptions::default());
        // Groups {0,1} and {2,3}; each splits into two singletons.
        let truth = PopulationVector(vec![false, true, false, false]);
        let r = run_adaptive(&plan, &truth, None).unwrap();
        let expect = vec![
            (vec![0, 1], true),
            (vec![0], false),
            (vec![1], true),
            (vec![2, 3], false),
        ];
        let got: Vec<(Vec<usize>, bool)> =
            r.transcript.iter().map(|t| (t.members.clone(), t.positive)).collect();
        assert_eq!(got, expect);
        assert_eq!(r.tests_used, 4);
        assert!(r.recovered.matches(&truth));
    }

    #[test]
    fn inference_skips_forced_sibling() {
        let p = prior(&[0.3; 4]);
        let plan = NestedPlan::build(
            &p,
            Construction::MaxEntropy,
            PlanOptions {
                counts_both_children: false,
                ..Default::default()
            },
        );
        let truth = PopulationVector(vec![false, true, false, false]);
        let r = run_adaptive(&plan, &truth, None).unwrap();
        // {0,1}+, {0}-, {1} inferred, {2,3}-.
        assert_eq!(r.tests_used, 3);
        assert!(r.recovered.matches(&truth));
    }

    #[test]
    fn shortcut_returns_zero_without_tests() {
        let p = prior(&[0.001; 5]);
        let plan = NestedPlan::build(&p, Construction::MaxEntropy, PlanOptions::default());
        let truth = PopulationVector(vec![true, false, false, false, false]);
        let r = run_adaptive(&plan, &truth, Some(0.01)).unwrap();
        assert_eq!(r.tests_used, 0);
        assert_eq!(r.recovered, RecoveredVector::zeros(5));
        let r = run_adaptive(&plan, &truth, None).unwrap();
        assert!(r.recovered.matches(&truth));
    }

    #[test]
    fn certain_items_cost_nothing() {
        let p = prior(&[1.0, 0.0, 0.2]);
        let plan = NestedPlan::build(&p, Construction::Huffman, PlanOptions::default());
        assert_eq!(plan.auto_defective(), &[0]);
        assert_eq!(plan.auto_clear(), &[1]);
        let r = run_adaptive(&plan, &PopulationVector(vec![true, false, false]), None).unwrap();
        assert_eq!(r.tests_used, 1);
        assert_eq!(r.recovered.bits(), &[true, false, false]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = prior(&[0.2, 0.2]);
        let plan = NestedPlan::build(&p, Construction::MaxEntropy, PlanOptions::default());
        assert!(run_adaptive(&plan, &PopulationVector::zeros(3), None).is_err());
    }

    #[test]
    fn transcript_is_laminar() {
        let probs: Vec<f64> = (0..40).map(|i| 0.01 + 0.01 * (i % 7) as f64).collect();
        let p = prior(&probs);
        for construction in [Construction::MaxEntropy, Construction::ShannonFano, Construction::Huffman] {
            for both in [true, false] {
                let plan = NestedPlan::build(
                    &p,
                    construction,
                    PlanOptions {
                        counts_both_children: both,
                        ..Default::default()
                    },
                );
                let key = |m: &[usize]| {
                    let mut v = m.to_vec();
                    v.sort_unstable();
                    v
                };
                let index: HashMap<Vec<usize>, usize> = plan
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (key(&n.members), i))
                    .collect();
                let mut parent = HashMap::new();
                for (i, n) in plan.nodes().iter().enumerate() {
                    if let Some([l, r]) = n.children {
                        parent.insert(l, i);
                        parent.insert(r, i);
                    }
                }
                let roots: HashSet<usize> = plan.roots().iter().copied().collect();
                let truth = PopulationVector((0..40).map(|i| i % 9 == 3).collect());
                let r = run_adaptive(&plan, &truth, None).unwrap();
                let mut known_positive = HashSet::new();
                for t in &r.transcript {
                    let id = index[&key(&t.members)];
                    if !roots.contains(&id) {
                        let par = parent[&id];
                        assert!(known_positive.contains(&par), "tested child of unresolved node");
                        // Inferred siblings count as known positive.
                        let [l, rt] = plan.nodes()[par].children.unwrap();
                        if !both && id == l && !t.positive {
                            known_positive.insert(rt);
                        }
                    }
                    if t.positive {
                        known_positive.insert(id);
                    }
                }
                assert!(r.recovered.matches(&truth));
            }
        }
    }

    #[test]
    fn prepartitioned_all_zero_assigned() {
        let p = prior(&[1e-9; 50]);
        let truth = PopulationVector::zeros(50);
        let r = run_prepartitioned_adaptive(&p, 0.01, &truth, Construction::MaxEntropy).unwrap();
        assert_eq!(r.tests_used, 0);
        assert_eq!(r.recovered, RecoveredVector::zeros(50));
    }

    #[test]
    fn prepartitioned_all_tail() {
        let p = prior(&[0.6, 0.7, 0.55, 0.9]);
        let truth = PopulationVector(vec![true, false, true, false]);
        let r = run_prepartitioned_adaptive(&p, 0.01, &truth, Construction::Huffman).unwrap();
        assert_eq!(r.tests_used, 4);
        assert!(r.recovered.matches(&truth));
    }

    #[test]
    fn prepartitioned_is_exact_without_zero_items() {
        let probs: Vec<f64> = (0..300).map(|i| 0.002 + 0.3 * (i as f64 / 300.0).powi(3)).collect();
        let p = prior(&probs);
        let plan = PrepartitionedPlan::build(&p, 0.01, Construction::MaxEntropy).unwrap();
        assert!(plan.partition.zero_assigned().is_empty());
        let truth = PopulationVector((0..300).map(|i| i % 37 == 5 || i == 299).collect());
        let r = plan.run(&truth).unwrap();
        assert!(r.recovered.matches(&truth));
        assert_eq!(r.tests_used, r.transcript.len());
    }
}
