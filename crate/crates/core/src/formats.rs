//! JSON and CSV interchange formats.
//!
//! Every parser validates its input and returns an [`Error`] on malformed or
//! oversized data; none of them panic.

use serde::{Deserialize, Serialize};

use crate::adaptive::{Construction, NestedPlan, PlanNode, TestRecord};
use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::nonadaptive::{BlockSpan, TestMatrix};
use crate::partition::Partition;
use crate::priors::{generate_prior, PriorFamily, PriorVector};
use crate::sim::{Campaign, SummaryRow, TrialReport};

/// Upper limit on item counts accepted from files.
pub const MAX_ITEMS: usize = 1 << 22;
/// Upper limit on row ids in edge lists and outcome files.
pub const MAX_ROWS: usize = 1 << 20;

fn cap(what: &'static str, got: usize) -> Result<()> {
    if got > MAX_ITEMS {
        return Err(Error::SizeGuard {
            what,
            got,
            limit: MAX_ITEMS,
        });
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PriorSpec {
    Explicit {
        probs: Vec<f64>,
    },
    Family {
        family: String,
        n: usize,
        mu: f64,
        #[serde(default)]
        rho: Option<f64>,
    },
}

/// `{"probs": [...]}` or `{"family": ..., "n": ..., "mu": ..., "rho": ...}`.
pub fn parse_prior_spec(s: &str) -> Result<PriorVector> {
    match serde_json::from_str::<PriorSpec>(s)? {
        PriorSpec::Explicit { probs } => {
            cap("prior", probs.len())?;
            PriorVector::new(probs)
        }
        PriorSpec::Family { family, n, mu, rho } => {
            cap("prior", n)?;
            generate_prior(PriorFamily::from_name(&family, rho)?, n, mu)
        }
    }
}

pub fn prior_to_json(p: &PriorVector) -> String {
    serde_json::to_string(p).expect("prior serializes")
}

pub fn parse_partition_json(s: &str) -> Result<Partition> {
    let part: Partition = serde_json::from_str(s)?;
    cap("partition", part.n)?;
    part.check_cover()?;
    if part.ordering.len() != part.n {
        return Err(Error::InvalidPartition(format!(
            "ordering has {} entries, n = {}",
            part.ordering.len(),
            part.n
        )));
    }
    Ok(part)
}

pub fn partition_to_json(part: &Partition) -> String {
    serde_json::to_string(part).expect("partition serializes")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    n: usize,
    construction: Construction,
    counts_both_children: bool,
    mu: f64,
    roots: Vec<usize>,
    nodes: Vec<PlanNode>,
    #[serde(default)]
    auto_defective: Vec<usize>,
    #[serde(default)]
    auto_clear: Vec<usize>,
}

/// Plans are stored as a flat node list with child indices, so file depth
/// does not grow with tree depth.
pub fn plan_to_json(plan: &NestedPlan) -> String {
    let file = PlanFile {
        n: plan.n(),
        construction: plan.construction(),
        counts_both_children: plan.counts_both_children(),
        mu: plan.mu(),
        roots: plan.roots().to_vec(),
        nodes: plan.nodes().to_vec(),
        auto_defective: plan.auto_defective().to_vec(),
        auto_clear: plan.auto_clear().to_vec(),
    };
    serde_json::to_string(&file).expect("plan serializes")
}

pub fn parse_plan_json(s: &str) -> Result<NestedPlan> {
    let f: PlanFile = serde_json::from_str(s)?;
    cap("plan", f.n)?;
    NestedPlan::from_parts(
        f.n,
        f.construction,
        f.counts_both_children,
        f.nodes,
        f.roots,
        f.auto_defective,
        f.auto_clear,
        f.mu,
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    n: usize,
    rows: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocks: Option<Vec<BlockSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Matrix JSON with an optional generating seed.
pub fn matrix_to_json(m: &TestMatrix, seed: Option<u64>) -> String {
    let file = MatrixFile {
        n: m.n,
        rows: m.rows.clone(),
        blocks: m.blocks.clone(),
        seed,
    };
    serde_json::to_string(&file).expect("matrix serializes")
}

pub fn parse_matrix_json(s: &str) -> Result<(TestMatrix, Option<u64>)> {
    let f: MatrixFile = serde_json::from_str(s)?;
    cap("matrix", f.n)?;
    cap("matrix rows", f.rows.len())?;
    let m = TestMatrix {
        n: f.n,
        rows: f.rows,
        blocks: f.blocks,
    };
    m.validate()?;
    Ok((m, f.seed))
}

/// Edge list `row_id,item_id`, one line per matrix entry.
pub fn matrix_to_csv(m: &TestMatrix) -> String {
    let mut out = String::from("row_id,item_id\n");
    for (r, row) in m.rows.iter().enumerate() {
        for i in row {
            out.push_str(&format!("{r},{i}\n"));
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct Edge {
    row_id: usize,
    item_id: usize,
}

/// Parse an edge list over `n` items. The row count is one past the largest
/// row id; rows without edges are empty. Duplicate edges collapse.
pub fn parse_matrix_csv(s: &str, n: usize) -> Result<TestMatrix> {
    cap("matrix", n)?;
    let mut rdr = csv::Reader::from_reader(s.as_bytes());
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for rec in rdr.deserialize::<Edge>() {
        let e = rec?;
        if e.row_id >= MAX_ROWS {
            return Err(Error::SizeGuard {
                what: "matrix rows",
                got: e.row_id.saturating_add(1),
                limit: MAX_ROWS,
            });
        }
        if e.item_id >= n {
            return Err(Error::InvalidMatrix(format!(
                "row {} includes item {}, but n = {n}",
                e.row_id, e.item_id
            )));
        }
        if rows.len() <= e.row_id {
            rows.resize(e.row_id + 1, Vec::new());
        }
        rows[e.row_id].push(e.item_id);
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    TestMatrix::new(n, rows)
}

/// `row_id,outcome` with outcomes written as 0/1.
pub fn outcomes_to_csv(outcomes: &[bool]) -> String {
    let mut out = String::from("row_id,outcome\n");
    for (r, y) in outcomes.iter().enumerate() {
        out.push_str(&format!("{r},{}\n", u8::from(*y)));
    }
    out
}

#[derive(Debug, Deserialize)]
struct OutcomeLine {
    row_id: usize,
    outcome: u8,
}

/// Parse an outcome vector. Row ids may come in any order but must cover
/// `0..T` exactly once.
pub fn parse_outcomes_csv(s: &str) -> Result<Vec<bool>> {
    let mut rdr = csv::Reader::from_reader(s.as_bytes());
    let mut lines = Vec::new();
    for rec in rdr.deserialize::<OutcomeLine>() {
        let l = rec?;
        if l.outcome > 1 {
            return Err(Error::Parse(format!(
                "row {}: outcome must be 0 or 1, got {}",
                l.row_id, l.outcome
            )));
        }
        lines.push(l);
        cap("outcome rows", lines.len())?;
    }
    let rows = lines.len();
    let mut out: Vec<Option<bool>> = vec![None; rows];
    for l in lines {
        let slot = out
            .get_mut(l.row_id)
            .ok_or_else(|| Error::Parse(format!("row id {} out of range for {rows} rows", l.row_id)))?;
        if slot.replace(l.outcome == 1).is_some() {
            return Err(Error::Parse(format!("row id {} appears twice", l.row_id)));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(r, y)| y.ok_or_else(|| Error::Parse(format!("row id {r} missing"))))
        .collect()
}

/// Campaign JSON; checks sizes but defers semantic checks to
/// [`Campaign::validate`].
pub fn parse_campaign(s: &str) -> Result<Campaign> {
    let c: Campaign = serde_json::from_str(s)?;
    cap("campaign n", c.n)?;
    cap("campaign trials", c.sweep.len().saturating_mul(c.trials))?;
    Ok(c)
}

pub fn campaign_to_json(c: &Campaign) -> String {
    serde_json::to_string_pretty(c).expect("campaign serializes")
}

pub const REPORT_HEADER: &str = "trial_id,seed,algorithm,n,mu,entropy,tests,success";

pub fn reports_to_csv(reports: &[TrialReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.trial_id,
            r.seed,
            r.algorithm.tag(),
            r.n,
            r.mu,
            r.entropy,
            r.tests,
            u8::from(r.success)
        ));
    }
    out
}

pub const SUMMARY_HEADER: &str =
    "algorithm,point,mu,entropy,trials,mean_tests,std_tests,success_rate,bound_2h_2mu";

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.algorithm.tag(),
            r.point,
            r.mu,
            r.entropy,
            r.trials,
            r.mean_tests,
            r.std_tests,
            r.success_rate,
            r.bound_2h_2mu
        ));
    }
    out
}

pub const TRANSCRIPT_HEADER: &str = "trial_id,step,subset_size,outcome";

pub fn transcript_to_csv(trial_id: usize, transcript: &[TestRecord]) -> String {
    let mut out = format!("{TRANSCRIPT_HEADER}\n");
    for (step, t) in transcript.iter().enumerate() {
        out.push_str(&format!(
            "{trial_id},{step},{},{}\n",
            t.members.len(),
            u8::from(t.positive)
        ));
    }
    out
}

pub fn bounds_to_csv(reports: &[BoundReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["theorem", "test_bound", "error_bound", "applicable", "notes"])
        .expect("in-memory write");
    for r in reports {
        w.write_record([
            r.theorem.to_string(),
            r.test_bound.to_string(),
            r.error_bound.to_string(),
            r.applicable.to_string(),
            r.notes.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn bounds_to_text(reports: &[BoundReport]) -> String {
    let mut out = format!(
        "{:<8} {:>14} {:>12} {:>11}  notes\n",
        "theorem", "tests", "error", "applicable"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<8} {:>14.3} {:>12.4e} {:>11}  {}\n",
            r.theorem.to_string(),
            r.test_bound,
            r.error_bound,
            r.applicable,
            r.notes
        ));
    }
    out
}
