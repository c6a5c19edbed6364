//! `grouptest`: plan construction, bounds, oracle checks and simulation
//! campaigns from the command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage, input or I/O error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use grouptest::adaptive::{Construction, ItemOrder, NestedPlan, PlanOptions, PrepartitionedPlan};
use grouptest::bounds::all_bounds;
use grouptest::formats::{
    bounds_to_csv, bounds_to_text, matrix_to_csv, matrix_to_json, parse_campaign, parse_prior_spec, partition_to_json,
    plan_to_json, reports_to_csv, summary_to_csv,
};
use grouptest::nonadaptive::{build_block_matrix, build_cca_matrix, num_tests_cca, optimal_g};
use grouptest::oracle::run_all_checks;
use grouptest::sim::{run_campaign, summarize, Algorithm};
use grouptest::PriorVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "grouptest", version, about = "Group testing with non-uniform priors")]
struct Cli {
    /// Seed for matrix sampling and oracle draws. Overrides a campaign's
    /// base_seed when given to `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Tolerated error for the pre-partitioned model.
    #[arg(long, global = true, default_value_t = 0.01)]
    eps: f64,

    /// Slack parameter of the concentration, coupon-collector and block bounds.
    #[arg(long, global = true, default_value_t = 1.0)]
    delta: f64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Output file; written atomically. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an adaptive plan or a test matrix for a prior.
    Plan {
        /// Prior spec JSON file, or `-` for stdin.
        #[arg(long)]
        prior: PathBuf,
        /// adaptive-me, adaptive-sf, adaptive-huffman, prepartitioned-*, cca or block.
        #[arg(long)]
        algorithm: String,
        /// Sort items by ascending prior before grouping.
        #[arg(long)]
        ascending: bool,
        /// Skip testing a sibling whose positivity is already implied.
        #[arg(long)]
        infer_siblings: bool,
    },
    /// Run a simulation campaign and write per-trial and summary results.
    Simulate {
        /// Campaign JSON file.
        #[arg(long)]
        campaign: PathBuf,
        /// Summary CSV path; defaults to `<out>.summary.csv` when `--out` is set.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print the five closed-form bounds for a prior.
    Bounds {
        #[arg(long)]
        prior: PathBuf,
        /// Target error probability for the entropy lower bound.
        #[arg(long, default_value_t = 0.0)]
        pe: f64,
    },
    /// Run the brute-force oracle battery.
    Oracle {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug)]
enum Failure {
    /// Exit 1.
    Check(String),
    /// Exit 2.
    Input(String),
}

impl From<grouptest::Error> for Failure {
    fn from(e: grouptest::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(format!("I/O error: {e}"))
    }
}

fn read_source(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn read_prior(path: &Path) -> Result<PriorVector, Failure> {
    Ok(parse_prior_spec(&read_source(path)?)?)
}

/// Write to a sibling temporary file and rename it into place, so readers
/// never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::Input(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn validate_globals(cli: &Cli) -> Result<(), Failure> {
    if !(cli.eps.is_finite() && cli.eps > 0.0 && cli.eps < 1.0) {
        return Err(Failure::Input(format!("--eps must lie in (0, 1), got {}", cli.eps)));
    }
    if !(cli.delta.is_finite() && cli.delta > 0.0) {
        return Err(Failure::Input(format!("--delta must be positive, got {}", cli.delta)));
    }
    Ok(())
}

fn cmd_plan(cli: &Cli, prior: &Path, tag: &str, ascending: bool, infer: bool) -> Result<(), Failure> {
    let p = read_prior(prior)?;
    let algorithm = Algorithm::from_tag(tag)?;
    let seed = cli.seed.unwrap_or(0);
    let body = match algorithm {
        Algorithm::AdaptiveMe | Algorithm::AdaptiveSf | Algorithm::AdaptiveHuffman => {
            let opts = PlanOptions {
                order: if ascending { ItemOrder::Ascending } else { ItemOrder::Given },
                counts_both_children: !infer,
            };
            plan_to_json(&NestedPlan::build(&p, algorithm.construction().unwrap(), opts))
        }
        Algorithm::PrepartitionedMe | Algorithm::PrepartitionedSf | Algorithm::PrepartitionedHuffman => {
            let construction: Construction = algorithm.construction().unwrap();
            let pre = PrepartitionedPlan::build(&p, cli.eps, construction)?;
            let plans: Vec<serde_json::Value> = pre
                .plans
                .iter()
                .map(|pl| serde_json::from_str(&plan_to_json(pl)).expect("plan JSON"))
                .collect();
            let doc = serde_json::json!({
                "partition": serde_json::from_str::<serde_json::Value>(&partition_to_json(&pre.partition)).expect("partition JSON"),
                "individual": pre.individual,
                "certain": pre.certain,
                "plans": plans,
            });
            serde_json::to_string(&doc).expect("JSON") + "\n"
        }
        Algorithm::Cca => {
            let t = num_tests_cca(&p, cli.delta);
            let m = build_cca_matrix(&p, t, optimal_g(&p)?, seed)?;
            if cli.format == Format::Csv {
                matrix_to_csv(&m)
            } else {
                matrix_to_json(&m, Some(seed))
            }
        }
        Algorithm::Block => {
            let d = build_block_matrix(&p, cli.eps, cli.delta, seed)?;
            if cli.format == Format::Csv {
                matrix_to_csv(&d.matrix)
            } else {
                matrix_to_json(&d.matrix, Some(seed))
            }
        }
    };
    let body = if body.ends_with('\n') { body } else { body + "\n" };
    emit(cli.out.as_deref(), &body)?;
    // Predicted bounds alongside the artifact, kept off stdout when stdout
    // carries the artifact itself.
    let table = bounds_to_text(&all_bounds(&p, cli.eps, cli.delta, 0.0)?);
    if cli.out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, campaign: &Path, summary: Option<&Path>) -> Result<(), Failure> {
    let mut c = parse_campaign(&read_source(campaign)?)?;
    if let Some(seed) = cli.seed {
        c.base_seed = seed;
    }
    let reports = run_campaign(&c)?;
    let rows = summarize(&reports);
    let summary_path = summary.map(Path::to_path_buf).or_else(|| {
        cli.out.as_ref().map(|o| {
            let mut name = o.file_stem().unwrap_or_default().to_os_string();
            name.push(".summary.csv");
            o.with_file_name(name)
        })
    });
    match cli.format {
        Format::Json => {
            let doc = serde_json::json!({ "campaign": c, "reports": reports, "summary": rows });
            emit(cli.out.as_deref(), &(serde_json::to_string(&doc).expect("JSON") + "\n"))?;
        }
        Format::Csv | Format::Text => {
            emit(cli.out.as_deref(), &reports_to_csv(&reports))?;
            match &summary_path {
                Some(p) => write_atomic(p, &summary_to_csv(&rows))?,
                None => print!("{}", summary_to_csv(&rows)),
            }
        }
    }
    Ok(())
}

fn cmd_bounds(cli: &Cli, prior: &Path, pe: f64) -> Result<(), Failure> {
    let p = read_prior(prior)?;
    let reports = all_bounds(&p, cli.eps, cli.delta, pe)?;
    let body = match cli.format {
        Format::Text => bounds_to_text(&reports),
        Format::Csv => bounds_to_csv(&reports),
        Format::Json => serde_json::to_string_pretty(&reports).expect("JSON") + "\n",
    };
    emit(cli.out.as_deref(), &body)
}

fn cmd_oracle(cli: &Cli, inject_fault: bool) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    let checks = run_all_checks(seed, inject_fault);
    // Timings vary run to run, so they go to stderr only.
    for c in &checks {
        eprintln!("{:<32} {:>10.1} ms", c.name, c.elapsed_ms);
    }
    let body = match cli.format {
        Format::Json => serde_json::to_string_pretty(&checks).expect("JSON") + "\n",
        Format::Csv => {
            let mut s = String::from("check,passed,detail\n");
            for c in &checks {
                s.push_str(&format!("{},{},\"{}\"\n", c.name, c.passed, c.detail.replace('"', "\"\"")));
            }
            s
        }
        Format::Text => checks
            .iter()
            .map(|c| format!("{:<32} {}  {}\n", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail))
            .collect(),
    };
    emit(cli.out.as_deref(), &body)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    validate_globals(cli)?;
    match &cli.command {
        Command::Plan {
            prior,
            algorithm,
            ascending,
            infer_siblings,
        } => cmd_plan(cli, prior, algorithm, *ascending, *infer_siblings),
        Command::Simulate { campaign, summary } => cmd_simulate(cli, campaign, summary.as_deref()),
        Command::Bounds { prior, pe } => cmd_bounds(cli, prior, *pe),
        Command::Oracle { inject_fault } => cmd_oracle(cli, *inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("grouptest: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("grouptest: {msg}");
            ExitCode::from(2)
        }
    }
}
