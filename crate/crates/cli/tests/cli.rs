use std::path::Path;
use std::process::{Command, Output};

use grouptest::formats::{parse_matrix_json, parse_plan_json, parse_prior_spec};
use grouptest::nonadaptive::num_tests_cca;

fn grouptest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouptest")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const UNIFORM_100: &str = r#"{"family":"uniform","n":100,"mu":2}"#;

#[test]
fn adaptive_plan_is_a_valid_laminar_tree() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write(dir.path(), "p.json", UNIFORM_100);
    let out = grouptest(&["plan", "--prior", &prior, "--algorithm", "adaptive-me"]);
    assert!(out.status.success());
    let plan = parse_plan_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    plan.validate().unwrap();
    assert_eq!(plan.n(), 100);
    // Bounds go to stderr when the plan occupies stdout.
    assert!(String::from_utf8_lossy(&out.stderr).contains("T2"));
}

#[test]
fn cca_matrix_has_default_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write(dir.path(), "p.json", UNIFORM_100);
    let out = grouptest(&["plan", "--prior", &prior, "--algorithm", "cca", "--delta", "1"]);
    assert!(out.status.success());
    let (m, seed) = parse_matrix_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    let p = parse_prior_spec(UNIFORM_100).unwrap();
    // ceil(4e * 2 * 2 * ln 100) = 201
    assert_eq!(m.num_tests(), 201);
    assert_eq!(m.num_tests(), num_tests_cca(&p, 1.0));
    assert_eq!(seed, Some(0));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write(dir.path(), "bad.json", "{\"probs\": [0.1,");
    let out = grouptest(&["bounds", "--prior", &prior]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());

    let missing = dir.path().join("nope.json");
    let out = grouptest(&["bounds", "--prior", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(grouptest(&["frobnicate"]).status.code(), Some(2));
    let out = grouptest(&["bounds", "--prior", &write(dir.path(), "ok.json", UNIFORM_100), "--eps", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = grouptest(&["plan", "--prior", &write(dir.path(), "ok2.json", UNIFORM_100), "--algorithm", "magic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_exit_status_follows_checks() {
    let ok = grouptest(&["oracle"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.contains("pass")));
    // Timings are reported on stderr, one per check.
    assert_eq!(String::from_utf8(ok.stderr).unwrap().matches(" ms").count(), 7);

    let bad = grouptest(&["oracle", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}

#[test]
fn tiny_campaign_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let campaign = write(
        dir.path(),
        "c.json",
        r#"{"family":"uniform","n":10,"sweep":[1.0],"trials":5,"algorithms":["adaptive-me"]}"#,
    );
    let out_path = dir.path().join("run.csv");
    let out = grouptest(&["simulate", "--campaign", &campaign, "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(report.lines().count(), 1 + 5);
    assert!(report.starts_with("trial_id,"));
    let summary = std::fs::read_to_string(dir.path().join("run.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    // Only the two outputs remain: no stray temporary files.
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["c.json", "run.csv", "run.summary.csv"]);
}

#[test]
fn seed_flag_overrides_campaign_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(
        dir.path(),
        "c.json",
        r#"{"family":"linear","n":60,"sweep":[3.0],"trials":8,"algorithms":["cca"],"base_seed":1}"#,
    );
    let a = grouptest(&["simulate", "--campaign", &c]).stdout;
    let b = grouptest(&["simulate", "--campaign", &c, "--seed", "1"]).stdout;
    let other = grouptest(&["simulate", "--campaign", &c, "--seed", "2"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, other);
}

#[test]
fn bounds_formats() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write(dir.path(), "p.json", r#"{"family":"uniform","n":1000,"mu":8}"#);
    let csv = grouptest(&["bounds", "--prior", &prior, "--format", "csv"]);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    let t4 = text.lines().find(|l| l.starts_with("T4")).unwrap();
    let bound: f64 = t4.split(',').nth(1).unwrap().parse().unwrap();
    assert!((bound - 1201.742).abs() < 1e-3, "{t4}");

    let json = grouptest(&["bounds", "--prior", &prior, "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);

    // A skewed prior: the concentration and block rows are flagged.
    let skewed = write(dir.path(), "s.json", r#"{"probs":[0.001,0.002,0.4]}"#);
    let text = String::from_utf8(grouptest(&["bounds", "--prior", &skewed, "--format", "csv"]).stdout).unwrap();
    for tag in ["T3", "T5"] {
        let row = text.lines().find(|l| l.starts_with(tag)).unwrap();
        assert!(row.contains(",false,"), "{row}");
    }
}

#[test]
fn prior_from_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_grouptest"))
        .args(["bounds", "--prior", "-", "--format", "json"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(UNIFORM_100.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
}
