mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{configs_dir, golden_dir};

const SCHEMA: &str = "Industry:conditional,Employees:measure,Payroll:measure";

fn przcdp(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_przcdp"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn config(name: &str) -> PathBuf {
    configs_dir().join(name)
}

/// Data rows of a CSV output, without the comment and header lines.
fn records(path: &Path) -> (String, Vec<BTreeMap<String, String>>) {
    let text = fs::read_to_string(path).unwrap();
    let (comment, body) = text.split_once('\n').unwrap();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let rows = rdr
        .records()
        .map(|r| {
            header
                .iter()
                .zip(r.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect();
    (comment.to_string(), rows)
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn split_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(&["split"], &config("table2.json"), dir.path()));
    let got = fs::read_to_string(dir.path().join("split.csv")).unwrap();
    let want = fs::read_to_string(golden_dir().join("table2b.csv")).unwrap();
    assert!(got.starts_with("# przcdp "));
    assert_eq!(got.split_once('\n').unwrap().1, want);
}

#[test]
fn missing_threshold_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = configs_dir().join("data/table2a.csv");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version": 1, "input": {{"csv": {{"path": {:?}, "schema": "{SCHEMA}"}}}},
                "thresholds": {{"uniform": {{"Employees": 50}}}}}}"#,
            data.to_str().unwrap()
        ),
    );
    let out = przcdp(&["split"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Payroll"));
    assert!(!dir.path().join("out/split.csv").exists());
}

#[test]
fn bad_config_and_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version": 9}"#);
    assert_eq!(przcdp(&["split"], &cfg, dir.path()).status.code(), Some(2));

    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version": 1, "input": {{"csv": {{"path": "nope.csv", "schema": "{SCHEMA}"}}}},
                "thresholds": {{"uniform": {{"Employees": 50, "Payroll": 5}}}}}}"#
        ),
    );
    assert_eq!(przcdp(&["split"], &cfg, dir.path()).status.code(), Some(3));
    // a section the subcommand needs is missing
    assert_eq!(przcdp(&["sweep"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn empty_table_splits_to_header_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("empty.csv"),
        "ROW_ID,Industry,Employees,Payroll\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version": 1, "input": {{"csv": {{"path": "empty.csv", "schema": "{SCHEMA}"}}}},
                "thresholds": {{"uniform": {{"Employees": 50, "Payroll": 5}}}}}}"#
        ),
    );
    ok(przcdp(&["split"], &cfg, dir.path()));
    let (_, rows) = records(&dir.path().join("split.csv"));
    assert!(rows.is_empty());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(przcdp(&["run"], &config("table2.json"), &a));
    ok(przcdp(&["run"], &config("table2.json"), &b));
    ok(przcdp(&["run", "--seed", "99"], &config("table2.json"), &c));
    for f in ["answers.csv", "trace.csv", "policy.json", "ledger.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let (comment, _) = records(&c.join("answers.csv"));
    assert!(comment.ends_with("seed=99"));
    assert_ne!(
        fs::read(a.join("answers.csv")).unwrap(),
        fs::read(c.join("answers.csv")).unwrap()
    );
}

#[test]
fn no_noise_releases_exact_answers() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(
        &["run", "--no-noise"],
        &config("table2.json"),
        dir.path(),
    ));
    let (comment, rows) = records(&dir.path().join("answers.csv"));
    assert!(comment.ends_with("no-noise"));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r["true_value"], r["noisy_value"]);
    }
    let emp: BTreeMap<_, _> = rows
        .iter()
        .filter(|r| r["query_id"] == "emp_by_industry")
        .map(|r| (r["group_key"].clone(), num(r, "true_value")))
        .collect();
    assert_eq!(emp["Agriculture"], 200.0);
    assert_eq!(emp["Mining"], 150.0);
    assert_eq!(emp["Retail"], 20.0);
}

#[test]
fn example6_policy_json() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(&["run"], &config("example6.json"), dir.path()));
    let text = fs::read_to_string(dir.path().join("policy.json")).unwrap();
    let policy = przcdp::accountant::PolicyFunction::from_json(&text).unwrap();
    let table = przcdp::table::load_csv(
        configs_dir().join("data/table2a.csv"),
        przcdp::table::parse_schema_spec(SCHEMA).unwrap(),
    )
    .unwrap();
    let bound = policy.bind(table.schema()).unwrap();
    let sigma = 5f64.sqrt();
    let total = 1.0 / (2.0 * sigma * sigma) + 0.2 + 0.3;
    for (row, m) in table.rows().iter().zip([9.0, 9.0, 4.0, 1.0, 1.0]) {
        let got = bound.evaluate(row).unwrap();
        assert!((got - m * total).abs() < 1e-9, "row {}: {got}", row.id);
    }
}

#[test]
fn mse_theory_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(
        &["mse-theory"],
        &config("mse_theory.json"),
        dir.path(),
    ));
    let (_, rows) = records(&dir.path().join("mse_ratio.csv"));
    assert_eq!(rows.len(), 2 * 2 * (121 + 1));
    let optimal: Vec<_> = rows.iter().filter(|r| r["optimal"] == "true").collect();
    assert_eq!(optimal.len(), 4);
    for o in optimal {
        let best = rows
            .iter()
            .filter(|r| r["alpha"] == o["alpha"] && r["rho"] == o["rho"])
            .map(|r| num(r, "ratio"))
            .fold(f64::INFINITY, f64::min);
        assert!(num(o, "ratio") <= best * (1.0 + 1e-9));
        assert!(num(o, "ratio") > 1.0);
    }
}

#[test]
fn ffu_budgets_shrink_as_target_loosens() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(
        &["ffu"],
        &config("business_median.json"),
        dir.path(),
    ));
    let (_, rows) = records(&dir.path().join("ffu_budgets.csv"));
    let mut by_target: BTreeMap<String, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for r in &rows {
        by_target
            .entry(r["delta_target"].clone())
            .or_default()
            .insert(
                (r["query_id"].clone(), r["group_key"].clone()),
                num(r, "rho"),
            );
    }
    let tight = &by_target["0.05"];
    let loose = &by_target["0.2"];
    assert_eq!(tight.len(), loose.len());
    for (k, rho) in tight {
        assert_eq!(loose[k], rho / 16.0, "{k:?}");
    }
    let (_, cdf) = records(&dir.path().join("ffu_cdf.csv"));
    assert!(!cdf.is_empty());
}

#[test]
fn metrics_realized_below_policy() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(&["metrics"], &config("example6.json"), dir.path()));
    let (_, rows) = records(&dir.path().join("record_metrics.csv"));
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(num(r, "realized_loss") <= num(r, "policy_loss") * (1.0 + 1e-12));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(summary["realized_le_policy"], true);
}

#[test]
fn baseline_and_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(przcdp(
        &["baseline"],
        &config("baseline_aggressive.json"),
        dir.path(),
    ));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("baseline.json")).unwrap())
            .unwrap();
    assert_eq!(summary["total_rho"], 1.5);
    assert_eq!(summary["top_codes"]["EMP"], 100.0);

    let cfg = write_config(
        dir.path(),
        r#"{"version": 1, "seed": 3, "input": {"sim": {"n": 300, "seed": 3}},
            "sweep": {"attributes": ["HT1"], "group_by": ["CatIX"], "thresholds": [50, 500],
                      "rhos": [1], "replicates": 2, "min_group_rows": 10}}"#,
    );
    ok(przcdp(&["sweep"], &cfg, dir.path()));
    let (_, summary) = records(&dir.path().join("sweep_summary.csv"));
    assert_eq!(summary.len(), 2);
    let (_, cdf) = records(&dir.path().join("policy_cdf.csv"));
    assert_eq!(cdf.last().unwrap()["cum_frac"], "1");
    let (_, ares) = records(&dir.path().join("are_sweep.csv"));
    assert!(!ares.is_empty());
}
