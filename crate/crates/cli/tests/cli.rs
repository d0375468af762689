use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = smoe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, n: &str) -> String {
    let d = dir.join("data");
    ok(&["simulate", "--scenario", "g2", "--n", n, "--seed", "3", "--out", d.to_str().unwrap()]);
    d.join("manifest.json").to_str().unwrap().to_string()
}

const SHORT: [&str; 6] = ["--iters", "150", "--burnin", "50", "--knots", "8"];

#[test]
fn sweep_writes_one_row_per_g() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = simulate(dir.path(), "150");
    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", "--manifest", &manifest, "--G", "2,3,4", "--out", out.to_str().unwrap()];
    args.extend(SHORT);
    ok(&args);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 1);
    for g in 2..=4 {
        assert!(out.join(format!("G{g}")).join("summary.json").exists());
    }
}

#[test]
fn fit_twice_gives_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = simulate(dir.path(), "120");
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["fit", "--manifest", &manifest, "--G", "2", "--seed", "11", "--out", out.to_str().unwrap()];
        args.extend(SHORT);
        ok(&args);
        summaries.push(fs::read(out.join("summary.json")).unwrap());
        assert!(out.join("bands.csv").exists() && out.join("draws").join("manifest.json").exists());
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn truth_against_itself_has_unit_ari() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "50");
    let truth = dir.path().join("data").join("truth.csv");
    let t = truth.to_str().unwrap();
    let report = ok(&["metrics", "--partition", t, "--truth", t]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["truth"]["ari"].as_f64().unwrap(), 1.0);
    assert!((v["truth"]["sari"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn fit_metrics_and_plotdata_chain() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = simulate(dir.path(), "150");
    let fit = dir.path().join("fit");
    let mut args = vec!["fit", "--manifest", &manifest, "--out", fit.to_str().unwrap()];
    args.extend(SHORT);
    ok(&args);
    let truth = dir.path().join("data").join("truth.csv");
    let m = dir.path().join("metrics");
    let report = ok(&[
        "metrics",
        "--fit",
        fit.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        m.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["truth"]["rase"].as_array().unwrap().len(), 2);
    assert!(m.join("rase.csv").exists());
    let plots = dir.path().join("plots");
    ok(&["plotdata", "--fit", fit.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    let theta = fs::read_to_string(plots.join("theta_means.csv")).unwrap();
    // 2 components × (3 + 2 + 3 + 4 + 3) categories, plus comment and header
    assert_eq!(theta.lines().count(), 2 + 2 * 15);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = simulate(dir.path(), "40");
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(smoe(&["fit"]).status.code(), Some(2));
    assert_eq!(smoe(&["fit", "--manifest", &manifest, "--variant", "bogus", "--out", o]).status.code(), Some(2));
    assert_eq!(
        smoe(&["fit", "--manifest", &manifest, "--iters", "10", "--burnin", "10", "--out", o]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        smoe(&["fit", "--manifest", missing.to_str().unwrap(), "--out", o]).status.code(),
        Some(3)
    );
    let bad = dir.path().join("data").join("responses.csv");
    let text = fs::read_to_string(&bad).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    cells[1] = "";
    lines[1] = cells.join(",");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out = smoe(&["fit", "--manifest", &manifest, "--out", o]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
}

#[test]
fn votes_schema_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/brexit_schema/manifest.json");
    let out = dir.path().join("sweep");
    let f = fixture.to_str().unwrap();
    ok(&["sweep", "--manifest", f, "--G", "1..3", "--iters", "150", "--burnin", "50", "--knots", "8", "--out", out.to_str().unwrap()]);
    let fit = out.join("G3");
    let report = ok(&["metrics", "--fit", fit.to_str().unwrap(), "--labels", "party", "--out", dir.path().join("m").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let tab = &v["crosstab"];
    let total: u64 = tab["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|c| c.as_u64().unwrap()))
        .sum();
    assert_eq!(total, 120);
    ok(&["plotdata", "--fit", fit.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    let theta = fs::read_to_string(dir.path().join("p").join("theta_means.csv")).unwrap();
    assert!(theta.contains(",aye,") && theta.contains(",absent,"));
}
