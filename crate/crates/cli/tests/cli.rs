use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use svmbal::{
    effect_estimate, gram, q_matrix, read_csv, solve_dual, solve_init, standardize, weighted_mmd, ColumnRoles,
    Dataset, Estimand, KernelSpec, QMatrix,
};

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tiny.csv")
}

fn svmbal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svmbal")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = svmbal(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    svmbal(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.deserialize().map(|r| r.unwrap()).collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The bundled data prepared the way the CLI does by default.
fn direct() -> (Dataset, QMatrix) {
    let roles = ColumnRoles { treatment: "treat".into(), outcome: Some("y".into()), covariates: None };
    let data = read_csv(tiny(), &roles).unwrap();
    let xs = standardize(data.x()).xs;
    let q = q_matrix(&gram(&xs, &KernelSpec::Linear).unwrap(), data.w()).unwrap();
    (data, q)
}

fn write_csv(path: &Path, header: &str, lines: impl Iterator<Item = String>) {
    let mut text = format!("{header}\n");
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn path_table_matches_direct_solves() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["path", "-i", s(&tiny()), "--outcome", "y", "-o", s(dir.path())]);
    let table = rows(&dir.path().join("path.csv"));
    let (data, q) = direct();
    let w = data.w();
    let init = solve_init(&q, w).unwrap();
    assert!((num(&table[0], "lambda") - init.lambda).abs() <= 1e-9 * init.lambda);
    assert!(table.len() >= 3);
    for row in &table {
        let lambda = num(row, "lambda");
        let sol = solve_dual(&q, w, lambda).unwrap();
        let ws: f64 = sol.weights().iter().sum();
        assert!((num(row, "weight_sum") - ws).abs() < 1e-6, "lambda {lambda}");
        let mmd = weighted_mmd(&sol.normalized(w).unwrap(), &q).unwrap();
        assert!((num(row, "mmd") - mmd).abs() < 1e-6, "lambda {lambda}");
        let counts = ["margin", "inside", "outside"].iter().map(|k| num(row, k) as usize).sum::<usize>();
        assert_eq!(counts, data.n());
    }
    // the path is traced from large to small λ
    assert!(table.windows(2).all(|p| num(&p[0], "lambda") > num(&p[1], "lambda")));
    assert_eq!(table.last().unwrap()["events"], "terminal");
}

#[test]
fn path_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["path", "-i", s(&tiny()), "--kernel", "rbf", "-o", s(d.path())]);
    }
    for f in ["path.csv", "path_summary.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn lambda_min_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["path", "-i", s(&tiny()), "--lambda-min", "0.5", "-o", s(dir.path())]);
    let summary = json(&dir.path().join("path_summary.json"));
    assert_eq!(summary["lambda_min"], 0.5);
    let table = rows(&dir.path().join("path.csv"));
    assert!(table.iter().all(|r| num(r, "lambda") >= 0.5));
    assert_eq!(json(&dir.path().join("manifest.json"))["config"]["lambda_min"], 0.5);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let text = format!(
        "input = {:?}\noutcome = \"y\"\nkernel = \"poly:2:1\"\nlambda_min = 0.01\n\n[qip]\nexact_cap = 20\n",
        tiny()
    );
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    ok(&["path", "--config", s(&cfg), "--lambda-min", "0.02", "-o", s(&out)]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["kernel"], "poly:2:1");
    assert_eq!(m["config"]["lambda_min"], 0.02);
    assert_eq!(m["config"]["qip"]["exact_cap"], 20);
}

#[test]
fn one_class_data_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    write_csv(&csv, "treat,x1", (0..6).map(|i| format!("1,{i}")));
    assert_eq!(code(&["path", "-i", s(&csv), "-o", s(&dir.path().join("out"))]), 2);
}

#[test]
fn missing_column_and_bad_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["path", "-i", s(&tiny()), "--treatment", "nope", "-o", s(&out)]), 2);
    assert_eq!(code(&["path", "-i", s(&tiny()), "--kernel", "cubic", "-o", s(&out)]), 2);
    assert_eq!(code(&["estimate", "-i", s(&tiny()), "-o", s(&out)]), 2);
}

#[test]
fn imbalance_estimate_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["estimate", "-i", s(&tiny()), "--outcome", "y", "--criterion", "imbalance", "-o", s(dir.path())]);
    let est = json(&dir.path().join("estimate.json"));
    let (data, q) = direct();
    let w = data.w();
    let sol = solve_init(&q, w).unwrap();
    let oracle = effect_estimate(data.outcome().unwrap(), &sol.normalized(w).unwrap(), w, sol.lambda, Estimand::Sate)
        .unwrap();
    assert!((est["tau_hat"].as_f64().unwrap() - oracle.tau_hat).abs() < 1e-9);
    assert!((est["ess"].as_f64().unwrap() - oracle.ess).abs() < 1e-9);
    assert!((est["lambda"].as_f64().unwrap() - sol.lambda).abs() <= 1e-9 * sol.lambda);
    let se = est["se"].as_f64().unwrap();
    let ci = est["ci95"].as_array().unwrap();
    assert!((ci[0].as_f64().unwrap() - (oracle.tau_hat - 1.96 * se)).abs() < 1e-12);
    assert!((ci[1].as_f64().unwrap() - (oracle.tau_hat + 1.96 * se)).abs() < 1e-12);
    let weights = rows(&dir.path().join("weights.csv"));
    assert_eq!(weights.len(), data.n());
    let treated: f64 = weights.iter().filter(|r| r["treated"] == "1").map(|r| num(r, "weight")).sum();
    assert!((treated - 1.0).abs() < 1e-12);
}

#[test]
fn balance_estimate_is_the_terminal_point() {
    let dir = tempfile::tempdir().unwrap();
    let (p, e) = (dir.path().join("p"), dir.path().join("e"));
    ok(&["path", "-i", s(&tiny()), "--outcome", "y", "-o", s(&p)]);
    ok(&["estimate", "-i", s(&tiny()), "--outcome", "y", "--criterion", "balance", "-o", s(&e)]);
    let last = rows(&p.join("path.csv")).pop().unwrap();
    let est = json(&e.join("estimate.json"));
    assert_eq!(est["lambda"].as_f64().unwrap(), json(&p.join("path_summary.json"))["terminal_lambda"]);
    assert_eq!(est["tau_hat"].as_f64().unwrap(), num(&last, "tau_hat"));
}

#[test]
fn infeasible_criterion_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny();
    let args = ["estimate", "-i", s(&data), "--outcome", "y", "--criterion", "sdim-cap:1e-9", "-o", s(dir.path())];
    assert_eq!(code(&args), 4);
}

#[test]
fn frontier_marks_selected_points() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["frontier", "-i", s(&tiny()), "--outcome", "y", "--criterion", "ess:7", "-o", s(dir.path())]);
    let table = rows(&dir.path().join("frontier.csv"));
    let sel = json(&dir.path().join("selection.json"));
    assert_eq!(sel["imbalance"], 0);
    assert_eq!(sel["balance"], table.len() - 1);
    assert!(table[0]["selected"].contains("imbalance"));
    assert!(table.last().unwrap()["selected"].contains("balance"));
    let k = sel["criterion"]["index"].as_u64().unwrap() as usize;
    assert!(table[k]["selected"].contains("ess:7"));
    // nearest ESS to the target
    let gap = |r: &HashMap<String, String>| (num(r, "ess") - 7.0).abs();
    assert!(table.iter().all(|r| gap(r) >= gap(&table[k])));
}

#[test]
fn qip_compare_on_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["qip-compare", "-i", s(&tiny()), "--outcome", "y", "-o", s(dir.path())]);
    let table = rows(&dir.path().join("qip_compare.csv"));
    assert!(table.iter().all(|r| r["exact"] == "true"));
    for r in &table {
        let (svm, qip) = (num(r, "svm_objective"), num(r, "qip_objective"));
        assert!(svm <= qip + 1e-9 * qip.abs().max(1.0), "relaxation bound at lambda {}", r["lambda"]);
    }
    assert_eq!(num(&table[0], "coverage"), 1.0);
    let summary = json(&dir.path().join("qip_summary.json"));
    assert_eq!(summary["relaxation_violations"], 0);
    assert_eq!(summary["method"], "exact");
}

#[test]
fn tiny_lambda_gives_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["qip-compare", "-i", s(&tiny()), "--lambda-min", "1e-6", "-o", s(dir.path())]);
    let last = rows(&dir.path().join("qip_compare.csv")).pop().unwrap();
    assert_eq!(num(&last, "qip_objective"), 0.0);
    assert_eq!(last["qip_selected"], "0");
    assert_eq!(last["degenerate"], "true");
}

#[test]
fn qip_compare_beyond_cap_needs_heuristic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("big.csv");
    write_csv(
        &csv,
        "treat,x1,x2",
        (0..30).map(|i| {
            let t = i % 3 == 0;
            let x1 = ((i * 37) % 11) as f64 / 5.0 + if t { 0.7 } else { 0.0 };
            let x2 = ((i * 53) % 13) as f64 / 6.0;
            format!("{},{x1},{x2}", u8::from(t))
        }),
    );
    let out = dir.path().join("out");
    assert_eq!(code(&["qip-compare", "-i", s(&csv), "-o", s(&out)]), 2);
    let start = std::time::Instant::now();
    ok(&["qip-compare", "-i", s(&csv), "--heuristic", "--time-budget", "0.05", "-o", s(&out)]);
    let table = rows(&out.join("qip_compare.csv"));
    assert!(table.iter().all(|r| r["exact"] == "false"));
    // one budget per breakpoint plus slack
    assert!(start.elapsed().as_secs_f64() < 0.05 * table.len() as f64 + 10.0);
}

#[test]
fn diagnose_at_requested_lambdas() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["diagnose", "-i", s(&tiny()), "--outcome", "y", "--lambdas", "2.5,0.4", "-o", s(dir.path())]);
    let d = json(&dir.path().join("diagnose.json"));
    let recs = d["records"].as_array().unwrap();
    assert_eq!(recs.len(), 2);
    let (data, q) = direct();
    for (r, l) in recs.iter().zip([2.5, 0.4]) {
        assert_eq!(r["lambda"], l);
        assert!(r["breakpoint"].is_null());
        assert!(r["kkt_max"].as_f64().unwrap() < 1e-6);
        let names: Vec<&str> = r["sdim"].as_array().unwrap().iter().map(|v| v["column"].as_str().unwrap()).collect();
        assert_eq!(names, ["x1", "x2"]);
        let sol = solve_dual(&q, data.w(), l).unwrap();
        let ws: f64 = sol.weights().iter().sum();
        assert!((r["weight_sum"].as_f64().unwrap() - ws).abs() < 1e-6);
    }
}

#[test]
fn simulate_writes_tables_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = ["simulate", "--scenario", "a", "--n", "80", "--reps", "3", "--seed", "7", "--grid", "unweighted,balance,2"];
        let mut args = args.to_vec();
        args.extend(["-o", s(out)]);
        ok(&args);
    }
    let records = rows(&a.join("records.csv"));
    assert_eq!(records.len(), 9);
    let summary = rows(&a.join("summary.csv"));
    let points: Vec<&str> = summary.iter().map(|r| r["point"].as_str()).collect();
    assert_eq!(points, ["unweighted", "balance", "2"]);
    for f in ["records.csv", "summary.csv", "simulation.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["estimate", "-i", s(&tiny()), "--outcome", "y", "--kernel", "rbf", "-o", s(&out)]);
    let manifest = out.join("manifest.json");
    let replayed = dir.path().join("again");
    ok(&["replay", "--manifest", s(&manifest), "-o", s(&replayed)]);
    for f in ["estimate.json", "weights.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(replayed.join(f)).unwrap());
    }
}

#[test]
fn replay_detects_changed_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    std::fs::copy(tiny(), &csv).unwrap();
    let out = dir.path().join("run");
    ok(&["path", "-i", s(&csv), "-o", s(&out)]);
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("0,1.0,0.5,0.5\n");
    std::fs::write(&csv, text).unwrap();
    assert_eq!(code(&["replay", "--manifest", s(&out.join("manifest.json"))]), 1);
}
