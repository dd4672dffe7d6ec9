//! One function per subcommand. Each writes its files into `out_dir` and
//! returns their names; `run` adds the manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DMatrix;
use serde::Serialize;
use svmbal::balance::SUPPORT_TOL;
use svmbal::kernels::{prepare_features, ExpansionRules};
use svmbal::path::{compute_path_with, PathOptions, StopReason};
use svmbal::sim::rep_seed;
use svmbal::{
    balance_report, build_frontier, coverage, gram, kkt_report, kneedle_elbow, q_matrix, read_csv, run_monte_carlo,
    select, solve_qip_exact, solve_qip_heuristic, standardize, Criterion, Dataset, DualSolution, Error, Event,
    FrontierPoint, GridPoint, HeuristicOptions, KernelSpec, KktReport, MonteCarloSpec, PointSet, QMatrix,
    RegularizationPath, Result, Scenario,
};

use crate::config::{Command, RunConfig};
use crate::manifest::{FileDigest, Manifest};

/// Bound tolerance for the KKT report in `diagnose`.
const KKT_TOL: f64 = 1e-9;

struct Outputs {
    files: Vec<&'static str>,
    resolved_kernel: Option<KernelSpec>,
}

/// Runs the configured command and writes `manifest.json` next to its
/// outputs.
pub fn run(config: &RunConfig) -> Result<Manifest> {
    std::fs::create_dir_all(&config.out_dir)?;
    let out = match config.command {
        Command::Path => cmd_path(config)?,
        Command::Estimate => cmd_estimate(config)?,
        Command::Frontier => cmd_frontier(config)?,
        Command::QipCompare => cmd_qip_compare(config)?,
        Command::Simulate => cmd_simulate(config)?,
        Command::Diagnose => cmd_diagnose(config)?,
    };
    let inputs = match &config.input {
        Some(p) => vec![FileDigest::of(p, p.clone())?],
        None => Vec::new(),
    };
    let outputs = out
        .files
        .iter()
        .map(|f| FileDigest::of(&config.out_dir.join(f), PathBuf::from(f)))
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        resolved_kernel: out.resolved_kernel.map(|k| k.to_string()),
        inputs,
        outputs,
    };
    manifest.write(&config.out_dir)?;
    Ok(manifest)
}

struct Prepared {
    data: Dataset,
    /// Columns the balance metrics are reported on, one per covariate.
    xb: DMatrix<f64>,
    kernel: KernelSpec,
    q: QMatrix,
}

fn prepare(c: &RunConfig) -> Result<Prepared> {
    let data = read_csv(c.input()?, &c.roles())?;
    data.validate().into_result()?;
    let xs = prepare_features(data.x(), data.names(), c.features, &ExpansionRules::none(), c.standardize)?;
    let kernel = c.kernel_spec()?.resolve(&xs)?;
    let q = q_matrix(&gram(&xs, &kernel)?, data.w())?;
    let xb = if c.standardize { standardize(data.x()).xs } else { data.x().clone() };
    Ok(Prepared { data, xb, kernel, q })
}

impl Prepared {
    fn path(&self, c: &RunConfig) -> Result<RegularizationPath> {
        let opts = PathOptions { lambda_min: c.lambda_min, max_events: c.max_events };
        compute_path_with(&self.q, self.data.w(), &opts)
    }

    fn frontier(&self, c: &RunConfig, path: &RegularizationPath) -> Result<Vec<FrontierPoint>> {
        build_frontier(path, &self.q, &self.xb, self.data.outcome(), c.estimand)
    }

    fn outcome(&self) -> Result<&[f64]> {
        self.data
            .outcome()
            .ok_or_else(|| Error::InvalidParameter("an outcome column is required (--outcome)".into()))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(c: &RunConfig, name: &str, value: &T) -> Result<()> {
    crate::manifest::write_json(&c.out_dir.join(name), value)
}

fn set_counts(sets: &[PointSet]) -> (usize, usize, usize) {
    let count = |s| sets.iter().filter(|&&x| x == s).count();
    (count(PointSet::Margin), count(PointSet::Inside), count(PointSet::Outside))
}

fn format_event(e: &Event) -> String {
    match e {
        Event::Init => "init".into(),
        Event::MarginEntry(i) => format!("enter:{i}"),
        Event::ExitToZero(i) => format!("exit0:{i}"),
        Event::ExitToOne(i) => format!("exit1:{i}"),
        Event::Collapse(i, j) => format!("collapse:{i}:{j}"),
        Event::Terminal => "terminal".into(),
    }
}

#[derive(Serialize)]
struct PathRow {
    index: usize,
    lambda: f64,
    margin: usize,
    inside: usize,
    outside: usize,
    weight_sum: f64,
    ess: f64,
    mmd: f64,
    normed_dim: f64,
    max_abs_sdim: f64,
    tau_hat: Option<f64>,
    se: Option<f64>,
    events: String,
}

#[derive(Serialize)]
struct PathSummary {
    n: usize,
    n_treated: usize,
    n_control: usize,
    kernel: String,
    lambda_max: f64,
    lambda_min: f64,
    terminal_lambda: f64,
    stop: StopReason,
    exact_balance: bool,
    breakpoints: usize,
    elbow: Option<usize>,
}

fn elbow(points: &[FrontierPoint]) -> Option<usize> {
    // fewer than three points have no elbow
    kneedle_elbow(points).ok().flatten()
}

fn cmd_path(c: &RunConfig) -> Result<Outputs> {
    let p = prepare(c)?;
    let path = p.path(c)?;
    let points = p.frontier(c, &path)?;
    let rows = points.iter().enumerate().map(|(k, pt)| {
        let (margin, inside, outside) = set_counts(&path.breakpoint_solution(k).sets);
        let bp = &path.breakpoints[k];
        PathRow {
            index: k,
            lambda: pt.lambda,
            margin,
            inside,
            outside,
            weight_sum: pt.weight_sum,
            ess: pt.ess,
            mmd: pt.mmd,
            normed_dim: pt.normed_dim,
            max_abs_sdim: pt.max_abs_sdim(),
            tau_hat: pt.estimate.as_ref().map(|e| e.tau_hat),
            se: pt.estimate.as_ref().and_then(|e| e.se),
            events: bp.events.iter().map(format_event).collect::<Vec<_>>().join(" "),
        }
    });
    write_csv(&c.out_dir.join("path.csv"), rows)?;
    let summary = PathSummary {
        n: p.data.n(),
        n_treated: p.data.n_treated(),
        n_control: p.data.n_control(),
        kernel: p.kernel.to_string(),
        lambda_max: path.lambda_max,
        lambda_min: path.lambda_min,
        terminal_lambda: path.terminal_lambda,
        stop: path.stop,
        exact_balance: path.exact_balance,
        breakpoints: path.len(),
        elbow: elbow(&points),
    };
    write_json(c, "path_summary.json", &summary)?;
    Ok(Outputs { files: vec!["path.csv", "path_summary.json"], resolved_kernel: Some(p.kernel) })
}

#[derive(Serialize)]
struct EstimateOut {
    tau_hat: f64,
    se: Option<f64>,
    ci95: Option<[f64; 2]>,
    ess: f64,
    lambda: f64,
    estimand: svmbal::Estimand,
    kernel: String,
    criterion: String,
    index: usize,
    n_support: usize,
    weight_sum: f64,
    mmd: f64,
}

#[derive(Serialize)]
struct WeightRow {
    row: usize,
    treated: u8,
    weight: f64,
}

fn cmd_estimate(c: &RunConfig) -> Result<Outputs> {
    let p = prepare(c)?;
    p.outcome()?;
    let path = p.path(c)?;
    let points = p.frontier(c, &path)?;
    let criterion = c.criterion()?;
    let k = select(&points, criterion)?;
    let pt = &points[k];
    let est = pt.estimate.as_ref().expect("outcome present");
    let out = EstimateOut {
        tau_hat: est.tau_hat,
        se: est.se,
        ci95: est.ci95().map(|(lo, hi)| [lo, hi]),
        ess: est.ess,
        lambda: est.lambda,
        estimand: est.estimand,
        kernel: p.kernel.to_string(),
        criterion: criterion.to_string(),
        index: k,
        n_support: est.n_support,
        weight_sum: pt.weight_sum,
        mmd: pt.mmd,
    };
    write_json(c, "estimate.json", &out)?;
    let weights = path.breakpoint_solution(k).normalized(p.data.w())?;
    let rows = weights.alpha.iter().zip(p.data.treatment()).enumerate().map(|(row, (&weight, &t))| WeightRow {
        row,
        treated: u8::from(t),
        weight,
    });
    write_csv(&c.out_dir.join("weights.csv"), rows)?;
    Ok(Outputs { files: vec!["estimate.json", "weights.csv"], resolved_kernel: Some(p.kernel) })
}

#[derive(Serialize)]
struct FrontierRow {
    index: usize,
    lambda: f64,
    weight_sum: f64,
    ess: f64,
    mmd: f64,
    normed_dim: f64,
    max_abs_sdim: f64,
    tau_hat: Option<f64>,
    se: Option<f64>,
    selected: String,
}

#[derive(Serialize)]
struct CriterionPick {
    rule: String,
    index: Option<usize>,
    error: Option<String>,
}

#[derive(Serialize)]
struct Selection {
    imbalance: usize,
    balance: usize,
    elbow: Option<usize>,
    criterion: CriterionPick,
}

fn cmd_frontier(c: &RunConfig) -> Result<Outputs> {
    let p = prepare(c)?;
    let path = p.path(c)?;
    let points = p.frontier(c, &path)?;
    let criterion = c.criterion()?;
    let picked = select(&points, criterion);
    let sel = Selection {
        imbalance: select(&points, Criterion::Imbalance)?,
        balance: select(&points, Criterion::Balance)?,
        elbow: elbow(&points),
        criterion: CriterionPick {
            rule: criterion.to_string(),
            index: picked.as_ref().ok().copied(),
            error: picked.as_ref().err().map(|e| e.to_string()),
        },
    };
    let labels = |k: usize| {
        let mut l = Vec::new();
        if k == sel.imbalance {
            l.push("imbalance".to_string());
        }
        if Some(k) == sel.elbow {
            l.push("elbow".into());
        }
        if k == sel.balance {
            l.push("balance".into());
        }
        if sel.criterion.index == Some(k) && !l.contains(&sel.criterion.rule) {
            l.push(sel.criterion.rule.clone());
        }
        l.join("|")
    };
    let rows = points.iter().enumerate().map(|(k, pt)| FrontierRow {
        index: k,
        lambda: pt.lambda,
        weight_sum: pt.weight_sum,
        ess: pt.ess,
        mmd: pt.mmd,
        normed_dim: pt.normed_dim,
        max_abs_sdim: pt.max_abs_sdim(),
        tau_hat: pt.estimate.as_ref().map(|e| e.tau_hat),
        se: pt.estimate.as_ref().and_then(|e| e.se),
        selected: labels(k),
    });
    write_csv(&c.out_dir.join("frontier.csv"), rows)?;
    write_json(c, "selection.json", &sel)?;
    Ok(Outputs { files: vec!["frontier.csv", "selection.json"], resolved_kernel: Some(p.kernel) })
}

#[derive(Serialize)]
struct QipRow {
    index: usize,
    lambda: f64,
    svm_objective: f64,
    qip_objective: f64,
    svm_support: usize,
    qip_selected: usize,
    coverage: Option<f64>,
    degenerate: bool,
    exact: bool,
}

#[derive(Serialize)]
struct QipSummary {
    n: usize,
    method: &'static str,
    breakpoints: usize,
    coverage_at_lambda_max: Option<f64>,
    mean_coverage: Option<f64>,
    /// Breakpoints where the continuous objective exceeds the integer one.
    relaxation_violations: usize,
}

fn cmd_qip_compare(c: &RunConfig) -> Result<Outputs> {
    let p = prepare(c)?;
    let n = p.data.n();
    if n > c.qip.exact_cap && !c.qip.heuristic {
        return Err(Error::TooLarge { n, cap: c.qip.exact_cap });
    }
    let path = p.path(c)?;
    let w = p.data.w();
    let mut rows = Vec::with_capacity(path.len());
    for k in 0..path.len() {
        let sol = path.breakpoint_solution(k);
        let lambda = sol.lambda;
        let qip = if c.qip.heuristic {
            let opts = HeuristicOptions {
                time_budget: Duration::from_secs_f64(c.qip.time_budget_secs),
                iterations: c.qip.iterations,
                restarts: c.qip.restarts,
                seed: rep_seed(c.seed, k),
            };
            solve_qip_heuristic(&p.q, w, lambda, &opts)?
        } else {
            solve_qip_exact(&p.q, w, lambda, c.qip.exact_cap)?
        };
        let cov = coverage(sol.weights(), &qip.selection);
        rows.push(QipRow {
            index: k,
            lambda,
            svm_objective: sol.objective,
            qip_objective: qip.objective,
            svm_support: sol.weights().iter().filter(|&&a| a > SUPPORT_TOL).count(),
            qip_selected: qip.selected(),
            coverage: (!cov.degenerate).then_some(cov.value),
            degenerate: cov.degenerate,
            exact: qip.exact,
        });
    }
    let covs: Vec<f64> = rows.iter().filter_map(|r| r.coverage).collect();
    let summary = QipSummary {
        n,
        method: if c.qip.heuristic { "heuristic" } else { "exact" },
        breakpoints: rows.len(),
        coverage_at_lambda_max: rows.first().and_then(|r| r.coverage),
        mean_coverage: (!covs.is_empty()).then(|| covs.iter().sum::<f64>() / covs.len() as f64),
        relaxation_violations: rows
            .iter()
            .filter(|r| r.svm_objective - r.qip_objective > 1e-9 * r.qip_objective.abs().max(1.0))
            .count(),
    };
    write_csv(&c.out_dir.join("qip_compare.csv"), &rows)?;
    write_json(c, "qip_summary.json", &summary)?;
    Ok(Outputs { files: vec!["qip_compare.csv", "qip_summary.json"], resolved_kernel: Some(p.kernel) })
}

#[derive(Serialize)]
struct SimOut<'a> {
    scenario: Scenario,
    n: usize,
    reps: usize,
    seed: u64,
    kernel: String,
    tau_true: f64,
    summary: &'a [svmbal::sim::McSummary],
}

fn cmd_simulate(c: &RunConfig) -> Result<Outputs> {
    let scenario: Scenario = c.sim.scenario.parse()?;
    let grid = c.sim.grid.iter().map(|g| g.parse()).collect::<Result<Vec<GridPoint>>>()?;
    if c.sim.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let mut spec = MonteCarloSpec::new(scenario, c.sim.n, c.kernel_spec()?, grid);
    spec.estimand = c.estimand;
    spec.lambda_min = c.lambda_min;
    let table = run_monte_carlo(&spec, c.sim.reps, c.seed)?;
    table.write_records_csv(BufWriter::new(File::create(c.out_dir.join("records.csv"))?))?;
    table.write_summary_csv(BufWriter::new(File::create(c.out_dir.join("summary.csv"))?))?;
    let out = SimOut {
        scenario,
        n: spec.n,
        reps: table.reps,
        seed: table.seed,
        kernel: spec.kernel.to_string(),
        tau_true: table.tau_true,
        summary: &table.summary,
    };
    write_json(c, "simulation.json", &out)?;
    Ok(Outputs { files: vec!["records.csv", "summary.csv", "simulation.json"], resolved_kernel: None })
}

#[derive(Serialize)]
struct NamedValue<'a> {
    column: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct DiagRecord<'a> {
    lambda: f64,
    /// Set when `lambda` is a breakpoint of the path.
    breakpoint: Option<usize>,
    weight_sum: f64,
    ess: f64,
    mmd: f64,
    normed_dim: f64,
    sdim: Vec<NamedValue<'a>>,
    kkt: KktReport,
    kkt_max: f64,
    margin: usize,
    inside: usize,
    outside: usize,
    /// Below the terminal breakpoint with clamped weights.
    clamped: bool,
}

#[derive(Serialize)]
struct Diagnosis<'a> {
    kernel: String,
    lambda_max: f64,
    terminal_lambda: f64,
    records: Vec<DiagRecord<'a>>,
}

fn cmd_diagnose(c: &RunConfig) -> Result<Outputs> {
    let p = prepare(c)?;
    let path = p.path(c)?;
    let w = p.data.w();
    let sols: Vec<(Option<usize>, DualSolution)> = if c.lambdas.is_empty() {
        (0..path.len()).map(|k| (Some(k), path.breakpoint_solution(k))).collect()
    } else {
        c.lambdas.iter().map(|&l| Ok((None, path.solution_at(l)?))).collect::<Result<_>>()?
    };
    let names = p.data.names();
    let records = sols
        .into_iter()
        .map(|(breakpoint, sol)| {
            let rep = balance_report(&sol, &p.q, &p.xb, w)?;
            let kkt = kkt_report(&sol, &p.q, w, KKT_TOL);
            let (margin, inside, outside) = set_counts(&sol.sets);
            Ok(DiagRecord {
                lambda: sol.lambda,
                breakpoint,
                weight_sum: rep.weight_sum,
                ess: rep.ess,
                mmd: rep.mmd,
                normed_dim: rep.normed_dim,
                sdim: names.iter().zip(&rep.sdim).map(|(n, &v)| NamedValue { column: n, value: v }).collect(),
                kkt_max: kkt.max(),
                kkt,
                margin,
                inside,
                outside,
                clamped: sol.clamped,
            })
        })
        .collect::<Result<_>>()?;
    let diag = Diagnosis {
        kernel: p.kernel.to_string(),
        lambda_max: path.lambda_max,
        terminal_lambda: path.terminal_lambda,
        records,
    };
    write_json(c, "diagnose.json", &diag)?;
    Ok(Outputs { files: vec!["diagnose.json"], resolved_kernel: Some(p.kernel) })
}
