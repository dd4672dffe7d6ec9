//! Simulation designs with known ground truth, and a Monte Carlo driver
//! that evaluates the weighting estimator along a λ grid.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{ess_kish, weighted_mmd};
use crate::data::{Dataset, WeightVector};
use crate::effect::{conditional_bias_values, estimate, neyman_se, Estimand};
use crate::error::{Error, Result};
use crate::kernels::{gram, q_matrix, standardize, KernelSpec};
use crate::path::{compute_path, DEFAULT_LAMBDA_MIN};
use crate::qp::DualSolution;

pub const SIM_A_TAU: f64 = -0.4;
/// Noise variance of scenario A.
pub const SIM_A_NOISE_VAR: f64 = 0.1;
pub const SIM_B_TAU: f64 = 10.0;

/// Propensity coefficients `b1..b7` of scenario A.
pub const SIM_A_BETA: [f64; 7] = [0.8, -0.25, 0.6, -0.4, -0.8, -0.5, 0.7];
pub const SIM_A_GAMMA0: f64 = -3.85;
/// Outcome coefficients on `x1..x10`.
pub const SIM_A_GAMMA: [f64; 10] = [0.3, -0.36, -0.73, -0.2, 0.0, 0.0, 0.0, 0.71, -0.19, 0.26];
/// Correlated pairs `(i, j, rho)`, zero-based, where `x_j` is built from `x_i`.
pub const SIM_A_PAIRS: [(usize, usize, f64); 4] = [(0, 4, 0.2), (1, 5, 0.9), (2, 7, 0.2), (3, 8, 0.9)];

const MIN_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    A,
    B,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::A => "a",
            Scenario::B => "b",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Scenario::A),
            "b" => Ok(Scenario::B),
            _ => Err(Error::InvalidParameter(format!("unknown scenario '{s}' (expected a or b)"))),
        }
    }
}

/// Ground truth of one generated sample.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub scenario: Scenario,
    /// Control potential-outcome mean per unit.
    pub mu0: Vec<f64>,
    /// Treated potential-outcome mean per unit.
    pub mu1: Vec<f64>,
    /// Population effect.
    pub tau_true: f64,
    pub per_unit_tau: Vec<f64>,
    pub noise_sd: f64,
    pub propensity: Vec<f64>,
    /// Unobserved draws the covariates were built from (scenario B only).
    pub latent: Option<DMatrix<f64>>,
    /// Linear outcome coefficients on the observed covariates (scenario A only).
    pub gamma: Option<Vec<f64>>,
}

impl SimTruth {
    /// Sample average of the per-unit effects.
    pub fn sate(&self) -> f64 {
        self.per_unit_tau.iter().sum::<f64>() / self.per_unit_tau.len() as f64
    }

    pub fn satt(&self, treatment: &[bool]) -> f64 {
        let (s, k) = self
            .per_unit_tau
            .iter()
            .zip(treatment)
            .filter(|(_, &t)| t)
            .fold((0.0, 0usize), |(s, k), (v, _)| (s + v, k + 1));
        s / k as f64
    }
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_N {
        return Err(Error::InvalidParameter(format!("n must be at least {MIN_N}, got {n}")));
    }
    Ok(())
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    // row-major fill so that a prefix of rows does not depend on n
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    z
}

/// Scenario A log-odds: main effects of `x1..x7`, three squares and ten
/// two-way interactions.
pub fn sim_a_logit(x: &[f64]) -> f64 {
    let b = SIM_A_BETA;
    let [w1, w2, w3, w4, w5, w6, w7] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6]];
    b[0] * w1 + b[1] * w2 + b[2] * w3 + b[3] * w4 + b[4] * w5 + b[5] * w6 + b[6] * w7
        + b[1] * w2 * w2
        + b[3] * w4 * w4
        + b[6] * w7 * w7
        + b[0] * 0.5 * w1 * w3
        + b[1] * 0.7 * w2 * w4
        + b[2] * 0.5 * w3 * w5
        + b[3] * 0.7 * w4 * w6
        + b[4] * 0.5 * w5 * w7
        + b[0] * 0.5 * w1 * w6
        + b[1] * 0.7 * w2 * w3
        + b[2] * 0.5 * w3 * w4
        + b[3] * 0.5 * w4 * w5
        + b[4] * 0.5 * w5 * w6
}

pub fn sim_a_f0(x: &[f64]) -> f64 {
    SIM_A_GAMMA0 + SIM_A_GAMMA.iter().zip(x).map(|(g, v)| g * v).sum::<f64>()
}

/// Scenario A: ten correlated standard-normal covariates, nonlinear
/// non-additive assignment, linear outcome with a constant effect.
pub fn gen_sim_a(n: usize, seed: u64) -> Result<(Dataset, SimTruth)> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = normal_matrix(&mut rng, n, 10);
    for i in 0..n {
        for &(a, b, rho) in &SIM_A_PAIRS {
            x[(i, b)] = rho * x[(i, a)] + (1.0 - rho * rho).sqrt() * x[(i, b)];
        }
    }
    let noise = Normal::new(0.0, SIM_A_NOISE_VAR.sqrt()).expect("valid sd");
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut ps = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let p = expit(sim_a_logit(&row));
        let ti = rng.random_bool(p);
        let m0 = sim_a_f0(&row);
        y.push(m0 + if ti { SIM_A_TAU } else { 0.0 } + noise.sample(&mut rng));
        t.push(ti);
        mu0.push(m0);
        ps.push(p);
    }
    let mu1 = mu0.iter().map(|m| m + SIM_A_TAU).collect();
    let truth = SimTruth {
        scenario: Scenario::A,
        mu0,
        mu1,
        tau_true: SIM_A_TAU,
        per_unit_tau: vec![SIM_A_TAU; n],
        noise_sd: SIM_A_NOISE_VAR.sqrt(),
        propensity: ps,
        latent: None,
        gamma: Some(SIM_A_GAMMA.to_vec()),
    };
    Ok((Dataset::new(x, t, Some(y), None)?, truth))
}

/// Observed covariates of scenario B from one latent row.
pub fn sim_b_transform(z: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    x[0] = (z[0] / 2.0).exp();
    x[1] = z[1] / (1.0 + z[0].exp());
    x[2] = (z[0] * z[2] / 25.0 + 0.6).powi(3);
    x[3] = (z[1] + z[3] + 20.0).powi(2);
    x
}

fn sim_b_lin(z: &[f64]) -> f64 {
    27.4 * z[0] + 13.7 * z[1] + 13.7 * z[2] + 13.7 * z[3]
}

/// Scenario B: covariates are nonlinear transforms of latent normals;
/// assignment and outcome depend on the latent values.
pub fn gen_sim_b(n: usize, seed: u64) -> Result<(Dataset, SimTruth)> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal_matrix(&mut rng, n, 10);
    let mut x = DMatrix::zeros(n, 10);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let (mut mu0, mut mu1, mut tau, mut ps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let zi: Vec<f64> = z.row(i).iter().copied().collect();
        for (j, v) in sim_b_transform(&zi).into_iter().enumerate() {
            x[(i, j)] = v;
        }
        let p = expit(-zi[0] - 0.1 * zi[3]);
        let ti = Bernoulli::new(p).expect("probability in [0, 1]").sample(&mut rng);
        let lin = sim_b_lin(&zi);
        let m0 = 200.0 - 0.5 * lin;
        let m1 = 210.0 + lin;
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(if ti { m1 } else { m0 } + eps);
        t.push(ti);
        mu0.push(m0);
        mu1.push(m1);
        tau.push(m1 - m0);
        ps.push(p);
    }
    let truth = SimTruth {
        scenario: Scenario::B,
        mu0,
        mu1,
        tau_true: SIM_B_TAU,
        per_unit_tau: tau,
        noise_sd: 1.0,
        propensity: ps,
        latent: Some(z),
        gamma: None,
    };
    Ok((Dataset::new(x, t, Some(y), None)?, truth))
}

pub fn generate(scenario: Scenario, n: usize, seed: u64) -> Result<(Dataset, SimTruth)> {
    match scenario {
        Scenario::A => gen_sim_a(n, seed),
        Scenario::B => gen_sim_b(n, seed),
    }
}

/// Independent seed for replication `rep`.
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

/// Where on the path an estimate is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", content = "lambda", rename_all = "snake_case")]
pub enum GridPoint {
    Lambda(f64),
    /// Path end (smallest MMD).
    Balance,
    /// Path start, `λ_max`.
    Imbalance,
    /// Plain difference in means.
    Unweighted,
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPoint::Lambda(l) => write!(f, "{l}"),
            GridPoint::Balance => f.write_str("balance"),
            GridPoint::Imbalance => f.write_str("imbalance"),
            GridPoint::Unweighted => f.write_str("unweighted"),
        }
    }
}

impl FromStr for GridPoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "balance" => GridPoint::Balance,
            "imbalance" => GridPoint::Imbalance,
            "unweighted" => GridPoint::Unweighted,
            _ => {
                let l: f64 = s.parse().map_err(|_| Error::InvalidParameter(format!("bad grid point '{s}'")))?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::InvalidParameter(format!("lambda must be positive and finite, got {s}")));
                }
                GridPoint::Lambda(l)
            }
        })
    }
}

/// `count` λ values spaced evenly on the log scale between `hi` and `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub kernel: KernelSpec,
    pub grid: Vec<GridPoint>,
    pub estimand: Estimand,
    pub lambda_min: f64,
}

impl MonteCarloSpec {
    pub fn new(scenario: Scenario, n: usize, kernel: KernelSpec, grid: Vec<GridPoint>) -> Self {
        Self { scenario, n, kernel, grid, estimand: Estimand::Sate, lambda_min: DEFAULT_LAMBDA_MIN }
    }
}

/// One (grid point, replication) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub rep: usize,
    pub point: String,
    /// λ actually used; empty for the unweighted estimate.
    pub lambda: Option<f64>,
    pub tau_hat: Option<f64>,
    pub se: Option<f64>,
    pub ess: Option<f64>,
    pub mmd: Option<f64>,
    /// `tau_hat - tau_true`.
    pub error: Option<f64>,
    /// Conditional bias against the sample estimand.
    pub cond_bias: Option<f64>,
    /// `|cond_bias| <= mmd * |gamma * sd|`, checked for scenario A under the
    /// linear kernel.
    pub bound_ok: Option<bool>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub point: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub sd: f64,
    /// `mean - tau_true`.
    pub bias: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloTable {
    pub spec: MonteCarloSpec,
    pub reps: usize,
    pub seed: u64,
    pub tau_true: f64,
    pub records: Vec<McRecord>,
    pub summary: Vec<McSummary>,
}

impl MonteCarloTable {
    pub fn summary_for(&self, point: GridPoint) -> Option<&McSummary> {
        let key = point.to_string();
        self.summary.iter().find(|s| s.point == key)
    }

    /// Records of one grid point, in replication order.
    pub fn records_for(&self, point: GridPoint) -> Vec<&McRecord> {
        let key = point.to_string();
        self.records.iter().filter(|r| r.point == key).collect()
    }

    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for s in &self.summary {
            wtr.serialize(s)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn failed(rep: usize, point: GridPoint, e: &Error) -> McRecord {
    McRecord {
        rep,
        point: point.to_string(),
        lambda: None,
        tau_hat: None,
        se: None,
        ess: None,
        mmd: None,
        error: None,
        cond_bias: None,
        bound_ok: None,
        failure: Some(e.to_string()),
    }
}

struct Rep<'a> {
    data: &'a Dataset,
    truth: &'a SimTruth,
    estimand: Estimand,
    q: crate::kernels::QMatrix,
    /// `|gamma * sd|` for the bias bound, when it applies.
    bound_scale: Option<f64>,
}

impl Rep<'_> {
    fn record(&self, rep: usize, point: GridPoint, lambda: Option<f64>, alpha: &WeightVector) -> Result<McRecord> {
        let w = self.data.w();
        let y = self.data.outcome().expect("simulated data has outcomes");
        let tau_hat = estimate(y, alpha, w)?;
        let mmd = weighted_mmd(alpha, &self.q)?;
        let cond_bias = conditional_bias_values(&alpha.alpha, w, &self.truth.mu0, &self.truth.mu1, self.estimand);
        let bound_ok = self.bound_scale.map(|s| cond_bias.abs() <= mmd * s * (1.0 + 1e-9) + 1e-10);
        Ok(McRecord {
            rep,
            point: point.to_string(),
            lambda,
            tau_hat: Some(tau_hat),
            se: neyman_se(y, alpha, w).ok(),
            ess: Some(ess_kish(alpha, w)?),
            mmd: Some(mmd),
            error: Some(tau_hat - self.truth.tau_true),
            cond_bias: Some(cond_bias),
            bound_ok,
            failure: None,
        })
    }
}

fn run_rep(spec: &MonteCarloSpec, rep: usize, seed: u64) -> Vec<McRecord> {
    let all_failed = |e: Error| spec.grid.iter().map(|&g| failed(rep, g, &e)).collect::<Vec<_>>();
    let (data, truth) = match generate(spec.scenario, spec.n, rep_seed(seed, rep)) {
        Ok(v) => v,
        Err(e) => return all_failed(e),
    };
    if data.n_treated() == 0 || data.n_control() == 0 {
        return all_failed(Error::InvalidData(format!(
            "{} treated and {} control units",
            data.n_treated(),
            data.n_control()
        )));
    }
    let st = standardize(data.x());
    let q = match gram(&st.xs, &spec.kernel).and_then(|k| q_matrix(&k, data.w())) {
        Ok(q) => q,
        Err(e) => return all_failed(e),
    };
    let bound_scale = match (&truth.gamma, &spec.kernel) {
        (Some(g), KernelSpec::Linear) => Some(g.iter().zip(&st.sds).map(|(g, s)| (g * s).powi(2)).sum::<f64>().sqrt()),
        _ => None,
    };
    let ctx = Rep { data: &data, truth: &truth, estimand: spec.estimand, q, bound_scale };
    let w = data.w();
    let needs_path = spec.grid.iter().any(|g| !matches!(g, GridPoint::Unweighted));
    let path = if needs_path { Some(compute_path(&ctx.q, w, spec.lambda_min)) } else { None };
    spec.grid
        .iter()
        .map(|&g| {
            let cell = || -> Result<McRecord> {
                if g == GridPoint::Unweighted {
                    return ctx.record(rep, g, None, &WeightVector::uniform(w)?);
                }
                let path = match path.as_ref().expect("path computed") {
                    Ok(p) => p,
                    Err(e) => return Ok(failed(rep, g, e)),
                };
                let sol: DualSolution = match g {
                    GridPoint::Lambda(l) => path.solution_at(l)?,
                    GridPoint::Balance => path.breakpoint_solution(path.len() - 1),
                    GridPoint::Imbalance => path.breakpoint_solution(0),
                    GridPoint::Unweighted => unreachable!(),
                };
                ctx.record(rep, g, Some(sol.lambda), &sol.normalized(w)?)
            };
            cell().unwrap_or_else(|e| failed(rep, g, &e))
        })
        .collect()
}

fn summarize(point: GridPoint, records: &[McRecord], tau_true: f64) -> McSummary {
    let key = point.to_string();
    let vals: Vec<f64> = records.iter().filter(|r| r.point == key).filter_map(|r| r.tau_hat).collect();
    let n_failed = records.iter().filter(|r| r.point == key && r.tau_hat.is_none()).count();
    let k = vals.len();
    let mean = vals.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 { (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt() } else { f64::NAN };
    let rmse = (vals.iter().map(|v| (v - tau_true).powi(2)).sum::<f64>() / k as f64).sqrt();
    McSummary { point: key, n_ok: k, n_failed, mean, sd, bias: mean - tau_true, mc_se: sd / (k as f64).sqrt(), rmse }
}

/// Runs `reps` replications in parallel. Each replication draws its data
/// from [`rep_seed`], so results do not depend on thread scheduling. Solver
/// failures are recorded in the affected cells.
pub fn run_monte_carlo(spec: &MonteCarloSpec, reps: usize, seed: u64) -> Result<MonteCarloTable> {
    check_n(spec.n)?;
    spec.kernel.validate()?;
    if spec.grid.is_empty() {
        return Err(Error::InvalidParameter("empty λ grid".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let records: Vec<McRecord> = (0..reps).into_par_iter().flat_map_iter(|r| run_rep(spec, r, seed)).collect();
    let tau_true = match spec.scenario {
        Scenario::A => SIM_A_TAU,
        Scenario::B => SIM_B_TAU,
    };
    let summary = spec.grid.iter().map(|&g| summarize(g, &records, tau_true)).collect();
    Ok(MonteCarloTable { spec: spec.clone(), reps, seed, tau_true, records, summary })
}
