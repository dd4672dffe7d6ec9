//! Single-λ solvers: the SVM dual, its L2 variant, the path initialization
//! problem and the direct simplex MMD minimizer.

use serde::{Deserialize, Serialize};

use crate::data::{normalize_simplex, WeightVector};
use crate::error::{Error, Result};
use crate::kernels::QMatrix;
use crate::smo::{self, Problem};

/// Stopping tolerance, in margin units.
pub const KKT_TOL: f64 = 1e-8;
/// Solutions with a larger KKT residual are reported as failures.
pub const KKT_FAIL_TOL: f64 = 1e-6;
/// `|M_i - 1| <= MARGIN_TOL (1 + |M_i|)` counts as on the margin.
pub const MARGIN_TOL: f64 = 1e-9;
/// Weights this close to a bound count as at the bound.
pub const BOUND_TOL: f64 = 1e-12;

/// Pair updates allowed per variable.
const SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointSet {
    /// `M_i = 1`.
    Margin,
    /// `M_i < 1`, `alpha_i = 1`.
    Inside,
    /// `M_i > 1`, `alpha_i = 0`.
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: WeightVector,
    /// Scaled intercept `lambda * beta0`.
    pub alpha0: f64,
    pub lambda: f64,
    /// `M_i = W_i f(X_i)`.
    pub margins: Vec<f64>,
    pub sets: Vec<PointSet>,
    pub objective: f64,
    pub slack: Vec<f64>,
    /// Set when `alpha' Q alpha` vanishes at the initial solution.
    pub exact_balance: bool,
    /// Set when a path query fell outside the computed range.
    pub clamped: bool,
}

fn check_inputs(q: &QMatrix, w: &[f64]) -> Result<(usize, usize)> {
    if q.n() != w.len() {
        return Err(Error::Dimension(format!("Q is {0}x{0}, W has {1}", q.n(), w.len())));
    }
    let n_t = w.iter().filter(|&&v| v > 0.0).count();
    let n_c = w.len() - n_t;
    if n_t == 0 || n_c == 0 {
        return Err(Error::Infeasible("one treatment group is empty; only alpha = 0 is feasible".into()));
    }
    Ok((n_t, n_c))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Classifies a point from its weight and margin.
pub fn classify(alpha: f64, margin: f64) -> PointSet {
    let free = alpha > BOUND_TOL && alpha < 1.0 - BOUND_TOL;
    if free || (margin - 1.0).abs() <= MARGIN_TOL * (1.0 + margin.abs()) {
        PointSet::Margin
    } else if margin < 1.0 {
        PointSet::Inside
    } else {
        PointSet::Outside
    }
}

/// `(2 lambda)^-1 a'Qa - 1'a`.
pub fn dual_objective(q: &QMatrix, alpha: &[f64], lambda: f64) -> f64 {
    q.quad_form(alpha) / (2.0 * lambda) - alpha.iter().sum::<f64>()
}

impl DualSolution {
    /// Fills in margins, sets, slack and objective for a given `(alpha, alpha0)`.
    pub fn from_parts(q: &QMatrix, w: &[f64], lambda: f64, alpha: Vec<f64>, alpha0: f64) -> Self {
        let qa = q.mul_vec(&alpha);
        let g: Vec<f64> = qa.iter().zip(w).map(|(c, wi)| c + wi * alpha0).collect();
        let quad = dot(&qa, &alpha);
        Self::from_margin_numerators(lambda, alpha, alpha0, &g, quad)
    }

    /// Builds a solution from `g = Q alpha + W alpha0` without touching `Q`.
    pub(crate) fn from_g(lambda: f64, alpha: Vec<f64>, alpha0: f64, g: &[f64], w: &[f64]) -> Self {
        // alpha' Q alpha = sum alpha_i (g_i - W_i alpha0); the second part vanishes by balance
        let quad: f64 = alpha.iter().zip(g).zip(w).map(|((a, gi), wi)| a * (gi - wi * alpha0)).sum();
        Self::from_margin_numerators(lambda, alpha, alpha0, g, quad)
    }

    fn from_margin_numerators(lambda: f64, alpha: Vec<f64>, alpha0: f64, g: &[f64], quad: f64) -> Self {
        let margins: Vec<f64> = g.iter().map(|gi| gi / lambda).collect();
        let sets = alpha.iter().zip(&margins).map(|(&a, &m)| classify(a, m)).collect();
        let slack = margins.iter().map(|m| (1.0 - m).max(0.0)).collect();
        let objective = quad / (2.0 * lambda) - alpha.iter().sum::<f64>();
        Self {
            alpha: WeightVector::raw(alpha),
            alpha0,
            lambda,
            margins,
            sets,
            objective,
            slack,
            exact_balance: false,
            clamped: false,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.alpha.alpha
    }

    pub fn normalized(&self, w: &[f64]) -> Result<WeightVector> {
        normalize_simplex(&self.alpha, w)
    }

    pub fn indices(&self, set: PointSet) -> Vec<usize> {
        (0..self.sets.len()).filter(|&i| self.sets[i] == set).collect()
    }

    /// Decision value `f(X_i) = W_i M_i`.
    pub fn decision_values(&self, w: &[f64]) -> Vec<f64> {
        self.margins.iter().zip(w).map(|(m, wi)| m * wi).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `(2 lambda)^-1 a'Qa - 1'a` subject to `W'a = 0`, `0 <= a <= 1`.
pub fn solve_dual(q: &QMatrix, w: &[f64], lambda: f64) -> Result<DualSolution> {
    check_lambda(lambda)?;
    let (n_t, n_c) = check_inputs(q, w)?;
    let n = w.len();
    // scaled by lambda: 1/2 a'Qa - lambda 1'a
    let pb = Problem {
        h: q.matrix(),
        idx: (0..n).collect(),
        shift: 0.0,
        p: vec![-lambda; n],
        y: w.to_vec(),
        group: vec![0; n],
        n_groups: 1,
        upper: vec![1.0; n],
    };
    let m = n_t.min(n_c) as f64;
    let start: Vec<f64> = w.iter().map(|&v| if v > 0.0 { m / n_t as f64 } else { m / n_c as f64 }).collect();
    let s = smo::solve(&pb, start, KKT_TOL * lambda, KKT_FAIL_TOL * lambda, SWEEPS * n)?;
    let mut alpha = s.alpha;
    for a in &mut alpha {
        if *a < BOUND_TOL {
            *a = 0.0;
        } else if *a > 1.0 - BOUND_TOL {
            *a = 1.0;
        }
    }
    Ok(DualSolution::from_parts(q, w, lambda, alpha, s.nu[0]))
}

/// Minimizes `1/2 a'Qa - 1'a + (lambda/2) |a|^2` subject to `W'a = 0`, `a >= 0`.
pub fn solve_l2_dual(q: &QMatrix, w: &[f64], lambda: f64) -> Result<WeightVector> {
    check_lambda(lambda)?;
    let (n_t, n_c) = check_inputs(q, w)?;
    let n = w.len();
    let pb = Problem {
        h: q.matrix(),
        idx: (0..n).collect(),
        shift: lambda,
        p: vec![-1.0; n],
        y: w.to_vec(),
        group: vec![0; n],
        n_groups: 1,
        upper: vec![f64::INFINITY; n],
    };
    let m = n_t.min(n_c) as f64 / lambda;
    let start: Vec<f64> = w.iter().map(|&v| if v > 0.0 { m / n_t as f64 } else { m / n_c as f64 }).collect();
    let s = smo::solve(&pb, start, KKT_TOL, KKT_FAIL_TOL, SWEEPS * n)?;
    Ok(WeightVector::raw(s.alpha))
}

/// Initial point of the path, valid for every `lambda >= lambda_max`.
#[derive(Debug, Clone)]
pub struct InitialSolution {
    pub solution: DualSolution,
    pub lambda_max: f64,
    /// Common value of `(Q alpha)_j` over free controls (in the minority-
    /// treated labelling).
    pub kappa: f64,
    /// Treated and control roles were swapped internally.
    pub flipped: bool,
    /// Points on the margin at `lambda_max`.
    pub margin: Vec<usize>,
    pub exact_balance: bool,
}

/// Weights of the largest-weight-sum solution: the minority group gets
/// weight one, the majority minimizes `a'Qa` with matching sum.
pub fn solve_init(q: &QMatrix, w: &[f64]) -> Result<DualSolution> {
    initial_solution(q, w).map(|s| s.solution)
}

pub fn initial_solution(q: &QMatrix, w: &[f64]) -> Result<InitialSolution> {
    let (n_t, n_c) = check_inputs(q, w)?;
    let flipped = n_t > n_c;
    let wf: Vec<f64> = if flipped { w.iter().map(|v| -v).collect() } else { w.to_vec() };
    let treated: Vec<usize> = (0..w.len()).filter(|&i| wf[i] > 0.0).collect();
    let controls: Vec<usize> = (0..w.len()).filter(|&i| wf[i] < 0.0).collect();
    let (nt, nc) = (treated.len(), controls.len());
    let qm = q.matrix();

    let mut alpha = vec![0.0; w.len()];
    for &i in &treated {
        alpha[i] = 1.0;
    }
    if nt == nc {
        alpha.iter_mut().for_each(|a| *a = 1.0);
    } else {
        // 1/2 a_C' Q_CC a_C + a_C' Q_CT 1, sum a_C = n_T
        let p: Vec<f64> = controls.iter().map(|&j| treated.iter().map(|&i| qm[(j, i)]).sum()).collect();
        let pb = Problem {
            h: qm,
            idx: controls.clone(),
            shift: 0.0,
            p,
            y: vec![1.0; nc],
            group: vec![0; nc],
            n_groups: 1,
            upper: vec![1.0; nc],
        };
        let scale = q.trace().abs() / w.len() as f64;
        let scale = if scale > 0.0 { scale * nt as f64 } else { 1.0 };
        let start = vec![nt as f64 / nc as f64; nc];
        let s = smo::solve(&pb, start, KKT_TOL * scale, KKT_FAIL_TOL * scale, SWEEPS * nc)?;
        for (k, &j) in controls.iter().enumerate() {
            let a = s.alpha[k];
            alpha[j] = if a < BOUND_TOL {
                0.0
            } else if a > 1.0 - BOUND_TOL {
                1.0
            } else {
                a
            };
        }
    }

    let c = q.mul_vec(&alpha);
    let quad = dot(&c, &alpha);
    let size = alpha.iter().sum::<f64>();
    let diag_max = qm.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let exact_balance = quad <= 1e-14 * size * size * diag_max.max(f64::MIN_POSITIVE);

    let free: Vec<usize> = controls.iter().copied().filter(|&j| alpha[j] > 0.0 && alpha[j] < 1.0).collect();
    let (kappa, control_margin) = if free.is_empty() {
        let j = controls
            .iter()
            .copied()
            .filter(|&j| alpha[j] >= 1.0)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if c[b] >= c[j] => Some(b),
                _ => Some(j),
            })
            .expect("some control carries weight");
        (c[j], vec![j])
    } else {
        (free.iter().map(|&j| c[j]).sum::<f64>() / free.len() as f64, free.clone())
    };
    let i_star = treated
        .iter()
        .copied()
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if c[b] >= c[i] => Some(b),
            _ => Some(i),
        })
        .expect("treated group nonempty");
    let mut lambda_max = 0.5 * (c[i_star] + kappa);
    let mut margin = control_margin;
    margin.push(i_star);
    margin.sort_unstable();
    if exact_balance || !(lambda_max > 0.0) {
        lambda_max = 0.0;
    }
    // reported at lambda_max, or at 1 when every lambda gives the same weights
    let lambda_rep = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    let alpha0_f = kappa - lambda_rep;
    let alpha0 = if flipped { -alpha0_f } else { alpha0_f };
    let mut solution = DualSolution::from_parts(q, w, lambda_rep, alpha, alpha0);
    if lambda_max > 0.0 {
        for &i in &margin {
            solution.sets[i] = PointSet::Margin;
        }
    }
    solution.exact_balance = exact_balance;
    Ok(InitialSolution { solution, lambda_max, kappa, flipped, margin, exact_balance })
}

/// Minimizes `a'Qa` over the product simplex (each group sums to one).
pub fn solve_mmd_min(q: &QMatrix, w: &[f64]) -> Result<WeightVector> {
    let (n_t, n_c) = check_inputs(q, w)?;
    let n = w.len();
    let pb = Problem {
        h: q.matrix(),
        idx: (0..n).collect(),
        shift: 0.0,
        p: vec![0.0; n],
        y: vec![1.0; n],
        group: w.iter().map(|&v| if v > 0.0 { 0 } else { 1 }).collect(),
        n_groups: 2,
        upper: vec![f64::INFINITY; n],
    };
    let start: Vec<f64> = w.iter().map(|&v| if v > 0.0 { 1.0 / n_t as f64 } else { 1.0 / n_c as f64 }).collect();
    let scale = q.trace().abs() / n as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let s = smo::solve(&pb, start, 1e-12 * scale, KKT_FAIL_TOL * scale, SWEEPS * n)?;
    // guard the group sums against rounding
    let (st, sc) = crate::data::group_sums(&s.alpha, w);
    let alpha = s.alpha.iter().zip(w).map(|(a, &v)| if v > 0.0 { a / st } else { a / sc }).collect();
    Ok(WeightVector { alpha, normalized: true })
}

/// KKT residuals of a dual solution, in margin units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Largest violation of `M_i > 1 => alpha_i = 0` and `M_i < 1 => alpha_i = 1`.
    pub complementarity: f64,
    /// Largest distance of any `alpha_i` outside `[0, 1]`.
    pub box_violation: f64,
    /// `|W'alpha|`.
    pub balance: f64,
    /// Largest `|M_i - 1|` over units with `0 < alpha_i < 1`.
    pub stationarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.complementarity.max(self.box_violation).max(self.balance).max(self.stationarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Recomputes margins from `alpha` and `alpha0` and measures every KKT
/// condition. Weights within `tol` of a bound count as at the bound.
pub fn kkt_report(sol: &DualSolution, q: &QMatrix, w: &[f64], tol: f64) -> KktReport {
    let alpha = sol.weights();
    let qa = q.mul_vec(alpha);
    let mut r = KktReport { complementarity: 0.0, box_violation: 0.0, balance: 0.0, stationarity: 0.0 };
    for i in 0..alpha.len() {
        let a = alpha[i];
        let m = (qa[i] + w[i] * sol.alpha0) / sol.lambda;
        r.box_violation = r.box_violation.max((-a).max(a - 1.0).max(0.0));
        if a <= tol {
            r.complementarity = r.complementarity.max(1.0 - m);
        } else if a >= 1.0 - tol {
            r.complementarity = r.complementarity.max(m - 1.0);
        } else {
            r.stationarity = r.stationarity.max((m - 1.0).abs());
        }
    }
    r.balance = dot(alpha, w).abs();
    r
}
