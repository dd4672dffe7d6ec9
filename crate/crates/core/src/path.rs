//! Exact regularization path of the SVM dual as λ decreases.
//!
//! Between breakpoints only the margin weights and the intercept move, and
//! they move linearly in λ. Each breakpoint is re-anchored by a direct
//! solve of the margin system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::QMatrix;
use crate::linalg::{ridge_for, solve_with_ridge};
use crate::qp::{initial_solution, DualSolution, PointSet};

pub const DEFAULT_LAMBDA_MIN: f64 = 1e-3;
/// Default event cap, per unit.
pub const EVENTS_PER_UNIT: usize = 50;
/// Candidate events closer than this (relative to λ) count as simultaneous.
pub const TIE_TOL: f64 = 1e-12;
/// Steps shorter than this (relative to λ) are taken as immediate.
pub const MIN_DECREMENT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Init,
    /// A point reached the margin from inside or outside.
    MarginEntry(usize),
    ExitToZero(usize),
    ExitToOne(usize),
    /// The margin set was empty; the two named points joined it.
    Collapse(usize, usize),
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub alpha0: f64,
    /// `g = Q alpha + W alpha0`; margins are `g / lambda`.
    pub g: Vec<f64>,
    pub events: Vec<Event>,
    /// Margin set in force just below this breakpoint.
    pub margin: Vec<usize>,
}

/// Linear coefficients of one segment: `alpha(λ) = intercept + slope λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
    pub slope0: f64,
    pub intercept0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    LambdaMin,
    /// No unit is left with `alpha_i = 1`; below this point the weights only
    /// rescale.
    NoInside,
    ExactBalance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizationPath {
    /// Ordered by decreasing λ.
    pub breakpoints: Vec<Breakpoint>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub terminal_lambda: f64,
    pub stop: StopReason,
    pub exact_balance: bool,
    w: Vec<f64>,
    /// +1, or -1 when the groups were swapped internally.
    sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub lambda_min: f64,
    /// Maximum number of events; `None` means `EVENTS_PER_UNIT * N`.
    pub max_events: Option<usize>,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { lambda_min: DEFAULT_LAMBDA_MIN, max_events: None }
    }
}

/// Slopes `(d alpha_M / d λ, d alpha0 / d λ)` of the margin weights.
pub fn margin_system(active: &[usize], q: &QMatrix, w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = active.len();
    if m == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let a = bordered(active, q, w);
    let mut rhs = DVector::zeros(m + 1);
    rhs.rows_mut(0, m).fill(1.0);
    let x = solve_with_ridge(&a, &rhs, m, ridge_for(trace_of(active, q), m))?;
    Ok((x.rows(0, m).iter().copied().collect(), x[m]))
}

fn bordered(active: &[usize], q: &QMatrix, w: &[f64]) -> DMatrix<f64> {
    let m = active.len();
    let qm = q.matrix();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            a[(r, c)] = qm[(i, j)];
        }
        a[(r, m)] = w[i];
        a[(m, r)] = w[i];
    }
    a
}

fn trace_of(active: &[usize], q: &QMatrix) -> f64 {
    active.iter().map(|&i| q.get(i, i)).sum()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Margin,
    Inside,
    Outside,
}

struct Walker<'a> {
    q: &'a QMatrix,
    /// Internal labels: minority group is +1.
    w: Vec<f64>,
    state: Vec<State>,
    alpha: Vec<f64>,
    alpha0: f64,
    lambda: f64,
    /// `sum_{j in I} Q_{:,j}`.
    s_inside: Vec<f64>,
    g: Vec<f64>,
}

impl Walker<'_> {
    fn margin(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| self.state[i] == State::Margin).collect()
    }

    fn set_state(&mut self, i: usize, to: State) {
        let from = self.state[i];
        if from == to {
            return;
        }
        let n = self.w.len();
        let col = self.q.matrix().column(i);
        if from == State::Inside {
            for k in 0..n {
                self.s_inside[k] -= col[k];
            }
        }
        if to == State::Inside {
            for k in 0..n {
                self.s_inside[k] += col[k];
            }
        }
        self.state[i] = to;
    }

    fn refresh_inside_sum(&mut self) {
        let inside: Vec<f64> = self.state.iter().map(|&s| if s == State::Inside { 1.0 } else { 0.0 }).collect();
        self.s_inside = self.q.mul_vec(&inside);
    }

    /// Solves the margin system at the current λ for `alpha_M` and `alpha0`,
    /// then recomputes `g` exactly.
    fn anchor(&mut self) -> Result<()> {
        let m_set = self.margin();
        let m = m_set.len();
        if m > 0 {
            let a = bordered(&m_set, self.q, &self.w);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in m_set.iter().enumerate() {
                rhs[r] = self.lambda - self.s_inside[i];
            }
            rhs[m] = -(0..self.w.len())
                .filter(|&j| self.state[j] == State::Inside)
                .map(|j| self.w[j])
                .sum::<f64>();
            let x = solve_with_ridge(&a, &rhs, m, ridge_for(trace_of(&m_set, self.q), m))
                .map_err(|e| self.failure(format!("margin system: {e}")))?;
            let ok = (0..m).all(|r| x[r] > -1e-8 && x[r] < 1.0 + 1e-8);
            if ok {
                for (r, &i) in m_set.iter().enumerate() {
                    self.alpha[i] = x[r].clamp(0.0, 1.0);
                }
                self.alpha0 = x[m];
            }
        }
        self.recompute_g(&m_set);
        Ok(())
    }

    fn recompute_g(&mut self, m_set: &[usize]) {
        let n = self.w.len();
        let qm = self.q.matrix();
        let mut g: Vec<f64> = (0..n).map(|k| self.s_inside[k] + self.w[k] * self.alpha0).collect();
        for &j in m_set {
            let a = self.alpha[j];
            if a != 0.0 {
                let col = qm.column(j);
                for k in 0..n {
                    g[k] += col[k] * a;
                }
            }
        }
        self.g = g;
    }

    fn failure(&self, message: String) -> Error {
        let m = self.margin();
        let inside = self.state.iter().filter(|&&s| s == State::Inside).count();
        Error::PathFailure {
            lambda: self.lambda,
            message: format!("{message} (margin set {m:?}, {inside} inside, alpha0 {:.6e})", self.alpha0),
        }
    }
}

/// Computes the path from `λ_max` down to `λ_min` (default `1e-3`).
pub fn compute_path(q: &QMatrix, w: &[f64], lambda_min: f64) -> Result<RegularizationPath> {
    compute_path_with(q, w, &PathOptions { lambda_min, ..PathOptions::default() })
}

pub fn compute_path_with(q: &QMatrix, w: &[f64], opts: &PathOptions) -> Result<RegularizationPath> {
    let lambda_min = opts.lambda_min;
    if !(lambda_min > 0.0 && lambda_min.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda_min must be positive, got {lambda_min}")));
    }
    let init = initial_solution(q, w)?;
    let n = w.len();
    let sigma = if init.flipped { -1.0 } else { 1.0 };
    let wi: Vec<f64> = w.iter().map(|v| v * sigma).collect();
    let alpha = init.solution.weights().to_vec();
    let max_events = opts.max_events.unwrap_or(EVENTS_PER_UNIT * n);

    let mut path = RegularizationPath {
        breakpoints: Vec::new(),
        lambda_max: init.lambda_max,
        lambda_min,
        terminal_lambda: lambda_min,
        stop: StopReason::LambdaMin,
        exact_balance: init.exact_balance,
        w: w.to_vec(),
        sigma,
    };

    if init.exact_balance || init.lambda_max <= lambda_min {
        // the initial weights are optimal on the whole range
        let lambda = lambda_min;
        let alpha0 = init.kappa - lambda;
        let c = q.mul_vec(&alpha);
        let g = c.iter().zip(&wi).map(|(ci, wk)| ci + wk * alpha0).collect();
        path.breakpoints.push(Breakpoint {
            lambda,
            alpha,
            alpha0: sigma * alpha0,
            g,
            events: vec![Event::Init, Event::Terminal],
            margin: Vec::new(),
        });
        if init.exact_balance {
            path.stop = StopReason::ExactBalance;
        }
        return Ok(path);
    }

    let mut state = vec![State::Outside; n];
    for i in 0..n {
        if alpha[i] >= 1.0 {
            state[i] = State::Inside;
        }
    }
    for &i in &init.margin {
        state[i] = State::Margin;
    }
    let mut wk = Walker {
        q,
        w: wi,
        state,
        alpha,
        alpha0: init.kappa - init.lambda_max,
        lambda: init.lambda_max,
        s_inside: Vec::new(),
        g: Vec::new(),
    };
    wk.refresh_inside_sum();
    wk.anchor()?;

    let push = |path: &mut RegularizationPath, wk: &Walker, event: Event| {
        let margin = wk.margin();
        if let Some(last) = path.breakpoints.last_mut() {
            if last.lambda == wk.lambda {
                last.alpha.clone_from(&wk.alpha);
                last.alpha0 = sigma * wk.alpha0;
                last.g.clone_from(&wk.g);
                last.events.push(event);
                last.margin = margin;
                return;
            }
        }
        path.breakpoints.push(Breakpoint {
            lambda: wk.lambda,
            alpha: wk.alpha.clone(),
            alpha0: sigma * wk.alpha0,
            g: wk.g.clone(),
            events: vec![event],
            margin,
        });
    };
    push(&mut path, &wk, Event::Init);

    let mut events = 0usize;
    loop {
        if !wk.state.contains(&State::Inside) {
            path.stop = StopReason::NoInside;
            path.terminal_lambda = wk.lambda;
            if let Some(last) = path.breakpoints.last_mut() {
                last.events.push(Event::Terminal);
            }
            break;
        }
        events += 1;
        if events > max_events {
            return Err(wk.failure(format!("event cap {max_events} exceeded")));
        }
        if events % 64 == 0 {
            wk.refresh_inside_sum();
        }
        let m_set = wk.margin();

        if m_set.is_empty() {
            // intercept free: the inside sets of each group pin it from both sides
            let c: Vec<f64> = (0..n).map(|k| wk.g[k] - wk.w[k] * wk.alpha0).collect();
            let arg = |sign: f64| {
                (0..n)
                    .filter(|&k| wk.state[k] == State::Inside && wk.w[k] * sign > 0.0)
                    .fold(None, |b: Option<usize>, k| match b {
                        Some(b) if c[b] >= c[k] => Some(b),
                        _ => Some(k),
                    })
            };
            let (Some(it), Some(ic)) = (arg(1.0), arg(-1.0)) else {
                return Err(wk.failure("inside set lost one group".into()));
            };
            let next = (0.5 * (c[it] + c[ic])).min(wk.lambda);
            if next <= lambda_min {
                wk.lambda = lambda_min;
                wk.alpha0 = 0.5 * ((c[ic] - lambda_min) + (lambda_min - c[it]));
                wk.recompute_g(&[]);
                push(&mut path, &wk, Event::Terminal);
                path.terminal_lambda = lambda_min;
                break;
            }
            wk.lambda = next;
            wk.alpha0 = next - c[it];
            wk.set_state(it, State::Margin);
            wk.set_state(ic, State::Margin);
            wk.anchor()?;
            push(&mut path, &wk, Event::Collapse(it.min(ic), it.max(ic)));
            continue;
        }

        let (b, b0) = margin_system(&m_set, q, &wk.w).map_err(|e| wk.failure(format!("slopes: {e}")))?;
        let qm = q.matrix();
        // h = d g / d λ
        let mut h: Vec<f64> = wk.w.iter().map(|wj| wj * b0).collect();
        for (r, &i) in m_set.iter().enumerate() {
            if b[r] != 0.0 {
                let col = qm.column(i);
                for k in 0..n {
                    h[k] += col[k] * b[r];
                }
            }
        }

        // (step, index, event)
        let mut cands: Vec<(f64, usize, Event)> = Vec::new();
        for (r, &i) in m_set.iter().enumerate() {
            let (a, s) = (wk.alpha[i], b[r]);
            if s > 0.0 {
                cands.push(((a / s).max(0.0), i, Event::ExitToZero(i)));
            } else if s < 0.0 {
                cands.push((((1.0 - a) / -s).max(0.0), i, Event::ExitToOne(i)));
            }
        }
        for j in 0..n {
            let gap = wk.g[j] - wk.lambda;
            match wk.state[j] {
                State::Inside if h[j] < 1.0 => cands.push(((-gap / (1.0 - h[j])).max(0.0), j, Event::MarginEntry(j))),
                State::Outside if h[j] > 1.0 => cands.push(((gap / (h[j] - 1.0)).max(0.0), j, Event::MarginEntry(j))),
                _ => {}
            }
        }
        let step_min = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let next = wk.lambda - step_min;
        if !(next > lambda_min) {
            let step = wk.lambda - lambda_min;
            for (r, &i) in m_set.iter().enumerate() {
                wk.alpha[i] = (wk.alpha[i] - step * b[r]).clamp(0.0, 1.0);
            }
            wk.alpha0 -= step * b0;
            wk.lambda = lambda_min;
            wk.anchor()?;
            push(&mut path, &wk, Event::Terminal);
            path.terminal_lambda = lambda_min;
            break;
        }
        let tie = step_min + TIE_TOL * wk.lambda;
        let &(_, _, event) = cands
            .iter()
            .filter(|c| c.0 <= tie)
            .min_by_key(|c| c.1)
            .expect("a finite candidate exists");
        let step = if step_min < MIN_DECREMENT * wk.lambda { 0.0 } else { step_min };

        if step > 0.0 {
            for (r, &i) in m_set.iter().enumerate() {
                wk.alpha[i] -= step * b[r];
            }
            wk.alpha0 -= step * b0;
            wk.lambda -= step;
        }
        match event {
            Event::ExitToZero(i) => {
                wk.alpha[i] = 0.0;
                wk.set_state(i, State::Outside);
            }
            Event::ExitToOne(i) => {
                wk.alpha[i] = 1.0;
                wk.set_state(i, State::Inside);
            }
            Event::MarginEntry(j) => wk.set_state(j, State::Margin),
            _ => unreachable!(),
        }
        for &i in &m_set {
            wk.alpha[i] = wk.alpha[i].clamp(0.0, 1.0);
        }
        wk.anchor()?;
        push(&mut path, &wk, event);
    }
    Ok(path)
}

impl RegularizationPath {
    pub fn first(&self) -> &Breakpoint {
        &self.breakpoints[0]
    }

    pub fn last(&self) -> &Breakpoint {
        self.breakpoints.last().expect("path has at least one breakpoint")
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|b| b.lambda).collect()
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// Solution stored at breakpoint `k`.
    pub fn breakpoint_solution(&self, k: usize) -> DualSolution {
        let b = &self.breakpoints[k];
        let mut s = DualSolution::from_g(b.lambda, b.alpha.clone(), b.alpha0, &b.g, &self.w);
        for &i in &b.margin {
            s.sets[i] = PointSet::Margin;
        }
        s.exact_balance = self.exact_balance;
        s
    }

    /// Per-segment linear coefficients, one per consecutive pair of
    /// breakpoints.
    pub fn segments(&self) -> Vec<Segment> {
        self.breakpoints
            .windows(2)
            .map(|p| {
                let (hi, lo) = (&p[0], &p[1]);
                let d = hi.lambda - lo.lambda;
                let slope: Vec<f64> = hi.alpha.iter().zip(&lo.alpha).map(|(a, b)| (a - b) / d).collect();
                let intercept = hi.alpha.iter().zip(&slope).map(|(a, s)| a - s * hi.lambda).collect();
                let slope0 = (hi.alpha0 - lo.alpha0) / d;
                Segment {
                    lambda_hi: hi.lambda,
                    lambda_lo: lo.lambda,
                    slope,
                    intercept,
                    slope0,
                    intercept0: hi.alpha0 - slope0 * hi.lambda,
                }
            })
            .collect()
    }

    /// Solution at any `λ > 0`. Above the first breakpoint the weights are
    /// constant; below the terminal breakpoint they either rescale (when the
    /// path stopped with no inside points) or are clamped and flagged.
    pub fn solution_at(&self, lambda: f64) -> Result<DualSolution> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let first = self.first();
        let last = self.last();
        if lambda >= first.lambda {
            // alpha0 = kappa - λ in the internal labelling
            let d = lambda - first.lambda;
            let alpha0 = first.alpha0 - self.sigma * d;
            let g: Vec<f64> = first.g.iter().zip(&self.w).map(|(gi, wi)| gi - wi * self.sigma * d).collect();
            let mut s = DualSolution::from_g(lambda, first.alpha.clone(), alpha0, &g, &self.w);
            s.exact_balance = self.exact_balance;
            if lambda == first.lambda {
                for &i in &first.margin {
                    s.sets[i] = PointSet::Margin;
                }
            }
            return Ok(s);
        }
        if lambda < last.lambda {
            return Ok(match self.stop {
                StopReason::NoInside => {
                    let r = lambda / last.lambda;
                    let alpha = last.alpha.iter().map(|a| a * r).collect();
                    let g: Vec<f64> = last.g.iter().map(|v| v * r).collect();
                    let mut s = DualSolution::from_g(lambda, alpha, last.alpha0 * r, &g, &self.w);
                    for &i in &last.margin {
                        s.sets[i] = PointSet::Margin;
                    }
                    s
                }
                _ => {
                    let mut s = self.breakpoint_solution(self.len() - 1);
                    s.clamped = true;
                    s
                }
            });
        }
        // breakpoints decrease; find k with λ_k >= λ > λ_{k+1}
        let k = self.breakpoints.partition_point(|b| b.lambda >= lambda) - 1;
        if self.breakpoints[k].lambda == lambda {
            return Ok(self.breakpoint_solution(k));
        }
        let (hi, lo) = (&self.breakpoints[k], &self.breakpoints[k + 1]);
        let t = (lambda - lo.lambda) / (hi.lambda - lo.lambda);
        let lerp = |a: f64, b: f64| b + t * (a - b);
        // only margin units move within a segment
        let alpha: Vec<f64> = (0..hi.alpha.len())
            .map(|i| if hi.margin.contains(&i) { lerp(hi.alpha[i], lo.alpha[i]).clamp(0.0, 1.0) } else { hi.alpha[i] })
            .collect();
        let g: Vec<f64> = hi.g.iter().zip(&lo.g).map(|(&a, &b)| lerp(a, b)).collect();
        let mut s = DualSolution::from_g(lambda, alpha, lerp(hi.alpha0, lo.alpha0), &g, &self.w);
        for i in 0..s.sets.len() {
            s.sets[i] = if hi.margin.contains(&i) {
                PointSet::Margin
            } else if s.alpha.alpha[i] >= 1.0 {
                PointSet::Inside
            } else {
                PointSet::Outside
            };
        }
        Ok(s)
    }
}
