//! Pairwise coordinate descent (SMO with second-order working-set
//! selection) for box-constrained convex QPs with one linear equality per
//! group of variables, followed by an active-set polish.
//!
//! Problem: minimize `1/2 a'Ha + p'a` subject to
//! `sum_{k in g} y_k a_k = const_g` for every group `g` and
//! `0 <= a_k <= upper_k`. The starting point fixes the group constants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ridge_for, solve_with_ridge};

const TAU: f64 = 1e-12;
const POLISH_ROUNDS: usize = 4;

pub(crate) struct Problem<'a> {
    /// Source matrix; variable `k` uses row/column `idx[k]`.
    pub h: &'a DMatrix<f64>,
    pub idx: Vec<usize>,
    /// Added to the diagonal of `H`.
    pub shift: f64,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub group: Vec<usize>,
    pub n_groups: usize,
    pub upper: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.idx.len()
    }

    #[inline]
    fn hv(&self, k: usize, l: usize) -> f64 {
        let v = self.h[(self.idx[k], self.idx[l])];
        if k == l {
            v + self.shift
        } else {
            v
        }
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_groups];
        for (k, &g) in self.group.iter().enumerate() {
            m[g].push(k);
        }
        m
    }

    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = self.p.clone();
        for l in 0..n {
            if a[l] != 0.0 {
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk += self.hv(k, l) * a[l];
                }
            }
        }
        g
    }
}

#[allow(dead_code)] // grad, residual and iterations are diagnostics
pub(crate) struct Solved {
    pub alpha: Vec<f64>,
    /// Multiplier of each group's equality constraint.
    pub nu: Vec<f64>,
    /// `H a + p` at the solution.
    pub grad: Vec<f64>,
    /// Largest KKT violation in gradient units.
    pub residual: f64,
    pub iterations: usize,
}

fn at_lower(a: f64) -> bool {
    a <= 0.0
}

fn at_upper(a: f64, c: f64) -> bool {
    a >= c
}

/// Group multipliers and the KKT residual for the point `a`.
fn multipliers(pb: &Problem, a: &[f64], grad: &[f64], members: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let mut nu = vec![0.0; pb.n_groups];
    let mut residual = 0.0f64;
    for (g, mem) in members.iter().enumerate() {
        let free: Vec<usize> = mem
            .iter()
            .copied()
            .filter(|&k| !at_lower(a[k]) && !at_upper(a[k], pb.upper[k]))
            .collect();
        if !free.is_empty() {
            nu[g] = -free.iter().map(|&k| pb.y[k] * grad[k]).sum::<f64>() / free.len() as f64;
        } else {
            // interval of feasible multipliers from the bound variables
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for &k in mem {
                let r = -grad[k] * pb.y[k];
                let lower = at_lower(a[k]);
                if (pb.y[k] > 0.0) == lower {
                    lo = lo.max(r);
                } else {
                    hi = hi.min(r);
                }
            }
            nu[g] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo,
                (false, true) => hi,
                _ => 0.0,
            };
        }
        for &k in mem {
            let r = grad[k] + pb.y[k] * nu[g];
            let v = if at_lower(a[k]) {
                (-r).max(0.0)
            } else if at_upper(a[k], pb.upper[k]) {
                r.max(0.0)
            } else {
                r.abs()
            };
            residual = residual.max(v);
        }
    }
    (nu, residual)
}

fn smo(pb: &Problem, a: &mut [f64], grad: &mut [f64], members: &[Vec<usize>], eps: f64, max_iter: usize) -> usize {
    let mut iter = 0;
    while iter < max_iter {
        // most violating group and its first index
        let mut pick: Option<(f64, usize, usize)> = None;
        for (g, mem) in members.iter().enumerate() {
            let mut gmax = f64::NEG_INFINITY;
            let mut gmax2 = f64::NEG_INFINITY;
            let mut imax = usize::MAX;
            for &t in mem {
                let yt = pb.y[t];
                let up = if yt > 0.0 { a[t] < pb.upper[t] } else { a[t] > 0.0 };
                let low = if yt > 0.0 { a[t] > 0.0 } else { a[t] < pb.upper[t] };
                if up && -yt * grad[t] >= gmax {
                    gmax = -yt * grad[t];
                    imax = t;
                }
                if low && yt * grad[t] >= gmax2 {
                    gmax2 = yt * grad[t];
                }
            }
            let gap = gmax + gmax2;
            if imax != usize::MAX && gap.is_finite() && pick.is_none_or(|(best, _, _)| gap > best) {
                pick = Some((gap, g, imax));
            }
        }
        let Some((gap, g, i)) = pick else { break };
        if gap < eps {
            break;
        }
        let gmax = -pb.y[i] * grad[i];
        let hii = pb.hv(i, i);
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for &t in &members[g] {
            let yt = pb.y[t];
            let low = if yt > 0.0 { a[t] > 0.0 } else { a[t] < pb.upper[t] };
            if !low {
                continue;
            }
            let diff = gmax + yt * grad[t];
            if diff > 0.0 {
                let mut quad = hii + pb.hv(t, t) - 2.0 * pb.y[i] * yt * pb.hv(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        iter += 1;

        let (ci, cj) = (pb.upper[i], pb.upper[j]);
        let (old_i, old_j) = (a[i], a[j]);
        let hij = pb.hv(i, j);
        let hjj = pb.hv(j, j);
        let (mut ai, mut aj) = (a[i], a[j]);
        if pb.y[i] != pb.y[j] {
            let mut quad = hii + hjj + 2.0 * hij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let mut quad = hii + hjj - 2.0 * hij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        a[i] = ai;
        a[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di == 0.0 && dj == 0.0 {
            // no progress possible on the best pair
            break;
        }
        for (k, gk) in grad.iter_mut().enumerate() {
            *gk += pb.hv(k, i) * di + pb.hv(k, j) * dj;
        }
    }
    iter
}

/// Solves the equality-constrained system on the free variables of `a`.
fn polish(pb: &Problem, a: &[f64], members: &[Vec<usize>]) -> Option<Vec<f64>> {
    let n = pb.n();
    let free: Vec<usize> = (0..n)
        .filter(|&k| !at_lower(a[k]) && !at_upper(a[k], pb.upper[k]))
        .collect();
    if free.is_empty() {
        return None;
    }
    let mut gpos = vec![usize::MAX; pb.n_groups];
    let mut ng = 0;
    for &k in &free {
        let g = pb.group[k];
        if gpos[g] == usize::MAX {
            gpos[g] = ng;
            ng += 1;
        }
    }
    let m = free.len();
    let mut sys = DMatrix::zeros(m + ng, m + ng);
    let mut rhs = DVector::zeros(m + ng);
    let is_free = {
        let mut f = vec![false; n];
        for &k in &free {
            f[k] = true;
        }
        f
    };
    for (r, &k) in free.iter().enumerate() {
        for (c, &l) in free.iter().enumerate() {
            sys[(r, c)] = pb.hv(k, l);
        }
        let gp = gpos[pb.group[k]];
        sys[(r, m + gp)] = pb.y[k];
        sys[(m + gp, r)] = pb.y[k];
        let mut b = -pb.p[k];
        for l in 0..n {
            if !is_free[l] && a[l] != 0.0 {
                b -= pb.hv(k, l) * a[l];
            }
        }
        rhs[r] = b;
    }
    for (g, mem) in members.iter().enumerate() {
        if gpos[g] == usize::MAX {
            continue;
        }
        // the group constant is preserved: free part equals current free part
        rhs[m + gpos[g]] = mem.iter().filter(|&&k| is_free[k]).map(|&k| pb.y[k] * a[k]).sum();
    }
    let trace: f64 = free.iter().map(|&k| pb.hv(k, k)).sum();
    let x = solve_with_ridge(&sys, &rhs, m, ridge_for(trace, m)).ok()?;
    let mut out = a.to_vec();
    for (r, &k) in free.iter().enumerate() {
        let v = x[r];
        let c = pb.upper[k];
        let slack = 1e-10 * c.min(1.0).max(1e-300);
        if v < -slack || (c.is_finite() && v > c + slack) {
            return None;
        }
        out[k] = v.clamp(0.0, c);
    }
    Some(out)
}

/// Runs SMO to `eps`, then alternates active-set polishing with tighter
/// SMO rounds. Fails if the final residual exceeds `fail_tol`.
pub(crate) fn solve(pb: &Problem, start: Vec<f64>, eps: f64, fail_tol: f64, max_iter: usize) -> Result<Solved> {
    let members = pb.members();
    let mut a = start;
    let mut grad = pb.gradient(&a);
    let mut iterations = 0;
    let mut round_eps = eps;
    let mut best: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;
    for _ in 0..POLISH_ROUNDS {
        iterations += smo(pb, &mut a, &mut grad, &members, round_eps, max_iter.saturating_sub(iterations));
        // refresh the gradient to shed accumulated drift
        grad = pb.gradient(&a);
        let (nu, res) = multipliers(pb, &a, &grad, &members);
        let mut cand = (a.clone(), nu, grad.clone(), res);
        if let Some(pa) = polish(pb, &a, &members) {
            let pg = pb.gradient(&pa);
            let (pnu, pres) = multipliers(pb, &pa, &pg, &members);
            if pres <= res {
                cand = (pa, pnu, pg, pres);
            }
        }
        let done = cand.3 <= eps * 1e-3;
        if best.as_ref().is_none_or(|b| cand.3 < b.3) {
            best = Some(cand);
        }
        if done || iterations >= max_iter {
            break;
        }
        round_eps *= 1e-2;
    }
    let (alpha, nu, grad, residual) = best.expect("at least one round");
    if !(residual <= fail_tol) {
        return Err(Error::NonConvergence { iterations, residual });
    }
    Ok(Solved { alpha, nu, grad, residual, iterations })
}
