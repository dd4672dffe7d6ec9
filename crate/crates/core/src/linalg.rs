//! Small dense solves used by the active-set steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the largest one mark the system
/// as numerically singular.
pub const PIVOT_RATIO_TOL: f64 = 1e-14;

/// Relative ridge added to the leading block when a solve is singular.
pub const RIDGE_REL: f64 = 1e-10;

/// Refinement passes against the unregularized matrix.
const REFINE_STEPS: usize = 10;

fn factor(a: &DMatrix<f64>) -> Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    (max > 0.0 && min >= PIVOT_RATIO_TOL * max).then_some(lu)
}

#[cfg(test)]
fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = factor(a)?.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solves `a x = b`. If `a` is singular, retries with `ridge` added to the
/// first `ridge_block` diagonal entries. Either way the answer is polished
/// by iterative refinement on the residual of the original system, which
/// removes the ridge bias when the system is consistent.
pub fn solve_with_ridge(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge_block: usize,
    ridge: f64,
) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let (lu, steps) = match factor(a) {
        Some(lu) => (lu, 1),
        None => {
            let mut ar = a.clone();
            for i in 0..ridge_block.min(a.nrows()) {
                ar[(i, i)] += ridge;
            }
            let lu = factor(&ar).ok_or_else(|| {
                Error::Singular(format!("{}x{} system singular after ridge {ridge:.1e}", a.nrows(), a.ncols()))
            })?;
            (lu, REFINE_STEPS)
        }
    };
    let singular = || Error::Singular(format!("{}x{} solve produced non-finite values", a.nrows(), a.ncols()));
    let mut x = lu.solve(b).filter(|x| x.iter().all(|v| v.is_finite())).ok_or_else(singular)?;
    let mut res = (b - a * &x).norm();
    for _ in 0..steps {
        if res == 0.0 {
            break;
        }
        let Some(dx) = lu.solve(&(b - a * &x)) else { break };
        let cand = &x + dx;
        let r = (b - a * &cand).norm();
        if !(r < res) {
            break;
        }
        x = cand;
        res = r;
    }
    Ok(x)
}

/// Default ridge for a matrix with the given trace and dimension.
pub fn ridge_for(trace: f64, n: usize) -> f64 {
    let r = RIDGE_REL * trace.abs() / n.max(1) as f64;
    if r > 0.0 {
        r
    } else {
        RIDGE_REL
    }
}
