//! Balance and sample-size diagnostics for a weight vector.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{is_simplex, normalize_simplex, WeightVector};
use crate::error::{Error, Result};
use crate::kernels::QMatrix;
use crate::qp::DualSolution;

/// Quadratic forms below `-NEG_QUAD_TOL * scale` signal a non-PSD kernel.
pub const NEG_QUAD_TOL: f64 = 1e-10;
/// Weights above this count toward the support.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub lambda: f64,
    /// Kernel MMD of the normalized weights.
    pub mmd: f64,
    /// `|sum_i a_i W_i x_i|` of the normalized weights on the raw features.
    pub normed_dim: f64,
    pub sdim: Vec<f64>,
    pub weight_sum: f64,
    pub ess: f64,
}

fn check_len(alpha: &[f64], w: &[f64]) -> Result<()> {
    if alpha.len() != w.len() {
        return Err(Error::Dimension(format!("{} weights for {} units", alpha.len(), w.len())));
    }
    Ok(())
}

/// `sqrt(a'Qa)`.
pub fn weighted_mmd(alpha: &WeightVector, q: &QMatrix) -> Result<f64> {
    if alpha.len() != q.n() {
        return Err(Error::Dimension(format!("{} weights for Q of order {}", alpha.len(), q.n())));
    }
    let v = q.quad_form(&alpha.alpha);
    let scale = {
        let s: f64 = alpha.alpha.iter().map(|a| a.abs()).sum();
        let d = q.matrix().diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (s * s * d).max(1.0)
    };
    if v < -NEG_QUAD_TOL * scale {
        return Err(Error::NotPsd(v));
    }
    Ok(v.max(0.0).sqrt())
}

/// Kish effective sample size summed over the two groups.
pub fn ess_kish(alpha: &WeightVector, w: &[f64]) -> Result<f64> {
    check_len(&alpha.alpha, w)?;
    let mut s = [0.0f64; 2];
    let mut s2 = [0.0f64; 2];
    for (&a, &wi) in alpha.alpha.iter().zip(w) {
        let g = usize::from(wi < 0.0);
        s[g] += a;
        s2[g] += a * a;
    }
    if !(s[0] > 0.0 && s[1] > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    Ok(s[0] * s[0] / s2[0] + s[1] * s[1] / s2[1])
}

/// `|sum_i a_i W_i x_i|` on the rows of `x`.
pub fn normed_dim(x: &DMatrix<f64>, alpha: &WeightVector, w: &[f64]) -> Result<f64> {
    check_len(&alpha.alpha, w)?;
    if x.nrows() != w.len() {
        return Err(Error::Dimension(format!("{} rows for {} units", x.nrows(), w.len())));
    }
    let mut v = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        let c = alpha.alpha[i] * w[i];
        if c != 0.0 {
            for (d, vd) in v.iter_mut().enumerate() {
                *vd += c * x[(i, d)];
            }
        }
    }
    Ok(v.iter().map(|a| a * a).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sdim {
    pub values: Vec<f64>,
    /// Columns whose pooled sd is zero (reported as 0).
    pub zero_sd: Vec<bool>,
}

impl Sdim {
    /// Largest absolute value and its column.
    pub fn worst(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .fold(None, |b, (j, v)| match b {
                Some((_, bv)) if bv >= v => b,
                _ => Some((j, v)),
            })
    }
}

fn group_var(x: &DMatrix<f64>, rows: &[usize], d: usize) -> f64 {
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mean = rows.iter().map(|&i| x[(i, d)]).sum::<f64>() / n as f64;
    rows.iter().map(|&i| (x[(i, d)] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standardized difference in weighted means per column, scaled by the
/// unweighted pooled sd `sqrt((s_T^2 + s_C^2) / 2)`.
pub fn sdim(x: &DMatrix<f64>, alpha: &WeightVector, w: &[f64]) -> Result<Sdim> {
    check_len(&alpha.alpha, w)?;
    if x.nrows() != w.len() {
        return Err(Error::Dimension(format!("{} rows for {} units", x.nrows(), w.len())));
    }
    if !is_simplex(&alpha.alpha, w) {
        return Err(Error::NotNormalized);
    }
    let t: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let c: Vec<usize> = (0..w.len()).filter(|&i| w[i] < 0.0).collect();
    let mut values = Vec::with_capacity(x.ncols());
    let mut zero_sd = Vec::with_capacity(x.ncols());
    for d in 0..x.ncols() {
        let sd = (0.5 * (group_var(x, &t, d) + group_var(x, &c, d))).sqrt();
        let diff: f64 = (0..w.len()).map(|i| alpha.alpha[i] * w[i] * x[(i, d)]).sum();
        if sd > 0.0 {
            values.push(diff / sd);
            zero_sd.push(false);
        } else {
            values.push(0.0);
            zero_sd.push(true);
        }
    }
    Ok(Sdim { values, zero_sd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub value: f64,
    /// The integer solution selected nothing.
    pub degenerate: bool,
}

/// Fraction of the integer selection that carries positive continuous weight.
pub fn coverage(alpha_svm: &[f64], selection: &[bool]) -> Coverage {
    let selected = selection.iter().filter(|&&s| s).count();
    if selected == 0 {
        return Coverage { value: 0.0, degenerate: true };
    }
    let hit = selection
        .iter()
        .zip(alpha_svm)
        .filter(|&(&s, &a)| s && a > SUPPORT_TOL)
        .count();
    Coverage { value: hit as f64 / selected as f64, degenerate: false }
}

/// All diagnostics for one dual solution. `x` supplies the features for
/// the difference-in-means measures.
pub fn balance_report(sol: &DualSolution, q: &QMatrix, x: &DMatrix<f64>, w: &[f64]) -> Result<BalanceReport> {
    let normalized = normalize_simplex(&sol.alpha, w)?;
    Ok(BalanceReport {
        lambda: sol.lambda,
        mmd: weighted_mmd(&normalized, q)?,
        normed_dim: normed_dim(x, &normalized, w)?,
        sdim: sdim(x, &normalized, w)?.values,
        weight_sum: sol.alpha.sum(),
        ess: ess_kish(&normalized, w)?,
    })
}
