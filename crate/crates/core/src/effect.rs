//! Weighted difference-in-means estimation, its variance, and the
//! conditional and worst-case bias decompositions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::balance::{ess_kish, SUPPORT_TOL};
use crate::data::{is_simplex, WeightVector};
use crate::error::{Error, Result};
use crate::kernels::QMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// Sample average effect over all units.
    #[default]
    Sate,
    /// Sample average effect over the treated.
    Satt,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Sate => "sate",
            Estimand::Satt => "satt",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sate" => Ok(Estimand::Sate),
            "satt" => Ok(Estimand::Satt),
            _ => Err(Error::InvalidParameter(format!("unknown estimand '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub tau_hat: f64,
    /// `None` when a group has fewer than two weighted units.
    pub se: Option<f64>,
    pub ess: f64,
    pub lambda: f64,
    pub estimand: Estimand,
    pub n_support: usize,
}

impl EffectEstimate {
    /// `tau_hat -/+ 1.96 se`.
    pub fn ci95(&self) -> Option<(f64, f64)> {
        self.se.map(|se| (self.tau_hat - 1.96 * se, self.tau_hat + 1.96 * se))
    }
}

fn check(y: &[f64], alpha: &WeightVector, w: &[f64]) -> Result<()> {
    if y.len() != w.len() || alpha.len() != w.len() {
        return Err(Error::Dimension(format!(
            "{} outcomes, {} weights, {} units",
            y.len(),
            alpha.len(),
            w.len()
        )));
    }
    if !is_simplex(&alpha.alpha, w) {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

/// `sum_T a_i Y_i - sum_C a_i Y_i` for simplex-normalized weights.
pub fn estimate(y: &[f64], alpha: &WeightVector, w: &[f64]) -> Result<f64> {
    check(y, alpha, w)?;
    Ok(y.iter().zip(&alpha.alpha).zip(w).map(|((yi, a), wi)| a * wi * yi).sum())
}

/// Weighted two-group Neyman standard error
/// `sqrt(sum_T a^2 (Y - Ybar_T)^2 + sum_C a^2 (Y - Ybar_C)^2)`.
pub fn neyman_se(y: &[f64], alpha: &WeightVector, w: &[f64]) -> Result<f64> {
    check(y, alpha, w)?;
    let mut total = 0.0;
    for sign in [1.0, -1.0] {
        let idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] * sign > 0.0).collect();
        let support = idx.iter().filter(|&&i| alpha.alpha[i] > SUPPORT_TOL).count();
        if support < 2 {
            return Err(Error::InvalidData(format!(
                "{} group has {support} weighted unit(s); need two for a variance",
                if sign > 0.0 { "treated" } else { "control" }
            )));
        }
        let mean: f64 = idx.iter().map(|&i| alpha.alpha[i] * y[i]).sum();
        total += idx.iter().map(|&i| (alpha.alpha[i] * (y[i] - mean)).powi(2)).sum::<f64>();
    }
    Ok(total.sqrt())
}

/// Point estimate, standard error and effective sample size together.
pub fn effect_estimate(
    y: &[f64],
    alpha: &WeightVector,
    w: &[f64],
    lambda: f64,
    estimand: Estimand,
) -> Result<EffectEstimate> {
    Ok(EffectEstimate {
        tau_hat: estimate(y, alpha, w)?,
        se: neyman_se(y, alpha, w).ok(),
        ess: ess_kish(alpha, w)?,
        lambda,
        estimand,
        n_support: alpha.alpha.iter().filter(|&&a| a > SUPPORT_TOL).count(),
    })
}

/// Replaces the treated weights with `1 / n_T`.
pub fn fix_treated_weights(alpha: &WeightVector, w: &[f64]) -> Result<WeightVector> {
    if !is_simplex(&alpha.alpha, w) {
        return Err(Error::NotNormalized);
    }
    let n_t = w.iter().filter(|&&v| v > 0.0).count() as f64;
    let alpha = alpha
        .alpha
        .iter()
        .zip(w)
        .map(|(&a, &wi)| if wi > 0.0 { 1.0 / n_t } else { a })
        .collect();
    Ok(WeightVector { alpha, normalized: true })
}

fn targets(w: &[f64], estimand: Estimand) -> Vec<f64> {
    let n = w.len() as f64;
    let n_t = w.iter().filter(|&&v| v > 0.0).count() as f64;
    w.iter()
        .map(|&wi| match estimand {
            Estimand::Sate => 1.0 / n,
            Estimand::Satt if wi > 0.0 => 1.0 / n_t,
            Estimand::Satt => 0.0,
        })
        .collect()
}

/// Conditional bias from per-unit control and treated mean outcomes:
/// `sum a_i W_i f0_i + sum (a_i T_i - v_i) tau_i`.
pub fn conditional_bias_values(alpha: &[f64], w: &[f64], mu0: &[f64], mu1: &[f64], estimand: Estimand) -> f64 {
    let v = targets(w, estimand);
    (0..w.len())
        .map(|i| {
            let t = if w[i] > 0.0 { 1.0 } else { 0.0 };
            alpha[i] * w[i] * mu0[i] + (alpha[i] * t - v[i]) * (mu1[i] - mu0[i])
        })
        .sum()
}

/// The same bias written as `sum (a_i T_i - v_i) f1_i + sum (v_i - a_i (1 - T_i)) f0_i`.
pub fn conditional_bias_alt_values(alpha: &[f64], w: &[f64], mu0: &[f64], mu1: &[f64], estimand: Estimand) -> f64 {
    let v = targets(w, estimand);
    (0..w.len())
        .map(|i| {
            let t = if w[i] > 0.0 { 1.0 } else { 0.0 };
            (alpha[i] * t - v[i]) * mu1[i] + (v[i] - alpha[i] * (1.0 - t)) * mu0[i]
        })
        .sum()
}

fn eval_rows(x: &DMatrix<f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            f(&row)
        })
        .collect()
}

/// Conditional bias of the estimator given the covariates, for known
/// outcome surfaces `f0` (control) and `f1` (treated).
pub fn conditional_bias(
    alpha: &WeightVector,
    x: &DMatrix<f64>,
    w: &[f64],
    f0: impl Fn(&[f64]) -> f64,
    f1: impl Fn(&[f64]) -> f64,
    estimand: Estimand,
) -> Result<f64> {
    if x.nrows() != w.len() || alpha.len() != w.len() {
        return Err(Error::Dimension(format!("{} rows, {} weights, {} units", x.nrows(), alpha.len(), w.len())));
    }
    let mu0 = eval_rows(x, f0);
    let mu1 = eval_rows(x, f1);
    Ok(conditional_bias_values(&alpha.alpha, w, &mu0, &mu1, estimand))
}

/// Worst-case prognostic imbalance over the unit ball of the kernel's
/// RKHS: `sqrt(a'Qa)`.
pub fn worst_case_bias(alpha: &WeightVector, q: &QMatrix) -> f64 {
    q.quad_form(&alpha.alpha).max(0.0).sqrt()
}
