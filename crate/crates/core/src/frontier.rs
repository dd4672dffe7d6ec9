//! Balance versus sample-size frontier along a path, and rules for picking
//! a point on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::balance::{balance_report, Sdim};
use crate::effect::{effect_estimate, EffectEstimate, Estimand};
use crate::error::{Error, Result};
use crate::kernels::QMatrix;
use crate::path::RegularizationPath;

/// Kneedle sensitivity.
pub const KNEEDLE_S: f64 = 1.0;
pub const DEFAULT_SDIM_CAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub weight_sum: f64,
    pub ess: f64,
    pub mmd: f64,
    pub normed_dim: f64,
    pub sdim: Vec<f64>,
    pub estimate: Option<EffectEstimate>,
}

impl FrontierPoint {
    pub fn max_abs_sdim(&self) -> f64 {
        self.sdim.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One point per breakpoint, in path order (decreasing λ). `x` supplies the
/// features for the difference-in-means columns; `y`, when given, adds an
/// effect estimate per point.
pub fn build_frontier(
    path: &RegularizationPath,
    q: &QMatrix,
    x: &DMatrix<f64>,
    y: Option<&[f64]>,
    estimand: Estimand,
) -> Result<Vec<FrontierPoint>> {
    let w = path.w();
    (0..path.len())
        .map(|k| {
            let sol = path.breakpoint_solution(k);
            let rep = balance_report(&sol, q, x, w)?;
            let estimate = match y {
                Some(y) => Some(effect_estimate(y, &sol.normalized(w)?, w, sol.lambda, estimand)?),
                None => None,
            };
            Ok(FrontierPoint {
                lambda: rep.lambda,
                weight_sum: rep.weight_sum,
                ess: rep.ess,
                mmd: rep.mmd,
                normed_dim: rep.normed_dim,
                sdim: rep.sdim,
                estimate,
            })
        })
        .collect()
}

fn minmax(v: &[f64]) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    (span > 0.0 && span.is_finite()).then(|| v.iter().map(|x| (x - lo) / span).collect())
}

/// Knee of an increasing concave curve given as `(x, y)` pairs sorted by
/// `x`. Returns the position in the input, or `None` when the curve has no
/// detectable knee.
pub fn kneedle(xs: &[f64], ys: &[f64]) -> Option<usize> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let xn = minmax(xs)?;
    let yn = minmax(ys)?;
    let d: Vec<f64> = yn.iter().zip(&xn).map(|(y, x)| y - x).collect();
    let is_max = |i: usize| i > 0 && i + 1 < n && d[i] >= d[i - 1] && d[i] >= d[i + 1];
    let is_min = |i: usize| i > 0 && i + 1 < n && d[i] <= d[i - 1] && d[i] <= d[i + 1];
    let step = (xn[n - 1] - xn[0]).abs() / (n - 1) as f64;
    let mut threshold: Option<(f64, usize)> = None;
    for i in 1..n - 1 {
        if is_max(i) {
            threshold = Some((d[i] - KNEEDLE_S * step, i));
        } else if is_min(i) {
            if let Some((_, lmx)) = threshold {
                threshold = Some((0.0, lmx));
            }
        }
        if let Some((t, lmx)) = threshold {
            if d[i + 1] < t {
                return Some(lmx);
            }
        }
    }
    None
}

/// Elbow of the `(mmd, weight_sum)` frontier; index into `points`.
pub fn kneedle_elbow(points: &[FrontierPoint]) -> Result<Option<usize>> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!("kneedle needs at least 3 points, got {}", points.len())));
    }
    // ascending mmd; equal mmd keeps the larger λ first
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].mmd.total_cmp(&points[b].mmd).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| points[i].mmd).collect();
    let ys: Vec<f64> = order.iter().map(|&i| points[i].weight_sum).collect();
    Ok(kneedle(&xs, &ys).map(|k| order[k]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Criterion {
    /// Smallest MMD.
    Balance,
    /// Kneedle elbow, falling back to `Balance`.
    Elbow,
    /// The first (largest-λ) point.
    Imbalance,
    EssTarget(f64),
    NormedDimTarget(f64),
    /// Largest weight sum with every `|SDIM| < cap`.
    SdimCap(f64),
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Balance => write!(f, "balance"),
            Criterion::Elbow => write!(f, "elbow"),
            Criterion::Imbalance => write!(f, "imbalance"),
            Criterion::EssTarget(v) => write!(f, "ess:{v}"),
            Criterion::NormedDimTarget(v) => write!(f, "normed-dim:{v}"),
            Criterion::SdimCap(v) => write!(f, "sdim-cap:{v}"),
        }
    }
}

/// Parses `balance`, `elbow`, `imbalance`, `ess:<v>`, `normed-dim:<v>` or
/// `sdim-cap[:<v>]`.
impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown selection criterion '{s}'"));
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        Ok(match (head, arg) {
            ("balance", None) => Criterion::Balance,
            ("elbow", None) => Criterion::Elbow,
            ("imbalance", None) => Criterion::Imbalance,
            ("ess", Some(v)) => Criterion::EssTarget(v),
            ("normed-dim", Some(v)) => Criterion::NormedDimTarget(v),
            ("sdim-cap", v) => Criterion::SdimCap(v.unwrap_or(DEFAULT_SDIM_CAP)),
            _ => return Err(bad()),
        })
    }
}

/// Index of the point minimizing `key`; ties go to the earlier (larger λ)
/// point.
fn argmin_by(points: &[FrontierPoint], key: impl Fn(&FrontierPoint) -> f64) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        if key(&points[i]) < key(&points[best]) {
            best = i;
        }
    }
    best
}

/// Index of the selected point.
pub fn select(points: &[FrontierPoint], criterion: Criterion) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty frontier".into()));
    }
    let balance = || argmin_by(points, |p| p.mmd);
    Ok(match criterion {
        Criterion::Balance => balance(),
        Criterion::Imbalance => 0,
        Criterion::Elbow => {
            if points.len() < 3 {
                balance()
            } else {
                kneedle_elbow(points)?.unwrap_or_else(balance)
            }
        }
        Criterion::EssTarget(v) => argmin_by(points, |p| (p.ess - v).abs()),
        Criterion::NormedDimTarget(v) => argmin_by(points, |p| (p.normed_dim - v).abs()),
        Criterion::SdimCap(cap) => {
            let ok: Vec<usize> = (0..points.len()).filter(|&i| points[i].max_abs_sdim() < cap).collect();
            match ok.iter().copied().reduce(|b, i| if points[i].weight_sum > points[b].weight_sum { i } else { b }) {
                Some(i) => i,
                None => {
                    let i = argmin_by(points, FrontierPoint::max_abs_sdim);
                    let sd = Sdim { values: points[i].sdim.clone(), zero_sd: Vec::new() };
                    let (col, val) = sd.worst().unwrap_or((0, f64::NAN));
                    return Err(Error::CriterionInfeasible(format!(
                        "no point has all |SDIM| < {cap}; best point (lambda {:.4e}) still has |SDIM| {val:.4} in column {col}",
                        points[i].lambda
                    )));
                }
            }
        }
    })
}
