//! Feature preparation, kernel evaluation and the signed Gram matrix `Q`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Above this many rows the median heuristic works on a fixed-seed
/// subsample of pairs.
pub const MEDIAN_EXACT_MAX_N: usize = 2000;
const MEDIAN_SAMPLE_PAIRS: usize = 1_000_000;
const MEDIAN_SEED: u64 = 0x5eed_0f_3ed1a;

/// RBF bandwidth, either fixed or resolved from data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    Median,
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Fixed(g) => s.serialize_f64(*g),
            Gamma::Median => s.serialize_str("median"),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(g) => Ok(Gamma::Fixed(g)),
            Repr::Str(s) if s == "median" => Ok(Gamma::Median),
            Repr::Str(s) => s
                .parse()
                .map(Gamma::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("invalid gamma '{s}'"))),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial {
        degree: u32,
        #[serde(default = "default_scale")]
        scale_c: f64,
    },
    Rbf {
        gamma: Gamma,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, scale_c } => {
                if degree == 0 {
                    return Err(Error::InvalidParameter("polynomial degree must be >= 1".into()));
                }
                if !(scale_c >= 0.0) {
                    return Err(Error::InvalidParameter("polynomial offset c must be >= 0".into()));
                }
                Ok(())
            }
            KernelSpec::Rbf { gamma: Gamma::Fixed(g) } if !(g > 0.0 && g.is_finite()) => {
                Err(Error::InvalidParameter("rbf gamma must be positive".into()))
            }
            KernelSpec::Rbf { .. } => Ok(()),
        }
    }

    /// Replaces `gamma = median` with the value computed from `xs`.
    pub fn resolve(&self, xs: &DMatrix<f64>) -> Result<KernelSpec> {
        self.validate()?;
        Ok(match *self {
            KernelSpec::Rbf { gamma: Gamma::Median } => KernelSpec::Rbf {
                gamma: Gamma::Fixed(median_heuristic(xs)?),
            },
            other => other,
        })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, scale_c } => write!(f, "poly:{degree}:{scale_c}"),
            KernelSpec::Rbf { gamma: Gamma::Median } => write!(f, "rbf:median"),
            KernelSpec::Rbf { gamma: Gamma::Fixed(g) } => write!(f, "rbf:{g}"),
        }
    }
}

/// Parses `linear`, `poly[:degree[:c]]` or `rbf[:median|:gamma]`.
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("unrecognized kernel '{s}'"));
        let spec = match parts.as_slice() {
            ["linear"] => KernelSpec::Linear,
            ["poly" | "polynomial", rest @ ..] if rest.len() <= 2 => KernelSpec::Polynomial {
                degree: rest.first().map(|d| d.parse()).transpose().map_err(|_| bad())?.unwrap_or(2),
                scale_c: rest.get(1).map(|c| c.parse()).transpose().map_err(|_| bad())?.unwrap_or(1.0),
            },
            ["rbf"] | ["rbf", "median"] => KernelSpec::Rbf { gamma: Gamma::Median },
            ["rbf", g] => KernelSpec::Rbf { gamma: Gamma::Fixed(g.parse().map_err(|_| bad())?) },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Column-standardized covariates.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub xs: DMatrix<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub constant: Vec<bool>,
}

/// Centers each column and scales it to unit sample sd (denominator
/// `N - 1`). Constant columns become zeros.
pub fn standardize(x: &DMatrix<f64>) -> Standardized {
    let (n, p) = x.shape();
    let mut xs = DMatrix::zeros(n, p);
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let is_const = col.iter().all(|&v| v == col[0]);
        let var = if n > 1 {
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        if !is_const && sd > 0.0 {
            for i in 0..n {
                xs[(i, j)] = (x[(i, j)] - mean) / sd;
            }
        }
        means.push(mean);
        sds.push(sd);
        constant.push(is_const || sd == 0.0);
    }
    Standardized { xs, means, sds, constant }
}

/// Which generated degree-2 columns to leave out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRules {
    /// Drop `x^2` for columns with exactly two distinct values.
    pub drop_binary_squares: bool,
    /// Groups of column indices (e.g. dummies of one categorical variable)
    /// whose pairwise products are dropped.
    pub exclusive_groups: Vec<Vec<usize>>,
}

impl Default for ExpansionRules {
    fn default() -> Self {
        Self { drop_binary_squares: true, exclusive_groups: Vec::new() }
    }
}

impl ExpansionRules {
    pub fn none() -> Self {
        Self { drop_binary_squares: false, exclusive_groups: Vec::new() }
    }
}

fn is_binary_column(x: &DMatrix<f64>, j: usize) -> bool {
    let col = x.column(j);
    let a = col[0];
    match col.iter().find(|&&v| v != a) {
        Some(&b) => col.iter().all(|&v| v == a || v == b),
        None => false,
    }
}

/// Degree-2 expansion: originals, then pairwise products `x_j x_k`
/// (`j < k`), then squares. Returns the matrix and column names.
pub fn polynomial_expand(
    x: &DMatrix<f64>,
    names: &[String],
    degree: u32,
    rules: &ExpansionRules,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    if degree != 2 {
        return Err(Error::Unsupported(format!("polynomial expansion of degree {degree}")));
    }
    let (n, p) = x.shape();
    if names.len() != p {
        return Err(Error::Dimension(format!("{} names for {} columns", names.len(), p)));
    }
    let same_group = |j: usize, k: usize| {
        rules
            .exclusive_groups
            .iter()
            .any(|g| g.contains(&j) && g.contains(&k))
    };
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    for j in 0..p {
        cols.push((names[j].clone(), x.column(j).iter().copied().collect()));
    }
    for j in 0..p {
        for k in (j + 1)..p {
            if same_group(j, k) {
                continue;
            }
            let v = (0..n).map(|i| x[(i, j)] * x[(i, k)]).collect();
            cols.push((format!("{}*{}", names[j], names[k]), v));
        }
    }
    for j in 0..p {
        if rules.drop_binary_squares && is_binary_column(x, j) {
            continue;
        }
        let v = (0..n).map(|i| x[(i, j)] * x[(i, j)]).collect();
        cols.push((format!("{}^2", names[j]), v));
    }
    let out = DMatrix::from_fn(n, cols.len(), |i, c| cols[c].1[i]);
    Ok((out, cols.into_iter().map(|(name, _)| name).collect()))
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `gamma = 1 / median ||x_i - x_j||^2` over distinct pairs.
pub fn median_heuristic(xs: &DMatrix<f64>) -> Result<f64> {
    let n = xs.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter("median heuristic needs at least two rows".into()));
    }
    let rows = rows_of(xs);
    let mut d: Vec<f64> = if n <= MEDIAN_EXACT_MAX_N {
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(sq_dist(&rows[i], &rows[j]));
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SEED);
        (0..MEDIAN_SAMPLE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                sq_dist(&rows[i], &rows[j])
            })
            .collect()
    };
    let m = median(&mut d);
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(
            "median pairwise distance is zero; cannot set RBF bandwidth".into(),
        ));
    }
    Ok(1.0 / m)
}

fn median(v: &mut [f64]) -> f64 {
    let len = v.len();
    let mid = len / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if len % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Dense kernel matrix of the rows of `xs`. `gamma = median` is resolved
/// from `xs` first.
pub fn gram(xs: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let spec = spec.resolve(xs)?;
    let n = xs.nrows();
    let rows = rows_of(xs);
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(j, col)| {
        let xj = &rows[j];
        for (i, out) in col.iter_mut().enumerate() {
            let xi = &rows[i];
            *out = match spec {
                KernelSpec::Linear => dot(xi, xj),
                KernelSpec::Polynomial { degree, scale_c } => (dot(xi, xj) + scale_c).powi(degree as i32),
                KernelSpec::Rbf { gamma: Gamma::Fixed(g) } => {
                    if i == j {
                        1.0
                    } else {
                        (-g * sq_dist(xi, xj)).exp()
                    }
                }
                KernelSpec::Rbf { gamma: Gamma::Median } => unreachable!("resolved above"),
            };
        }
    });
    Ok(DMatrix::from_vec(n, n, data))
}

/// The signed Gram matrix `Q_ij = W_i W_j K_ij`.
#[derive(Debug, Clone)]
pub struct QMatrix {
    q: DMatrix<f64>,
    kernel: Option<DMatrix<f64>>,
}

impl QMatrix {
    /// Wraps an already-signed matrix.
    pub fn from_signed(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Dimension("Q must be square".into()));
        }
        Ok(Self { q, kernel: None })
    }

    /// Builds `Q` and keeps `K` alongside it.
    pub fn with_kernel(k: DMatrix<f64>, w: &[f64]) -> Result<Self> {
        let q = q_matrix(&k, w)?.q;
        Ok(Self { q, kernel: Some(k) })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn kernel(&self) -> Option<&DMatrix<f64>> {
        self.kernel.as_ref()
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.q.diagonal().sum()
    }

    /// `Q v`, skipping zero entries of `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                let col = self.q.column(j);
                for i in 0..n {
                    out[i] += col[i] * vj;
                }
            }
        }
        out
    }

    /// `v' Q v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Signs a kernel matrix with the treatment labels.
pub fn q_matrix(k: &DMatrix<f64>, w: &[f64]) -> Result<QMatrix> {
    let n = k.nrows();
    if !k.is_square() || w.len() != n {
        return Err(Error::Dimension(format!("K is {}x{}, W has {}", n, k.ncols(), w.len())));
    }
    let q = DMatrix::from_fn(n, n, |i, j| w[i] * w[j] * k[(i, j)]);
    Ok(QMatrix { q, kernel: None })
}

/// Feature construction applied before the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    #[default]
    Raw,
    /// Explicit degree-2 expansion (originals, interactions, squares).
    Poly2,
}

impl FromStr for FeatureMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureMap::Raw),
            "poly2" => Ok(FeatureMap::Poly2),
            _ => Err(Error::InvalidParameter(format!("unknown feature map '{s}'"))),
        }
    }
}

/// Expands (if requested) and standardizes covariates, returning the
/// matrix handed to the kernel.
pub fn prepare_features(
    x: &DMatrix<f64>,
    names: &[String],
    map: FeatureMap,
    rules: &ExpansionRules,
    scale: bool,
) -> Result<DMatrix<f64>> {
    let expanded = match map {
        FeatureMap::Raw => x.clone(),
        FeatureMap::Poly2 => polynomial_expand(x, names, 2, rules)?.0,
    };
    Ok(if scale { standardize(&expanded).xs } else { expanded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use rand_distr::{Distribution, StandardNormal};

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("v{j}")).collect()
    }

    #[test]
    fn standardize_uses_sample_sd() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let s = standardize(&x);
        // sd of (1,2,3) with N-1 denominator is 1
        assert_abs_diff_eq!(s.xs[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.xs[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.xs[(2, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(s.xs.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert!(s.constant[1] && !s.constant[0]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(20, 3, |_, _| StandardNormal.sample(&mut rng));
        let once = standardize(&x).xs;
        let twice = standardize(&once).xs;
        assert!((once - twice).abs().max() < 1e-12);
    }

    #[test]
    fn expansion_column_counts() {
        let x2 = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 0.5, 0.1, 0.9]);
        let (e, n) = polynomial_expand(&x2, &names(2), 2, &ExpansionRules::none()).unwrap();
        assert_eq!(e.ncols(), 5);
        assert_eq!(n, vec!["v0", "v1", "v0*v1", "v0^2", "v1^2"]);

        // third column binary: its square is dropped
        let x3 = DMatrix::from_column_slice(
            4,
            3,
            &[1.0, 2.0, 3.0, 4.0, 0.5, 0.1, 0.9, 0.3, 0.0, 1.0, 1.0, 0.0],
        );
        let (e, n) = polynomial_expand(&x3, &names(3), 2, &ExpansionRules::default()).unwrap();
        // enumeration: 3 originals + C(3,2) products + squares of the 2 non-binary columns
        let expected: usize = 3 + (0..3).flat_map(|j| (j + 1..3).map(move |k| (j, k))).count() + 2;
        assert_eq!(expected, 8);
        assert_eq!(e.ncols(), expected);
        assert!(!n.contains(&"v2^2".to_string()));

        let x1 = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        let (e, _) = polynomial_expand(&x1, &names(1), 2, &ExpansionRules::none()).unwrap();
        assert_eq!(e.row(1).iter().copied().collect::<Vec<_>>(), vec![3.0, 9.0]);

        assert!(polynomial_expand(&x1, &names(1), 3, &ExpansionRules::none()).is_err());
    }

    #[test]
    fn expansion_drops_same_group_interactions() {
        let x = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.2, 0.4, 0.8]);
        let rules = ExpansionRules { drop_binary_squares: true, exclusive_groups: vec![vec![0, 1]] };
        let (_, n) = polynomial_expand(&x, &names(3), 2, &rules).unwrap();
        assert!(!n.contains(&"v0*v1".to_string()));
        assert_eq!(n, vec!["v0", "v1", "v2", "v0*v2", "v1*v2", "v2^2"]);
    }

    #[test]
    fn median_heuristic_examples() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert_abs_diff_eq!(median_heuristic(&two).unwrap(), 0.25, epsilon = 1e-15);

        let h = 3f64.sqrt() / 2.0;
        let tri = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]);
        assert_abs_diff_eq!(median_heuristic(&tri).unwrap(), 1.0, epsilon = 1e-12);

        let same = DMatrix::from_element(4, 2, 1.5);
        assert!(median_heuristic(&same).is_err());
    }

    #[test]
    fn gram_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = gram(&x, &KernelSpec::Linear).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));

        // x1'x2 = 1 -> (1 + 1)^2
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 3.0]);
        let k = gram(&y, &KernelSpec::Polynomial { degree: 2, scale_c: 1.0 }).unwrap();
        assert_abs_diff_eq!(k[(0, 1)], 4.0, epsilon = 1e-15);

        let z = DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.3, 0.3]);
        let k = gram(&z, &KernelSpec::Rbf { gamma: Gamma::Fixed(2.0) }).unwrap();
        assert_eq!(k[(0, 1)], 1.0);
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn q_matrix_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let q = q_matrix(&k, &[1.0, -1.0]).unwrap();
        assert_eq!(q.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
        let q = q_matrix(&k, &[1.0, 1.0]).unwrap();
        assert_eq!(q.matrix(), &k);
        assert_eq!(q.quad_form(&[0.0, 1.0]), k[(1, 1)]);
    }

    #[test]
    fn linear_quadratic_form_matches_explicit_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 8;
            let x = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
            let w: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let q = q_matrix(&gram(&x, &KernelSpec::Linear).unwrap(), &w).unwrap();
            let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut v = [0.0; 3];
            for i in 0..n {
                for d in 0..3 {
                    v[d] += alpha[i] * w[i] * x[(i, d)];
                }
            }
            let explicit: f64 = v.iter().map(|a| a * a).sum();
            let qf = q.quad_form(&alpha);
            assert!((qf - explicit).abs() <= 1e-10 * explicit.max(1.0));
        }
    }

    #[test]
    fn gram_is_psd_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let specs = [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 2, scale_c: 1.0 },
            KernelSpec::Polynomial { degree: 3, scale_c: 0.5 },
            KernelSpec::Rbf { gamma: Gamma::Median },
        ];
        for spec in specs {
            for _ in 0..5 {
                let x = DMatrix::from_fn(15, 4, |_, _| StandardNormal.sample(&mut rng));
                let k = gram(&x, &spec).unwrap();
                assert_eq!(k, k.transpose());
                let ev = SymmetricEigen::new(k.clone()).eigenvalues;
                let floor = -1e-8 * k.trace() / 15.0;
                assert!(ev.min() >= floor, "{spec}: min eigenvalue {}", ev.min());
            }
        }
    }

    #[test]
    fn poly_kernel_equals_weighted_explicit_expansion() {
        // (x'y + c)^2 = c^2 + 2c sum x_j y_j + 2 sum_{j<k} x_j x_k y_j y_k + sum x_j^2 y_j^2
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = 0.7;
        let x = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
        let (e, _) = polynomial_expand(&x, &names(3), 2, &ExpansionRules::none()).unwrap();
        let mut weights = vec![(2.0f64 * c).sqrt(); 3];
        weights.extend([2f64.sqrt(); 3]);
        weights.extend([1.0; 3]);
        let feat = DMatrix::from_fn(3, e.ncols() + 1, |i, j| {
            if j < e.ncols() {
                e[(i, j)] * weights[j]
            } else {
                c
            }
        });
        let k_explicit = gram(&feat, &KernelSpec::Linear).unwrap();
        let k_poly = gram(&x, &KernelSpec::Polynomial { degree: 2, scale_c: c }).unwrap();
        assert!((k_explicit - k_poly).abs().max() < 1e-12);
    }

    #[test]
    fn kernel_spec_round_trips_through_text() {
        for s in ["linear", "poly:2:1", "rbf:median", "rbf:0.25"] {
            let k: KernelSpec = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("rbf:-1".parse::<KernelSpec>().is_err());
        assert!("poly:0".parse::<KernelSpec>().is_err());
    }


    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_is_symmetric_psd(
            vals in proptest::collection::vec(-3.0f64..3.0, 24),
            kind in 0usize..3,
        ) {
            let x = DMatrix::from_row_slice(8, 3, &vals);
            let spec = [
                KernelSpec::Linear,
                KernelSpec::Polynomial { degree: 3, scale_c: 1.0 },
                KernelSpec::Rbf { gamma: Gamma::Fixed(0.7) },
            ][kind];
            let k = gram(&x, &spec).unwrap();
            prop_assert!((&k - k.transpose()).abs().max() == 0.0);
            let ev = SymmetricEigen::new(k.clone()).eigenvalues;
            prop_assert!(ev.min() >= -1e-9 * k.trace().max(1.0));
            let w = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0];
            let q = q_matrix(&k, &w).unwrap();
            let v: Vec<f64> = vals[..8].to_vec();
            prop_assert!(q.quad_form(&v) >= -1e-9 * k.trace().max(1.0));
        }
    }
}
