//! Dataset containers, validation, simplex normalization and CSV ingestion.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for `sum_T alpha == sum_C alpha`.
pub const BALANCE_TOL: f64 = 1e-8;

/// Observed data: covariates, binary treatment, optional outcome.
///
/// `w` is derived from the treatment labels as `2t - 1` and is never set
/// independently.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    t: Vec<bool>,
    w: Vec<f64>,
    y: Option<Vec<f64>>,
    names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset. Only shape agreement is enforced here; call
    /// [`Dataset::validate`] for the content checks.
    pub fn new(
        x: DMatrix<f64>,
        treatment: Vec<bool>,
        outcome: Option<Vec<f64>>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if treatment.len() != n {
            return Err(Error::Dimension(format!(
                "{} treatment labels for {} rows",
                treatment.len(),
                n
            )));
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return Err(Error::Dimension(format!("{} outcomes for {} rows", y.len(), n)));
            }
        }
        let names = match names {
            Some(names) if names.len() == x.ncols() => names,
            Some(names) => {
                return Err(Error::Dimension(format!(
                    "{} column names for {} columns",
                    names.len(),
                    x.ncols()
                )))
            }
            None => (1..=x.ncols()).map(|j| format!("x{j}")).collect(),
        };
        let w = treatment.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
        Ok(Self { x, t: treatment, w, y: outcome, names })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn treatment(&self) -> &[bool] {
        &self.t
    }

    /// Signed labels, `+1` treated and `-1` control.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    TooFewUnits(usize),
    NoTreated,
    NoControl,
    NonFiniteCovariate { row: usize, col: usize },
    NonFiniteOutcome { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewUnits(n) => write!(f, "too few units ({n} < 2)"),
            Violation::NoTreated => write!(f, "no treated units"),
            Violation::NoControl => write!(f, "no control units"),
            Violation::NonFiniteCovariate { row, col } => {
                write!(f, "non-finite covariate at row {row}, column {col}")
            }
            Violation::NonFiniteOutcome { row } => write!(f, "non-finite outcome at row {row}"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidData(msg.join("; ")))
        }
    }
}

/// Lists every violated dataset invariant. Only the first non-finite
/// covariate and outcome are reported.
pub fn validate(data: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    if data.n() < 2 {
        violations.push(Violation::TooFewUnits(data.n()));
    }
    if data.n_treated() == 0 {
        violations.push(Violation::NoTreated);
    }
    if data.n_control() == 0 {
        violations.push(Violation::NoControl);
    }
    'outer: for i in 0..data.n() {
        for j in 0..data.p() {
            if !data.x[(i, j)].is_finite() {
                violations.push(Violation::NonFiniteCovariate { row: i, col: j });
                break 'outer;
            }
        }
    }
    if let Some(y) = &data.y {
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFiniteOutcome { row });
        }
    }
    ValidationReport { violations }
}

/// Dual weights, either raw (`0 <= alpha <= 1`) or normalized so that each
/// group sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub alpha: Vec<f64>,
    pub normalized: bool,
}

impl WeightVector {
    pub fn raw(alpha: Vec<f64>) -> Self {
        Self { alpha, normalized: false }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Returns `(sum over treated, sum over control)`.
    pub fn group_sums(&self, w: &[f64]) -> (f64, f64) {
        group_sums(&self.alpha, w)
    }

    /// Uniform weights within each group, already on the simplex.
    pub fn uniform(w: &[f64]) -> Result<Self> {
        let n_t = w.iter().filter(|&&v| v > 0.0).count();
        let n_c = w.len() - n_t;
        if n_t == 0 || n_c == 0 {
            return Err(Error::InvalidData("both groups must be nonempty".into()));
        }
        let alpha = w
            .iter()
            .map(|&v| if v > 0.0 { 1.0 / n_t as f64 } else { 1.0 / n_c as f64 })
            .collect();
        Ok(Self { alpha, normalized: true })
    }
}

pub fn group_sums(alpha: &[f64], w: &[f64]) -> (f64, f64) {
    alpha.iter().zip(w).fold((0.0, 0.0), |(t, c), (&a, &wi)| {
        if wi > 0.0 {
            (t + a, c)
        } else {
            (t, c + a)
        }
    })
}

/// Maps `alpha` onto the product simplex via `2 alpha / 1'alpha`.
pub fn normalize_simplex(alpha: &WeightVector, w: &[f64]) -> Result<WeightVector> {
    if alpha.len() != w.len() {
        return Err(Error::Dimension(format!("{} weights for {} units", alpha.len(), w.len())));
    }
    let total = alpha.sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    let (st, sc) = alpha.group_sums(w);
    if (st - sc).abs() > BALANCE_TOL * total.max(1.0) {
        return Err(Error::Unbalanced { treated: st, control: sc });
    }
    let scale = 2.0 / total;
    Ok(WeightVector {
        alpha: alpha.alpha.iter().map(|a| a * scale).collect(),
        normalized: true,
    })
}

/// Checks that each group of `alpha` sums to one.
pub fn is_simplex(alpha: &[f64], w: &[f64]) -> bool {
    let (st, sc) = group_sums(alpha, w);
    (st - 1.0).abs() <= 1e-8 && (sc - 1.0).abs() <= 1e-8 && alpha.iter().all(|&a| a >= -1e-12)
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub treatment: String,
    #[serde(default)]
    pub outcome: Option<String>,
    /// Defaults to every remaining numeric column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    s.parse::<f64>().ok()
}

/// Reads a headed CSV file into a [`Dataset`].
pub fn read_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, roles)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("column '{name}' not found")))
    };
    let t_col = find(&roles.treatment)?;
    let y_col = roles.outcome.as_deref().map(find).transpose()?;

    let numeric = |col: usize| records.iter().all(|r| r.get(col).and_then(parse_cell).is_some());

    let x_cols: Vec<usize> = match &roles.covariates {
        Some(names) => {
            let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            if let Some(&bad) = cols.iter().find(|&&c| !numeric(c)) {
                return Err(Error::InvalidData(format!(
                    "covariate column '{}' is not numeric",
                    headers[bad]
                )));
            }
            cols
        }
        None => (0..headers.len())
            .filter(|&c| c != t_col && Some(c) != y_col && numeric(c))
            .collect(),
    };

    let n = records.len();
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = y_col.map(|_| Vec::with_capacity(n));
    let mut x = DMatrix::zeros(n, x_cols.len());
    for (i, rec) in records.iter().enumerate() {
        let raw_t = rec.get(t_col).unwrap_or("").trim();
        let t = match parse_cell(raw_t) {
            Some(v) if v == 1.0 => true,
            Some(v) if v == 0.0 => false,
            _ => {
                return Err(Error::InvalidData(format!(
                    "treatment value '{raw_t}' at row {i} is not 0/1"
                )))
            }
        };
        treatment.push(t);
        if let (Some(col), Some(ys)) = (y_col, outcome.as_mut()) {
            let raw = rec.get(col).unwrap_or("");
            let v = parse_cell(raw)
                .ok_or_else(|| Error::InvalidData(format!("outcome '{raw}' at row {i} is not numeric")))?;
            ys.push(v);
        }
        for (j, &c) in x_cols.iter().enumerate() {
            x[(i, j)] = rec.get(c).and_then(parse_cell).unwrap_or(f64::NAN);
        }
    }
    let names = x_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(x, treatment, outcome, Some(names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(t: Vec<bool>) -> Dataset {
        let n = t.len();
        let x = DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        Dataset::new(x, t, None, None).unwrap()
    }

    #[test]
    fn valid_dataset_has_empty_report() {
        let d = small(vec![true, true, false, false]);
        assert!(d.validate().is_valid());
        assert_eq!(d.w(), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn all_treated_reports_no_controls() {
        let d = small(vec![true; 4]);
        let rep = d.validate();
        assert_eq!(rep.violations, vec![Violation::NoControl]);
        assert_eq!(rep.violations[0].to_string(), "no control units");
    }

    #[test]
    fn non_finite_covariate_is_reported() {
        let mut x = DMatrix::from_element(4, 2, 1.0);
        x[(2, 1)] = f64::NAN;
        let d = Dataset::new(x, vec![true, true, false, false], None, None).unwrap();
        let rep = d.validate();
        assert_eq!(rep.violations, vec![Violation::NonFiniteCovariate { row: 2, col: 1 }]);
        assert!(rep.violations[0].to_string().starts_with("non-finite covariate"));
    }

    #[test]
    fn normalize_examples() {
        let w = [1.0, 1.0, -1.0, -1.0];
        let a = normalize_simplex(&WeightVector::raw(vec![1.0; 4]), &w).unwrap();
        assert_eq!(a.alpha, vec![0.5; 4]);
        assert!(a.normalized);

        let b = normalize_simplex(&WeightVector::raw(vec![1.0, 0.0, 0.5, 0.5]), &w).unwrap();
        assert_eq!(b.alpha, vec![1.0, 0.0, 0.5, 0.5]);

        let z = normalize_simplex(&WeightVector::raw(vec![0.0; 4]), &w);
        assert!(matches!(z, Err(Error::ZeroWeightSum)));
        assert_eq!(z.unwrap_err().to_string(), "zero weight sum");
    }

    #[test]
    fn normalize_rejects_unbalanced() {
        let w = [1.0, 1.0, -1.0, -1.0];
        let r = normalize_simplex(&WeightVector::raw(vec![1.0, 1.0, 0.5, 0.0]), &w);
        assert!(matches!(r, Err(Error::Unbalanced { .. })));
    }

    #[test]
    fn csv_ingestion_defaults_to_numeric_columns() {
        let text = "id,treat,y,age,group,score\n1,1,2.5,30,a,0.1\n2,0,1.5,40,b,0.2\n3,1,3.0,35,a,\n";
        let roles = ColumnRoles {
            treatment: "treat".into(),
            outcome: Some("y".into()),
            covariates: None,
        };
        let d = read_csv_from(text.as_bytes(), &roles).unwrap();
        assert_eq!(d.names(), &["id", "age", "score"]);
        assert_eq!(d.treatment(), &[true, false, true]);
        assert_eq!(d.outcome().unwrap(), &[2.5, 1.5, 3.0]);
        assert!(d.x()[(2, 2)].is_nan());
        assert!(!d.validate().is_valid());
    }

    #[test]
    fn csv_rejects_bad_treatment() {
        let text = "t,x\n1,0.5\n2,0.1\n";
        let roles = ColumnRoles { treatment: "t".into(), ..Default::default() };
        assert!(read_csv_from(text.as_bytes(), &roles).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn balanced() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..6, 1usize..6)
                .prop_flat_map(|(nt, nc)| {
                    (
                        proptest::collection::vec(0.01f64..1.0, nt),
                        proptest::collection::vec(0.01f64..1.0, nc),
                    )
                })
                .prop_map(|(mut at, ac)| {
                    // rescale treated so the group sums agree
                    let st: f64 = at.iter().sum();
                    let sc: f64 = ac.iter().sum();
                    for a in &mut at {
                        *a *= sc / st;
                    }
                    let mut w = vec![1.0; at.len()];
                    w.extend(std::iter::repeat(-1.0).take(ac.len()));
                    at.extend(ac);
                    (at, w)
                })
        }

        proptest! {
            #[test]
            fn normalization_is_idempotent_and_preserves_ratios((alpha, w) in balanced()) {
                let a1 = normalize_simplex(&WeightVector::raw(alpha.clone()), &w).unwrap();
                let a2 = normalize_simplex(&a1, &w).unwrap();
                for (x, y) in a1.alpha.iter().zip(&a2.alpha) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                let (st, sc) = a1.group_sums(&w);
                prop_assert!((st - 1.0).abs() < 1e-12 && (sc - 1.0).abs() < 1e-12);
                for i in 0..alpha.len() {
                    let r0 = alpha[i] / alpha[0];
                    let r1 = a1.alpha[i] / a1.alpha[0];
                    prop_assert!((r0 - r1).abs() <= 1e-10 * r0.abs().max(1.0));
                }
            }
        }
    }
}
