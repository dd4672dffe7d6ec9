//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use svmbal::kernels::FeatureMap;
use svmbal::path::DEFAULT_LAMBDA_MIN;
use svmbal::{ColumnRoles, Criterion, Error, Estimand, KernelSpec, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Path,
    Estimate,
    Frontier,
    QipCompare,
    Simulate,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Path => "path",
            Command::Estimate => "estimate",
            Command::Frontier => "frontier",
            Command::QipCompare => "qip-compare",
            Command::Simulate => "simulate",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QipConfig {
    /// Use the annealing heuristic instead of refusing large problems.
    pub heuristic: bool,
    pub exact_cap: usize,
    pub time_budget_secs: f64,
    pub iterations: usize,
    pub restarts: usize,
}

impl Default for QipConfig {
    fn default() -> Self {
        let h = svmbal::HeuristicOptions::default();
        Self {
            heuristic: false,
            exact_cap: 24,
            time_budget_secs: h.time_budget.as_secs_f64(),
            iterations: h.iterations,
            restarts: h.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    /// `balance`, `imbalance`, `unweighted` or a λ value.
    pub grid: Vec<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: "a".into(),
            n: 500,
            reps: 100,
            grid: vec!["unweighted".into(), "imbalance".into(), "balance".into()],
        }
    }
}

/// Everything a run depends on besides the input file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub treatment: String,
    pub outcome: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub kernel: String,
    pub features: FeatureMap,
    pub standardize: bool,
    pub lambda_min: f64,
    pub max_events: Option<usize>,
    /// λ values for `diagnose`; empty means every breakpoint.
    pub lambdas: Vec<f64>,
    pub estimand: Estimand,
    pub criterion: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub qip: QipConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Path,
            input: None,
            treatment: "treat".into(),
            outcome: None,
            covariates: None,
            kernel: "linear".into(),
            features: FeatureMap::Raw,
            standardize: true,
            lambda_min: DEFAULT_LAMBDA_MIN,
            max_events: None,
            lambdas: Vec::new(),
            estimand: Estimand::Sate,
            criterion: "elbow".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            qip: QipConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        self.kernel.parse()
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.criterion.parse()
    }

    pub fn roles(&self) -> ColumnRoles {
        ColumnRoles {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter(format!("{} needs --input", self.command.name())))
    }

    /// Parses every string-valued field so bad values fail before any work.
    pub fn check(&self) -> Result<()> {
        self.kernel_spec()?;
        self.criterion()?;
        if !(self.lambda_min > 0.0 && self.lambda_min.is_finite()) {
            return Err(Error::InvalidParameter("lambda_min must be positive".into()));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!("lambda {bad} must be positive")));
        }
        if !(self.qip.time_budget_secs >= 0.0 && self.qip.time_budget_secs.is_finite()) {
            return Err(Error::InvalidParameter("time budget must be non-negative".into()));
        }
        Ok(())
    }
}

/// Flags shared by every run command; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Comma-separated covariate columns (default: all remaining numeric).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// linear | poly[:degree[:c]] | rbf[:median|:gamma]
    #[arg(long)]
    pub kernel: Option<String>,
    /// raw | poly2
    #[arg(long)]
    pub features: Option<FeatureMap>,
    /// Skip covariate standardization.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub max_events: Option<usize>,
    /// λ values to diagnose (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// sate | satt
    #[arg(long)]
    pub estimand: Option<Estimand>,
    /// balance | imbalance | elbow | ess:V | normed-dim:V | sdim-cap[:V]
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
    /// Allow the annealing heuristic above the exact cap.
    #[arg(long)]
    pub heuristic: bool,
    #[arg(long)]
    pub exact_cap: Option<usize>,
    /// Heuristic wall-clock cap in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    /// a | b
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated grid: balance, imbalance, unweighted or λ values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<String>>,
}

impl Overrides {
    pub fn resolve(self, command: Command) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        c.command = command;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            treatment => c.treatment,
            kernel => c.kernel,
            features => c.features,
            lambda_min => c.lambda_min,
            lambdas => c.lambdas,
            estimand => c.estimand,
            criterion => c.criterion,
            seed => c.seed,
            out_dir => c.out_dir,
            exact_cap => c.qip.exact_cap,
            time_budget => c.qip.time_budget_secs,
            scenario => c.sim.scenario,
            n => c.sim.n,
            reps => c.sim.reps,
            grid => c.sim.grid,
        );
        if self.input.is_some() {
            c.input = self.input;
        }
        if self.outcome.is_some() {
            c.outcome = self.outcome;
        }
        if self.covariates.is_some() {
            c.covariates = self.covariates;
        }
        if self.max_events.is_some() {
            c.max_events = self.max_events;
        }
        c.standardize &= !self.no_standardize;
        c.qip.heuristic |= self.heuristic;
        c.check()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.outcome = Some("y".into());
        c.lambdas = vec![1.0, 0.5];
        c.kernel = "rbf:median".into();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "kernel = \"poly:2:1\"\nlambda_min = 0.01\nseed = 5\n").unwrap();
        let o = Overrides { config: Some(path), lambda_min: Some(1e-4), ..Default::default() };
        let c = o.resolve(Command::Path).unwrap();
        assert_eq!(c.kernel, "poly:2:1");
        assert_eq!(c.lambda_min, 1e-4);
        assert_eq!(c.seed, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("kernal = \"linear\"").is_err());
    }

    #[test]
    fn bad_kernel_fails_early() {
        let o = Overrides { kernel: Some("cubic".into()), ..Default::default() };
        assert!(matches!(o.resolve(Command::Path), Err(Error::InvalidParameter(_))));
    }
}
