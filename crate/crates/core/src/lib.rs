//! SVM dual covariate-balancing weights: single-λ solvers, the exact
//! regularization path, balance diagnostics, effect estimation and the
//! simulation designs used to validate them.

pub mod balance;
pub mod data;
pub mod effect;
pub mod error;
pub mod frontier;
pub mod kernels;
pub mod linalg;
pub mod path;
pub mod qip;
pub mod qp;
pub mod sim;
mod smo;

pub use data::{normalize_simplex, read_csv, validate, ColumnRoles, Dataset, ValidationReport, Violation, WeightVector};
pub use error::{Error, Result};
pub use kernels::{gram, median_heuristic, polynomial_expand, q_matrix, standardize, FeatureMap, Gamma, KernelSpec, QMatrix};
pub use qp::{kkt_report, solve_dual, solve_init, solve_l2_dual, solve_mmd_min, DualSolution, KktReport, PointSet};
pub use path::{compute_path, margin_system, Breakpoint, Event, RegularizationPath};
pub use balance::{balance_report, coverage, ess_kish, normed_dim, sdim, weighted_mmd, BalanceReport};
pub use qip::{solve_qip_exact, solve_qip_heuristic, HeuristicOptions, QipSolution};
pub use effect::{conditional_bias, conditional_bias_values, effect_estimate, estimate, fix_treated_weights, neyman_se, worst_case_bias, EffectEstimate, Estimand};
pub use frontier::{build_frontier, kneedle, kneedle_elbow, select, Criterion, FrontierPoint};
pub use sim::{gen_sim_a, gen_sim_b, run_monte_carlo, GridPoint, MonteCarloSpec, MonteCarloTable, Scenario, SimTruth};
