//! `svmbal`: balancing weights, regularization paths and effect estimates
//! from a CSV file.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svmbal::Error;

use config::{Command, Overrides};
use manifest::{sha256_file, Manifest};

#[derive(Parser)]
#[command(name = "svmbal", version, about = "SVM covariate balancing weights and effect estimates")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trace the regularization path; writes path.csv and path_summary.json.
    Path(Overrides),
    /// Estimate the effect at the frontier point chosen by --criterion.
    Estimate(Overrides),
    /// Balance / sample-size frontier with the selected points marked.
    Frontier(Overrides),
    /// Continuous versus integer objectives and coverage per breakpoint.
    QipCompare(Overrides),
    /// Monte Carlo study on a built-in design.
    Simulate(Overrides),
    /// Balance and KKT diagnostics at chosen λ values (default: every breakpoint).
    Diagnose(Overrides),
    /// Re-run a recorded run and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the re-run (default: `replay/` beside the manifest).
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
    },
}

enum Failure {
    Run(Error),
    Mismatch(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::CriterionInfeasible(_) => 4,
        Error::NonConvergence { .. }
        | Error::Singular(_)
        | Error::PathFailure { .. }
        | Error::NotPsd(_)
        | Error::ZeroWeightSum
        | Error::NotNormalized
        | Error::Unbalanced { .. } => 3,
        _ => 2,
    }
}

fn run_command(command: Command, o: Overrides) -> Result<(), Failure> {
    let mut config = o.resolve(command)?;
    // absolute, so a manifest can be replayed from anywhere
    if let Some(input) = &config.input {
        config.input = Some(std::fs::canonicalize(input).map_err(Error::from)?);
    }
    let m = commands::run(&config)?;
    for f in &m.outputs {
        println!("{}", config.out_dir.join(&f.path).display());
    }
    Ok(())
}

fn replay(manifest_path: &Path, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let recorded = Manifest::read(manifest_path)?;
    let mut problems = Vec::new();
    for input in &recorded.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            problems.push(format!("input {} changed", input.path.display()));
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Mismatch(problems));
    }
    let mut config = recorded.config.clone();
    config.out_dir = out_dir.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    let fresh = commands::run(&config)?;
    for old in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == old.path) {
            Some(new) if new.sha256 == old.sha256 => {}
            Some(_) => problems.push(format!("{} differs", old.path.display())),
            None => problems.push(format!("{} not produced", old.path.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Mismatch(problems));
    }
    println!("replay matches: {} outputs in {}", fresh.outputs.len(), config.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Path(o) => run_command(Command::Path, o),
        Cmd::Estimate(o) => run_command(Command::Estimate, o),
        Cmd::Frontier(o) => run_command(Command::Frontier, o),
        Cmd::QipCompare(o) => run_command(Command::QipCompare, o),
        Cmd::Simulate(o) => run_command(Command::Simulate, o),
        Cmd::Diagnose(o) => run_command(Command::Diagnose, o),
        Cmd::Replay { manifest, out_dir } => replay(&manifest, out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("svmbal: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Mismatch(problems)) => {
            for p in problems {
                eprintln!("svmbal: replay mismatch: {p}");
            }
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::InvalidData("x".into())), 2);
        assert_eq!(exit_code(&Error::TooLarge { n: 30, cap: 24 }), 2);
        assert_eq!(exit_code(&Error::Singular("x".into())), 3);
        assert_eq!(exit_code(&Error::CriterionInfeasible("x".into())), 4);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
