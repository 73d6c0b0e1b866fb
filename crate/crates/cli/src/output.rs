//! Output records and writers. Floats are printed in shortest round-trip
//! form so identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use infovalue::dual::EpsBounds;
use infovalue::scenario::DualSolution;
use infovalue::wealth::{OrthogonalityReport, ReplicationReport, ScenarioValue, ValueReport, WealthMethod};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// Largest `|mean(Z_T R̂) − x|` over strata.
    pub budget: f64,
    /// Largest `|mean(L(−R̂)) − ε|` over binding strata.
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRecord {
    pub cell: usize,
    pub weight: f64,
    pub n_paths: usize,
    pub lambda_star: f64,
    pub y_hat: f64,
    pub eps: f64,
    pub bounds: EpsBounds,
    pub budget_residual: f64,
    pub risk_residual: f64,
    pub binding: bool,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionRecord {
    pub filtration: String,
    pub x: f64,
    pub eps: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub lambda_star: f64,
    pub y_hat: f64,
    pub residuals: Residuals,
    pub binding: bool,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub per_stratum: Vec<StratumRecord>,
}

impl SolutionRecord {
    pub fn new(filtration: &str, sol: &DualSolution, val: &ScenarioValue, n_steps: usize, seed: u64) -> Self {
        let per_stratum = sol
            .cells
            .iter()
            .zip(&val.per_stratum)
            .map(|(c, v)| StratumRecord {
                cell: c.cell,
                weight: c.weight,
                n_paths: c.paths.len(),
                lambda_star: c.solution.lambda_star,
                y_hat: c.solution.y_hat,
                eps: c.solution.eps,
                bounds: c.solution.bounds,
                budget_residual: c.solution.budget_residual,
                risk_residual: c.solution.risk_residual,
                binding: c.solution.binding,
                value: v.u,
                stderr: v.stderr,
            })
            .collect();
        SolutionRecord {
            filtration: filtration.to_string(),
            x: sol.x,
            eps: weighted_eps(sol),
            eps_min: sol.eps_min(),
            eps_max: sol.eps_max(),
            lambda_star: sol.lambda_star(),
            y_hat: sol.y_hat(),
            residuals: Residuals {
                budget: sol.max_budget_residual(),
                risk: sol.max_risk_residual(),
            },
            binding: sol.binding(),
            value: val.aggregate.u,
            stderr: val.aggregate.stderr,
            n_paths: sol.r_hat.len(),
            n_steps,
            seed,
            per_stratum,
        }
    }
}

/// Prior-weighted benchmark over strata.
pub fn weighted_eps(sol: &DualSolution) -> f64 {
    if sol.cells.len() == 1 {
        sol.cells[0].solution.eps
    } else {
        sol.cells.iter().map(|c| c.weight * c.solution.eps).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueRecord {
    pub filtration: String,
    pub u: f64,
    pub stderr: f64,
    pub n: usize,
    pub eps: f64,
    pub lambda_star: f64,
    pub per_stratum: Vec<ValueReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub filtration: String,
    pub method: WealthMethod,
    pub n_steps: usize,
    #[serde(flatten)]
    pub report: ReplicationReport,
    pub orthogonality: OrthogonalityReport,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// A float cell; non-finite values print as `NA`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

pub fn csv_writer(
    dir: &Path,
    name: &str,
    header: &[&str],
) -> Result<(PathBuf, csv::Writer<BufWriter<File>>), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(header)?;
    Ok((path, w))
}

pub fn finish_csv(mut w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    w.flush()?;
    let inner = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    inner.into_inner().map_err(|e| CliError::Io(e.to_string()))?.flush()?;
    Ok(())
}
