//! Run configuration: a JSON document with market, preference, solver,
//! execution and output sections.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use infovalue::dual::EpsPolicy;
use infovalue::information::{FiltrationKind, VolCase};
use infovalue::market::{ChangePointLaw, Coefficient, CoefficientSpec, MarketModel};
use infovalue::preferences::{LossSpec, Preferences, UtilitySpec};

use crate::CliError;

/// A coefficient given either as a number or as a full table description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffInput {
    Number(f64),
    Function(Coefficient),
}

impl CoeffInput {
    fn build(&self) -> Coefficient {
        match self {
            CoeffInput::Number(v) => Coefficient::constant(*v),
            CoeffInput::Function(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffSection {
    pub mu1: CoeffInput,
    pub mu2: CoeffInput,
    pub sigma1: CoeffInput,
    pub sigma2: CoeffInput,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub coeffs: CoeffSection,
    pub law: ChangePointLaw,
    pub horizon: f64,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default)]
    pub tau_correlation: f64,
}

impl MarketSection {
    pub fn model(&self) -> MarketModel {
        let c = &self.coeffs;
        let coeffs = CoefficientSpec {
            mu1: c.mu1.build(),
            mu2: c.mu2.build(),
            sigma1: c.sigma1.build(),
            sigma2: c.sigma2.build(),
        };
        MarketModel {
            tau_correlation: self.tau_correlation,
            ..MarketModel::new(coeffs, self.law.clone(), self.horizon, self.s0)
        }
    }
}

fn default_tol() -> f64 {
    infovalue::dual::DEFAULT_TOL
}

fn one_cell() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub x: f64,
    pub eps: EpsPolicy,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// `τ`-quantile cells for initially enlarged filtrations.
    #[serde(default = "one_cell")]
    pub strata: usize,
}

/// Command-line and config names of the information models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum FiltrationName {
    #[serde(rename = "init-w")]
    #[value(name = "init-w")]
    InitW,
    #[serde(rename = "init-s")]
    #[value(name = "init-s")]
    InitS,
    #[serde(rename = "prog-w")]
    #[value(name = "prog-w")]
    ProgW,
    #[serde(rename = "prog-s")]
    #[value(name = "prog-s")]
    ProgS,
    #[serde(rename = "price")]
    #[value(name = "price")]
    Price,
}

impl FiltrationName {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        <Self as ValueEnum>::from_str(s.trim(), true).map_err(|_| {
            CliError::Config(format!(
                "unknown filtration '{s}' (expected init-w, init-s, prog-w, prog-s or price)"
            ))
        })
    }

    /// The information model; the price filtration needs its volatility case.
    pub fn kind(&self, vol_case: VolCase) -> FiltrationKind {
        match self {
            FiltrationName::InitW => FiltrationKind::InitiallyEnlargedW,
            FiltrationName::InitS => FiltrationKind::InitiallyEnlargedS,
            FiltrationName::ProgW => FiltrationKind::ProgressiveW,
            FiltrationName::ProgS => FiltrationKind::ProgressiveS,
            FiltrationName::Price => FiltrationKind::PriceOnly { vol_case },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FiltrationName::InitW => "init-w",
            FiltrationName::InitS => "init-s",
            FiltrationName::ProgW => "prog-w",
            FiltrationName::ProgS => "prog-s",
            FiltrationName::Price => "price",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

fn default_dir() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

/// Benchmarks swept by the `frontier` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsGrid {
    Absolute {
        values: Vec<f64>,
    },
    /// `points` benchmarks evenly spaced from `ε_min` to `ε_max` of each filtration.
    BetweenBounds {
        points: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierSpec {
    pub eps: EpsGrid,
    pub filtrations: Vec<FiltrationName>,
}

impl FrontierSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let empty = match &self.eps {
            EpsGrid::Absolute { values } => values.is_empty(),
            EpsGrid::BetweenBounds { points } => *points == 0,
        };
        if empty || self.filtrations.is_empty() {
            return Err(CliError::Config(
                "frontier grid and filtration list must be nonempty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    pub preferences: Preferences,
    pub solver: SolverSection,
    #[serde(default = "default_filtration")]
    pub filtration: FiltrationName,
    /// Volatility case of the price filtration; detected from the paths when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol_case: Option<VolCase>,
    pub execution: ExecutionSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier: Option<FrontierSpec>,
}

fn default_filtration() -> FiltrationName {
    FiltrationName::InitW
}

impl Default for RunConfig {
    /// Constant coefficients with a drift drop at `τ = 0.5`, log utility and the `−3/x` loss.
    fn default() -> Self {
        RunConfig {
            market: MarketSection {
                coeffs: CoeffSection {
                    mu1: CoeffInput::Number(0.08),
                    mu2: CoeffInput::Number(0.02),
                    sigma1: CoeffInput::Number(0.2),
                    sigma2: CoeffInput::Number(0.2),
                },
                law: ChangePointLaw::PointMass { at: Some(0.5) },
                horizon: 1.0,
                s0: 1.0,
                tau_correlation: 0.0,
            },
            preferences: Preferences::new(UtilitySpec::Log, LossSpec::NegReciprocal { c: 3.0 }),
            solver: SolverSection {
                x: 1.0,
                eps: EpsPolicy::QuantileBetweenBounds { q: 0.5 },
                tol: default_tol(),
                strata: 1,
            },
            filtration: FiltrationName::InitW,
            vol_case: None,
            execution: ExecutionSection {
                n_paths: 10_000,
                n_steps: 64,
                seed: 1,
                workers: None,
            },
            output: OutputSection::default(),
            frontier: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document; errors name the offending key and position.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!(
                "at key '{path}' (line {}, column {}): {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.market
            .model()
            .validate()
            .map_err(|e| CliError::Config(format!("market: {e}")))?;
        self.preferences
            .validate()
            .map_err(|e| CliError::Config(format!("preferences: {e}")))?;
        if let EpsPolicy::QuantileBetweenBounds { q } = self.solver.eps {
            if !(0.0..=1.0).contains(&q) {
                return Err(CliError::Config(format!("solver.eps: quantile {q} outside [0, 1]")));
            }
        }
        if !(self.solver.x > 0.0 && self.solver.x.is_finite()) {
            return Err(CliError::Config("solver.x must be positive".into()));
        }
        if self.execution.n_paths == 0 || self.execution.n_steps == 0 {
            return Err(CliError::Config(
                "execution.n_paths and execution.n_steps must be positive".into(),
            ));
        }
        if self.solver.strata == 0 {
            return Err(CliError::Config("solver.strata must be at least one".into()));
        }
        if let Some(f) = &self.frontier {
            f.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn errors_name_the_key() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["execution"]["n_paths"] = serde_json::json!("many");
        let err = RunConfig::from_json(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
        assert!(err.to_string().contains("execution.n_paths"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn quantile_is_range_checked() {
        let mut cfg = RunConfig::default();
        cfg.solver.eps = EpsPolicy::QuantileBetweenBounds { q: 1.5 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn filtration_names() {
        assert_eq!(FiltrationName::parse("prog-s").unwrap(), FiltrationName::ProgS);
        assert!(FiltrationName::parse("insider").is_err());
    }
}
