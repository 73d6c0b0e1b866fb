//! A scenario bundles model, grid, information model, preferences and the
//! risk benchmark; preparing it fixes one simulated path set (common random
//! numbers) together with the density processes and the `F₀` strata.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dual::{solve_dual, CellSolution, DualProblem, EpsPolicy, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::information::{densities, strata, DensityPath, FiltrationKind, MarketPriceOfRisk, Stratum};
use crate::market::{simulate_paths, MarketModel, PathBundle, SimGrid};
use crate::preferences::Preferences;

fn one() -> usize {
    1
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub model: MarketModel,
    pub grid: SimGrid,
    pub kind: FiltrationKind,
    pub preferences: Preferences,
    pub x: f64,
    pub eps: EpsPolicy,
    pub n_paths: usize,
    pub seed: u64,
    /// Number of `τ`-quantile cells for initially enlarged filtrations.
    #[serde(default = "one")]
    pub n_cells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preferences.validate()?;
        if (self.grid.horizon - self.model.horizon).abs() > 1e-12 * self.model.horizon {
            return Err(Error::InvalidArgument(
                "grid horizon differs from the model horizon".into(),
            ));
        }
        if !(self.x > 0.0 && self.x.is_finite()) {
            return Err(Error::InvalidArgument("initial capital must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least one".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return Err(Error::InvalidArgument("tolerance must lie in (0, 1e-2)".into()));
        }
        Ok(())
    }

    /// Simulates the path set and derives densities and strata.
    pub fn prepare(&self) -> Result<PreparedScenario> {
        self.validate()?;
        let paths = simulate_paths(&self.model, &self.grid, self.n_paths, self.seed)?;
        PreparedScenario::from_paths(self.clone(), Arc::new(paths))
    }
}

/// A scenario with its fixed path set.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub paths: Arc<Vec<PathBundle>>,
    pub lambdas: Vec<MarketPriceOfRisk>,
    pub densities: Vec<DensityPath>,
    pub strata: Vec<Stratum>,
}

impl PreparedScenario {
    /// Reuses an existing path set, e.g. to compare information models on common paths.
    pub fn from_paths(scenario: Scenario, paths: Arc<Vec<PathBundle>>) -> Result<Self> {
        scenario.validate()?;
        let pairs = densities(&scenario.model, &scenario.grid, &paths, &scenario.kind)?;
        let (lambdas, dens): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let taus: Vec<f64> = paths.iter().map(|p| p.tau).collect();
        let cells = strata(&scenario.kind, &scenario.model.law, &taus, scenario.n_cells);
        Ok(Self {
            scenario,
            paths,
            lambdas,
            densities: dens,
            strata: cells,
        })
    }

    pub fn with_kind(&self, kind: FiltrationKind) -> Result<Self> {
        let mut s = self.scenario.clone();
        s.kind = kind;
        Self::from_paths(s, self.paths.clone())
    }

    pub fn terminal_z(&self) -> Vec<f64> {
        self.densities.iter().map(|d| d.terminal()).collect()
    }

    /// Equally weighted dual problem on stratum `i` at capital `x`.
    pub fn cell_problem(&self, i: usize, x: f64) -> Result<DualProblem> {
        let z = self.strata[i]
            .paths
            .iter()
            .map(|&j| self.densities[j].terminal())
            .collect();
        DualProblem::new(self.scenario.preferences.clone(), x, z)
    }

    pub fn solve(&self) -> Result<DualSolution> {
        self.solve_at(self.scenario.x, &self.scenario.eps)
    }

    /// Solves every stratum at capital `x` under `policy`.
    pub fn solve_at(&self, x: f64, policy: &EpsPolicy) -> Result<DualSolution> {
        let mut cells = Vec::with_capacity(self.strata.len());
        let mut r_hat = vec![f64::NAN; self.paths.len()];
        for (i, st) in self.strata.iter().enumerate() {
            let sol = solve_dual(&self.cell_problem(i, x)?, policy, self.scenario.tol)?;
            for (&j, &r) in st.paths.iter().zip(&sol.r_hat) {
                r_hat[j] = r;
            }
            cells.push(StratumSolution {
                cell: st.cell,
                weight: st.weight,
                paths: st.paths.clone(),
                solution: sol,
            });
        }
        Ok(DualSolution { x, cells, r_hat })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSolution {
    pub cell: usize,
    pub weight: f64,
    #[serde(skip)]
    pub paths: Vec<usize>,
    #[serde(flatten)]
    pub solution: CellSolution,
}

/// Dual solution over all strata; `r_hat` is indexed by path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    pub x: f64,
    pub cells: Vec<StratumSolution>,
    #[serde(skip)]
    pub r_hat: Vec<f64>,
}

impl DualSolution {
    fn weighted(&self, f: impl Fn(&CellSolution) -> f64) -> f64 {
        self.cells.iter().map(|c| c.weight * f(&c.solution)).sum()
    }

    /// Prior-weighted multiplier (the cell value when there is one stratum).
    pub fn lambda_star(&self) -> f64 {
        if self.cells.len() == 1 {
            self.cells[0].solution.lambda_star
        } else {
            self.weighted(|c| c.lambda_star)
        }
    }

    pub fn y_hat(&self) -> f64 {
        if self.cells.len() == 1 {
            self.cells[0].solution.y_hat
        } else {
            self.weighted(|c| c.y_hat)
        }
    }

    pub fn eps_min(&self) -> f64 {
        self.weighted(|c| c.bounds.eps_min)
    }

    pub fn eps_max(&self) -> f64 {
        self.weighted(|c| c.bounds.eps_max)
    }

    pub fn max_budget_residual(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.solution.budget_residual.abs())
            .fold(0.0, f64::max)
    }

    /// Largest risk residual among binding cells (zero if none binds).
    pub fn max_risk_residual(&self) -> f64 {
        self.cells
            .iter()
            .filter(|c| c.solution.binding)
            .map(|c| c.solution.risk_residual.abs())
            .fold(0.0, f64::max)
    }

    pub fn binding(&self) -> bool {
        self.cells.iter().any(|c| c.solution.binding)
    }
}
