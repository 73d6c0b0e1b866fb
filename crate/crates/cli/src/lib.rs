//! Batch front end: reads a run configuration, runs one subcommand and writes
//! JSON records and CSV tables to the output directory.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod output;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Engine(#[from] infovalue::Error),
}

impl CliError {
    /// 2 for an infeasible risk benchmark, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(infovalue::Error::Infeasible { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "infovalue",
    version,
    about = "Value of information under shortfall-risk constraints"
)]
pub struct Cli {
    /// JSON run configuration; built-in example scenario when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; path `i` draws from its own stream keyed by `(seed, i)`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Size of the worker pool; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides of the config applied by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// Initial capital.
    #[arg(long)]
    pub x: Option<f64>,
    /// Absolute risk benchmark.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "eps_quantile")]
    pub eps: Option<f64>,
    /// Benchmark at this fraction of the way from `ε_min` to `ε_max`.
    #[arg(long)]
    pub eps_quantile: Option<f64>,
    #[arg(long, value_enum)]
    pub filtration: Option<config::FiltrationName>,
    /// Number of simulated paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Solver tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Number of `τ`-quantile strata for initially enlarged filtrations.
    #[arg(long)]
    pub strata: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum WealthChoice {
    /// Closed form when the scenario admits it, regression otherwise.
    #[default]
    Auto,
    ClosedForm,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum UivChoice {
    /// Closed form for the shifted reciprocal utility, root solve otherwise.
    #[default]
    Auto,
    ClosedForm,
    RootSolve,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths; writes paths.csv and density.csv.
    Simulate(ScenarioArgs),
    /// Solve the dual problem; writes solution.json (and r_hat.csv).
    Solve(ScenarioArgs),
    /// Optimal expected utility with its standard error; writes value.json.
    Value(ScenarioArgs),
    /// Optimal wealth and holdings along each path; writes wealth.csv.
    Paths {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t)]
        method: WealthChoice,
    },
    /// Integrate the holdings and compare with the optimal terminal wealth; writes replicate.json.
    Replicate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t)]
        method: WealthChoice,
    },
    /// Indifference value of moving from filtration F to G; writes uiv.json.
    Uiv {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Coarse and fine filtration, e.g. `price,init-s`.
        #[arg(long)]
        pair: String,
        #[arg(long, value_enum, default_value_t)]
        method: UivChoice,
    },
    /// Sweep the risk benchmark over one or more filtrations; writes frontier.csv.
    Frontier(ScenarioArgs),
}

impl Command {
    fn scenario(&self) -> &ScenarioArgs {
        match self {
            Command::Simulate(a) | Command::Solve(a) | Command::Value(a) | Command::Frontier(a) => a,
            Command::Paths { scenario, .. } | Command::Replicate { scenario, .. } | Command::Uiv { scenario, .. } => {
                scenario
            }
        }
    }
}

/// Loads the config, applies flag overrides, and runs the subcommand inside a
/// pool of the requested size. Returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let workers = cli.workers.or(cfg.execution.workers);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let ctx = commands::Context { cfg, out };
    pool.install(|| commands::dispatch(&ctx, &cli.command))
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(s) = cli.seed {
        cfg.execution.seed = s;
    }
    let a = cli.command.scenario();
    if let Some(x) = a.x {
        cfg.solver.x = x;
    }
    if let Some(e) = a.eps {
        cfg.solver.eps = infovalue::dual::EpsPolicy::Absolute { eps: e };
    }
    if let Some(q) = a.eps_quantile {
        cfg.solver.eps = infovalue::dual::EpsPolicy::QuantileBetweenBounds { q };
    }
    if let Some(f) = a.filtration {
        cfg.filtration = f;
    }
    if let Some(n) = a.paths {
        cfg.execution.n_paths = n;
    }
    if let Some(n) = a.steps {
        cfg.execution.n_steps = n;
    }
    if let Some(t) = a.tol {
        cfg.solver.tol = t;
    }
    if let Some(s) = a.strata {
        cfg.solver.strata = s;
    }
    cfg.validate()
}
