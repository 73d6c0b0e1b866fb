//! Subcommand implementations.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use infovalue::dual::EpsPolicy;
use infovalue::indifference::{uiv_closed_form_prepared, uiv_root_solve, RootSolveOptions};
use infovalue::information::detect_vol_case;
use infovalue::market::{simulate_paths, PathBundle, SimGrid};
use infovalue::preferences::{LossSpec, UtilitySpec};
use infovalue::scenario::{DualSolution, PreparedScenario, Scenario};
use infovalue::wealth::{
    orthogonality_check, replicate, replication_report, scenario_value, strategy_closed_form, strategy_regression,
    wealth_path_closed_form, wealth_path_regression, BasisSpec, ClosedFormExample, StrategyPath, WealthMethod,
    WealthPath,
};
use infovalue::Error;

use crate::config::{EpsGrid, FiltrationName, Format, FrontierSpec, RunConfig};
use crate::output::{
    csv_writer, finish_csv, num, weighted_eps, write_json, ReplicateRecord, SolutionRecord, ValueRecord,
};
use crate::{CliError, Command, UivChoice, WealthChoice};

/// Legendre order of the closed-form wealth integral.
const CLOSED_FORM_ORDER: usize = 64;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn grid(&self) -> Result<SimGrid, CliError> {
        Ok(SimGrid::new(self.cfg.market.horizon, self.cfg.execution.n_steps)?)
    }

    /// The common path set of every filtration in this run.
    pub fn simulate(&self) -> Result<Arc<Vec<PathBundle>>, CliError> {
        let e = &self.cfg.execution;
        Ok(Arc::new(simulate_paths(
            &self.cfg.market.model(),
            &self.grid()?,
            e.n_paths,
            e.seed,
        )?))
    }

    pub fn prepare(&self, name: FiltrationName, paths: &Arc<Vec<PathBundle>>) -> Result<PreparedScenario, CliError> {
        let model = self.cfg.market.model();
        let grid = self.grid()?;
        let vol_case = match &self.cfg.vol_case {
            Some(v) => v.clone(),
            None => detect_vol_case(&model, &grid, paths),
        };
        let s = &self.cfg.solver;
        let scenario = Scenario {
            model,
            grid,
            kind: name.kind(vol_case),
            preferences: self.cfg.preferences.clone(),
            x: s.x,
            eps: s.eps,
            n_paths: self.cfg.execution.n_paths,
            seed: self.cfg.execution.seed,
            n_cells: s.strata,
            tol: s.tol,
        };
        Ok(PreparedScenario::from_paths(scenario, paths.clone())?)
    }

    fn wants_csv(&self) -> bool {
        self.cfg.output.formats.contains(&Format::Csv)
    }
}

pub fn dispatch(ctx: &Context, cmd: &Command) -> Result<Vec<PathBuf>, CliError> {
    match cmd {
        Command::Simulate(_) => simulate(ctx),
        Command::Solve(_) => solve(ctx),
        Command::Value(_) => value(ctx),
        Command::Paths { method, .. } => paths(ctx, *method),
        Command::Replicate { method, .. } => replicate_cmd(ctx, *method),
        Command::Uiv { pair, method, .. } => uiv(ctx, pair, *method),
        Command::Frontier(_) => frontier(ctx),
    }
}

fn simulate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let paths = ctx.simulate()?;
    let prep = ctx.prepare(ctx.cfg.filtration, &paths)?;
    let grid = prep.scenario.grid;
    let (p1, mut w) = csv_writer(
        &ctx.out,
        "paths.csv",
        &["path", "step", "t", "W", "S_tilde", "S", "regime", "tau"],
    )?;
    for b in paths.iter() {
        let bm = b.brownian();
        #[allow(clippy::needless_range_loop)]
        for k in 0..=grid.n_steps {
            w.write_record([
                b.index.to_string(),
                k.to_string(),
                num(grid.time(k)),
                num(bm[k]),
                num(b.s_tilde[k]),
                num(b.s[k]),
                b.regime[k].to_string(),
                num(b.tau),
            ])?;
        }
    }
    finish_csv(w)?;
    let (p2, mut w) = csv_writer(&ctx.out, "density.csv", &["path", "step", "t", "Lambda", "Z", "p"])?;
    for (lam, d) in prep.lambdas.iter().zip(&prep.densities) {
        for k in 0..=grid.n_steps {
            w.write_record([
                d.path.to_string(),
                k.to_string(),
                num(grid.time(k)),
                num(lam.lambda[k]),
                num(d.z[k]),
                num(lam.p[k]),
            ])?;
        }
    }
    finish_csv(w)?;
    Ok(vec![p1, p2])
}

fn solved(ctx: &Context) -> Result<(PreparedScenario, DualSolution), CliError> {
    let paths = ctx.simulate()?;
    let prep = ctx.prepare(ctx.cfg.filtration, &paths)?;
    let sol = prep.solve()?;
    Ok((prep, sol))
}

fn solve(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let (prep, sol) = solved(ctx)?;
    let val = scenario_value(&prep, &sol);
    let e = &ctx.cfg.execution;
    let record = SolutionRecord::new(ctx.cfg.filtration.label(), &sol, &val, e.n_steps, e.seed);
    let mut files = vec![write_json(&ctx.out, "solution.json", &record)?];
    if ctx.wants_csv() {
        let (p, mut w) = csv_writer(&ctx.out, "r_hat.csv", &["path", "cell", "Z_T", "R_hat"])?;
        let mut rows: Vec<(usize, usize)> = sol
            .cells
            .iter()
            .flat_map(|c| c.paths.iter().map(move |&j| (j, c.cell)))
            .collect();
        rows.sort_unstable();
        for (j, cell) in rows {
            w.write_record([
                j.to_string(),
                cell.to_string(),
                num(prep.densities[j].terminal()),
                num(sol.r_hat[j]),
            ])?;
        }
        finish_csv(w)?;
        files.push(p);
    }
    Ok(files)
}

fn value(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let (prep, sol) = solved(ctx)?;
    let val = scenario_value(&prep, &sol);
    let record = ValueRecord {
        filtration: ctx.cfg.filtration.label().to_string(),
        u: val.aggregate.u,
        stderr: val.aggregate.stderr,
        n: val.aggregate.n,
        eps: weighted_eps(&sol),
        lambda_star: sol.lambda_star(),
        per_stratum: val.per_stratum,
    };
    Ok(vec![write_json(&ctx.out, "value.json", &record)?])
}

/// Closed-form wealth and holdings on every path, if each stratum admits it.
fn closed_form(prep: &PreparedScenario, sol: &DualSolution) -> Result<(Vec<WealthPath>, Vec<StrategyPath>), Error> {
    let mut owner = vec![0; prep.paths.len()];
    let mut examples = Vec::with_capacity(sol.cells.len());
    for (i, c) in sol.cells.iter().enumerate() {
        examples.push(ClosedFormExample::for_stratum(prep, sol, i, CLOSED_FORM_ORDER)?);
        for &j in &c.paths {
            owner[j] = i;
        }
    }
    Ok((0..prep.paths.len())
        .into_par_iter()
        .map(|j| {
            let ex = &examples[owner[j]];
            let d = &prep.densities[j];
            (
                wealth_path_closed_form(ex, d),
                strategy_closed_form(ex, d, &prep.lambdas[j]),
            )
        })
        .unzip())
}

fn wealth_and_strategy(
    prep: &PreparedScenario,
    sol: &DualSolution,
    choice: WealthChoice,
) -> Result<(WealthMethod, Vec<WealthPath>, Vec<StrategyPath>), CliError> {
    if choice != WealthChoice::Regression {
        match closed_form(prep, sol) {
            Ok((w, s)) => return Ok((WealthMethod::ClosedForm, w, s)),
            Err(Error::InvalidArgument(_)) if choice == WealthChoice::Auto => {}
            Err(e) => return Err(e.into()),
        }
    }
    let basis = BasisSpec::default();
    let wealth = wealth_path_regression(prep, sol, &basis)?;
    let strategy = strategy_regression(prep, sol, &wealth, &basis)?;
    Ok((WealthMethod::Regression, wealth, strategy))
}

fn paths(ctx: &Context, choice: WealthChoice) -> Result<Vec<PathBuf>, CliError> {
    let (prep, sol) = solved(ctx)?;
    let (_, wealth, strategy) = wealth_and_strategy(&prep, &sol, choice)?;
    let grid = prep.scenario.grid;
    let (p, mut w) = csv_writer(&ctx.out, "wealth.csv", &["path", "step", "t", "Z", "X_hat", "pi_hat"])?;
    for ((wp, sp), d) in wealth.iter().zip(&strategy).zip(&prep.densities) {
        for k in 0..=grid.n_steps {
            let pi = sp.pi_hat.get(k).copied().unwrap_or(f64::NAN);
            w.write_record([
                wp.path.to_string(),
                k.to_string(),
                num(grid.time(k)),
                num(d.z[k]),
                num(wp.x_hat[k]),
                num(pi),
            ])?;
        }
    }
    finish_csv(w)?;
    Ok(vec![p])
}

fn replicate_cmd(ctx: &Context, choice: WealthChoice) -> Result<Vec<PathBuf>, CliError> {
    let (prep, sol) = solved(ctx)?;
    let (method, _, strategy) = wealth_and_strategy(&prep, &sol, choice)?;
    let terminal: Vec<f64> = strategy
        .par_iter()
        .map(|s| replicate(s, &prep.paths[s.path], sol.x))
        .collect();
    let record = ReplicateRecord {
        filtration: ctx.cfg.filtration.label().to_string(),
        method,
        n_steps: prep.scenario.grid.n_steps,
        report: replication_report(&terminal, &sol.r_hat),
        orthogonality: orthogonality_check(&prep, &sol, &strategy),
    };
    Ok(vec![write_json(&ctx.out, "replicate.json", &record)?])
}

fn parse_pair(pair: &str) -> Result<(FiltrationName, FiltrationName), CliError> {
    let parts: Vec<&str> = pair.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!(
            "--pair expects two comma-separated filtrations, got '{pair}'"
        )));
    }
    Ok((FiltrationName::parse(parts[0])?, FiltrationName::parse(parts[1])?))
}

fn uiv(ctx: &Context, pair: &str, choice: UivChoice) -> Result<Vec<PathBuf>, CliError> {
    let (fname, gname) = parse_pair(pair)?;
    let paths = ctx.simulate()?;
    let f = ctx.prepare(fname, &paths)?;
    let g = ctx.prepare(gname, &paths)?;
    let prefs = &ctx.cfg.preferences;
    let closed_form_ok = matches!(
        (&prefs.utility, &prefs.loss),
        (UtilitySpec::ShiftedNegReciprocal, LossSpec::NegReciprocal { .. })
    );
    let use_closed = match choice {
        UivChoice::Auto => closed_form_ok,
        UivChoice::ClosedForm if !closed_form_ok => {
            return Err(CliError::Config(
                "closed-form indifference value needs the shifted reciprocal utility with the -c/x loss".into(),
            ))
        }
        UivChoice::ClosedForm => true,
        UivChoice::RootSolve => false,
    };
    let x = ctx.cfg.solver.x;
    let result = if use_closed {
        uiv_closed_form_prepared(&f, &g, x)?
    } else {
        uiv_root_solve(&f, &g, x, &ctx.cfg.solver.eps, RootSolveOptions::default())?
    };
    Ok(vec![write_json(&ctx.out, "uiv.json", &result)?])
}

/// Benchmark policies of a frontier sweep.
fn frontier_policies(grid: &EpsGrid) -> Vec<EpsPolicy> {
    match grid {
        EpsGrid::Absolute { values } => values.iter().map(|&eps| EpsPolicy::Absolute { eps }).collect(),
        // a single point is the unconstrained end
        EpsGrid::BetweenBounds { points: 1 } => vec![EpsPolicy::QuantileBetweenBounds { q: 1.0 }],
        EpsGrid::BetweenBounds { points } => (0..*points)
            .map(|i| EpsPolicy::QuantileBetweenBounds {
                q: i as f64 / (*points - 1) as f64,
            })
            .collect(),
    }
}

/// CSV-safe one-line failure reason.
fn reason(e: &CliError) -> String {
    e.to_string().replace(['\n', '\r'], " ")
}

fn frontier(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let spec = ctx.cfg.frontier.clone().unwrap_or(FrontierSpec {
        eps: EpsGrid::BetweenBounds { points: 5 },
        filtrations: vec![ctx.cfg.filtration],
    });
    spec.validate()?;
    let policies = frontier_policies(&spec.eps);
    let paths = ctx.simulate()?;
    let x = ctx.cfg.solver.x;
    let header = [
        "filtration",
        "eps",
        "lambda_star",
        "y_hat",
        "value",
        "stderr",
        "status",
        "reason",
    ];
    let (p, mut w) = csv_writer(&ctx.out, "frontier.csv", &header)?;
    for name in &spec.filtrations {
        let prep = ctx.prepare(*name, &paths);
        let rows: Vec<[String; 8]> = policies
            .par_iter()
            .map(|policy| {
                let requested = match policy {
                    EpsPolicy::Absolute { eps } => *eps,
                    EpsPolicy::QuantileBetweenBounds { .. } => f64::NAN,
                };
                let outcome = prep
                    .as_ref()
                    .map_err(|e| CliError::Config(e.to_string()))
                    .and_then(|prep| {
                        let sol = prep.solve_at(x, policy)?;
                        Ok((scenario_value(prep, &sol), sol))
                    });
                match outcome {
                    Ok((val, sol)) => [
                        name.label().to_string(),
                        num(weighted_eps(&sol)),
                        num(sol.lambda_star()),
                        num(sol.y_hat()),
                        num(val.aggregate.u),
                        num(val.aggregate.stderr),
                        "ok".into(),
                        String::new(),
                    ],
                    Err(e) => {
                        let status = if e.exit_code() == 2 { "infeasible" } else { "error" };
                        let na = || "NA".to_string();
                        [
                            name.label().to_string(),
                            num(requested),
                            na(),
                            na(),
                            na(),
                            na(),
                            status.into(),
                            reason(&e),
                        ]
                    }
                }
            })
            .collect();
        for r in rows {
            w.write_record(&r)?;
        }
    }
    finish_csv(w)?;
    Ok(vec![p])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        assert_eq!(
            parse_pair("price,init-s").unwrap(),
            (FiltrationName::Price, FiltrationName::InitS)
        );
        assert!(parse_pair("price").is_err());
        assert!(parse_pair("price,oracle").is_err());
    }

    #[test]
    fn frontier_grid_spans_bounds() {
        let qs: Vec<f64> = frontier_policies(&EpsGrid::BetweenBounds { points: 5 })
            .into_iter()
            .map(|p| match p {
                EpsPolicy::QuantileBetweenBounds { q } => q,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(qs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(
            frontier_policies(&EpsGrid::BetweenBounds { points: 1 }),
            vec![EpsPolicy::QuantileBetweenBounds { q: 1.0 }]
        );
    }
}
