use std::sync::Arc;

use proptest::prelude::*;

use infovalue::dual::{solve_dual, DualProblem, EpsPolicy};
use infovalue::information::{FiltrationKind, VolCase};
use infovalue::market::{simulate_paths, ChangePointLaw, CoefficientSpec, MarketModel, SimGrid};
use infovalue::preferences::{LossSpec, Preferences, UtilitySpec};
use infovalue::scenario::{PreparedScenario, Scenario};
use infovalue::wealth::{
    orthogonality_check, replicate, replication_report, scenario_value, strategy_regression, wealth_path_regression,
    BasisSpec, StrategyPath,
};
use infovalue::Error;

fn scenario(kind: FiltrationKind, n_paths: usize) -> Scenario {
    let model = MarketModel::new(
        CoefficientSpec::constant(0.08, -0.04, 0.2, 0.2),
        ChangePointLaw::Exponential {
            rate: 1.0,
            truncate_at: None,
        },
        1.0,
        1.0,
    );
    Scenario {
        grid: SimGrid::new(1.0, 32).unwrap(),
        model,
        kind,
        preferences: Preferences::log_neg_reciprocal(),
        x: 1.0,
        eps: EpsPolicy::QuantileBetweenBounds { q: 0.5 },
        n_paths,
        seed: 21,
        n_cells: 1,
        tol: 1e-10,
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn solution_is_independent_of_pool_size() {
    let run = || {
        let prep = scenario(
            FiltrationKind::PriceOnly {
                vol_case: VolCase::Identical,
            },
            3000,
        )
        .prepare()
        .unwrap();
        let sol = prep.solve().unwrap();
        let v = scenario_value(&prep, &sol).aggregate;
        (
            sol.lambda_star().to_bits(),
            sol.y_hat().to_bits(),
            v.u.to_bits(),
            sol.r_hat.iter().map(|r| r.to_bits()).collect::<Vec<_>>(),
        )
    };
    let one = in_pool(1, run);
    assert_eq!(one, in_pool(4, run));
    assert_eq!(one, in_pool(8, run));
}

#[test]
fn regression_hedge_replicates_under_the_price_filtration() {
    let mut s = scenario(
        FiltrationKind::PriceOnly {
            vol_case: VolCase::Identical,
        },
        10_000,
    );
    s.grid = SimGrid::new(1.0, 64).unwrap();
    let prep = s.prepare().unwrap();
    let sol = prep.solve().unwrap();
    let basis = BasisSpec::default();
    let wealth = wealth_path_regression(&prep, &sol, &basis).unwrap();
    assert!(wealth.iter().all(|w| (w.x_hat[0] - 1.0).abs() < 1e-12));
    let strategy = strategy_regression(&prep, &sol, &wealth, &basis).unwrap();
    let terminal: Vec<f64> = strategy
        .iter()
        .map(|s| replicate(s, &prep.paths[s.path], sol.x))
        .collect();
    let rep = replication_report(&terminal, &sol.r_hat);
    assert!(rep.relative_rmse < 0.02, "{rep:?}");
    // complete market: residuals are discretization noise
    let orth = orthogonality_check(&prep, &sol, &strategy);
    assert!(orth.max_abs_correlation <= 0.05, "{orth:?}");
    let bumped: Vec<StrategyPath> = strategy
        .iter()
        .map(|s| StrategyPath {
            path: s.path,
            pi_hat: s.pi_hat.iter().map(|p| 1.1 * p).collect(),
        })
        .collect();
    assert!(orthogonality_check(&prep, &sol, &bumped).max_abs_correlation > orth.max_abs_correlation);
}

#[test]
fn strata_partition_paths_and_weights() {
    let mut s = scenario(FiltrationKind::InitiallyEnlargedS, 2000);
    s.n_cells = 5;
    let prep = s.prepare().unwrap();
    let sol = prep.solve().unwrap();
    assert_eq!(sol.cells.len(), 5);
    let mut seen: Vec<usize> = sol.cells.iter().flat_map(|c| c.paths.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..2000).collect::<Vec<_>>());
    let w: f64 = sol.cells.iter().map(|c| c.weight).sum();
    assert!((w - 1.0).abs() < 1e-12);
    assert!(sol.r_hat.iter().all(|r| r.is_finite() && *r > 0.0));
}

#[test]
fn common_paths_give_equal_enlarged_densities() {
    // with independent τ the four enlarged filtrations share one density
    let prep = scenario(FiltrationKind::InitiallyEnlargedW, 200).prepare().unwrap();
    for kind in [
        FiltrationKind::InitiallyEnlargedS,
        FiltrationKind::ProgressiveW,
        FiltrationKind::ProgressiveS,
    ] {
        let other = prep.with_kind(kind).unwrap();
        assert_eq!(other.terminal_z(), prep.terminal_z());
    }
}

#[test]
fn scenario_round_trips_through_json() {
    let s = scenario(
        FiltrationKind::PriceOnly {
            vol_case: VolCase::Identical,
        },
        10,
    );
    let text = serde_json::to_string(&s).unwrap();
    let back: Scenario = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

#[test]
fn correlated_change_point_is_rejected() {
    let mut s = scenario(FiltrationKind::ProgressiveS, 10);
    s.model.tau_correlation = 0.3;
    assert!(matches!(s.prepare(), Err(Error::UnsupportedEnlargement)));
}

#[test]
fn infeasible_benchmark_is_reported() {
    let mut s = scenario(FiltrationKind::ProgressiveS, 500);
    s.eps = EpsPolicy::Absolute { eps: 1.0 };
    let err = s.prepare().unwrap().solve().unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }));
    assert!(err.to_string().contains("infeasible"));
}

#[test]
fn mismatched_path_sets_are_refused() {
    let s = scenario(FiltrationKind::ProgressiveS, 100);
    let paths = simulate_paths(&s.model, &s.grid, 100, 1).unwrap();
    let prep = PreparedScenario::from_paths(s.clone(), Arc::new(paths)).unwrap();
    let small = scenario(
        FiltrationKind::PriceOnly {
            vol_case: VolCase::Identical,
        },
        50,
    )
    .prepare()
    .unwrap();
    assert!(infovalue::indifference::uiv_closed_form_prepared(&small, &prep, 1.0).is_err());
}

fn lognormal_sample(n: usize, v: f64, seed: u64) -> Vec<f64> {
    let model = MarketModel::new(
        CoefficientSpec::constant(0.0, 0.0, 1.0, 1.0),
        ChangePointLaw::PointMass { at: None },
        1.0,
        1.0,
    );
    let grid = SimGrid::new(1.0, 1).unwrap();
    simulate_paths(&model, &grid, n, seed)
        .unwrap()
        .iter()
        .map(|p| (-0.5 * v + v.sqrt() * p.dw[0]).exp())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The budget binds and a binding risk constraint holds for any capital and quantile.
    #[test]
    fn constraints_hold(x in 0.1f64..10.0, q in 0.05f64..1.0, v in 0.01f64..0.5, seed in 0u64..1000) {
        let z = lognormal_sample(300, v, seed);
        let p = DualProblem::new(Preferences::log_neg_reciprocal(), x, z).unwrap();
        let sol = solve_dual(&p, &EpsPolicy::QuantileBetweenBounds { q }, 1e-10).unwrap();
        prop_assert!(sol.budget_residual.abs() <= 1e-8 * x);
        if sol.binding {
            prop_assert!(sol.risk_residual.abs() <= 1e-8 * sol.eps.abs());
        }
        prop_assert!(sol.bounds.eps_min <= sol.eps && sol.eps <= sol.bounds.eps_max * (1.0 + 1e-12));
    }

    /// A looser benchmark never lowers the attained utility.
    #[test]
    fn value_grows_with_eps(q1 in 0.05f64..1.0, q2 in 0.05f64..1.0, seed in 0u64..1000) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let z = lognormal_sample(200, 0.2, seed);
        let prefs = Preferences::new(UtilitySpec::Crra { gamma: 2.0 }, LossSpec::NegReciprocal { c: 3.0 });
        let p = DualProblem::new(prefs.clone(), 1.0, z).unwrap();
        let u = |q: f64| {
            let s = solve_dual(&p, &EpsPolicy::QuantileBetweenBounds { q }, 1e-10).unwrap();
            s.r_hat.iter().map(|&r| prefs.utility.value(r)).sum::<f64>() / s.r_hat.len() as f64
        };
        prop_assert!(u(hi) >= u(lo) - 1e-10);
    }
}
