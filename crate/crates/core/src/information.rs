//! Information models: market price of risk and density processes for the
//! initially enlarged, progressively enlarged and price filtrations, plus the
//! discrete Bayes filter for the change point seen through prices alone.
//!
//! All per-step quantities are predictable: the value on step `k` (from
//! `t_k` to `t_{k+1}`) uses information strictly before the step-`k`
//! increment. With `τ` independent of the noise the four enlarged
//! filtrations share one pathwise drift; they differ in `F₀` (stratification)
//! and in which observables the wealth regressions may condition on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ChangePointLaw, MarketModel, PathBundle, SimGrid};

/// Set `O` of `(t, S̃_t)` points on which the two volatilities differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// `{σ¹(t, x) ≠ σ²(t, x)}` read off the model.
    Coefficients,
    Everything,
    Nothing,
    StateAbove {
        level: f64,
    },
    StateBelow {
        level: f64,
    },
    TimeBefore {
        t: f64,
    },
}

impl Region {
    pub fn contains(&self, model: &MarketModel, t: f64, x: f64) -> bool {
        match self {
            Region::Coefficients => model.coeffs.vol(false, t, x) != model.coeffs.vol(true, t, x),
            Region::Everything => true,
            Region::Nothing => false,
            Region::StateAbove { level } => x > *level,
            Region::StateBelow { level } => x < *level,
            Region::TimeBefore { t: end } => t < *end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolCase {
    Identical,
    Distinct,
    SemiIdentical { region: Region },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiltrationKind {
    InitiallyEnlargedW,
    InitiallyEnlargedS,
    ProgressiveW,
    ProgressiveS,
    PriceOnly { vol_case: VolCase },
}

impl FiltrationKind {
    /// Short name used on the command line and in reports.
    pub fn label(&self) -> &'static str {
        match self {
            FiltrationKind::InitiallyEnlargedW => "init-w",
            FiltrationKind::InitiallyEnlargedS => "init-s",
            FiltrationKind::ProgressiveW => "prog-w",
            FiltrationKind::ProgressiveS => "prog-s",
            FiltrationKind::PriceOnly { .. } => "price",
        }
    }

    /// `F₀ = σ(τ)`.
    pub fn knows_tau_initially(&self) -> bool {
        matches!(
            self,
            FiltrationKind::InitiallyEnlargedW | FiltrationKind::InitiallyEnlargedS
        )
    }
}

/// Classifies the volatility pair along the visited grid points of `paths`.
pub fn detect_vol_case(model: &MarketModel, grid: &SimGrid, paths: &[PathBundle]) -> VolCase {
    let (mut equal, mut differ) = (false, false);
    for p in paths {
        for k in 0..=grid.n_steps {
            let (t, x) = (grid.time(k), p.s_tilde[k]);
            if model.coeffs.vol(false, t, x) == model.coeffs.vol(true, t, x) {
                equal = true;
            } else {
                differ = true;
            }
        }
    }
    match (equal, differ) {
        (_, false) => VolCase::Identical,
        (false, true) => VolCase::Distinct,
        (true, true) => VolCase::SemiIdentical {
            region: Region::Coefficients,
        },
    }
}

/// Predictable market price of risk on one path.
///
/// Arrays have `n_steps + 1` entries; entry `k` applies to step `k`, and the
/// terminal entry is reported for completeness.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPriceOfRisk {
    pub path: usize,
    pub lambda: Vec<f64>,
    /// Volatility driving step `k`.
    pub sigma: Vec<f64>,
    /// Probability, under the filtration's information, that step `k` is post-change.
    pub p: Vec<f64>,
}

/// Density (state-price) process on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPath {
    pub path: usize,
    pub z: Vec<f64>,
    pub log_z: Vec<f64>,
    /// Innovation increments `dŴ_k`, `n_steps` entries.
    pub dw_hat: Vec<f64>,
}

impl DensityPath {
    pub fn terminal(&self) -> f64 {
        *self.z.last().unwrap()
    }
}

/// Posterior `p_k = P(τ < t_k | price increments before step k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangePointPosterior {
    pub path: usize,
    pub p: Vec<f64>,
}

/// Alternating exit/entry times of `(t, S̃_t)` relative to `O`, padded with `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeIntervals {
    pub path: usize,
    pub rho: Vec<f64>,
}

/// Compensator `A` and compensated jump `N = 1{τ ≤ t} − A` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatedJump {
    pub path: usize,
    pub a: Vec<f64>,
    pub n: Vec<f64>,
}

fn check_independent(model: &MarketModel) -> Result<()> {
    if model.tau_correlation != 0.0 {
        Err(Error::UnsupportedEnlargement)
    } else {
        Ok(())
    }
}

fn check_vol_case(model: &MarketModel, grid: &SimGrid, path: &PathBundle, case: &VolCase) -> Result<()> {
    for k in 0..=grid.n_steps {
        let (t, x) = (grid.time(k), path.s_tilde[k]);
        let same = model.coeffs.vol(false, t, x) == model.coeffs.vol(true, t, x);
        match case {
            VolCase::Identical if !same => {
                return Err(Error::VolCaseMismatch(format!(
                    "volatilities differ at t={t}, x={x} on path {}",
                    path.index
                )));
            }
            VolCase::Distinct if same => {
                return Err(Error::VolCaseMismatch(format!(
                    "volatilities coincide at t={t}, x={x} on path {}",
                    path.index
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Steps on which the increment reveals the current regime.
fn revealed_steps(model: &MarketModel, grid: &SimGrid, path: &PathBundle, case: &VolCase) -> Vec<bool> {
    (0..=grid.n_steps)
        .map(|k| match case {
            VolCase::Identical => false,
            VolCase::Distinct => true,
            VolCase::SemiIdentical { region } => region.contains(model, grid.time(k), path.s_tilde[k]),
        })
        .collect()
}

fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Probability of switching on `(t_k, t_{k+1}]` given no switch by `t_k`,
/// in the `P(τ < ·)` convention of `regime`.
fn step_hazard(law: &ChangePointLaw, t0: f64, t1: f64) -> f64 {
    let f0 = law.cdf_left(t0);
    let surv = 1.0 - f0;
    if surv <= 0.0 {
        return 1.0;
    }
    ((law.cdf_left(t1) - f0) / surv).clamp(0.0, 1.0)
}

fn run_filter(model: &MarketModel, grid: &SimGrid, path: &PathBundle, revealed: &[bool]) -> Result<Vec<f64>> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut p = Vec::with_capacity(n + 1);
    let mut cur = model.law.cdf_left(0.0);
    // while no step has carried information the posterior is the prior itself
    let mut informed = false;
    for k in 0..=n {
        let (t, x) = (grid.time(k), path.s_tilde[k]);
        if revealed[k] {
            cur = path.regime[k] as f64;
            informed = true;
        }
        p.push(cur);
        if k == n {
            break;
        }
        let s1 = model.coeffs.vol(false, t, x);
        let s2 = model.coeffs.vol(true, t, x);
        let (v1, v2) = (s1 * s1 * dt, s2 * s2 * dt);
        if !(v1 > 0.0 && v2 > 0.0 && v1.is_finite() && v2.is_finite()) {
            return Err(Error::DegenerateLikelihood {
                path: path.index,
                step: k,
            });
        }
        let (m1, m2) = (model.coeffs.drift(false, t, x), model.coeffs.drift(true, t, x));
        let silent = m1 == m2 && v1 == v2;
        if silent && !informed && !revealed[k] {
            cur = model.law.cdf_left(grid.time(k + 1));
            continue;
        }
        let post = if revealed[k] || silent || cur == 0.0 || cur == 1.0 {
            cur
        } else {
            let d = path.ds_tilde(k);
            let la = (1.0 - cur).ln() + log_gauss(d, m1 * dt, v1);
            let lb = cur.ln() + log_gauss(d, m2 * dt, v2);
            let m = la.max(lb);
            if !m.is_finite() {
                return Err(Error::DegenerateLikelihood {
                    path: path.index,
                    step: k,
                });
            }
            let (a, b) = ((la - m).exp(), (lb - m).exp());
            b / (a + b)
        };
        informed |= !silent;
        let h = step_hazard(&model.law, t, grid.time(k + 1));
        cur = (post + (1.0 - post) * h).clamp(0.0, 1.0);
    }
    Ok(p)
}

/// Bayes filter for the change point observed through `S̃` with identical volatilities.
pub fn change_point_filter(model: &MarketModel, path: &PathBundle, grid: &SimGrid) -> Result<ChangePointPosterior> {
    check_independent(model)?;
    let revealed = vec![false; grid.n_steps + 1];
    Ok(ChangePointPosterior {
        path: path.index,
        p: run_filter(model, grid, path, &revealed)?,
    })
}

/// Same recursion, with the regime revealed on steps whose start lies in `O`.
pub fn change_point_filter_with_case(
    model: &MarketModel,
    path: &PathBundle,
    grid: &SimGrid,
    case: &VolCase,
) -> Result<ChangePointPosterior> {
    check_independent(model)?;
    let revealed = revealed_steps(model, grid, path, case);
    Ok(ChangePointPosterior {
        path: path.index,
        p: run_filter(model, grid, path, &revealed)?,
    })
}

pub fn market_price_of_risk(
    model: &MarketModel,
    grid: &SimGrid,
    path: &PathBundle,
    kind: &FiltrationKind,
) -> Result<MarketPriceOfRisk> {
    check_independent(model)?;
    let n = grid.n_steps;
    let c = &model.coeffs;
    match kind {
        FiltrationKind::PriceOnly {
            vol_case: VolCase::Distinct,
        } => {
            check_vol_case(model, grid, path, &VolCase::Distinct)?;
            market_price_of_risk(model, grid, path, &FiltrationKind::ProgressiveS)
        }
        FiltrationKind::PriceOnly { vol_case } => {
            check_vol_case(model, grid, path, vol_case)?;
            let revealed = revealed_steps(model, grid, path, vol_case);
            let p = run_filter(model, grid, path, &revealed)?;
            let mut lambda = Vec::with_capacity(n + 1);
            let mut sigma = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let (t, x) = (grid.time(k), path.s_tilde[k]);
                let post = path.post_change(k);
                if revealed[k] {
                    let s = c.vol(post, t, x);
                    lambda.push(c.drift(post, t, x) / s);
                    sigma.push(s);
                } else {
                    let s = c.vol(false, t, x);
                    lambda.push(((1.0 - p[k]) * c.drift(false, t, x) + p[k] * c.drift(true, t, x)) / s);
                    sigma.push(s);
                }
            }
            finish(path.index, lambda, sigma, p)
        }
        _ => {
            let mut lambda = Vec::with_capacity(n + 1);
            let mut sigma = Vec::with_capacity(n + 1);
            let mut p = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let (t, x) = (grid.time(k), path.s_tilde[k]);
                let post = path.post_change(k);
                let s = c.vol(post, t, x);
                lambda.push(c.drift(post, t, x) / s);
                sigma.push(s);
                p.push(path.regime[k] as f64);
            }
            finish(path.index, lambda, sigma, p)
        }
    }
}

fn finish(path: usize, lambda: Vec<f64>, sigma: Vec<f64>, p: Vec<f64>) -> Result<MarketPriceOfRisk> {
    if let Some(k) = lambda.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteState { path, step: k });
    }
    Ok(MarketPriceOfRisk { path, lambda, sigma, p })
}

/// Exact log-Euler density `log Z_{k+1} = log Z_k − Λ_k dŴ_k − ½Λ_k² dt`.
pub fn density_path(lam: &MarketPriceOfRisk, path: &PathBundle, grid: &SimGrid) -> Result<DensityPath> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut log_z = Vec::with_capacity(n + 1);
    let mut dw_hat = Vec::with_capacity(n);
    let mut acc = 0.0;
    log_z.push(0.0);
    for k in 0..n {
        let (l, s) = (lam.lambda[k], lam.sigma[k]);
        let dw = (path.ds_tilde(k) - l * s * dt) / s;
        acc += -l * dw - 0.5 * l * l * dt;
        dw_hat.push(dw);
        log_z.push(acc);
    }
    let z: Vec<f64> = log_z.iter().map(|v| v.exp()).collect();
    if let Some(k) = z.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFiniteState {
            path: path.index,
            step: k,
        });
    }
    Ok(DensityPath {
        path: path.index,
        z,
        log_z,
        dw_hat,
    })
}

/// Market price of risk and density for every path, in path order.
pub fn densities(
    model: &MarketModel,
    grid: &SimGrid,
    paths: &[PathBundle],
    kind: &FiltrationKind,
) -> Result<Vec<(MarketPriceOfRisk, DensityPath)>> {
    use rayon::prelude::*;
    let out: Vec<Result<(MarketPriceOfRisk, DensityPath)>> = paths
        .par_iter()
        .map(|p| {
            let l = market_price_of_risk(model, grid, p, kind)?;
            let d = density_path(&l, p, grid)?;
            Ok((l, d))
        })
        .collect();
    out.into_iter().collect()
}

/// Switch times `ρ_k` of `(t, S̃_t)` in and out of `O`, snapped to the grid.
///
/// Odd entries are exits from `O`, even entries (after `ρ₀ = 0`) re-entries;
/// once the path stops switching the sequence is padded with `T` so that it
/// always ends with at least one trailing `T`.
pub fn detect_regime_intervals(
    model: &MarketModel,
    grid: &SimGrid,
    path: &PathBundle,
    region: &Region,
) -> RegimeIntervals {
    let n = grid.n_steps;
    let horizon = grid.horizon;
    let inside: Vec<bool> = (0..=n)
        .map(|k| region.contains(model, grid.time(k), path.s_tilde[k]))
        .collect();
    let mut rho = vec![0.0];
    let mut want_inside = false;
    let mut last = 0.0_f64;
    loop {
        let hit = (0..=n).find(|&k| grid.time(k) > last && inside[k] == want_inside);
        match hit {
            Some(k) => {
                last = grid.time(k);
                rho.push(last);
                want_inside = !want_inside;
            }
            None => {
                rho.push(horizon);
                break;
            }
        }
    }
    if *rho.last().unwrap() < horizon {
        rho.push(horizon);
    }
    RegimeIntervals { path: path.index, rho }
}

/// `A_t = Λ_τ(t ∧ τ)` from the law's cumulative hazard and `N_t = 1{τ ≤ t} − A_t`.
pub fn compensated_jump(model: &MarketModel, grid: &SimGrid, path: &PathBundle) -> CompensatedJump {
    let mut a = Vec::with_capacity(grid.n_steps + 1);
    let mut n = Vec::with_capacity(grid.n_steps + 1);
    for k in 0..=grid.n_steps {
        let t = grid.time(k);
        let ak = model.law.cumulative_hazard(t.min(path.tau));
        let jump = if path.tau <= t { 1.0 } else { 0.0 };
        a.push(ak);
        n.push(jump - ak);
    }
    CompensatedJump { path: path.index, a, n }
}

/// Paths sharing one `F₀`-atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub cell: usize,
    /// Empirical probability of the cell.
    pub weight: f64,
    pub paths: Vec<usize>,
}

/// Buckets path indices by `F₀`.
///
/// Filtrations with trivial `F₀` give one stratum. Initially enlarged
/// filtrations split by `τ` into `n_cells` cells bounded by prior quantiles;
/// a point-mass law always yields one cell. Empty cells are dropped.
pub fn strata(kind: &FiltrationKind, law: &ChangePointLaw, taus: &[f64], n_cells: usize) -> Vec<Stratum> {
    let all = || {
        vec![Stratum {
            cell: 0,
            weight: 1.0,
            paths: (0..taus.len()).collect(),
        }]
    };
    if !kind.knows_tau_initially() || n_cells <= 1 || matches!(law, ChangePointLaw::PointMass { .. }) {
        return all();
    }
    let bounds = quantile_bounds(law, n_cells);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (i, &tau) in taus.iter().enumerate() {
        let c = bounds.iter().filter(|&&q| tau > q).count();
        cells[c].push(i);
    }
    let total = taus.len() as f64;
    cells
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(cell, paths)| Stratum {
            cell,
            weight: paths.len() as f64 / total,
            paths,
        })
        .collect()
}

/// Interior quantiles `q_j`, `j = 1..n_cells−1`, of the law by bisection on its CDF.
fn quantile_bounds(law: &ChangePointLaw, n_cells: usize) -> Vec<f64> {
    (1..n_cells)
        .map(|j| {
            let target = j as f64 / n_cells as f64;
            let mut hi = 1.0;
            while law.cdf(hi) < target && hi < 1e12 {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if law.cdf(mid) < target {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            hi
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{euler_path, simulate_paths, CoefficientSpec};
    use crate::stats::MeanEstimate;

    fn model(mu1: f64, mu2: f64, s1: f64, s2: f64, law: ChangePointLaw) -> MarketModel {
        MarketModel::new(CoefficientSpec::constant(mu1, mu2, s1, s2), law, 1.0, 1.0)
    }

    fn point(at: f64) -> ChangePointLaw {
        ChangePointLaw::PointMass { at: Some(at) }
    }

    #[test]
    fn enlarged_lambda_is_piecewise_constant() {
        let m = model(0.08, 0.02, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 8).unwrap();
        let p = simulate_paths(&m, &grid, 1, 3).unwrap().remove(0);
        for kind in [FiltrationKind::InitiallyEnlargedW, FiltrationKind::ProgressiveS] {
            let l = market_price_of_risk(&m, &grid, &p, &kind).unwrap();
            for k in 0..=8 {
                let want = if grid.time(k) <= 0.5 { 0.4 } else { 0.1 };
                assert!((l.lambda[k] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_drifts_make_filter_irrelevant() {
        let m = model(
            0.1,
            0.1,
            0.2,
            0.2,
            ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 16).unwrap();
        let kind = FiltrationKind::PriceOnly {
            vol_case: VolCase::Identical,
        };
        for p in simulate_paths(&m, &grid, 5, 1).unwrap() {
            let l = market_price_of_risk(&m, &grid, &p, &kind).unwrap();
            assert!(l.lambda.iter().all(|v| (v - 0.5).abs() < 1e-15));
            let post = change_point_filter(&m, &p, &grid).unwrap();
            for k in 0..=16 {
                assert_eq!(post.p[k], m.law.cdf_left(grid.time(k)));
            }
        }
    }

    #[test]
    fn never_switching_prior_gives_zero_posterior() {
        let m = model(0.3, -0.3, 0.1, 0.1, ChangePointLaw::PointMass { at: None });
        let grid = SimGrid::new(1.0, 16).unwrap();
        let p = simulate_paths(&m, &grid, 1, 2).unwrap().remove(0);
        assert!(change_point_filter(&m, &p, &grid).unwrap().p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_mass_prior_jumps_on_three_steps() {
        // τ₀ = 0.5 on t = 0, 1/3, 2/3, 1: no switch possible on steps 0, 1; certain on step 2
        let m = model(0.3, -0.3, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 3).unwrap();
        let p = euler_path(&m, &grid, 0, 0.5, vec![0.1, -0.2, 0.05]).unwrap();
        let post = change_point_filter(&m, &p, &grid).unwrap();
        assert_eq!(post.p, vec![0.0, 0.0, 1.0, 1.0]);
        let l = market_price_of_risk(
            &m,
            &grid,
            &p,
            &FiltrationKind::PriceOnly {
                vol_case: VolCase::Identical,
            },
        )
        .unwrap();
        for (got, want) in l.lambda.iter().zip([1.5, 1.5, -1.5, -1.5]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    /// Exhaustive Bayes over the first post-change grid index `K`.
    fn brute_force_posterior(m: &MarketModel, grid: &SimGrid, p: &PathBundle) -> Vec<f64> {
        let n = grid.n_steps;
        let dt = grid.dt();
        let fl = |t: f64| m.law.cdf_left(t);
        // K ∈ {1..n} or n+1 for "after the grid"
        let prior: Vec<f64> = (1..=n + 1)
            .map(|j| {
                if j <= n {
                    fl(grid.time(j)) - fl(grid.time(j - 1))
                } else {
                    1.0 - fl(grid.time(n))
                }
            })
            .collect();
        (0..=n)
            .map(|k| {
                let mut num = 0.0;
                let mut den = 0.0;
                for (idx, pr) in prior.iter().enumerate() {
                    let big_k = idx + 1;
                    let mut like = *pr;
                    for i in 0..k {
                        let post = i >= big_k;
                        let (t, x) = (grid.time(i), p.s_tilde[i]);
                        let mu = m.coeffs.drift(post, t, x) * dt;
                        let sd = m.coeffs.vol(post, t, x) * dt.sqrt();
                        let d = (p.ds_tilde(i) - mu) / sd;
                        like *= (-0.5 * d * d).exp() / sd;
                    }
                    den += like;
                    if big_k <= k {
                        num += like;
                    }
                }
                num / den
            })
            .collect()
    }

    #[test]
    fn filter_matches_exhaustive_bayes() {
        let m = model(
            0.3,
            -0.3,
            0.1,
            0.1,
            ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 16).unwrap();
        for p in simulate_paths(&m, &grid, 6, 77).unwrap() {
            let got = change_point_filter(&m, &p, &grid).unwrap().p;
            let want = brute_force_posterior(&m, &grid, &p);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12, "max error {err}");
        }
    }

    #[test]
    fn posterior_tower_property() {
        let m = model(
            0.3,
            -0.3,
            0.2,
            0.2,
            ChangePointLaw::Exponential {
                rate: 1.5,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 20).unwrap();
        let paths = simulate_paths(&m, &grid, 20_000, 0).unwrap();
        let posts: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| change_point_filter(&m, p, &grid).unwrap().p)
            .collect();
        for k in [5, 10, 20] {
            let xs: Vec<f64> = posts.iter().map(|v| v[k]).collect();
            let est = MeanEstimate::from_samples(&xs);
            let want = m.law.cdf_left(grid.time(k));
            assert!(
                (est.mean - want).abs() < 3.0 * est.stderr + 1e-12,
                "k={k}: {est:?} vs {want}"
            );
        }
    }

    #[test]
    fn price_lambda_is_posterior_mixture() {
        let m = model(0.3, -0.1, 0.25, 0.25, ChangePointLaw::Uniform { end: 1.0 });
        let grid = SimGrid::new(1.0, 32).unwrap();
        let kind = FiltrationKind::PriceOnly {
            vol_case: VolCase::Identical,
        };
        for p in simulate_paths(&m, &grid, 20, 8).unwrap() {
            let l = market_price_of_risk(&m, &grid, &p, &kind).unwrap();
            for k in 0..=32 {
                let want = ((1.0 - l.p[k]) * 0.3 + l.p[k] * -0.1) / 0.25;
                assert!((l.lambda[k] - want).abs() < 1e-14);
                assert!((0.0..=1.0).contains(&l.p[k]));
            }
        }
    }

    #[test]
    fn distinct_vols_match_progressive_bitwise() {
        let m = model(
            0.08,
            0.02,
            0.2,
            0.3,
            ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 32).unwrap();
        for p in simulate_paths(&m, &grid, 10, 4).unwrap() {
            let a = market_price_of_risk(
                &m,
                &grid,
                &p,
                &FiltrationKind::PriceOnly {
                    vol_case: VolCase::Distinct,
                },
            )
            .unwrap();
            let b = market_price_of_risk(&m, &grid, &p, &FiltrationKind::ProgressiveS).unwrap();
            assert_eq!(
                density_path(&a, &p, &grid).unwrap(),
                density_path(&b, &p, &grid).unwrap()
            );
        }
        let same = model(0.08, 0.02, 0.2, 0.2, point(0.5));
        let p = simulate_paths(&same, &grid, 1, 1).unwrap().remove(0);
        let bad = market_price_of_risk(
            &same,
            &grid,
            &p,
            &FiltrationKind::PriceOnly {
                vol_case: VolCase::Distinct,
            },
        );
        assert!(matches!(bad, Err(Error::VolCaseMismatch(_))));
    }

    #[test]
    fn semi_identical_reveals_regime_inside_region() {
        let m = model(0.3, -0.3, 0.2, 0.2, ChangePointLaw::Uniform { end: 1.0 });
        let grid = SimGrid::new(1.0, 16).unwrap();
        let everything = FiltrationKind::PriceOnly {
            vol_case: VolCase::SemiIdentical {
                region: Region::Everything,
            },
        };
        let nothing = FiltrationKind::PriceOnly {
            vol_case: VolCase::SemiIdentical {
                region: Region::Nothing,
            },
        };
        for p in simulate_paths(&m, &grid, 5, 12).unwrap() {
            let a = market_price_of_risk(&m, &grid, &p, &everything).unwrap();
            let b = market_price_of_risk(&m, &grid, &p, &FiltrationKind::ProgressiveS).unwrap();
            assert_eq!(a.lambda, b.lambda);
            let c = market_price_of_risk(&m, &grid, &p, &nothing).unwrap();
            let d = market_price_of_risk(
                &m,
                &grid,
                &p,
                &FiltrationKind::PriceOnly {
                    vol_case: VolCase::Identical,
                },
            )
            .unwrap();
            assert_eq!(c.lambda, d.lambda);
        }
    }

    #[test]
    fn zero_lambda_gives_unit_density() {
        let m = model(0.0, 0.0, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 16).unwrap();
        let p = simulate_paths(&m, &grid, 1, 1).unwrap().remove(0);
        let l = market_price_of_risk(&m, &grid, &p, &FiltrationKind::ProgressiveW).unwrap();
        assert!(density_path(&l, &p, &grid).unwrap().z.iter().all(|&z| z == 1.0));
    }

    #[test]
    fn density_identity_and_moments() {
        let m = model(0.08, 0.08, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 4).unwrap();
        let paths = simulate_paths(&m, &grid, 100_000, 21).unwrap();
        let dens = densities(&m, &grid, &paths, &FiltrationKind::InitiallyEnlargedW).unwrap();
        let (l0, d0) = &dens[0];
        let dt = grid.dt();
        let want: f64 = (0..4)
            .map(|k| -l0.lambda[k] * d0.dw_hat[k] - 0.5 * l0.lambda[k].powi(2) * dt)
            .sum();
        assert!((d0.terminal().ln() - want).abs() < 1e-14);
        let zt: Vec<f64> = dens.iter().map(|(_, d)| d.terminal()).collect();
        let mz = MeanEstimate::from_samples(&zt);
        assert!((mz.mean - 1.0).abs() < 3.0 * mz.stderr, "{mz:?}");
        let sq: Vec<f64> = zt.iter().map(|z| z.sqrt()).collect();
        let ms = MeanEstimate::from_samples(&sq);
        assert!((ms.mean - (-0.02f64).exp()).abs() < 3.0 * ms.stderr, "{ms:?}");
    }

    #[test]
    fn log_density_variance_is_integrated_square() {
        let m = model(0.08, 0.02, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 8).unwrap();
        let paths = simulate_paths(&m, &grid, 50_000, 2).unwrap();
        let dens = densities(&m, &grid, &paths, &FiltrationKind::InitiallyEnlargedW).unwrap();
        let logs: Vec<f64> = dens.iter().map(|(_, d)| *d.log_z.last().unwrap()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // steps starting at t ≤ 0.5 are pre-change
        let pre = (0..8).filter(|&k| grid.time(k) <= 0.5).count() as f64 * grid.dt();
        let want = pre * 0.16 + (1.0 - pre) * 0.01;
        // stderr of a Gaussian sample variance: v·√(2/(n−1))
        assert!(
            (var - want).abs() < 3.0 * want * (2.0 / (n - 1.0)).sqrt(),
            "{var} vs {want}"
        );
    }

    #[test]
    fn every_filtration_density_has_unit_mean() {
        // the price-filtration innovation is a Gaussian mixture, so log-Euler Z
        // carries an O(dt) upward bias; keep it well below the noise
        let m = model(
            0.1,
            -0.1,
            0.2,
            0.2,
            ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 64).unwrap();
        let paths = simulate_paths(&m, &grid, 40_000, 9).unwrap();
        for kind in [
            FiltrationKind::InitiallyEnlargedW,
            FiltrationKind::InitiallyEnlargedS,
            FiltrationKind::ProgressiveW,
            FiltrationKind::ProgressiveS,
            FiltrationKind::PriceOnly {
                vol_case: VolCase::Identical,
            },
        ] {
            let zt: Vec<f64> = densities(&m, &grid, &paths, &kind)
                .unwrap()
                .iter()
                .map(|(_, d)| d.terminal())
                .collect();
            let est = MeanEstimate::from_samples(&zt);
            assert!((est.mean - 1.0).abs() < 3.0 * est.stderr, "{kind:?}: {est:?}");
        }
    }

    #[test]
    fn regime_interval_edge_cases() {
        let m = model(0.0, 0.0, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 4).unwrap();
        let p = simulate_paths(&m, &grid, 1, 1).unwrap().remove(0);
        assert_eq!(
            detect_regime_intervals(&m, &grid, &p, &Region::Everything).rho,
            vec![0.0, 1.0]
        );
        assert_eq!(
            detect_regime_intervals(&m, &grid, &p, &Region::Nothing).rho,
            vec![0.0, 0.25, 1.0]
        );
    }

    #[test]
    fn regime_interval_crossing_matches_scan() {
        // monotone path S̃_k = 0.1 k crossing K = 0.25 between t = 0.5 and t = 0.75
        let m = model(0.4, 0.4, 1e-9, 1e-9, point(2.0));
        let grid = SimGrid::new(1.0, 4).unwrap();
        let p = euler_path(&m, &grid, 0, 2.0, vec![0.0; 4]).unwrap();
        let region = Region::StateBelow { level: 0.25 };
        let got = detect_regime_intervals(&m, &grid, &p, &region).rho;
        let first_past = (0..=4)
            .map(|k| grid.time(k))
            .find(|&t| p.s_tilde[(t * 4.0) as usize] >= 0.25)
            .unwrap();
        assert_eq!(got, vec![0.0, first_past, 1.0]);
        assert_eq!(first_past, 0.75);
    }

    #[test]
    fn compensated_jump_cases() {
        let m = model(
            0.0,
            0.0,
            0.2,
            0.2,
            ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
        );
        let grid = SimGrid::new(1.0, 10).unwrap();
        let late = euler_path(&m, &grid, 0, 3.0, vec![0.0; 10]).unwrap();
        assert!((compensated_jump(&m, &grid, &late).n[10] + 1.0).abs() < 1e-15);
        let paths = simulate_paths(&m, &grid, 100_000, 31).unwrap();
        let nt: Vec<f64> = paths.iter().map(|p| compensated_jump(&m, &grid, p).n[10]).collect();
        let est = MeanEstimate::from_samples(&nt);
        assert!(est.mean.abs() < 3.0 * est.stderr, "{est:?}");
        let pm = model(0.0, 0.0, 0.2, 0.2, point(0.3));
        let p = euler_path(&pm, &grid, 0, 0.3, vec![0.0; 10]).unwrap();
        let cj = compensated_jump(&pm, &grid, &p);
        for k in 0..=10 {
            if grid.time(k) >= 0.3 {
                assert_eq!(cj.n[k], 0.0);
            }
        }
    }

    #[test]
    fn strata_partition_paths() {
        let law = ChangePointLaw::Exponential {
            rate: 1.0,
            truncate_at: None,
        };
        let taus = [0.05, 0.2, 0.9, 3.0, 0.6];
        let s = strata(&FiltrationKind::InitiallyEnlargedW, &law, &taus, 4);
        let mut all: Vec<usize> = s.iter().flat_map(|c| c.paths.clone()).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!((s.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(strata(&FiltrationKind::ProgressiveW, &law, &taus, 4).len(), 1);
        assert_eq!(
            strata(&FiltrationKind::InitiallyEnlargedS, &point(0.5), &taus, 4).len(),
            1
        );
    }

    #[test]
    fn correlated_change_point_is_rejected() {
        let mut m = model(0.0, 0.0, 0.2, 0.2, point(0.5));
        let grid = SimGrid::new(1.0, 4).unwrap();
        let p = simulate_paths(&m, &grid, 1, 1).unwrap().remove(0);
        m.tau_correlation = 0.3;
        assert_eq!(
            market_price_of_risk(&m, &grid, &p, &FiltrationKind::ProgressiveW),
            Err(Error::UnsupportedEnlargement)
        );
    }
}
