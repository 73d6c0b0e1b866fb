//! Optimal terminal wealth, value reports, wealth and strategy paths, and
//! hedge diagnostics.
//!
//! Two estimators of `X̂(t) = E[(Z_T/Z_t) R̂ | F_t]` are provided: the closed
//! form for log utility with the `−c/x` loss and deterministic market price
//! of risk, and a cross-sectional least-squares regression for everything
//! else. Strategies are holdings in the log-price `S̃`, so wealth evolves as
//! `X(t) = x + ∫ π dS̃`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::{DensityPath, FiltrationKind, MarketPriceOfRisk};
use crate::market::PathBundle;
use crate::preferences::{LossSpec, UtilitySpec};
use crate::quadrature::Legendre;
use crate::scenario::{DualSolution, PreparedScenario};
use crate::stats::{correlation, MeanEstimate};

/// Per-path optimal terminal wealth `R̂ = Ĩ_{λ*}(ŷ Z_T)`.
pub fn optimal_terminal_wealth(sol: &DualSolution) -> &[f64] {
    &sol.r_hat
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueReport {
    pub u: f64,
    pub stderr: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtration: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stratum: Option<usize>,
}

/// Mean utility of the terminal wealth samples with its standard error.
pub fn value(r_hat: &[f64], utility: &UtilitySpec) -> ValueReport {
    let us: Vec<f64> = r_hat.iter().map(|&r| utility.value(r)).collect();
    let m = MeanEstimate::from_samples(&us);
    ValueReport {
        u: m.mean,
        stderr: m.stderr,
        n: m.n,
        filtration: None,
        stratum: None,
    }
}

/// Value per stratum and its prior-weighted aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioValue {
    pub aggregate: ValueReport,
    pub per_stratum: Vec<ValueReport>,
}

pub fn scenario_value(prep: &PreparedScenario, sol: &DualSolution) -> ScenarioValue {
    let label = prep.scenario.kind.label().to_string();
    let utility = &prep.scenario.preferences.utility;
    let per: Vec<ValueReport> = sol
        .cells
        .iter()
        .map(|c| {
            let r: Vec<f64> = c.paths.iter().map(|&j| sol.r_hat[j]).collect();
            ValueReport {
                filtration: Some(label.clone()),
                stratum: Some(c.cell),
                ..value(&r, utility)
            }
        })
        .collect();
    let u = sol.cells.iter().zip(&per).map(|(c, v)| c.weight * v.u).sum();
    let var: f64 = sol
        .cells
        .iter()
        .zip(&per)
        .map(|(c, v)| (c.weight * v.stderr).powi(2))
        .sum();
    let aggregate = ValueReport {
        u,
        stderr: var.sqrt(),
        n: sol.r_hat.len(),
        filtration: Some(label),
        stratum: None,
    };
    ScenarioValue {
        aggregate,
        per_stratum: per,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthMethod {
    ClosedForm,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub path: usize,
    pub x_hat: Vec<f64>,
    pub method: WealthMethod,
}

/// Holdings in `S̃` on each step (`n_steps` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPath {
    pub path: usize,
    pub pi_hat: Vec<f64>,
}

/// `X̂(t) = F(Z_t, t)` for log utility, loss `−c/x` and a deterministic
/// market price of risk `Λ` on the grid.
///
/// With `v_k = Σ_{j≥k} Λ_j² dt`, `a = −v/2`, `b = −√v` and `K = 4cλ*ŷ`,
/// `F(z, t) = (1 + E√(1 + K z e^{a+bη})) / (2ŷz)` for `η ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct ClosedFormExample {
    pub lambda_star: f64,
    pub y_hat: f64,
    pub loss_c: f64,
    tail_var: Vec<f64>,
    rule: Legendre,
}

impl ClosedFormExample {
    /// `lambda` holds `Λ_k` for steps `k = 0..n` (extra trailing entries are ignored).
    pub fn new(
        lambda: &[f64],
        n_steps: usize,
        dt: f64,
        lambda_star: f64,
        y_hat: f64,
        loss_c: f64,
        order: usize,
    ) -> Result<Self> {
        if lambda.len() < n_steps {
            return Err(Error::InvalidArgument(
                "market price of risk shorter than the grid".into(),
            ));
        }
        let mut tail_var = vec![0.0; n_steps + 1];
        for k in (0..n_steps).rev() {
            tail_var[k] = tail_var[k + 1] + lambda[k] * lambda[k] * dt;
        }
        let ex = Self {
            lambda_star,
            y_hat,
            loss_c,
            tail_var,
            rule: Legendre::new(order)?,
        };
        ex.validate_quadrature()?;
        Ok(ex)
    }

    /// Builds the example for stratum `i` of a solved log/`−c/x` scenario.
    pub fn for_stratum(prep: &PreparedScenario, sol: &DualSolution, i: usize, order: usize) -> Result<Self> {
        let s = &prep.scenario;
        let c = match (&s.preferences.utility, &s.preferences.loss) {
            (UtilitySpec::Log, LossSpec::NegReciprocal { c }) => *c,
            _ => {
                return Err(Error::InvalidArgument(
                    "closed-form wealth needs log utility with the -c/x loss".into(),
                ))
            }
        };
        if !s.kind.knows_tau_initially() || !s.model.coeffs.is_time_only() {
            return Err(Error::InvalidArgument(
                "closed-form wealth needs an initially enlarged filtration and state-free coefficients".into(),
            ));
        }
        let cell = &sol.cells[i];
        let first = &prep.lambdas[cell.paths[0]].lambda;
        if cell.paths.iter().any(|&j| prep.lambdas[j].lambda != *first) {
            return Err(Error::InvalidArgument(
                "market price of risk is not deterministic within the stratum".into(),
            ));
        }
        let g = &s.grid;
        Self::new(
            first,
            g.n_steps,
            g.dt(),
            cell.solution.lambda_star,
            cell.solution.y_hat,
            c,
            order,
        )
    }

    pub fn n_steps(&self) -> usize {
        self.tail_var.len() - 1
    }

    /// `a = −½∫_t^T Λ² ds` at grid index `k`.
    pub fn a(&self, k: usize) -> f64 {
        -0.5 * self.tail_var[k]
    }

    /// `b = −(∫_t^T Λ² ds)^{1/2}` at grid index `k`.
    pub fn b(&self, k: usize) -> f64 {
        -self.tail_var[k].sqrt()
    }

    fn kappa(&self) -> f64 {
        4.0 * self.loss_c * self.lambda_star * self.y_hat
    }

    /// `E[g(a + bη)]` on the truncated Gaussian domain.
    fn gauss<G: Fn(f64) -> f64>(&self, rule: &Legendre, k: usize, g: G) -> f64 {
        let (a, b) = (self.a(k), self.b(k));
        if b == 0.0 {
            return g(a);
        }
        let half = 8.0 + b.abs();
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        rule.integrate(-half, half, |e| g(a + b * e) * norm * (-0.5 * e * e).exp())
    }

    fn f_with(&self, rule: &Legendre, z: f64, k: usize) -> f64 {
        let kz = self.kappa() * z;
        if kz == 0.0 {
            return 1.0 / (self.y_hat * z);
        }
        // √(1+w) − 1 = w / (1 + √(1+w)) keeps the integrand decaying
        let excess = self.gauss(rule, k, |s| {
            let w = kz * s.exp();
            w / (1.0 + (1.0 + w).sqrt())
        });
        (2.0 + excess) / (2.0 * self.y_hat * z)
    }

    /// `F(z, t_k)`.
    pub fn f(&self, z: f64, k: usize) -> f64 {
        self.f_with(&self.rule, z, k)
    }

    /// `∂F/∂z (z, t_k)`.
    pub fn f_z(&self, z: f64, k: usize) -> f64 {
        let kap = self.kappa();
        let kz = kap * z;
        let f = self.f(z, k);
        if kz == 0.0 {
            return -f / z;
        }
        let d = self.gauss(&self.rule, k, |s| {
            let e = s.exp();
            kap * e / (2.0 * (1.0 + kz * e).sqrt())
        });
        -f / z + d / (2.0 * self.y_hat * z)
    }

    /// Compares the working rule with one of twice the order on probe points.
    pub fn validate_quadrature(&self) -> Result<()> {
        let fine = Legendre::new(2 * self.rule.order())?;
        let n = self.n_steps();
        for k in [0, n / 2, n.saturating_sub(1)] {
            for z in [0.05, 0.3, 1.0, 3.0, 20.0] {
                let (lo, hi) = (self.f_with(&self.rule, z, k), self.f_with(&fine, z, k));
                if !((lo - hi).abs() <= 1e-6 * hi.abs()) {
                    return Err(Error::QuadratureFailure(format!("F({z}, step {k}): {lo} vs {hi}")));
                }
            }
        }
        Ok(())
    }
}

/// `X̂(t_k) = F(Z_{t_k}, t_k)` along one density path.
pub fn wealth_path_closed_form(example: &ClosedFormExample, z_path: &DensityPath) -> WealthPath {
    let x_hat = z_path.z.iter().enumerate().map(|(k, &z)| example.f(z, k)).collect();
    WealthPath {
        path: z_path.path,
        x_hat,
        method: WealthMethod::ClosedForm,
    }
}

/// `π̂_t = −σ⁻¹ Λ Z F_z(Z, t)` along one density path.
pub fn strategy_closed_form(
    example: &ClosedFormExample,
    z_path: &DensityPath,
    lam: &MarketPriceOfRisk,
) -> StrategyPath {
    let n = example.n_steps();
    let pi_hat = (0..n)
        .map(|k| {
            let z = z_path.z[k];
            -lam.lambda[k] / lam.sigma[k] * z * example.f_z(z, k)
        })
        .collect();
    StrategyPath {
        path: z_path.path,
        pi_hat,
    }
}

/// Powers of `Z_t` used as regression features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub powers: Vec<f64>,
    /// Singular values below `rcond · s_max` are discarded (reduced basis).
    pub rcond: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            powers: vec![0.0, 1.0, -1.0, 2.0, 0.5, -0.5],
            rcond: 1e-12,
        }
    }
}

/// Conditioning feature beyond `Z_t`: the posterior for the price
/// filtration, the observed regime indicator for the enlarged ones.
fn extra_feature(_kind: &FiltrationKind, lam: &MarketPriceOfRisk, k: usize) -> Option<f64> {
    Some(lam.p[k])
}

fn design_row(basis: &BasisSpec, z: f64, extra: Option<f64>) -> Vec<f64> {
    let base: Vec<f64> = basis
        .powers
        .iter()
        .map(|&p| if p == 0.0 { 1.0 } else { z.powf(p) })
        .collect();
    match extra {
        Some(e) => base.iter().copied().chain(base.iter().map(|b| b * e)).collect(),
        None => base,
    }
}

/// Least squares with column scaling and truncated pseudo-inverse; returns
/// the coefficients of the unscaled columns.
///
/// The tall design is reduced by Householder QR first; the pseudo-inverse is
/// taken on the small triangular factor, which keeps exactly collinear
/// columns (e.g. a constant density) harmless.
fn fit_coefficients(rows: &[Vec<f64>], y: &[f64], rcond: f64) -> Result<Vec<f64>> {
    let (n, m) = (rows.len(), rows[0].len());
    let mut scale = vec![0.0; m];
    for r in rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s += v * v;
        }
    }
    let scale: Vec<f64> = scale
        .iter()
        .map(|s| if *s > 0.0 { (s / n as f64).sqrt() } else { 1.0 })
        .collect();
    let a = DMatrix::from_fn(n, m, |i, j| rows[i][j] / scale[j]);
    if !a.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("regression inputs".into()));
    }
    let k = n.min(m);
    let qr = a.qr();
    let mut qtb = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let rhs = qtb.rows(0, k).into_owned();
    let coef = truncated_solve(&r, &rhs, rcond)?;
    Ok(coef.iter().zip(&scale).map(|(c, s)| c / s).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fitted values of [`fit_coefficients`].
fn fit(rows: &[Vec<f64>], y: &[f64], rcond: f64) -> Result<Vec<f64>> {
    let coef = fit_coefficients(rows, y, rcond)?;
    Ok(rows.iter().map(|r| dot(r, &coef)).collect())
}

/// Minimum-norm solution of the small system `R c = b`, discarding
/// directions with singular value below `rcond · s_max`.
fn truncated_solve(r: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    let norm = r.norm();
    if !(norm > 0.0) {
        return Err(Error::IllConditioned("design matrix is zero".into()));
    }
    let svd = r.clone().svd(true, true);
    if let (Some(u), Some(vt)) = (&svd.u, &svd.v_t) {
        let rec = u * DMatrix::from_diagonal(&svd.singular_values) * vt;
        if (rec - r).norm() <= 1e-10 * norm {
            let smax = svd.singular_values.max();
            return svd
                .solve(b, rcond * smax)
                .map_err(|e| Error::IllConditioned(e.to_string()));
        }
    }
    // normal equations of the small factor, truncated on squared singular values
    let g = r.transpose() * r;
    let rhs = r.transpose() * b;
    let eig = g.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let mut coef = DVector::zeros(r.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > rcond * rcond * lmax {
            let v = eig.eigenvectors.column(i);
            coef += v * (v.dot(&rhs) / l);
        }
    }
    Ok(coef)
}

/// Backward regression `X̂(t_k) = E[(Z_{k+1}/Z_k) X̂(t_{k+1}) | F_k]` from
/// `X̂(T) = R̂`, per stratum.
///
/// One-step targets make `Z X̂` a martingale slice to slice, so the fitted
/// wealth carries the drift the hedge earns. The basis contains `z`, hence
/// `mean(Z_t X̂(t)) = x` on every slice and `X̂(0) = x` up to rounding.
pub fn wealth_path_regression(
    prep: &PreparedScenario,
    sol: &DualSolution,
    basis: &BasisSpec,
) -> Result<Vec<WealthPath>> {
    let n_steps = prep.scenario.grid.n_steps;
    let n_paths = prep.paths.len();
    let mut x_hat = vec![vec![0.0; n_steps + 1]; n_paths];
    let cells: Vec<Result<Vec<Vec<f64>>>> = sol
        .cells
        .par_iter()
        .map(|cell| {
            let idx = &cell.paths;
            let mut slices = vec![Vec::new(); n_steps + 1];
            slices[n_steps] = idx.iter().map(|&j| sol.r_hat[j]).collect();
            for k in (0..n_steps).rev() {
                let y: Vec<f64> = idx
                    .iter()
                    .zip(&slices[k + 1])
                    .map(|(&j, &next)| {
                        let d = &prep.densities[j];
                        (d.log_z[k + 1] - d.log_z[k]).exp() * next
                    })
                    .collect();
                slices[k] = if k == 0 {
                    // F_0 is trivial within a stratum
                    vec![sol.x; idx.len()]
                } else {
                    let rows: Vec<Vec<f64>> = idx
                        .iter()
                        .map(|&j| {
                            design_row(
                                basis,
                                prep.densities[j].z[k],
                                extra_feature(&prep.scenario.kind, &prep.lambdas[j], k),
                            )
                        })
                        .collect();
                    fit(&rows, &y, basis.rcond)?
                };
            }
            Ok(slices)
        })
        .collect();
    for (cell, slices) in sol.cells.iter().zip(cells) {
        for (k, s) in slices?.into_iter().enumerate() {
            for (v, &j) in s.into_iter().zip(&cell.paths) {
                x_hat[j][k] = v;
            }
        }
    }
    Ok(x_hat
        .into_iter()
        .enumerate()
        .map(|(path, x_hat)| WealthPath {
            path,
            x_hat,
            method: WealthMethod::Regression,
        })
        .collect())
}

/// Regression deltas: `X̂_{k+1} − X̂_k` is regressed jointly on `φ(Z_k)` and
/// `φ(Z_k) σ_k ΔŴ_k`, and `π̂_k` is the fitted slope on the second block.
///
/// The slope estimates `E[ΔX̂ ΔS̃ | F_k] / E[ΔS̃² | F_k]`, the locally
/// risk-minimizing ratio of the discrete problem; fitting the drift block
/// alongside keeps the squared-increment noise out of the slope.
pub fn strategy_regression(
    prep: &PreparedScenario,
    sol: &DualSolution,
    wealth: &[WealthPath],
    basis: &BasisSpec,
) -> Result<Vec<StrategyPath>> {
    let n_steps = prep.scenario.grid.n_steps;
    let n_paths = prep.paths.len();
    let mut pi = vec![vec![0.0; n_steps]; n_paths];
    for cell in &sol.cells {
        let idx = &cell.paths;
        let slices: Vec<Result<Vec<f64>>> = (0..n_steps)
            .into_par_iter()
            .map(|k| {
                let phi: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|&j| {
                        design_row(
                            basis,
                            prep.densities[j].z[k],
                            extra_feature(&prep.scenario.kind, &prep.lambdas[j], k),
                        )
                    })
                    .collect();
                let rows: Vec<Vec<f64>> = idx
                    .iter()
                    .zip(&phi)
                    .map(|(&j, f)| {
                        let shock = prep.lambdas[j].sigma[k] * prep.densities[j].dw_hat[k];
                        f.iter().copied().chain(f.iter().map(|v| v * shock)).collect()
                    })
                    .collect();
                let y: Vec<f64> = idx
                    .iter()
                    .map(|&j| wealth[j].x_hat[k + 1] - wealth[j].x_hat[k])
                    .collect();
                let coef = fit_coefficients(&rows, &y, basis.rcond)?;
                let slope = &coef[phi[0].len()..];
                Ok(phi.iter().map(|f| dot(f, slope)).collect())
            })
            .collect();
        for (k, s) in slices.into_iter().enumerate() {
            for (v, &j) in s?.into_iter().zip(idx) {
                pi[j][k] = v;
            }
        }
    }
    Ok(pi
        .into_iter()
        .enumerate()
        .map(|(path, pi_hat)| StrategyPath { path, pi_hat })
        .collect())
}

/// `x + Σ π_k ΔS̃_k`.
pub fn replicate(strategy: &StrategyPath, path: &PathBundle, x: f64) -> f64 {
    x + strategy
        .pi_hat
        .iter()
        .enumerate()
        .map(|(k, p)| p * path.ds_tilde(k))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub n_paths: usize,
    pub rmse: f64,
    pub mean_r_hat: f64,
    /// `rmse / mean(R̂)`.
    pub relative_rmse: f64,
    pub max_abs_deviation: f64,
}

pub fn replication_report(terminal: &[f64], r_hat: &[f64]) -> ReplicationReport {
    let n = terminal.len();
    let sq: f64 = terminal.iter().zip(r_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let rmse = (sq / n as f64).sqrt();
    let mean_r_hat = r_hat.iter().sum::<f64>() / n as f64;
    let max_abs_deviation = terminal
        .iter()
        .zip(r_hat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ReplicationReport {
        n_paths: n,
        rmse,
        mean_r_hat,
        relative_rmse: rmse / mean_r_hat,
        max_abs_deviation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    /// Correlation of the hedge residual with `Σ h(t_k, Z_k) ΔŴ_k` for each test function.
    pub correlations: Vec<f64>,
    pub max_abs_correlation: f64,
    pub residual_rms: f64,
}

/// Hedge residuals `R̂ − x − Σ π̂ ΔS̃` tested against the integrals of
/// `h ∈ {1, Z, 1/Z, t, tZ}` with respect to the innovation.
pub fn orthogonality_check(
    prep: &PreparedScenario,
    sol: &DualSolution,
    strategies: &[StrategyPath],
) -> OrthogonalityReport {
    let grid = &prep.scenario.grid;
    let tests: [fn(f64, f64) -> f64; 5] = [|_, _| 1.0, |_, z| z, |_, z| 1.0 / z, |t, _| t, |t, z| t * z];
    let residual: Vec<f64> = strategies
        .iter()
        .map(|s| sol.r_hat[s.path] - replicate(s, &prep.paths[s.path], sol.x))
        .collect();
    let correlations: Vec<f64> = tests
        .iter()
        .map(|h| {
            let integ: Vec<f64> = strategies
                .iter()
                .map(|s| {
                    let d = &prep.densities[s.path];
                    (0..grid.n_steps).map(|k| h(grid.time(k), d.z[k]) * d.dw_hat[k]).sum()
                })
                .collect();
            correlation(&residual, &integ)
        })
        .collect();
    let max_abs_correlation = correlations.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let residual_rms = (residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64).sqrt();
    OrthogonalityReport {
        correlations,
        max_abs_correlation,
        residual_rms,
    }
}
