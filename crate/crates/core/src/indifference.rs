//! Utility indifference value of information: the capital `c` with
//! `u(F, x) = u(G, x − c)` for a coarse filtration `F ⊆ G`.
//!
//! For `U(x) = 1 − 1/x` with the `−3/x` loss the value is explicit,
//! `c = (1 − (E√Z^G_T / E√Z^F_T)²) x`; for other preferences it is found by
//! bisection in `c`, solving the dual problem for `G` at every trial capital.

use serde::{Deserialize, Serialize};

use crate::dual::{estimate_eps_bounds, solve_dual_with_bounds, EpsPolicy};
use crate::error::{Error, Result};
use crate::scenario::PreparedScenario;
use crate::stats::MeanEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UivMethod {
    ClosedForm,
    RootSolve,
}

/// How the two density samples relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCoupling {
    Independent,
    /// Entry `i` of both samples comes from the same simulated path.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumValue {
    pub cell: usize,
    pub weight: f64,
    pub c: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndifferenceResult {
    /// Prior-weighted value (the stratum value when there is one stratum).
    pub c: f64,
    pub stderr: f64,
    pub method: UivMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(String, String)>,
    pub per_stratum: Vec<StratumValue>,
}

fn mean_sqrt(z: &[f64]) -> MeanEstimate {
    let s: Vec<f64> = z.iter().map(|v| v.sqrt()).collect();
    MeanEstimate::from_samples(&s)
}

/// Closed-form value and delta-method standard error for one pair of samples.
pub fn uiv_closed_form(z_f: &[f64], z_g: &[f64], x: f64, coupling: SampleCoupling) -> Result<IndifferenceResult> {
    let (c, se) = closed_form_cell(z_f, z_g, x, coupling)?;
    Ok(IndifferenceResult {
        c,
        stderr: se,
        method: UivMethod::ClosedForm,
        pair: None,
        per_stratum: vec![StratumValue {
            cell: 0,
            weight: 1.0,
            c,
            stderr: se,
        }],
    })
}

fn closed_form_cell(z_f: &[f64], z_g: &[f64], x: f64, coupling: SampleCoupling) -> Result<(f64, f64)> {
    if z_f.is_empty() || z_g.is_empty() {
        return Err(Error::InvalidArgument("empty density sample".into()));
    }
    if !(x > 0.0) {
        return Err(Error::InvalidArgument("capital must be positive".into()));
    }
    let (mf, mg) = (mean_sqrt(z_f), mean_sqrt(z_g));
    let ratio = mg.mean / mf.mean;
    let c = (1.0 - ratio * ratio) * x;
    // ∂c/∂m_F = 2 m_G²/m_F³ x, ∂c/∂m_G = −2 m_G/m_F² x
    let (df, dg) = (2.0 * ratio * ratio / mf.mean * x, -2.0 * ratio / mf.mean * x);
    let var = match coupling {
        SampleCoupling::Independent => (df * mf.stderr).powi(2) + (dg * mg.stderr).powi(2),
        SampleCoupling::Paired => {
            if z_f.len() != z_g.len() {
                return Err(Error::InvalidArgument("paired samples must have equal length".into()));
            }
            let lin: Vec<f64> = z_f
                .iter()
                .zip(z_g)
                .map(|(f, g)| df * f.sqrt() + dg * g.sqrt())
                .collect();
            MeanEstimate::from_samples(&lin).stderr.powi(2)
        }
    };
    let se = var.sqrt();
    let noise = (mf.stderr.powi(2) + mg.stderr.powi(2)).sqrt();
    if mf.mean < mg.mean - 3.0 * noise {
        return Err(Error::OrderViolation {
            coarse: mf.mean,
            fine: mg.mean,
        });
    }
    Ok((c, se))
}

/// Index sets of the coarse scenario matching each stratum of the fine one.
fn coarse_cells(f: &PreparedScenario, g: &PreparedScenario) -> Vec<Vec<usize>> {
    g.strata
        .iter()
        .map(|gs| {
            match f
                .strata
                .iter()
                .find(|fs| fs.cell == gs.cell && f.strata.len() == g.strata.len())
            {
                Some(fs) => fs.paths.clone(),
                None => (0..f.paths.len()).collect(),
            }
        })
        .collect()
}

fn check_common(f: &PreparedScenario, g: &PreparedScenario) -> Result<()> {
    if !std::sync::Arc::ptr_eq(&f.paths, &g.paths) && f.paths.len() != g.paths.len() {
        return Err(Error::InvalidArgument("scenarios must share one path set".into()));
    }
    Ok(())
}

/// Closed form on two prepared scenarios sharing a path set; the fine
/// scenario's strata give per-stratum values.
pub fn uiv_closed_form_prepared(f: &PreparedScenario, g: &PreparedScenario, x: f64) -> Result<IndifferenceResult> {
    check_common(f, g)?;
    let (zf, zg) = (f.terminal_z(), g.terminal_z());
    let mut per = Vec::new();
    for (gs, fidx) in g.strata.iter().zip(coarse_cells(f, g)) {
        let zgc: Vec<f64> = gs.paths.iter().map(|&j| zg[j]).collect();
        let zfc: Vec<f64> = fidx.iter().map(|&j| zf[j]).collect();
        let coupling = if fidx == gs.paths {
            SampleCoupling::Paired
        } else {
            SampleCoupling::Independent
        };
        let (c, se) = closed_form_cell(&zfc, &zgc, x, coupling)?;
        per.push(StratumValue {
            cell: gs.cell,
            weight: gs.weight,
            c,
            stderr: se,
        });
    }
    Ok(aggregate(per, UivMethod::ClosedForm, f, g))
}

fn aggregate(
    per: Vec<StratumValue>,
    method: UivMethod,
    f: &PreparedScenario,
    g: &PreparedScenario,
) -> IndifferenceResult {
    let c = per.iter().map(|s| s.weight * s.c).sum();
    let se = per.iter().map(|s| (s.weight * s.stderr).powi(2)).sum::<f64>().sqrt();
    let pair = Some((f.scenario.kind.label().to_string(), g.scenario.kind.label().to_string()));
    IndifferenceResult {
        c,
        stderr: se,
        method,
        pair,
        per_stratum: per,
    }
}

/// Options of the bisection in `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSolveOptions {
    /// `|u(G, x) − u(F, x)|` below this counts as "no information gain".
    pub value_tol: f64,
    /// Stop when the bracket is shorter than `xtol · x`.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for RootSolveOptions {
    fn default() -> Self {
        Self {
            value_tol: 1e-12,
            xtol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Mean utility of the fine scenario's stratum at capital `capital` with the
/// benchmark `eps`; an infeasible benchmark yields `−∞`.
fn fine_value(g: &PreparedScenario, cell: usize, capital: f64, eps: f64) -> Result<(f64, Vec<f64>, f64)> {
    let p = g.cell_problem(cell, capital)?;
    let bounds = estimate_eps_bounds(&p, g.scenario.tol)?;
    match solve_dual_with_bounds(&p, eps, bounds, g.scenario.tol) {
        Ok(sol) => {
            let us: Vec<f64> = sol
                .r_hat
                .iter()
                .map(|&r| g.scenario.preferences.utility.value(r))
                .collect();
            Ok((us.iter().sum::<f64>() / us.len() as f64, us, sol.y_hat))
        }
        Err(Error::Infeasible { .. }) => Ok((f64::NEG_INFINITY, Vec::new(), f64::NAN)),
        Err(e) => Err(e),
    }
}

/// Solves `u(F, x) = u(G, x − c)` stratum by stratum on a common path set.
///
/// The benchmark is resolved once from `policy` on the coarse problem at
/// capital `x` and then held fixed for every trial capital of the fine one.
///
/// Sampling noise can leave `c` slightly negative for nested pairs; the
/// bracket then extends below zero.
pub fn uiv_root_solve(
    f: &PreparedScenario,
    g: &PreparedScenario,
    x: f64,
    policy: &EpsPolicy,
    opts: RootSolveOptions,
) -> Result<IndifferenceResult> {
    check_common(f, g)?;
    let fine_cells = coarse_cells(f, g);
    let sol_f = f.solve_at(x, policy)?;
    let util = &f.scenario.preferences.utility;
    let mut per = Vec::new();
    for (ci, (gs, fidx)) in g.strata.iter().zip(&fine_cells).enumerate() {
        // coarse cell holding these paths
        let fcell = sol_f.cells.iter().find(|c| c.paths == *fidx).unwrap_or(&sol_f.cells[0]);
        let eps = fcell.solution.eps;
        let uf_samples: Vec<f64> = fidx.iter().map(|&j| util.value(sol_f.r_hat[j])).collect();
        let uf = uf_samples.iter().sum::<f64>() / uf_samples.len() as f64;
        let h = |c: f64| -> Result<(f64, Vec<f64>, f64)> {
            let (u, us, y) = fine_value(g, ci, x - c, eps)?;
            Ok((u - uf, us, y))
        };
        let (h0, _, _) = h(0.0)?;
        let c_root = if h0.abs() <= opts.value_tol {
            0.0
        } else {
            // bracket with h(lo) > 0 ≥ h(hi); a negative value means G needs extra capital
            let (mut lo, mut hi) = if h0 > 0.0 {
                let hi = x * (1.0 - 1e-9);
                if h(hi)?.0 > 0.0 {
                    return Err(Error::NoRoot { lo: 0.0, hi });
                }
                (0.0, hi)
            } else {
                let mut lo = -x;
                while h(lo)?.0 <= 0.0 {
                    if lo < -1024.0 * x {
                        return Err(Error::NoRoot { lo, hi: 0.0 });
                    }
                    lo *= 2.0;
                }
                (lo, 0.0)
            };
            for _ in 0..opts.max_iter {
                if hi - lo <= opts.xtol * x {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if h(mid)?.0 > 0.0 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            lo
        };
        // standard error: paired difference of utilities over the marginal value ŷ
        let (_, ug, y) = h(c_root)?;
        let se = if ug.len() == gs.paths.len() && fidx == &gs.paths && y.is_finite() {
            let d: Vec<f64> = ug.iter().zip(&uf_samples).map(|(a, b)| a - b).collect();
            MeanEstimate::from_samples(&d).stderr / y
        } else {
            let sf = MeanEstimate::from_samples(&uf_samples).stderr;
            let sg = if ug.is_empty() {
                0.0
            } else {
                MeanEstimate::from_samples(&ug).stderr
            };
            (sf * sf + sg * sg).sqrt() / if y.is_finite() { y } else { 1.0 }
        };
        per.push(StratumValue {
            cell: gs.cell,
            weight: gs.weight,
            c: c_root,
            stderr: se,
        });
    }
    Ok(aggregate(per, UivMethod::RootSolve, f, g))
}
