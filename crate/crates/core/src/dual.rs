//! Dual solution of the risk-constrained utility maximization on a fixed,
//! weighted sample of terminal densities `Z_T`.
//!
//! For a multiplier `λ ≥ 0` the budget multiplier `ŷ(λ)` solves
//! `E[Z_T Ĩ_λ(ŷ Z_T)] = x`; the risk curve is `k(λ) = E[L(−Ĩ_λ(ŷ(λ) Z_T))]`.
//! `k` decreases from `ε_max = k(0)` towards `ε_min`, and the constrained
//! optimum uses the `λ*` with `k(λ*) = ε`. Every expectation is an ordered
//! weighted sum over the sample, so all targets are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preferences::{loss_marginal_inverse_h, CombinedLagrangian, Preferences};
use crate::quadrature::normal_rule;
use crate::roots::{brent, expand_down, expand_up, RootOptions};
use crate::stats::ordered_sum;

/// Default relative tolerance of the solver targets.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DOUBLINGS: usize = 200;

/// How the risk benchmark `ε` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsPolicy {
    Absolute {
        eps: f64,
    },
    /// `ε = ε_min + q (ε_max − ε_min)` from the sample's own bounds.
    QuantileBetweenBounds {
        q: f64,
    },
}

impl EpsPolicy {
    pub fn resolve(&self, bounds: &EpsBounds) -> Result<f64> {
        match *self {
            EpsPolicy::Absolute { eps } if eps.is_finite() => Ok(eps),
            EpsPolicy::Absolute { eps } => Err(Error::InvalidArgument(format!("eps must be finite, got {eps}"))),
            EpsPolicy::QuantileBetweenBounds { q } if (0.0..=1.0).contains(&q) => {
                Ok(bounds.eps_min + q * (bounds.eps_max - bounds.eps_min))
            }
            EpsPolicy::QuantileBetweenBounds { q } => Err(Error::OutOfRange {
                value: q,
                lo: 0.0,
                hi: 1.0,
            }),
        }
    }
}

/// Weighted sample of terminal densities for one `F₀`-atom.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub preferences: Preferences,
    pub x: f64,
    pub z: Vec<f64>,
    /// Probabilities of the sample points; they sum to one.
    pub weights: Vec<f64>,
}

impl DualProblem {
    /// Equally weighted Monte Carlo sample.
    pub fn new(preferences: Preferences, x: f64, z: Vec<f64>) -> Result<Self> {
        let n = z.len();
        Self::weighted(preferences, x, z, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn weighted(preferences: Preferences, x: f64, z: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "initial capital must be positive, got {x}"
            )));
        }
        if z.is_empty() || z.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "density sample must be nonempty with matching weights".into(),
            ));
        }
        if z.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::NonFinite("density sample must be positive and finite".into()));
        }
        preferences.validate()?;
        Ok(Self {
            preferences,
            x,
            z,
            weights,
        })
    }

    /// Lognormal `Z_T = exp(−v/2 + √v η)` discretized by a Gauss–Hermite rule.
    pub fn lognormal(preferences: Preferences, x: f64, v: f64, order: usize) -> Result<Self> {
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument("lognormal variance must be nonnegative".into()));
        }
        let rule = normal_rule(order)?;
        let z = rule.iter().map(|(e, _)| (-0.5 * v + v.sqrt() * e).exp()).collect();
        let w = rule.iter().map(|(_, w)| *w).collect();
        Self::weighted(preferences, x, z, w)
    }

    pub fn with_capital(&self, x: f64) -> Result<Self> {
        Self::weighted(self.preferences.clone(), x, self.z.clone(), self.weights.clone())
    }

    /// `Σ w_i f(z_i)`; a non-finite term turns the result non-finite.
    pub fn expect<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> f64 {
        ordered_sum(&self.z, |i, z| self.weights[i] * f(z))
    }

    fn lagrangian(&self, lam: f64) -> CombinedLagrangian {
        self.preferences.lagrangian(lam)
    }
}

fn inv(cl: &CombinedLagrangian, y: f64) -> f64 {
    cl.inverse(y).unwrap_or(f64::NAN)
}

/// `E[Z Ĩ_λ(y Z)]`.
pub fn budget_curve(p: &DualProblem, lam: f64, y: f64) -> Result<f64> {
    let cl = p.lagrangian(lam);
    let v = p.expect(|z| z * inv(&cl, y * z));
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("budget curve at lambda={lam}, y={y}")))
    }
}

/// `ŷ(λ)` with `|E[Z Ĩ_λ(ŷ Z)] − x| ≤ tol·x`.
pub fn solve_budget_multiplier(p: &DualProblem, lam: f64, tol: f64) -> Result<f64> {
    let x = p.x;
    let cl = p.lagrangian(lam);
    // strictly decreasing in y; NaN propagates to the bracket search as an error
    let g = |y: f64| p.expect(|z| z * inv(&cl, y * z)) - x;
    let g1 = g(1.0);
    let (lo, hi) = if g1.is_nan() {
        return Err(Error::NonFinite(format!("budget curve at lambda={lam}, y=1")));
    } else if g1 > 0.0 {
        expand_up(g, 1.0, 2.0, MAX_DOUBLINGS, true)?
    } else {
        expand_down(g, 1.0, 2.0, MAX_DOUBLINGS, false)?
    };
    if lo == hi {
        return Ok(lo);
    }
    let opts = RootOptions {
        xtol: 0.0,
        rtol: 4.0 * f64::EPSILON,
        ftol: 1e-3 * tol * x,
        max_iter: 400,
    };
    let s = brent(|s| g(s.exp()), lo.ln(), hi.ln(), opts)?;
    let y = s.exp();
    let res = g(y);
    if !(res.abs() <= tol * x) {
        return Err(Error::NoConvergence(format!("budget residual {res} at lambda={lam}")));
    }
    Ok(y)
}

/// One point of the risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskPoint {
    pub lambda: f64,
    pub y_hat: f64,
    pub k: f64,
}

/// `k(λ) = E[L(−Ĩ_λ(ŷ(λ) Z))]`.
pub fn risk_curve(p: &DualProblem, lam: f64, tol: f64) -> Result<RiskPoint> {
    let y = solve_budget_multiplier(p, lam, tol)?;
    let cl = p.lagrangian(lam);
    let k = p.expect(|z| p.preferences.loss_of_wealth(inv(&cl, y * z)));
    if !k.is_finite() {
        return Err(Error::NonFinite(format!("risk curve at lambda={lam}")));
    }
    Ok(RiskPoint {
        lambda: lam,
        y_hat: y,
        k,
    })
}

/// Feasibility band of the risk benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsBounds {
    pub eps_min: f64,
    pub eps_max: f64,
    pub c_star: f64,
}

/// `ε_max = k(0)`; `c*` solves `x = E[−Z H(c Z)]` and `ε_min = E[L(H(c* Z))]`.
pub fn estimate_eps_bounds(p: &DualProblem, tol: f64) -> Result<EpsBounds> {
    let eps_max = risk_curve(p, 0.0, tol)?.k;
    let loss = &p.preferences.loss;
    let top = loss.marginal_at_zero();
    let h = |e: f64| loss_marginal_inverse_h(loss, e).unwrap_or(f64::NAN);
    // −H is decreasing, so g is decreasing in c
    let g = |c: f64| p.expect(|z| -z * h(c * z)) - p.x;
    let (lo, hi) = if top.is_finite() {
        let zmax = p.z.iter().copied().fold(0.0, f64::max);
        let c_hi = top / zmax * (1.0 - 1e-12);
        let g_hi = g(c_hi);
        if g_hi.is_nan() || g_hi > 0.0 {
            let zmin = p.z.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(Error::OutOfRange {
                value: c_hi * zmin,
                lo: 0.0,
                hi: top,
            });
        }
        expand_down(g, c_hi, 2.0, 2 * MAX_DOUBLINGS, false)?
    } else {
        let g1 = g(1.0);
        if g1 > 0.0 {
            expand_up(g, 1.0, 2.0, 2 * MAX_DOUBLINGS, true)?
        } else {
            expand_down(g, 1.0, 2.0, 2 * MAX_DOUBLINGS, false)?
        }
    };
    let c_star = if lo == hi {
        lo
    } else {
        let opts = RootOptions {
            xtol: 0.0,
            rtol: 4.0 * f64::EPSILON,
            ftol: 1e-3 * tol * p.x,
            max_iter: 400,
        };
        brent(|s| g(s.exp()), lo.ln(), hi.ln(), opts)?.exp()
    };
    let eps_min = p.expect(|z| loss.value(h(c_star * z)));
    if !eps_min.is_finite() {
        return Err(Error::NonFinite("eps_min".into()));
    }
    // the sample versions obey the ordering only up to rounding
    Ok(EpsBounds {
        eps_min: eps_min.min(eps_max),
        eps_max,
        c_star,
    })
}

/// Solution on one `F₀`-atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSolution {
    pub lambda_star: f64,
    pub y_hat: f64,
    /// Benchmark actually enforced (after policy resolution and clamping).
    pub eps: f64,
    pub budget_residual: f64,
    pub risk_residual: f64,
    pub bounds: EpsBounds,
    pub binding: bool,
    /// `Ĩ_{λ*}(ŷ z_i)` for every sample point.
    #[serde(skip)]
    pub r_hat: Vec<f64>,
}

fn boundary_band(b: &EpsBounds) -> f64 {
    1e-9 * b.eps_min.abs().max(b.eps_max.abs()).max(f64::MIN_POSITIVE)
}

/// Solves for `(λ*, ŷ)` at the benchmark chosen by `policy`.
pub fn solve_dual(p: &DualProblem, policy: &EpsPolicy, tol: f64) -> Result<CellSolution> {
    let bounds = estimate_eps_bounds(p, tol)?;
    let requested = policy.resolve(&bounds)?;
    solve_dual_with_bounds(p, requested, bounds, tol)
}

/// As [`solve_dual`] with precomputed bounds and an absolute benchmark.
pub fn solve_dual_with_bounds(p: &DualProblem, eps: f64, bounds: EpsBounds, tol: f64) -> Result<CellSolution> {
    let band = boundary_band(&bounds);
    if eps >= bounds.eps_max - band {
        return finish(p, 0.0, eps, bounds, false, tol);
    }
    if eps < bounds.eps_min - band {
        return Err(Error::Infeasible {
            eps,
            eps_min: bounds.eps_min,
        });
    }
    // clamp benchmarks at the (asymptotic) lower end into the reachable range
    let target = eps.max(bounds.eps_min + 1e-6 * (bounds.eps_max - bounds.eps_min));
    let k = |lam: f64| risk_curve(p, lam, tol).map(|r| r.k - target);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut steps = 0;
    loop {
        let v = k(hi)?;
        if v < 0.0 {
            break;
        }
        if v == 0.0 {
            return finish(p, hi, target, bounds, true, tol);
        }
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > MAX_DOUBLINGS {
            return Err(Error::Infeasible {
                eps,
                eps_min: bounds.eps_min,
            });
        }
    }
    let mut failure = None;
    let opts = RootOptions {
        xtol: 0.0,
        rtol: 4.0 * f64::EPSILON,
        ftol: 1e-2 * tol * target.abs(),
        max_iter: 400,
    };
    let lam = brent(
        |l| match k(l) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        lo,
        hi,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    finish(p, lam?, target, bounds, true, tol)
}

fn finish(p: &DualProblem, lam: f64, eps: f64, bounds: EpsBounds, binding: bool, tol: f64) -> Result<CellSolution> {
    let y = solve_budget_multiplier(p, lam, tol)?;
    let cl = p.lagrangian(lam);
    let r_hat: Vec<f64> = p.z.iter().map(|z| cl.inverse(y * z)).collect::<Result<_>>()?;
    let budget = ordered_sum(&r_hat, |i, r| p.weights[i] * p.z[i] * r);
    let risk = ordered_sum(&r_hat, |i, r| p.weights[i] * p.preferences.loss_of_wealth(r));
    Ok(CellSolution {
        lambda_star: lam,
        y_hat: y,
        eps,
        budget_residual: budget - p.x,
        risk_residual: risk - eps,
        bounds,
        binding,
        r_hat,
    })
}
