//! Change-point market: coefficient functions, the law of the change point,
//! and Euler–Maruyama simulation of the log-dynamics.
//!
//! The log-dynamics follow
//! `dS̃ = 1{t≤τ}(μ¹ dt + σ¹ dW) + 1{t>τ}(μ² dt + σ² dW)`, `S̃_0 = 0`,
//! and the price is the stochastic exponential `S = s0 · exp(S̃ − ½[S̃])`.
//! The change point is independent of the driving Brownian motion.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::path_stream;

/// One drift or volatility function of `(t, x)`.
///
/// Tables interpolate linearly and extrapolate flat. A repeated breakpoint
/// encodes a jump; the right-hand value applies at the breakpoint itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant {
        value: f64,
    },
    TimeTable {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `values[i][j]` is the value at `(times[i], states[j])`.
    Bilinear {
        times: Vec<f64>,
        states: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

/// Segment `(j, w)` such that `v(x) = (1-w)·v[j] + w·v[j+1]`, flat outside.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, 0.0);
    }
    let j = grid.partition_point(|&g| g <= x) - 1;
    let span = grid[j + 1] - grid[j];
    (j, (x - grid[j]) / span)
}

fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let (j, w) = locate(grid, x);
    if w == 0.0 {
        values[j]
    } else {
        (1.0 - w) * values[j] + w * values[j + 1]
    }
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::TimeTable { times, values } => interp(times, values, t),
            Coefficient::Bilinear { times, states, values } => {
                let (i, w) = locate(times, t);
                let lo = interp(states, &values[i], x);
                if w == 0.0 {
                    lo
                } else {
                    (1.0 - w) * lo + w * interp(states, &values[i + 1], x)
                }
            }
        }
    }

    /// Whether the function ignores its state argument.
    pub fn is_state_free(&self) -> bool {
        !matches!(self, Coefficient::Bilinear { .. })
    }

    fn validate(&self, name: &str) -> Result<()> {
        let sorted = |g: &[f64]| g.windows(2).all(|w| w[0] <= w[1]);
        let bad = |msg: String| Err(Error::InvalidModel(format!("{name}: {msg}")));
        match self {
            Coefficient::Constant { value } if !value.is_finite() => bad("non-finite constant".into()),
            Coefficient::Constant { .. } => Ok(()),
            Coefficient::TimeTable { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad("time table needs matching non-empty breakpoints and values".into());
                }
                if !sorted(times) || values.iter().any(|v| !v.is_finite()) {
                    return bad("time table must be sorted and finite".into());
                }
                Ok(())
            }
            Coefficient::Bilinear { times, states, values } => {
                if times.is_empty() || states.is_empty() || values.len() != times.len() {
                    return bad("bilinear table shape mismatch".into());
                }
                if values.iter().any(|row| row.len() != states.len()) {
                    return bad("bilinear row length must equal number of states".into());
                }
                if !sorted(times) || !sorted(states) {
                    return bad("bilinear grids must be sorted".into());
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("non-finite table entry".into());
                }
                Ok(())
            }
        }
    }

    /// Lower bound of the function over its whole domain (exact for tables).
    fn infimum(&self) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::TimeTable { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
            Coefficient::Bilinear { values, .. } => values.iter().flatten().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Regime coefficients: `(mu1, sigma1)` before the change point, `(mu2, sigma2)` after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub mu1: Coefficient,
    pub mu2: Coefficient,
    pub sigma1: Coefficient,
    pub sigma2: Coefficient,
}

impl CoefficientSpec {
    pub fn constant(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64) -> Self {
        Self {
            mu1: Coefficient::constant(mu1),
            mu2: Coefficient::constant(mu2),
            sigma1: Coefficient::constant(sigma1),
            sigma2: Coefficient::constant(sigma2),
        }
    }

    pub fn drift(&self, post_change: bool, t: f64, x: f64) -> f64 {
        if post_change {
            self.mu2.eval(t, x)
        } else {
            self.mu1.eval(t, x)
        }
    }

    pub fn vol(&self, post_change: bool, t: f64, x: f64) -> f64 {
        if post_change {
            self.sigma2.eval(t, x)
        } else {
            self.sigma1.eval(t, x)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mu1.validate("mu1")?;
        self.mu2.validate("mu2")?;
        self.sigma1.validate("sigma1")?;
        self.sigma2.validate("sigma2")?;
        for (name, s) in [("sigma1", &self.sigma1), ("sigma2", &self.sigma2)] {
            if s.infimum() <= 0.0 {
                return Err(Error::InvalidModel(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    /// True when no coefficient depends on the state.
    pub fn is_time_only(&self) -> bool {
        [&self.mu1, &self.mu2, &self.sigma1, &self.sigma2]
            .iter()
            .all(|c| c.is_state_free())
    }
}

/// Law of the change point `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangePointLaw {
    /// Exponential with the given rate, optionally conditioned on `τ ≤ truncate_at`.
    Exponential {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate_at: Option<f64>,
    },
    /// Uniform on `(0, end)`.
    Uniform {
        end: f64,
    },
    /// Deterministic change point; `None` means the change never happens.
    PointMass {
        at: Option<f64>,
    },
    Discrete {
        times: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl ChangePointLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModel(format!("change-point law: {m}")));
        match self {
            ChangePointLaw::Exponential { rate, truncate_at } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return bad("rate must be positive");
                }
                if matches!(truncate_at, Some(t) if !(*t > 0.0)) {
                    return bad("truncation point must be positive");
                }
                Ok(())
            }
            ChangePointLaw::Uniform { end } if !(*end > 0.0 && end.is_finite()) => bad("uniform end must be positive"),
            ChangePointLaw::Uniform { .. } => Ok(()),
            ChangePointLaw::PointMass { at: Some(t) } if !(*t >= 0.0) => bad("point mass must be nonnegative"),
            ChangePointLaw::PointMass { .. } => Ok(()),
            ChangePointLaw::Discrete { times, probs } => {
                if times.is_empty() || times.len() != probs.len() {
                    return bad("discrete law needs matching times and probabilities");
                }
                if times.iter().any(|t| !(*t >= 0.0)) || probs.iter().any(|p| !(*p >= 0.0)) {
                    return bad("support points and probabilities must be nonnegative");
                }
                if !times.windows(2).all(|w| w[0] < w[1]) {
                    return bad("support points must be strictly increasing");
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad("probabilities must sum to one");
                }
                Ok(())
            }
        }
    }

    /// `P(τ ≤ t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            ChangePointLaw::Exponential {
                rate,
                truncate_at: None,
            } => -(-rate * t).exp_m1(),
            ChangePointLaw::Exponential {
                rate,
                truncate_at: Some(end),
            } => {
                if t >= *end {
                    1.0
                } else {
                    (-rate * t).exp_m1() / (-rate * end).exp_m1()
                }
            }
            ChangePointLaw::Uniform { end } => (t / end).min(1.0),
            ChangePointLaw::PointMass { at } => match at {
                Some(a) if t >= *a => 1.0,
                _ => 0.0,
            },
            ChangePointLaw::Discrete { times, probs } => {
                times.iter().zip(probs).filter(|(s, _)| **s <= t).map(|(_, p)| p).sum()
            }
        }
    }

    /// `P(τ < t)`.
    pub fn cdf_left(&self, t: f64) -> f64 {
        match self {
            ChangePointLaw::PointMass { at } => match at {
                Some(a) if t > *a => 1.0,
                _ => 0.0,
            },
            ChangePointLaw::Discrete { times, probs } => {
                times.iter().zip(probs).filter(|(s, _)| **s < t).map(|(_, p)| p).sum()
            }
            _ => self.cdf(t),
        }
    }

    /// Hazard rate of the absolutely continuous part at `t` (zero for atomic laws).
    pub fn hazard_rate(&self, t: f64) -> f64 {
        match self {
            ChangePointLaw::Exponential {
                rate,
                truncate_at: None,
            } => *rate,
            ChangePointLaw::Exponential {
                rate,
                truncate_at: Some(end),
            } => {
                if t >= *end {
                    f64::INFINITY
                } else {
                    // density / survival = r e^{-rt} / (e^{-rt} - e^{-r end})
                    rate / -(-rate * (end - t)).exp_m1()
                }
            }
            ChangePointLaw::Uniform { end } => {
                if t >= *end {
                    f64::INFINITY
                } else {
                    1.0 / (end - t)
                }
            }
            ChangePointLaw::PointMass { .. } | ChangePointLaw::Discrete { .. } => 0.0,
        }
    }

    /// Predictable compensator of `1{τ ≤ t}` evaluated on `{τ ≥ t}`:
    /// `∫_0^t dF(s) / (1 − F(s−))`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        match self {
            ChangePointLaw::PointMass { at } => match at {
                Some(a) if t >= *a => 1.0,
                _ => 0.0,
            },
            ChangePointLaw::Discrete { times, probs } => {
                let mut surv = 1.0;
                let mut acc = 0.0;
                for (s, p) in times.iter().zip(probs) {
                    if *s > t {
                        break;
                    }
                    if surv > 0.0 {
                        acc += p / surv;
                    }
                    surv -= p;
                }
                acc
            }
            ChangePointLaw::Exponential {
                rate,
                truncate_at: None,
            } => rate * t.max(0.0),
            _ => -(1.0 - self.cdf(t)).ln(),
        }
    }

    /// Draws one change point from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ChangePointLaw::Exponential { rate, truncate_at } => {
                let u: f64 = rng.random();
                match truncate_at {
                    None => -(-u).ln_1p() / rate,
                    Some(end) => -(u * (-rate * end).exp_m1()).ln_1p() / rate,
                }
            }
            ChangePointLaw::Uniform { end } => rng.random::<f64>() * end,
            ChangePointLaw::PointMass { at } => at.unwrap_or(f64::INFINITY),
            ChangePointLaw::Discrete { times, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (t, p) in times.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *t;
                    }
                }
                *times.last().unwrap()
            }
        }
    }
}

/// Draws a change point from `law`.
pub fn sample_change_point<R: Rng + ?Sized>(law: &ChangePointLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub coeffs: CoefficientSpec,
    pub law: ChangePointLaw,
    pub horizon: f64,
    pub s0: f64,
    /// Correlation between `τ` and the driving noise. Simulation and the
    /// information models only support the independent case (zero).
    #[serde(default)]
    pub tau_correlation: f64,
}

impl MarketModel {
    pub fn new(coeffs: CoefficientSpec, law: ChangePointLaw, horizon: f64, s0: f64) -> Self {
        Self {
            coeffs,
            law,
            horizon,
            s0,
            tau_correlation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::InvalidModel("s0 must be positive".into()));
        }
        if !(self.tau_correlation.abs() <= 1.0) {
            return Err(Error::InvalidModel("tau correlation must lie in [-1, 1]".into()));
        }
        self.coeffs.validate()?;
        self.law.validate()
    }
}

/// Uniform time grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl SimGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument("grid horizon must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// One simulated path on a [`SimGrid`].
///
/// `dw` has `n_steps` entries; every other array has `n_steps + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub index: usize,
    pub tau: f64,
    pub dw: Vec<f64>,
    pub s_tilde: Vec<f64>,
    /// Quadratic variation `[S̃]` on the grid.
    pub qv: Vec<f64>,
    pub s: Vec<f64>,
    /// `1{t_k > τ}`.
    pub regime: Vec<u8>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.dw.len()
    }

    pub fn post_change(&self, k: usize) -> bool {
        self.regime[k] == 1
    }

    /// Cumulative Brownian motion on the grid.
    pub fn brownian(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.dw.len() + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for d in &self.dw {
            acc += d;
            w.push(acc);
        }
        w
    }

    /// Increment `S̃_{k+1} − S̃_k`.
    pub fn ds_tilde(&self, k: usize) -> f64 {
        self.s_tilde[k + 1] - self.s_tilde[k]
    }
}

/// Euler–Maruyama path for given change point and Brownian increments.
pub fn euler_path(model: &MarketModel, grid: &SimGrid, index: usize, tau: f64, dw: Vec<f64>) -> Result<PathBundle> {
    let n = grid.n_steps;
    debug_assert_eq!(dw.len(), n);
    let dt = grid.dt();
    let mut s_tilde = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut regime = Vec::with_capacity(n + 1);
    let (mut x, mut q) = (0.0_f64, 0.0_f64);
    for k in 0..=n {
        let t = grid.time(k);
        let post = t > tau;
        let price = model.s0 * (x - 0.5 * q).exp();
        if !(x.is_finite() && price.is_finite() && price > 0.0) {
            return Err(Error::NonFiniteState { path: index, step: k });
        }
        s_tilde.push(x);
        qv.push(q);
        s.push(price);
        regime.push(post as u8);
        if k < n {
            let mu = model.coeffs.drift(post, t, x);
            let sig = model.coeffs.vol(post, t, x);
            x += mu * dt + sig * dw[k];
            q += sig * sig * dt;
        }
    }
    Ok(PathBundle {
        index,
        tau,
        dw,
        s_tilde,
        qv,
        s,
        regime,
    })
}

/// Simulates path `index` of the stream family keyed by `seed`.
pub fn simulate_path(model: &MarketModel, grid: &SimGrid, seed: u64, index: usize) -> Result<PathBundle> {
    let mut rng = path_stream(seed, index);
    let tau = model.law.sample(&mut rng);
    let sd = grid.dt().sqrt();
    let dw: Vec<f64> = (0..grid.n_steps)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    euler_path(model, grid, index, tau, dw)
}

/// Simulates `n_paths` paths in parallel; output is ordered by path index and
/// independent of the rayon pool size.
pub fn simulate_paths(model: &MarketModel, grid: &SimGrid, n_paths: usize, seed: u64) -> Result<Vec<PathBundle>> {
    model.validate()?;
    if model.tau_correlation != 0.0 {
        return Err(Error::UnsupportedEnlargement);
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least one".into()));
    }
    let out: Vec<Result<PathBundle>> = (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_path(model, grid, seed, i))
        .collect();
    out.into_iter().collect()
}

/// Sums consecutive groups of `factor` increments (coarser grid, same Brownian path).
pub fn coarsen_increments(dw: &[f64], factor: usize) -> Vec<f64> {
    assert!(
        factor >= 1 && dw.len().is_multiple_of(factor),
        "factor must divide the number of steps"
    );
    dw.chunks(factor).map(|c| c.iter().sum()).collect()
}

/// Evaluation domain for the Lipschitz diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDomain {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub name: &'static str,
    /// Max finite-difference ratio on the supplied state grid.
    pub estimate: f64,
    /// Same ratio after three midpoint refinements of the state grid.
    pub refined: f64,
    pub diverging: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub coefficients: Vec<LipschitzEstimate>,
}

impl LipschitzReport {
    pub fn max_constant(&self) -> f64 {
        self.coefficients.iter().map(|c| c.estimate).fold(0.0, f64::max)
    }

    pub fn any_diverging(&self) -> bool {
        self.coefficients.iter().any(|c| c.diverging)
    }
}

fn max_ratio(c: &Coefficient, times: &[f64], states: &[f64]) -> f64 {
    let mut k = 0.0_f64;
    for &t in times {
        for w in states.windows(2) {
            let h = w[1] - w[0];
            if h > 0.0 {
                k = k.max((c.eval(t, w[1]) - c.eval(t, w[0])).abs() / h);
            }
        }
    }
    k
}

fn refine(states: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * states.len());
    for w in states.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*states.last().unwrap());
    out
}

/// Empirical state-Lipschitz constants of the four coefficient functions.
///
/// A coefficient is flagged as diverging when its ratio grows by more than a
/// factor three over three grid halvings, the signature of a jump in `x`.
pub fn lipschitz_report(spec: &CoefficientSpec, domain: &EvalDomain) -> Result<LipschitzReport> {
    if domain.states.len() < 2 {
        return Err(Error::InvalidArgument(
            "Lipschitz domain needs at least two state points".into(),
        ));
    }
    let coefficients = [
        ("mu1", &spec.mu1),
        ("mu2", &spec.mu2),
        ("sigma1", &spec.sigma1),
        ("sigma2", &spec.sigma2),
    ]
    .into_iter()
    .map(|(name, c)| {
        let estimate = max_ratio(c, &domain.times, &domain.states);
        let fine = refine(&refine(&refine(&domain.states)));
        let refined = max_ratio(c, &domain.times, &fine);
        let diverging = refined > 3.0 * estimate.max(f64::MIN_POSITIVE) && refined > 1e-12;
        LipschitzEstimate {
            name,
            estimate,
            refined,
            diverging,
        }
    })
    .collect();
    Ok(LipschitzReport { coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanEstimate;

    fn flat_model(mu: f64, sigma: f64, law: ChangePointLaw) -> MarketModel {
        MarketModel::new(CoefficientSpec::constant(mu, mu, sigma, sigma), law, 1.0, 1.0)
    }

    #[test]
    fn point_mass_is_degenerate() {
        let mut rng = path_stream(1, 0);
        assert_eq!(
            sample_change_point(&ChangePointLaw::PointMass { at: Some(0.5) }, &mut rng),
            0.5
        );
        let never = ChangePointLaw::PointMass { at: None };
        assert!(sample_change_point(&never, &mut rng) > 1e300);
        let model = flat_model(0.0, 0.2, never);
        let grid = SimGrid::new(1.0, 8).unwrap();
        let p = simulate_path(&model, &grid, 3, 0).unwrap();
        assert!(p.regime.iter().all(|&r| r == 0));
    }

    #[test]
    fn exponential_sample_mean() {
        let law = ChangePointLaw::Exponential {
            rate: 2.0,
            truncate_at: None,
        };
        let mut rng = path_stream(11, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let m = MeanEstimate::from_samples(&xs);
        assert!((m.mean - 0.5).abs() < 3.0 * m.stderr, "{m:?}");
    }

    #[test]
    fn truncated_exponential_stays_below_end() {
        let law = ChangePointLaw::Exponential {
            rate: 1.0,
            truncate_at: Some(0.7),
        };
        let mut rng = path_stream(5, 9);
        assert!((0..10_000).all(|_| law.sample(&mut rng) <= 0.7));
        assert!((law.cdf(0.7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn discrete_law_validation() {
        let ok = ChangePointLaw::Discrete {
            times: vec![0.2, 0.6],
            probs: vec![0.25, 0.75],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.cdf(0.2), 0.25);
        assert_eq!(ok.cdf_left(0.2), 0.0);
        let bad = ChangePointLaw::Discrete {
            times: vec![0.2, 0.6],
            probs: vec![0.25, 0.5],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_drift_constant_vol_is_scaled_brownian() {
        let model = flat_model(0.0, 0.2, ChangePointLaw::Uniform { end: 1.0 });
        let grid = SimGrid::new(1.0, 32).unwrap();
        let p = simulate_path(&model, &grid, 17, 4).unwrap();
        for (x, w) in p.s_tilde.iter().zip(p.brownian()) {
            assert!((x - 0.2 * w).abs() < 1e-14);
        }
    }

    #[test]
    fn price_is_stochastic_exponential() {
        let model = MarketModel {
            coeffs: CoefficientSpec::constant(0.08, -0.05, 0.2, 0.35),
            law: ChangePointLaw::Exponential {
                rate: 1.0,
                truncate_at: None,
            },
            horizon: 1.0,
            s0: 2.0,
            tau_correlation: 0.0,
        };
        let grid = SimGrid::new(1.0, 64).unwrap();
        for p in simulate_paths(&model, &grid, 20, 9).unwrap() {
            for k in 0..=64 {
                assert!(p.s[k] > 0.0);
                let expect = 2.0 * (p.s_tilde[k] - 0.5 * p.qv[k]).exp();
                assert!((p.s[k] - expect).abs() <= 1e-12 * expect);
            }
            assert!(p.regime.windows(2).all(|w| w[0] <= w[1]));
            // switch at the first grid point strictly after tau
            for k in 0..=64 {
                assert_eq!(p.regime[k] == 1, grid.time(k) > p.tau);
            }
        }
    }

    #[test]
    fn regime_coefficients_match_indicator() {
        let model = MarketModel {
            coeffs: CoefficientSpec::constant(0.1, -0.1, 0.2, 0.4),
            law: ChangePointLaw::PointMass { at: Some(0.5) },
            horizon: 1.0,
            s0: 1.0,
            tau_correlation: 0.0,
        };
        let grid = SimGrid::new(1.0, 16).unwrap();
        let p = simulate_path(&model, &grid, 2, 0).unwrap();
        let dt = grid.dt();
        for k in 0..16 {
            let (mu, sig) = if p.regime[k] == 1 { (-0.1, 0.4) } else { (0.1, 0.2) };
            assert!((p.ds_tilde(k) - (mu * dt + sig * p.dw[k])).abs() < 1e-15);
        }
        assert_eq!(p.regime[8], 0);
        assert_eq!(p.regime[9], 1);
    }

    #[test]
    fn driftless_price_is_martingale() {
        let model = flat_model(0.0, 0.3, ChangePointLaw::PointMass { at: None });
        let grid = SimGrid::new(1.0, 4).unwrap();
        let paths = simulate_paths(&model, &grid, 100_000, 21).unwrap();
        let st: Vec<f64> = paths.iter().map(|p| p.s[4]).collect();
        let m = MeanEstimate::from_samples(&st);
        assert!((m.mean - 1.0).abs() < 3.0 * m.stderr, "{m:?}");
    }

    #[test]
    fn simulation_independent_of_pool_size() {
        let model = MarketModel {
            coeffs: CoefficientSpec::constant(0.05, 0.01, 0.2, 0.3),
            law: ChangePointLaw::Exponential {
                rate: 1.5,
                truncate_at: None,
            },
            horizon: 1.0,
            s0: 1.0,
            tau_correlation: 0.0,
        };
        let grid = SimGrid::new(1.0, 16).unwrap();
        let run = |w| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .unwrap()
                .install(|| simulate_paths(&model, &grid, 300, 77).unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn exploding_path_is_reported() {
        let model = MarketModel {
            coeffs: CoefficientSpec::constant(1e308, 1e308, 0.2, 0.2),
            law: ChangePointLaw::PointMass { at: None },
            horizon: 1.0,
            s0: 1.0,
            tau_correlation: 0.0,
        };
        let grid = SimGrid::new(1.0, 4).unwrap();
        let err = simulate_paths(&model, &grid, 3, 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { path: 0, .. }));
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = flat_model(0.0, 0.2, ChangePointLaw::PointMass { at: None });
        m.coeffs.sigma2 = Coefficient::constant(0.0);
        assert!(m.validate().is_err());
        let mut m = flat_model(0.0, 0.2, ChangePointLaw::PointMass { at: None });
        m.horizon = 0.0;
        assert!(m.validate().is_err());
        assert!(SimGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn lipschitz_constant_coefficient_is_zero() {
        let spec = CoefficientSpec::constant(0.1, 0.1, 0.2, 0.2);
        let dom = EvalDomain {
            times: vec![0.0, 1.0],
            states: vec![-1.0, 0.0, 1.0],
        };
        let r = lipschitz_report(&spec, &dom).unwrap();
        assert_eq!(r.max_constant(), 0.0);
        assert!(!r.any_diverging());
    }

    #[test]
    fn lipschitz_of_sine_volatility() {
        let states: Vec<f64> = (0..=400).map(|j| -3.0 + 6.0 * j as f64 / 400.0).collect();
        let row: Vec<f64> = states.iter().map(|x| 0.2 + 0.1 * x.sin()).collect();
        let table = Coefficient::Bilinear {
            times: vec![0.0, 1.0],
            states: states.clone(),
            values: vec![row.clone(), row],
        };
        let spec = CoefficientSpec {
            sigma1: table,
            ..CoefficientSpec::constant(0.0, 0.0, 0.2, 0.2)
        };
        let dom = EvalDomain {
            times: vec![0.0, 0.5, 1.0],
            states: (0..=60).map(|j| -3.0 + 0.1 * j as f64).collect(),
        };
        let r = lipschitz_report(&spec, &dom).unwrap();
        // sup |d/dx (0.2 + 0.1 sin x)| = 0.1 at x = 0
        let k = r.coefficients.iter().find(|c| c.name == "sigma1").unwrap();
        assert!((k.estimate - 0.1).abs() < 1e-3, "{k:?}");
        assert!(!k.diverging);
    }

    #[test]
    fn lipschitz_detects_jump() {
        let table = Coefficient::Bilinear {
            times: vec![0.0],
            states: vec![-1.0, 0.0, 0.0, 1.0],
            values: vec![vec![0.2, 0.2, 0.4, 0.4]],
        };
        let spec = CoefficientSpec {
            sigma2: table,
            ..CoefficientSpec::constant(0.0, 0.0, 0.2, 0.2)
        };
        let dom = EvalDomain {
            times: vec![0.0],
            states: vec![-1.0, -0.3, 0.3, 1.0],
        };
        let r = lipschitz_report(&spec, &dom).unwrap();
        assert!(r.any_diverging());
    }

    #[test]
    fn coarsened_increments_preserve_brownian_endpoint() {
        let model = flat_model(0.0, 0.2, ChangePointLaw::PointMass { at: None });
        let grid = SimGrid::new(1.0, 16).unwrap();
        let p = simulate_path(&model, &grid, 4, 1).unwrap();
        let c = coarsen_increments(&p.dw, 4);
        assert_eq!(c.len(), 4);
        assert!((c.iter().sum::<f64>() - p.dw.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn compensator_of_exponential_is_linear() {
        let law = ChangePointLaw::Exponential {
            rate: 1.0,
            truncate_at: None,
        };
        assert!((law.cumulative_hazard(0.8) - 0.8).abs() < 1e-15);
        let uni = ChangePointLaw::Uniform { end: 2.0 };
        assert!((uni.cumulative_hazard(1.0) - 2f64.ln()).abs() < 1e-15);
    }
}
