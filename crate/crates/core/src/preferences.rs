//! Utility and loss functions, the combined Lagrangian utility
//! `Ũ_λ(x) = U(x) − λ L(−x)`, its inverse marginal `Ĩ_λ = (Ũ_λ')⁻¹`, and the
//! shortfall and entropic risk functionals.
//!
//! Built-in pairs have closed-form inverses; everything else goes through a
//! bracketed root search in `ln x`. Loss functions are only ever evaluated at
//! strictly negative arguments unless the loss is defined on the whole line.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{brent, RootOptions};

/// A utility function on `(0, ∞)` satisfying the Inada conditions.
pub trait UtilityFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn marginal(&self, x: f64) -> f64;
    /// Closed-form `(U')⁻¹`, if known.
    fn inverse_marginal(&self, _y: f64) -> Option<f64> {
        None
    }
}

/// A strictly increasing, strictly convex loss function on `(−∞, 0)`.
pub trait LossFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn marginal(&self, x: f64) -> f64;
    /// `L'(0−)`; may be infinite.
    fn marginal_at_zero(&self) -> f64;
    /// `lim_{x→−∞} L(x)`.
    fn infimum(&self) -> f64;
    /// Whether `L` may be evaluated at nonnegative arguments.
    fn whole_line(&self) -> bool {
        false
    }
    /// Closed-form `(L')⁻¹`, if known.
    fn inverse_marginal(&self, _e: f64) -> Option<f64> {
        None
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// `U(x) = ln x`
    Log,
    /// `U(x) = 1 − 1/x`
    ShiftedNegReciprocal,
    /// `U(x) = x^{1−γ}/(1−γ)`, `γ > 0`, `γ ≠ 1`.
    Crra { gamma: f64 },
    #[serde(skip)]
    Custom(Arc<dyn UtilityFunction>),
}

impl fmt::Debug for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilitySpec::Log => write!(f, "Log"),
            UtilitySpec::ShiftedNegReciprocal => write!(f, "ShiftedNegReciprocal"),
            UtilitySpec::Crra { gamma } => write!(f, "Crra({gamma})"),
            UtilitySpec::Custom(u) => write!(f, "Custom({u:?})"),
        }
    }
}

impl UtilitySpec {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            UtilitySpec::Log => x.ln(),
            UtilitySpec::ShiftedNegReciprocal => 1.0 - 1.0 / x,
            UtilitySpec::Crra { gamma } => x.powf(1.0 - gamma) / (1.0 - gamma),
            UtilitySpec::Custom(u) => u.value(x),
        }
    }

    pub fn marginal(&self, x: f64) -> f64 {
        match self {
            UtilitySpec::Log => 1.0 / x,
            UtilitySpec::ShiftedNegReciprocal => 1.0 / (x * x),
            UtilitySpec::Crra { gamma } => x.powf(-gamma),
            UtilitySpec::Custom(u) => u.marginal(x),
        }
    }

    fn closed_inverse(&self, y: f64) -> Option<f64> {
        match self {
            UtilitySpec::Log => Some(1.0 / y),
            UtilitySpec::ShiftedNegReciprocal => Some(y.powf(-0.5)),
            UtilitySpec::Crra { gamma } => Some(y.powf(-1.0 / gamma)),
            UtilitySpec::Custom(u) => u.inverse_marginal(y),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let UtilitySpec::Crra { gamma } = self {
            if !(*gamma > 0.0) || *gamma == 1.0 {
                return Err(Error::InvalidArgument(
                    "CRRA exponent must be positive and differ from one".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `I(y) = (U')⁻¹(y)`.
pub fn marginal_inverse_i(utility: &UtilitySpec, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::OutOfRange {
            value: y,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    match utility.closed_inverse(y) {
        Some(x) => Ok(x),
        None => invert_decreasing(|x| utility.marginal(x), y),
    }
}

/// `I(y)` by bracketed root search, ignoring any closed form.
pub fn marginal_inverse_i_numeric(utility: &UtilitySpec, y: f64) -> Result<f64> {
    invert_decreasing(|x| utility.marginal(x), y)
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `L(x) = −c/x` on `(−∞, 0)`.
    NegReciprocal { c: f64 },
    /// `L(x) = exp(γx)`; the shortfall risk it induces is the entropic risk.
    Exponential { gamma: f64 },
    #[serde(skip)]
    Custom(Arc<dyn LossFunction>),
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::NegReciprocal { c: 3.0 }
    }
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::NegReciprocal { c } => write!(f, "NegReciprocal({c})"),
            LossSpec::Exponential { gamma } => write!(f, "Exponential({gamma})"),
            LossSpec::Custom(l) => write!(f, "Custom({l:?})"),
        }
    }
}

impl LossSpec {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            LossSpec::NegReciprocal { c } => -c / x,
            LossSpec::Exponential { gamma } => (gamma * x).exp(),
            LossSpec::Custom(l) => l.value(x),
        }
    }

    pub fn marginal(&self, x: f64) -> f64 {
        match self {
            LossSpec::NegReciprocal { c } => c / (x * x),
            LossSpec::Exponential { gamma } => gamma * (gamma * x).exp(),
            LossSpec::Custom(l) => l.marginal(x),
        }
    }

    /// `L'(0−)`.
    pub fn marginal_at_zero(&self) -> f64 {
        match self {
            LossSpec::NegReciprocal { .. } => f64::INFINITY,
            LossSpec::Exponential { gamma } => *gamma,
            LossSpec::Custom(l) => l.marginal_at_zero(),
        }
    }

    pub fn infimum(&self) -> f64 {
        match self {
            LossSpec::NegReciprocal { .. } | LossSpec::Exponential { .. } => 0.0,
            LossSpec::Custom(l) => l.infimum(),
        }
    }

    pub fn whole_line(&self) -> bool {
        match self {
            LossSpec::NegReciprocal { .. } => false,
            LossSpec::Exponential { .. } => true,
            LossSpec::Custom(l) => l.whole_line(),
        }
    }

    fn closed_inverse(&self, e: f64) -> Option<f64> {
        match self {
            LossSpec::NegReciprocal { c } => Some(-(c / e).sqrt()),
            LossSpec::Exponential { gamma } => Some((e / gamma).ln() / gamma),
            LossSpec::Custom(l) => l.inverse_marginal(e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::NegReciprocal { c } if !(*c > 0.0) => {
                Err(Error::InvalidArgument("loss scale c must be positive".into()))
            }
            LossSpec::Exponential { gamma } if !(*gamma > 0.0) => {
                Err(Error::InvalidArgument("loss gamma must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `H(e) = (L')⁻¹(e)` for `e ∈ (0, L'(0−))`; the result is negative.
pub fn loss_marginal_inverse_h(loss: &LossSpec, e: f64) -> Result<f64> {
    let top = loss.marginal_at_zero();
    if !(e > 0.0 && e < top) {
        return Err(Error::OutOfRange {
            value: e,
            lo: 0.0,
            hi: top,
        });
    }
    match loss.closed_inverse(e) {
        Some(x) => Ok(x),
        None => loss_marginal_inverse_h_numeric(loss, e),
    }
}

/// `H(e)` by bracketed root search on `s = −x`, ignoring any closed form.
pub fn loss_marginal_inverse_h_numeric(loss: &LossSpec, e: f64) -> Result<f64> {
    let top = loss.marginal_at_zero();
    if !(e > 0.0 && e < top) {
        return Err(Error::OutOfRange {
            value: e,
            lo: 0.0,
            hi: top,
        });
    }
    // L'(−s) is decreasing in s > 0
    Ok(-invert_decreasing(|s| loss.marginal(-s), e)?)
}

/// Solves `g(x) = target` for a decreasing `g` on `(0, ∞)` with Inada-type limits.
///
/// The bracket starts at `[1e-8, 1]` and is widened by doubling/halving.
fn invert_decreasing<G: Fn(f64) -> f64>(g: G, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1e-8_f64, 1.0_f64);
    let mut steps = 0;
    while g(hi) > target {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 2100 || !hi.is_finite() {
            return Err(Error::NoConvergence(format!(
                "no upper bracket for target {target} (reached {hi})"
            )));
        }
    }
    steps = 0;
    while g(lo) < target {
        hi = lo;
        lo *= 0.5;
        steps += 1;
        if steps > 2100 || lo == 0.0 {
            return Err(Error::NoConvergence(format!(
                "no lower bracket for target {target} (reached {lo})"
            )));
        }
    }
    let opts = RootOptions {
        xtol: 1e-15,
        rtol: 0.0,
        ftol: 0.0,
        max_iter: 300,
    };
    let s = brent(|s| g(s.exp()) - target, lo.ln(), hi.ln(), opts)
        .map_err(|e| Error::NoConvergence(format!("inverse marginal for target {target}: {e}")))?;
    Ok(s.exp())
}

/// Utility and loss of one investor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Preferences {
    pub utility: UtilitySpec,
    #[serde(default)]
    pub loss: LossSpec,
}

impl Preferences {
    pub fn new(utility: UtilitySpec, loss: LossSpec) -> Self {
        Self { utility, loss }
    }

    /// `U(x) = ln x`, `L(x) = −3/x`.
    pub fn log_neg_reciprocal() -> Self {
        Self::new(UtilitySpec::Log, LossSpec::NegReciprocal { c: 3.0 })
    }

    /// `U(x) = 1 − 1/x`, `L(x) = −3/x`.
    pub fn power_neg_reciprocal() -> Self {
        Self::new(UtilitySpec::ShiftedNegReciprocal, LossSpec::NegReciprocal { c: 3.0 })
    }

    pub fn lagrangian(&self, lambda: f64) -> CombinedLagrangian {
        CombinedLagrangian {
            utility: self.utility.clone(),
            loss: self.loss.clone(),
            lambda,
        }
    }

    /// Risk of holding terminal wealth `x > 0`: `L(−x)`.
    pub fn loss_of_wealth(&self, x: f64) -> f64 {
        self.loss.value(-x)
    }

    pub fn validate(&self) -> Result<()> {
        self.utility.validate()?;
        self.loss.validate()
    }
}

/// `Ũ_λ(x) = U(x) − λ L(−x)` together with its inverse marginal.
///
/// `Ĩ_λ(y)` is the maximizer `x*(λ, y)` of `U(x) − λL(−x) − yx`.
#[derive(Clone, Debug)]
pub struct CombinedLagrangian {
    pub utility: UtilitySpec,
    pub loss: LossSpec,
    pub lambda: f64,
}

impl CombinedLagrangian {
    pub fn value(&self, x: f64) -> f64 {
        let pen = if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * self.loss.value(-x)
        };
        self.utility.value(x) - pen
    }

    /// `Ũ_λ'(x) = U'(x) + λ L'(−x)`.
    pub fn marginal(&self, x: f64) -> f64 {
        let pen = if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * self.loss.marginal(-x)
        };
        self.utility.marginal(x) + pen
    }

    fn closed_inverse(&self, y: f64) -> Option<f64> {
        let lam = self.lambda;
        if lam == 0.0 {
            return self.utility.closed_inverse(y);
        }
        match (&self.utility, &self.loss) {
            // 1/x + λc/x² = y
            (UtilitySpec::Log, LossSpec::NegReciprocal { c }) => {
                Some((1.0 + (1.0 + 4.0 * lam * c * y).sqrt()) / (2.0 * y))
            }
            // (1 + λc)/x² = y
            (UtilitySpec::ShiftedNegReciprocal, LossSpec::NegReciprocal { c }) => Some(((1.0 + c * lam) / y).sqrt()),
            // (1 + λc)/x² = y
            (UtilitySpec::Crra { gamma }, LossSpec::NegReciprocal { c }) if *gamma == 2.0 => {
                Some(((1.0 + c * lam) / y).sqrt())
            }
            _ => None,
        }
    }

    /// `Ĩ_λ(y)`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::OutOfRange {
                value: y,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        match self.closed_inverse(y) {
            Some(x) => Ok(x),
            None => self.inverse_numeric(y),
        }
    }

    /// `Ĩ_λ(y)` by bracketed root search, ignoring closed forms.
    pub fn inverse_numeric(&self, y: f64) -> Result<f64> {
        invert_decreasing(|x| self.marginal(x), y)
    }

    /// Alias of [`Self::inverse`] under the maximizer's name.
    pub fn x_star(&self, y: f64) -> Result<f64> {
        self.inverse(y)
    }
}

/// `Ĩ_λ(y)`.
pub fn lagrangian_inverse(cl: &CombinedLagrangian, y: f64) -> Result<f64> {
    cl.inverse(y)
}

/// Utility-based shortfall risk `inf{m : mean L(−X − m) ≤ ε}` of an empirical sample.
pub fn shortfall_risk(samples: &[f64], loss: &LossSpec, eps: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("shortfall risk of an empty sample".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample contains non-finite positions".into()));
    }
    let floor = loss.infimum();
    if !(eps > floor) {
        return Err(Error::Unattainable { eps, floor });
    }
    let n = samples.len() as f64;
    let anchor = -samples.iter().copied().fold(f64::INFINITY, f64::min);
    // excess(m) is strictly decreasing in m
    let excess = |m: f64| samples.iter().map(|x| loss.value(-x - m)).sum::<f64>() / n - eps;
    let (lo, hi) = if loss.whole_line() {
        let mut step = 1.0;
        let (mut lo, mut hi) = (anchor, anchor);
        while excess(hi) > 0.0 {
            hi = anchor + step;
            step *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Unattainable { eps, floor });
            }
        }
        step = 1.0;
        while excess(lo) < 0.0 {
            lo = anchor - step;
            step *= 2.0;
            if !lo.is_finite() {
                return Err(Error::BracketFailure("shortfall lower bracket".into()));
            }
        }
        (lo, hi)
    } else {
        // arguments −x − m must stay negative: m > anchor
        let mut d_hi = 1.0;
        while excess(anchor + d_hi) > 0.0 {
            d_hi *= 2.0;
            if !d_hi.is_finite() {
                return Err(Error::Unattainable { eps, floor });
            }
        }
        let mut d_lo = d_hi;
        while excess(anchor + d_lo) <= 0.0 {
            d_lo *= 0.5;
            if d_lo == 0.0 {
                return Err(Error::BracketFailure("shortfall lower bracket".into()));
            }
        }
        (anchor + d_lo, anchor + d_hi)
    };
    let scale = anchor.abs().max(1.0);
    brent(
        excess,
        lo,
        hi,
        RootOptions {
            xtol: 1e-15 * scale,
            rtol: 0.0,
            ftol: 0.0,
            max_iter: 300,
        },
    )
}

/// Entropic risk `(1/γ)(ln mean exp(−γX) − ln ε)`, evaluated with a max shift.
pub fn entropic_risk(samples: &[f64], gamma: f64, eps: f64) -> Result<f64> {
    if samples.is_empty() || !(gamma > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(
            "entropic risk needs samples, gamma > 0 and eps > 0".into(),
        ));
    }
    let shift = samples.iter().map(|x| -gamma * x).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = samples.iter().map(|x| (-gamma * x - shift).exp()).sum();
    let log_mean = shift + (s / samples.len() as f64).ln();
    Ok((log_mean - eps.ln()) / gamma)
}
