//! Scalar root finding on a sign-changing bracket.
//!
//! Brent's method: bisection safeguarding secant and inverse-quadratic steps.
//! Every solver target in the engine is monotone, so a bracket, once found,
//! always contains exactly one root.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Absolute tolerance on the abscissa.
    pub xtol: f64,
    /// Relative tolerance on the abscissa.
    pub rtol: f64,
    /// Stop as soon as `|f(x)| <= ftol`.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            xtol: 0.0,
            rtol: 4.0 * f64::EPSILON,
            ftol: 0.0,
            max_iter: 200,
        }
    }
}

/// Root of `f` in `[a, b]` where `f(a)` and `f(b)` differ in sign.
pub fn brent<F>(mut f: F, mut a: f64, mut b: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    let mut fb = f(b);
    if fa.is_nan() || fb.is_nan() {
        return Err(Error::NonFinite(format!("objective NaN at bracket [{a}, {b}]")));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::BracketFailure(format!(
            "no sign change on [{a}, {b}]: f = ({fa}, {fb})"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (opts.xtol + opts.rtol * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 || fb.abs() <= opts.ftol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::NonFinite(format!("objective NaN at {b}")));
        }
    }
    Err(Error::NoConvergence(format!(
        "Brent iteration limit {} reached near {b} (f = {fb})",
        opts.max_iter
    )))
}

/// Grows `hi` geometrically from `start` until `f(hi)` has the requested sign.
/// Returns the last two probes as a bracket `(lo, hi)`.
pub fn expand_up<F>(mut f: F, start: f64, factor: f64, max_steps: usize, want_negative: bool) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut lo = start;
    let mut hi = start;
    for _ in 0..max_steps {
        let v = f(hi);
        if v.is_nan() {
            return Err(Error::NonFinite(format!("objective NaN at {hi}")));
        }
        if (v < 0.0) == want_negative || v == 0.0 {
            return Ok((lo, hi));
        }
        lo = hi;
        hi *= factor;
    }
    Err(Error::BracketFailure(format!(
        "no sign change up to {hi} after {max_steps} expansions"
    )))
}

/// Shrinks `lo` geometrically from `start` until `f(lo)` has the requested sign.
/// Returns the last two probes as a bracket `(lo, hi)`.
pub fn expand_down<F>(mut f: F, start: f64, factor: f64, max_steps: usize, want_negative: bool) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut hi = start;
    let mut lo = start;
    for _ in 0..max_steps {
        let v = f(lo);
        if v.is_nan() {
            return Err(Error::NonFinite(format!("objective NaN at {lo}")));
        }
        if (v < 0.0) == want_negative || v == 0.0 {
            return Ok((lo, hi));
        }
        hi = lo;
        lo /= factor;
    }
    Err(Error::BracketFailure(format!(
        "no sign change down to {lo} after {max_steps} contractions"
    )))
}
