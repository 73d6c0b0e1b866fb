//! Gaussian quadrature rules used by the closed-form wealth evaluator and by
//! the exact lognormal density sample.

use gauss_quad::{GaussHermite, GaussLegendre};

use crate::error::{Error, Result};

/// Nodes and weights for `E[f(η)]`, `η ~ N(0, 1)`; weights sum to one.
pub fn normal_rule(order: usize) -> Result<Vec<(f64, f64)>> {
    let rule =
        GaussHermite::new(order).map_err(|e| Error::InvalidArgument(format!("Gauss-Hermite order {order}: {e}")))?;
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (std::f64::consts::SQRT_2 * x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    for p in &mut pairs {
        p.1 /= total;
    }
    Ok(pairs)
}

/// Gauss–Legendre rule of fixed order mapped to arbitrary intervals.
#[derive(Debug, Clone)]
pub struct Legendre {
    nodes: Vec<(f64, f64)>,
}

impl Legendre {
    pub fn new(order: usize) -> Result<Self> {
        let rule = GaussLegendre::new(order)
            .map_err(|e| Error::InvalidArgument(format!("Gauss-Legendre order {order}: {e}")))?;
        Ok(Self {
            nodes: rule.iter().map(|(x, w)| (*x, *w)).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
        half * self.nodes.iter().map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_rule_moments() {
        let r = normal_rule(40).unwrap();
        let m = |k: i32| r.iter().map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-15);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-13);
        assert!((m(4) - 3.0).abs() < 1e-12);
        // lognormal mean
        let e: f64 = r.iter().map(|(x, w)| w * (0.4 * x).exp()).sum();
        assert!((e - 0.08f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let l = Legendre::new(8).unwrap();
        assert!((l.integrate(0.0, 2.0, |x| x.powi(5)) - 64.0 / 6.0).abs() < 1e-12);
    }
}
