//! Deterministic reductions over path samples.
//!
//! Sums are formed over fixed-size chunks and the chunk partials are combined in
//! index order, so results do not depend on the size of the rayon pool.

use rayon::prelude::*;

const CHUNK: usize = 2048;

/// Sum of `f(i, v)` over `values`, chunked in index order.
pub fn ordered_sum<F>(values: &[f64], f: F) -> f64
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let base = c * CHUNK;
            chunk.iter().enumerate().map(|(j, &v)| f(base + j, v)).sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

/// Weighted sum of `f(v)` with weights `w`, chunked in index order.
pub fn ordered_weighted_sum<F>(values: &[f64], weights: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    debug_assert_eq!(values.len(), weights.len());
    ordered_sum(values, |i, v| weights[i] * f(v))
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = ordered_sum(samples, |_, v| v) / n as f64;
        let var = if n > 1 {
            ordered_sum(samples, |_, v| (v - mean) * (v - mean)) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Sample correlation of two equally long series; zero when either is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_independent_of_pool_size() {
        let v: Vec<f64> = (0..10_007).map(|i| (i as f64 * 0.37).sin()).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(7).build().unwrap();
        let a = one.install(|| ordered_sum(&v, |_, x| x * x));
        let b = many.install(|| ordered_sum(&v, |_, x| x * x));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn mean_estimate_of_constant() {
        let m = MeanEstimate::from_samples(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn correlation_of_linear_series() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert!((correlation(&a, &b) - 1.0).abs() < 1e-15);
        assert_eq!(correlation(&a, &[1.0; 4]), 0.0);
    }
}
