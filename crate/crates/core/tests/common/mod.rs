//! Shared test oracles: central finite differences and comparison helpers.
//! These stay independent of the tape's backward implementation.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient of a scalar function at `x`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let x0 = xs[i];
        xs[i] = x0 + h;
        let fp = f(&xs);
        xs[i] = x0 - h;
        let fm = f(&xs);
        xs[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest elementwise relative error, with an absolute floor so that
/// near-zero pairs compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Relative error between vectors measured in the L2 norm.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|&y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Uniform sample in `(lo, hi)`.
pub fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform_in(rng, lo, hi)).collect()
}
