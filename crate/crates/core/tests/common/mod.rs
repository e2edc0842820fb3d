#![allow(dead_code)]

use hdmargin::Loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Golden-section minimizer of a unimodal function; returns `(x, f(x))`.
pub fn golden<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Prox by direct minimization of `V(u) + (u - a)^2 / (2b)` on `[a - 1, a + b|V'(a)| + 1]`.
pub fn prox_oracle(loss: &Loss, a: f64, b: f64) -> f64 {
    let hi = a + b * loss.derivative(a).abs() + 1.0;
    golden(|u| loss.evaluate(u) + (u - a) * (u - a) / (2.0 * b), a - 1.0, hi, 200).0
}

pub struct McMoments {
    pub mean: [f64; 3],
    pub se: [f64; 3],
}

/// Plain Monte Carlo of `E[phi]`, `E[phi z]`, `E[phi^2]` with `phi = prox(m + s z, b) - (m + s z)`.
pub fn mc_expectations(loss: &Loss, m: f64, s: f64, b: f64, draws: usize, seed: u64) -> McMoments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = [0.0; 3];
    let mut sum2 = [0.0; 3];
    for _ in 0..draws {
        let z: f64 = rng.sample(StandardNormal);
        let a = m + s * z;
        let phi = loss.prox(a, b).unwrap() - a;
        for (k, v) in [phi, phi * z, phi * phi].into_iter().enumerate() {
            sum[k] += v;
            sum2[k] += v * v;
        }
    }
    let n = draws as f64;
    let mean = sum.map(|x| x / n);
    let se = [0, 1, 2].map(|k| ((sum2[k] / n - mean[k] * mean[k]).max(0.0) / n).sqrt());
    McMoments { mean, se }
}
