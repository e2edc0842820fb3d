//! Gaussian expectations of the prox residual.
//!
//! For `a = m + s z` with `z ~ N(0, 1)` and residual `phi(z) = psi(a, b) - a`,
//! computes `F = E[phi]`, `G = E[phi z]` and `H = E[phi^2]`. These drive every
//! fixed-point equation in [`crate::theory`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::quadrature::{integrate, QuadOptions};

/// Half-width of the truncated integration domain in units of `z`.
pub const Z_MAX: f64 = 10.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    /// Mean residual.
    pub f: f64,
    /// Correlation of the residual with `z`.
    pub g: f64,
    /// Second moment of the residual.
    pub h: f64,
}

pub fn expectations(loss: &Loss, m: f64, s: f64, b: f64) -> Result<Expectations> {
    if !(s > 0.0 && s.is_finite()) || !(b > 0.0 && b.is_finite()) || !m.is_finite() {
        return Err(Error::Domain(format!(
            "expectations need finite m, s > 0, b > 0 (m={m}, s={s}, b={b})"
        )));
    }
    let breaks: Vec<f64> = loss.prox_kinks(b).into_iter().map(|a| (a - m) / s).collect();
    // phi / b stays O(1) as b -> 0, so tolerances apply to the scaled residual.
    let integrand = |z: f64| -> Result<[f64; 3]> {
        let a = m + s * z;
        let u = loss.prox_residual(a, b)? / b;
        let w = normal_pdf(z);
        Ok([u * w, u * z * w, u * u * w])
    };
    let [f, g, h] = integrate(integrand, -Z_MAX, Z_MAX, &breaks, QuadOptions::default())?;
    // The residual is nonnegative and nonincreasing in z; clamp rounding noise to those signs.
    Ok(Expectations {
        f: (f * b).max(0.0),
        g: (g * b).min(0.0),
        h: (h * b * b).max(0.0),
    })
}
