//! Asymptotic performance of ridge-regularized margin classifiers.
//!
//! In the proportional limit `n_±/p -> alpha_±` the fitted classifier is
//! summarized by a handful of order parameters:
//!
//! * `q0_±` – variance of the class-`±` margin, `(1/p) w^T Sigma_± w`;
//! * `q_±`  – margin susceptibility, `(1/p) tr(Sigma_± M^{-1})`;
//! * `R`    – overlap `w^T mu_hat / sqrt(p)` with the signal direction;
//! * `w0`   – intercept.
//!
//! They solve a fixed point that couples one-dimensional Gaussian
//! expectations of the prox residual ([`crate::gauss`]) with traces of the
//! ridge resolvent `M = xi+ Sigma+ + xi- Sigma- + lambda I`
//! ([`resolvent`]). Class precision follows as `Phi((R mu ± w0) / sqrt(q0_±))`.

mod explicit;
pub mod resolvent;
mod solver;
mod sweep;

use serde::{Deserialize, Serialize};

pub use explicit::{printed_explicit_forms, ExplicitForms};
pub use resolvent::{resolvent_moments, ResolventMoments};
pub use solver::{
    fixed_point_residual, solve_general, solve_homogeneous, solve_order_params, SolveMode, SolverOptions,
};
pub use sweep::{sweep_lambda, sweep_lambda_with, LambdaGrid, Optimum, PrecisionCurve};

use crate::error::{Error, Result};
use crate::gauss::normal_cdf;
use crate::model::PopulationModel;

/// Solution of the fixed point plus the conjugate quantities it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub q0_plus: f64,
    pub q0_minus: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub r: f64,
    pub w0: f64,
    pub xi_plus: f64,
    pub xi_minus: f64,
    pub xi0_plus: f64,
    pub xi0_minus: f64,
    pub r_hat: f64,
    pub f_plus: f64,
    pub g_plus: f64,
    pub h_plus: f64,
    pub f_minus: f64,
    pub g_minus: f64,
    pub h_minus: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub lambda: f64,
    pub precision_plus: f64,
    pub precision_minus: f64,
    pub balanced: f64,
    pub order: OrderParams,
}

pub fn predict_precision(order: &OrderParams, model: &PopulationModel, lambda: f64) -> Result<PrecisionPoint> {
    if !(order.q0_plus > 0.0 && order.q0_minus > 0.0) {
        return Err(Error::Domain("precision needs q0_± > 0".into()));
    }
    let signal = order.r * model.mu;
    let precision_plus = normal_cdf((signal + order.w0) / order.q0_plus.sqrt());
    let precision_minus = normal_cdf((signal - order.w0) / order.q0_minus.sqrt());
    Ok(PrecisionPoint {
        lambda,
        precision_plus,
        precision_minus,
        balanced: 0.5 * (precision_plus + precision_minus),
        order: *order,
    })
}

/// Large-`lambda` limit of the precision for a model whose spikes are
/// aligned with or orthogonal to the signal: `Phi(rho / sqrt(1 + l1 rho^2) * mu / sigma)`
/// with `rho^2 = alpha t^2 / (1 + alpha t^2)`, `t = mu / sigma`, `alpha` the total ratio and
/// `l1` the spike strength along the signal (zero if none).
pub fn large_lambda_precision(mu: f64, sigma: f64, alpha: f64, aligned_spike: f64) -> f64 {
    let t = mu / sigma;
    let rho = (alpha * t * t / (1.0 + alpha * t * t)).sqrt();
    normal_cdf(rho / (1.0 + aligned_spike * rho * rho).sqrt() * t)
}
