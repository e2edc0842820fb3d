//! Traces of the limiting ridge resolvent in the shared spike eigenbasis.

use crate::error::{Error, Result};
use crate::model::PopulationModel;

/// Large-`p` limits of `(1/p) w^T Sigma_± w` and `w^T mu_hat / sqrt(p)` for
/// `w = M^{-1}(sqrt(xi0+) Sigma+^{1/2} z+ + sqrt(xi0-) Sigma-^{1/2} z- + sqrt(p) r_hat mu_hat)`
/// with `M = xi+ Sigma+ + xi- Sigma- + lambda I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventMoments {
    pub q0_plus: f64,
    pub q0_minus: f64,
    pub r: f64,
    /// `1 / m0`, the bulk eigenvalue of `M^{-1}`; `(1/p) tr(Sigma_± M^{-1}) = sigma_±^2 / m0`.
    pub inv_bulk: f64,
}

pub fn resolvent_moments(
    model: &PopulationModel,
    xi_plus: f64,
    xi_minus: f64,
    xi0_plus: f64,
    xi0_minus: f64,
    r_hat: f64,
    lambda: f64,
) -> Result<ResolventMoments> {
    let sp2 = model.sigma_plus * model.sigma_plus;
    let sm2 = model.sigma_minus * model.sigma_minus;
    let m0 = xi_plus * sp2 + xi_minus * sm2 + lambda;
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(Error::Resolvent(format!("bulk eigenvalue {m0}")));
    }
    let rest2 = 1.0 - model.r.iter().map(|r| r * r).sum::<f64>();
    let rest2 = rest2.max(0.0);

    let mut sum_plus = rest2 / (m0 * m0);
    let mut sum_minus = sum_plus;
    let mut sum_r = rest2 / m0;
    for k in 0..model.k() {
        let (lp, lm, rk2) = (model.lambda_plus[k], model.lambda_minus[k], model.r[k] * model.r[k]);
        let mk = m0 + xi_plus * sp2 * lp + xi_minus * sm2 * lm;
        if !(mk > 0.0) || !mk.is_finite() {
            return Err(Error::Resolvent(format!("spike {k} eigenvalue {mk}")));
        }
        sum_plus += rk2 * (1.0 + lp) / (mk * mk);
        sum_minus += rk2 * (1.0 + lm) / (mk * mk);
        sum_r += rk2 / mk;
    }
    let noise = (xi0_plus * sp2 + xi0_minus * sm2) / (m0 * m0);
    let rh2 = r_hat * r_hat;
    Ok(ResolventMoments {
        q0_plus: sp2 * (noise + rh2 * sum_plus),
        q0_minus: sm2 * (noise + rh2 * sum_minus),
        r: r_hat * sum_r,
        inv_bulk: 1.0 / m0,
    })
}
