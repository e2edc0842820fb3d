//! The closed forms for `q0_±` and `R` written directly in terms of
//! `F, G, H`, kept as a diagnostic next to the resolvent path.
//!
//! For a shared covariance the `q0` form coincides with the resolvent trace.
//! The overlap form does not: it carries squared spike denominators and a
//! `1/sigma_+` factor where the resolvent gives first powers and `1/sigma_+^2`.
//! Only the resolvent path reproduces the large-`lambda` mean-difference limit.

use serde::{Deserialize, Serialize};

use super::OrderParams;
use crate::model::PopulationModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplicitForms {
    pub q0_plus: f64,
    pub q0_minus: f64,
    pub r: f64,
    /// Smallest spike denominator `1 - sum_± alpha_± lambda_k^± G_± / sqrt(q0_±)`.
    pub min_denominator: f64,
    /// Set when some denominator is `<= 0`; the forms are meaningless there.
    pub collapsed: bool,
}

pub fn printed_explicit_forms(model: &PopulationModel, order: &OrderParams) -> ExplicitForms {
    let (ap, am) = (model.alpha_plus, model.alpha_minus);
    let (sp, sm) = (model.sigma_plus, model.sigma_minus);
    let mu = model.mu;
    let (gp, gm) = (
        order.g_plus / order.q0_plus.sqrt(),
        order.g_minus / order.q0_minus.sqrt(),
    );

    let mut terms: Vec<(f64, f64, f64, f64)> = (0..model.k())
        .map(|k| {
            (
                model.r[k] * model.r[k],
                model.lambda_plus[k],
                model.lambda_minus[k],
                0.0,
            )
        })
        .collect();
    let rest = model.residual_projection();
    terms.push((rest * rest, 0.0, 0.0, 0.0));
    let mut min_den = f64::INFINITY;
    for t in terms.iter_mut() {
        t.3 = 1.0 - ap * t.1 * gp - am * t.2 * gm;
        min_den = min_den.min(t.3);
    }

    let noise = ap * order.h_plus + am * order.h_minus;
    let coef_plus = ap * mu * order.f_plus / sp + am * mu * sp * order.f_minus / (sm * sm);
    let coef_minus = am * mu * order.f_minus / sm + ap * mu * sm * order.f_plus / (sp * sp);
    let sum_plus: f64 = terms.iter().map(|(r2, lp, _, d)| (1.0 + lp) * r2 / (d * d)).sum();
    let sum_minus: f64 = terms.iter().map(|(r2, _, lm, d)| (1.0 + lm) * r2 / (d * d)).sum();
    let sum_r: f64 = terms.iter().map(|(r2, _, _, d)| r2 / (d * d)).sum();

    ExplicitForms {
        q0_plus: noise + coef_plus * coef_plus * sum_plus,
        q0_minus: noise + coef_minus * coef_minus * sum_minus,
        r: coef_plus * sum_r,
        min_denominator: min_den,
        collapsed: min_den <= 0.0,
    }
}
