//! Damped Newton / Picard solver for the order-parameter fixed point.

use nalgebra::{DMatrix, DVector};

use super::resolvent::resolvent_moments;
use super::OrderParams;
use crate::error::{Error, Result};
use crate::gauss::{expectations, Expectations};
use crate::losses::Loss;
use crate::model::PopulationModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Balanced, shared-covariance reduction: unknowns `(q0, q, R)`, `w0 = 0`.
    Homogeneous,
    /// Full two-class system: unknowns `(q0+, q0-, q+, R, w0)`.
    General,
}

impl SolveMode {
    pub fn for_model(model: &PopulationModel) -> Self {
        if model.is_homogeneous() {
            SolveMode::Homogeneous
        } else {
            SolveMode::General
        }
    }

    fn dim(self) -> usize {
        match self {
            SolveMode::Homogeneous => 3,
            SolveMode::General => 5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub newton_failures_before_picard: usize,
    pub picard_relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 500,
            newton_failures_before_picard: 50,
            picard_relaxation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Unknowns {
    q0_plus: f64,
    q0_minus: f64,
    q_plus: f64,
    r: f64,
    w0: f64,
}

impl Unknowns {
    fn initial(model: &PopulationModel, lambda: f64) -> Self {
        let sp2 = model.sigma_plus * model.sigma_plus;
        Unknowns {
            q0_plus: sp2,
            q0_minus: model.sigma_minus * model.sigma_minus,
            q_plus: sp2 / lambda.max(1.0),
            r: 0.1,
            w0: 0.0,
        }
    }

    fn from_order(o: &OrderParams) -> Self {
        Unknowns {
            q0_plus: o.q0_plus,
            q0_minus: o.q0_minus,
            q_plus: o.q_plus,
            r: o.r,
            w0: o.w0,
        }
    }

    fn r_scale(&self) -> f64 {
        (0.5 * (self.q0_plus + self.q0_minus)).sqrt()
    }

    fn coords(&self, mode: SolveMode) -> DVector<f64> {
        match mode {
            SolveMode::Homogeneous => DVector::from_vec(vec![self.q0_plus.ln(), self.q_plus.ln(), self.r]),
            SolveMode::General => DVector::from_vec(vec![
                self.q0_plus.ln(),
                self.q0_minus.ln(),
                self.q_plus.ln(),
                self.r,
                self.w0,
            ]),
        }
    }

    fn from_coords(x: &DVector<f64>, mode: SolveMode) -> Self {
        match mode {
            SolveMode::Homogeneous => {
                let q0 = x[0].exp();
                Unknowns {
                    q0_plus: q0,
                    q0_minus: q0,
                    q_plus: x[1].exp(),
                    r: x[2],
                    w0: 0.0,
                }
            }
            SolveMode::General => Unknowns {
                q0_plus: x[0].exp(),
                q0_minus: x[1].exp(),
                q_plus: x[2].exp(),
                r: x[3],
                w0: x[4],
            },
        }
    }
}

/// One pass through the fixed-point map at a trial point.
#[derive(Debug, Clone)]
struct Evaluation {
    at: Unknowns,
    residual: DVector<f64>,
    order: OrderParams,
    /// Image of the map: updated (q0+, q0-, q+, R).
    image: Unknowns,
    balance: f64,
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Problem<'a> {
    loss: &'a Loss,
    model: &'a PopulationModel,
    lambda: f64,
    mode: SolveMode,
}

impl Problem<'_> {
    fn q_minus(&self, q_plus: f64) -> f64 {
        q_plus * (self.model.sigma_minus / self.model.sigma_plus).powi(2)
    }

    fn class_expectations(&self, u: &Unknowns) -> Result<(Expectations, Expectations)> {
        let mu = self.model.mu;
        let plus = expectations(self.loss, u.r * mu + u.w0, u.q0_plus.sqrt(), u.q_plus)?;
        let minus = match self.mode {
            SolveMode::Homogeneous => plus,
            SolveMode::General => expectations(self.loss, u.r * mu - u.w0, u.q0_minus.sqrt(), self.q_minus(u.q_plus))?,
        };
        Ok((plus, minus))
    }

    // alpha+ F+/q+ - alpha- F-/q-, relative to its scale.
    fn balance(&self, u: &Unknowns, ep: &Expectations, em: &Expectations) -> f64 {
        let tp = self.model.alpha_plus * ep.f / u.q_plus;
        let tm = self.model.alpha_minus * em.f / self.q_minus(u.q_plus);
        (tp - tm) / (tp + tm + f64::MIN_POSITIVE)
    }

    fn evaluate(&self, u: Unknowns) -> Result<Evaluation> {
        if !(u.q0_plus > 0.0 && u.q0_minus > 0.0 && u.q_plus > 0.0 && u.r.is_finite() && u.w0.is_finite()) {
            return Err(Error::Domain(format!("non-admissible iterate {u:?}")));
        }
        let m = self.model;
        let qm = self.q_minus(u.q_plus);
        let (ep, em) = self.class_expectations(&u)?;
        let xi_plus = -m.alpha_plus * ep.g / (u.q0_plus.sqrt() * u.q_plus);
        let xi_minus = -m.alpha_minus * em.g / (u.q0_minus.sqrt() * qm);
        let xi0_plus = m.alpha_plus * ep.h / (u.q_plus * u.q_plus);
        let xi0_minus = m.alpha_minus * em.h / (qm * qm);
        let r_hat = m.mu * (m.alpha_plus * ep.f / u.q_plus + m.alpha_minus * em.f / qm);
        let res = resolvent_moments(m, xi_plus, xi_minus, xi0_plus, xi0_minus, r_hat, self.lambda)?;
        let q_plus_new = m.sigma_plus * m.sigma_plus * res.inv_bulk;
        let balance = self.balance(&u, &ep, &em);

        let r_res = (res.r - u.r) / u.r_scale();
        let residual = match self.mode {
            SolveMode::Homogeneous => {
                DVector::from_vec(vec![res.q0_plus / u.q0_plus - 1.0, q_plus_new / u.q_plus - 1.0, r_res])
            }
            SolveMode::General => DVector::from_vec(vec![
                res.q0_plus / u.q0_plus - 1.0,
                res.q0_minus / u.q0_minus - 1.0,
                q_plus_new / u.q_plus - 1.0,
                r_res,
                balance,
            ]),
        };
        let order = OrderParams {
            q0_plus: u.q0_plus,
            q0_minus: u.q0_minus,
            q_plus: u.q_plus,
            q_minus: qm,
            r: u.r,
            w0: u.w0,
            xi_plus,
            xi_minus,
            xi0_plus,
            xi0_minus,
            r_hat,
            f_plus: ep.f,
            g_plus: ep.g,
            h_plus: ep.h,
            f_minus: em.f,
            g_minus: em.g,
            h_minus: em.h,
            converged: false,
            residual_norm: sup_norm(&residual),
            iterations: 0,
        };
        let image = Unknowns {
            q0_plus: res.q0_plus,
            q0_minus: res.q0_minus,
            q_plus: q_plus_new,
            r: res.r,
            w0: u.w0,
        };
        Ok(Evaluation {
            at: u,
            residual,
            order,
            image,
            balance,
        })
    }

    fn jacobian(&self, base: &Evaluation) -> Result<DMatrix<f64>> {
        let n = self.mode.dim();
        let x0 = base.at.coords(self.mode);
        let scale = base.at.r_scale();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let is_log = match self.mode {
                SolveMode::Homogeneous => j < 2,
                SolveMode::General => j < 3,
            };
            let h = if is_log { 1e-6 } else { 1e-6 * scale.max(1e-300) };
            let mut x = x0.clone();
            x[j] += h;
            let ev = self.evaluate(Unknowns::from_coords(&x, self.mode))?;
            for i in 0..n {
                jac[(i, j)] = (ev.residual[i] - base.residual[i]) / h;
            }
        }
        Ok(jac)
    }

    // Intercept solving the balance equation with everything else fixed.
    fn balanced_intercept(&self, u: &Unknowns) -> Result<f64> {
        let b = |w0: f64| -> Result<f64> {
            let mut t = *u;
            t.w0 = w0;
            let (ep, em) = self.class_expectations(&t)?;
            Ok(self.balance(&t, &ep, &em))
        };
        let step = u.r_scale().max(1e-8);
        let mut lo = u.w0 - step;
        let mut hi = u.w0 + step;
        let (mut blo, mut bhi) = (b(lo)?, b(hi)?);
        let mut expand = 0;
        // balance is decreasing in w0
        while blo < 0.0 || bhi > 0.0 {
            if expand > 60 {
                return Err(Error::Internal("could not bracket the intercept".into()));
            }
            let w = hi - lo;
            if blo < 0.0 {
                lo -= w;
                blo = b(lo)?;
            }
            if bhi > 0.0 {
                hi += w;
                bhi = b(hi)?;
            }
            expand += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
                break;
            }
            if b(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn picard_step(&self, ev: &Evaluation, relax: f64) -> Result<Unknowns> {
        let (u, img) = (&ev.at, &ev.image);
        let mix = |a: f64, b: f64| a + relax * (b - a);
        let mut next = Unknowns {
            q0_plus: mix(u.q0_plus, img.q0_plus),
            q0_minus: mix(u.q0_minus, img.q0_minus),
            q_plus: mix(u.q_plus, img.q_plus),
            r: mix(u.r, img.r),
            w0: u.w0,
        };
        if self.mode == SolveMode::Homogeneous {
            next.q0_minus = next.q0_plus;
        } else if ev.balance.abs() > 0.0 {
            let w = self.balanced_intercept(&next)?;
            next.w0 = mix(u.w0, w);
        }
        Ok(next)
    }

    fn solve(&self, start: Unknowns, opts: &SolverOptions) -> Result<OrderParams> {
        let mut ev = self.evaluate(start)?;
        let mut failures = 0usize;
        let mut iterations = 0usize;
        while iterations < opts.max_iter {
            let norm = sup_norm(&ev.residual);
            if norm <= opts.tol {
                break;
            }
            iterations += 1;
            let mut accepted = None;
            if failures < opts.newton_failures_before_picard {
                if let Some(step) = self.newton_direction(&ev) {
                    let x0 = ev.at.coords(self.mode);
                    let mut t = 1.0;
                    for _ in 0..30 {
                        let trial = Unknowns::from_coords(&(&x0 + &step * t), self.mode);
                        if let Ok(tr) = self.evaluate(trial) {
                            if sup_norm(&tr.residual) < norm {
                                accepted = Some(tr);
                                break;
                            }
                        }
                        t *= 0.5;
                    }
                }
                if accepted.is_none() {
                    failures += 1;
                }
            }
            ev = match accepted {
                Some(tr) => tr,
                None => {
                    let next = self.picard_step(&ev, opts.picard_relaxation)?;
                    self.evaluate(next)?
                }
            };
        }
        let converged = sup_norm(&ev.residual) <= opts.tol;
        if converged && self.mode == SolveMode::General && ev.at.w0 != 0.0 {
            // With every margin on a linear branch the balance equation is flat in w0;
            // take the minimum-norm intercept when it solves the system too.
            let centred = Unknowns { w0: 0.0, ..ev.at };
            if let Ok(c) = self.evaluate(centred) {
                if sup_norm(&c.residual) <= opts.tol {
                    ev = c;
                }
            }
        }
        let mut order = ev.order;
        order.iterations = iterations;
        order.converged = order.residual_norm <= opts.tol;
        Ok(order)
    }

    fn newton_direction(&self, ev: &Evaluation) -> Option<DVector<f64>> {
        let jac = self.jacobian(ev).ok()?;
        let step = jac.lu().solve(&(-&ev.residual))?;
        step.iter().all(|v| v.is_finite()).then_some(step)
    }
}

/// Solves the fixed point and returns the best iterate with its convergence flag set.
/// Hard numerical failures (quadrature, prox) are errors; slow convergence is not.
pub fn solve_order_params(
    loss: &Loss,
    model: &PopulationModel,
    lambda: f64,
    warm: Option<&OrderParams>,
    mode: SolveMode,
    opts: &SolverOptions,
) -> Result<OrderParams> {
    model.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be > 0, got {lambda}")));
    }
    let problem = Problem {
        loss,
        model,
        lambda,
        mode,
    };
    let mut start = match warm {
        Some(o) if o.q0_plus > 0.0 && o.q0_minus > 0.0 && o.q_plus > 0.0 => Unknowns::from_order(o),
        _ => Unknowns::initial(model, lambda),
    };
    if mode == SolveMode::Homogeneous {
        start.q0_minus = start.q0_plus;
        start.w0 = 0.0;
    }
    problem.solve(start, opts)
}

fn require_converged(order: OrderParams) -> Result<OrderParams> {
    if order.converged {
        Ok(order)
    } else {
        Err(Error::NoConvergence {
            iterations: order.iterations,
            residual: order.residual_norm,
        })
    }
}

/// Balanced shared-covariance system in `(q0, q, R)` with `w0 = 0`.
pub fn solve_homogeneous(
    loss: &Loss,
    model: &PopulationModel,
    lambda: f64,
    warm: Option<&OrderParams>,
) -> Result<OrderParams> {
    if !model.is_homogeneous() {
        return Err(Error::InvalidModel(
            "homogeneous solver needs identical class parameters".into(),
        ));
    }
    require_converged(solve_order_params(
        loss,
        model,
        lambda,
        warm,
        SolveMode::Homogeneous,
        &SolverOptions::default(),
    )?)
}

/// Full two-class system in `(q0+, q0-, q+, R, w0)`, with `q-` tied to `q+` by the noise ratio.
pub fn solve_general(
    loss: &Loss,
    model: &PopulationModel,
    lambda: f64,
    warm: Option<&OrderParams>,
) -> Result<OrderParams> {
    require_converged(solve_order_params(
        loss,
        model,
        lambda,
        warm,
        SolveMode::General,
        &SolverOptions::default(),
    )?)
}

/// Re-evaluates the fixed-point residual at `order` from scratch.
pub fn fixed_point_residual(
    loss: &Loss,
    model: &PopulationModel,
    lambda: f64,
    order: &OrderParams,
    mode: SolveMode,
) -> Result<f64> {
    let problem = Problem {
        loss,
        model,
        lambda,
        mode,
    };
    let mut u = Unknowns::from_order(order);
    if mode == SolveMode::Homogeneous {
        u.q0_minus = u.q0_plus;
    }
    Ok(sup_norm(&problem.evaluate(u)?.residual))
}
