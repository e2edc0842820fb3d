use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::Dataset;
use crate::error::{Error, Result};
use crate::losses::Loss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Initial augmented-Lagrangian penalty.
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Rescale `rho` by 2 when one scaled residual exceeds the other by this factor.
    pub balance_ratio: f64,
    pub balance_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            rho: 1.0,
            tol: 1e-8,
            max_iter: 100_000,
            balance_ratio: 10.0,
            balance_every: 10,
        }
    }
}

/// Minimizer of `sum_i V(y_i (x_i^T w / sqrt(p) + w0)) + lambda/2 |w|^2`.
#[derive(Debug, Clone)]
pub struct FittedClassifier {
    pub w: DVector<f64>,
    pub w0: f64,
    pub lambda: f64,
    pub loss: Loss,
    /// Larger of the relative primal and dual residuals at exit.
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedClassifier {
    /// Decision value `x^T w / sqrt(p) + w0`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let p = self.w.len() as f64;
        x.iter().zip(self.w.iter()).map(|(a, b)| a * b).sum::<f64>() / p.sqrt() + self.w0
    }

    pub fn objective(&self, data: &Dataset) -> f64 {
        objective(&self.loss, data, self.lambda, &self.w, self.w0)
    }
}

pub fn objective(loss: &Loss, data: &Dataset, lambda: f64, w: &DVector<f64>, w0: f64) -> f64 {
    let scale = (data.p() as f64).sqrt();
    let margins = &data.features * w / scale;
    let fit: f64 = (0..data.n())
        .map(|i| loss.evaluate(data.labels[i] * (margins[i] + w0)))
        .sum();
    fit + 0.5 * lambda * w.norm_squared()
}

struct State {
    beta: DVector<f64>,
    u: DVector<f64>,
    s: DVector<f64>,
    rho: f64,
}

/// Consensus ADMM on `u = A beta` with `A = [y_i x_i / sqrt(p), y_i]`.
///
/// The `u`-step is the loss prox applied per sample, the `beta`-step a ridge
/// solve with a cached Cholesky factor. Consecutive fits reuse the last
/// iterate, so sweeping `lambda` on one dataset is cheap.
pub struct Trainer {
    a: DMatrix<f64>,
    ata: DMatrix<f64>,
    opts: TrainOptions,
    state: Option<State>,
}

impl Trainer {
    pub fn new(data: &Dataset, opts: TrainOptions) -> Result<Self> {
        data.validate()?;
        let (n, p) = (data.n(), data.p());
        let scale = (p as f64).sqrt();
        let a = DMatrix::from_fn(n, p + 1, |i, j| {
            let y = data.labels[i];
            if j < p {
                y * data.features[(i, j)] / scale
            } else {
                y
            }
        });
        let ata = a.tr_mul(&a);
        Ok(Trainer {
            a,
            ata,
            opts,
            state: None,
        })
    }

    /// Drops the warm start.
    pub fn reset(&mut self) {
        self.state = None;
    }

    fn factor(&self, lambda: f64, rho: f64) -> Result<Cholesky<f64, Dyn>> {
        let d = self.ata.nrows();
        let mut k = &self.ata * rho;
        for j in 0..d - 1 {
            k[(j, j)] += lambda;
        }
        Cholesky::new(k).ok_or_else(|| Error::Internal("ridge system is not positive definite".into()))
    }

    pub fn fit(&mut self, loss: &Loss, lambda: f64) -> Result<FittedClassifier> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be > 0, got {lambda}")));
        }
        let (n, d) = self.a.shape();
        let State {
            mut beta,
            mut u,
            mut s,
            mut rho,
        } = self.state.take().unwrap_or_else(|| State {
            beta: DVector::zeros(d),
            u: DVector::zeros(n),
            s: DVector::zeros(n),
            rho: self.opts.rho,
        });
        let mut chol = self.factor(lambda, rho)?;
        let tol = self.opts.tol;

        let mut ab = DVector::zeros(n);
        let mut tmp = DVector::zeros(n);
        let mut u_old = DVector::zeros(n);
        let mut back = DVector::zeros(d);
        let mut back_s = DVector::zeros(d);
        let mut residual = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;

        for it in 1..=self.opts.max_iter {
            iterations = it;
            tmp.copy_from(&u);
            tmp -= &s;
            beta.gemv_tr(rho, &self.a, &tmp, 0.0);
            chol.solve_mut(&mut beta);
            ab.gemv(1.0, &self.a, &beta, 0.0);

            u_old.copy_from(&u);
            let b = 1.0 / rho;
            for i in 0..n {
                u[i] = loss.prox(ab[i] + s[i], b)?;
            }
            s += &ab;
            s -= &u;

            tmp.copy_from(&u);
            tmp -= &u_old;
            back.gemv_tr(rho, &self.a, &tmp, 0.0);
            back_s.gemv_tr(rho, &self.a, &s, 0.0);
            tmp.copy_from(&ab);
            tmp -= &u;
            let r_pri = tmp.norm() / (1.0 + ab.norm().max(u.norm()));
            let r_dual = back.norm() / (1.0 + back_s.norm());
            residual = r_pri.max(r_dual);
            if r_pri <= tol && r_dual <= tol {
                converged = true;
                break;
            }

            if it % self.opts.balance_every == 0 {
                let ratio = self.opts.balance_ratio;
                let new_rho = if r_pri > ratio * r_dual {
                    rho * 2.0
                } else if r_dual > ratio * r_pri {
                    rho / 2.0
                } else {
                    rho
                };
                if new_rho != rho {
                    s *= rho / new_rho;
                    rho = new_rho;
                    chol = self.factor(lambda, rho)?;
                }
            }
        }

        let w = beta.rows(0, d - 1).clone_owned();
        let w0 = beta[d - 1];
        self.state = Some(State { beta, u, s, rho });
        Ok(FittedClassifier {
            w,
            w0,
            lambda,
            loss: *loss,
            kkt_residual: residual,
            converged,
            iterations,
        })
    }
}

/// One-shot fit with default options.
pub fn train(data: &Dataset, loss: &Loss, lambda: f64) -> Result<FittedClassifier> {
    Trainer::new(data, TrainOptions::default())?.fit(loss, lambda)
}
