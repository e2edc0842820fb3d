//! Independent oracles: plain Monte Carlo for the Gaussian expectations,
//! explicit finite-p matrices for the resolvent traces, brute-force search
//! for the trainer.

mod common;

use common::{golden, mc_expectations};
use hdmargin::simulate::{
    objective, population_precision, Dataset, FittedClassifier, GeneratorSpec, Noise, TrainOptions, Trainer,
};
use hdmargin::theory::resolvent_moments;
use hdmargin::{expectations, Loss, PopulationModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn expectations_match_monte_carlo() {
    let cases = [
        (Loss::svm(), 0.3, 1.2, 0.7),
        (Loss::plr(), -0.5, 0.8, 2.0),
        (Loss::dwd(1.0).unwrap(), 1.0, 1.5, 0.3),
        (Loss::dwd(0.3).unwrap(), 0.2, 0.6, 1.0),
        (Loss::lum(2.0, 1.5).unwrap(), -1.0, 2.0, 0.5),
        (Loss::plr(), 3.0, 0.4, 0.05),
    ];
    for (i, (loss, m, s, b)) in cases.iter().enumerate() {
        let e = expectations(loss, *m, *s, *b).unwrap();
        let mc = mc_expectations(loss, *m, *s, *b, 200_000, 100 + i as u64);
        for (k, q) in [e.f, e.g, e.h].into_iter().enumerate() {
            let tol = 4.0 * mc.se[k] + 1e-12;
            assert!(
                (q - mc.mean[k]).abs() <= tol,
                "{loss} m={m} s={s} b={b} moment {k}: {q} vs {} ± {}",
                mc.mean[k],
                mc.se[k]
            );
        }
    }
}

#[test]
fn dwd_expectations_match_long_monte_carlo() {
    let loss = Loss::dwd(1.0).unwrap();
    let e = expectations(&loss, 0.0, 1.0, 0.5).unwrap();
    let mc = mc_expectations(&loss, 0.0, 1.0, 0.5, 10_000_000, 7);
    for (k, q) in [e.f, e.g, e.h].into_iter().enumerate() {
        assert!(
            (q - mc.mean[k]).abs() <= 3.0 * mc.se[k],
            "moment {k}: {q} vs {} ± {}",
            mc.mean[k],
            mc.se[k]
        );
    }
}

// ---------------------------------------------------------------------------
// Resolvent traces from explicit matrices.

struct Explicit {
    sigma_plus: DMatrix<f64>,
    sigma_minus: DMatrix<f64>,
    mu_hat: DVector<f64>,
}

fn orthonormal(p: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn explicit(model: &PopulationModel, p: usize, seed: u64) -> Explicit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.k();
    let basis = orthonormal(p, k + 1, &mut rng);
    let rest = (1.0 - model.r.iter().map(|r| r * r).sum::<f64>()).max(0.0).sqrt();
    let mut mu_hat = basis.column(k) * rest;
    let build = |sigma: f64, spikes: &[f64]| {
        let mut s = DMatrix::identity(p, p);
        for (j, l) in spikes.iter().enumerate() {
            let v = basis.column(j);
            s += v * v.transpose() * *l;
        }
        s * (sigma * sigma)
    };
    for (j, r) in model.r.iter().enumerate() {
        mu_hat += basis.column(j) * *r;
    }
    Explicit {
        sigma_plus: build(model.sigma_plus, &model.lambda_plus),
        sigma_minus: build(model.sigma_minus, &model.lambda_minus),
        mu_hat,
    }
}

struct Params {
    xi_plus: f64,
    xi_minus: f64,
    xi0_plus: f64,
    xi0_minus: f64,
    r_hat: f64,
    lambda: f64,
}

/// Exact finite-p expectations `[q0+, q0-, R, tr(Sigma+ M^-1)/p / sigma+^2]`.
fn finite_p(ex: &Explicit, pr: &Params) -> [f64; 4] {
    let p = ex.mu_hat.len();
    let pf = p as f64;
    let m = &ex.sigma_plus * pr.xi_plus + &ex.sigma_minus * pr.xi_minus + DMatrix::identity(p, p) * pr.lambda;
    let minv = m.try_inverse().unwrap();
    let q0 = |s: &DMatrix<f64>| {
        let a = &minv * s * &minv;
        let noise = (pr.xi0_plus * (&a * &ex.sigma_plus).trace() + pr.xi0_minus * (&a * &ex.sigma_minus).trace()) / pf;
        noise + pr.r_hat * pr.r_hat * ex.mu_hat.dot(&(&a * &ex.mu_hat))
    };
    let r = pr.r_hat * ex.mu_hat.dot(&(&minv * &ex.mu_hat));
    let bulk = (&ex.sigma_plus * &minv).trace() / pf;
    [q0(&ex.sigma_plus), q0(&ex.sigma_minus), r, bulk]
}

fn heterogeneous_model() -> PopulationModel {
    PopulationModel {
        mu: 1.5,
        sigma_plus: 1.0,
        sigma_minus: 1.4,
        alpha_plus: 0.6,
        alpha_minus: 0.3,
        lambda_plus: vec![3.0, 0.0, 1.5],
        lambda_minus: vec![0.0, 5.0, 1.5],
        r: vec![0.5, -0.4, 0.3],
    }
}

#[test]
fn resolvent_traces_match_explicit_matrices() {
    let model = heterogeneous_model();
    let pr = Params {
        xi_plus: 0.8,
        xi_minus: 0.35,
        xi0_plus: 0.6,
        xi0_minus: 0.9,
        r_hat: 1.3,
        lambda: 0.4,
    };
    let closed = resolvent_moments(
        &model,
        pr.xi_plus,
        pr.xi_minus,
        pr.xi0_plus,
        pr.xi0_minus,
        pr.r_hat,
        pr.lambda,
    )
    .unwrap();
    // Bulk traces carry a (p - K)/p factor, so the finite-p values are affine in 1/p.
    let (p1, p2) = (40usize, 80usize);
    let f1 = finite_p(&explicit(&model, p1, 1), &pr);
    let f2 = finite_p(&explicit(&model, p2, 2), &pr);
    let limit: Vec<f64> = (0..4)
        .map(|i| (p2 as f64 * f2[i] - p1 as f64 * f1[i]) / (p2 - p1) as f64)
        .collect();
    let sp2 = model.sigma_plus * model.sigma_plus;
    let expected = [closed.q0_plus, closed.q0_minus, closed.r, sp2 * closed.inv_bulk];
    for i in 0..4 {
        assert!(
            (limit[i] - expected[i]).abs() <= 1e-10 * expected[i].abs().max(1.0),
            "component {i}: {} vs {}",
            limit[i],
            expected[i]
        );
    }
}

#[test]
fn sampled_weights_reproduce_traces() {
    let model = heterogeneous_model();
    let pr = Params {
        xi_plus: 0.8,
        xi_minus: 0.35,
        xi0_plus: 0.6,
        xi0_minus: 0.9,
        r_hat: 1.3,
        lambda: 0.4,
    };
    let p = 50;
    let ex = explicit(&model, p, 3);
    let exact = finite_p(&ex, &pr);
    let m = &ex.sigma_plus * pr.xi_plus + &ex.sigma_minus * pr.xi_minus + DMatrix::identity(p, p) * pr.lambda;
    let minv = m.try_inverse().unwrap();
    let half = |s: &DMatrix<f64>| s.clone().cholesky().unwrap().l();
    let (lp, lm) = (half(&ex.sigma_plus), half(&ex.sigma_minus));
    let shift = &ex.mu_hat * ((p as f64).sqrt() * pr.r_hat);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 100_000;
    let (mut s, mut s2, mut t, mut t2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let zp = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zm = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rhs = &lp * zp * pr.xi0_plus.sqrt() + &lm * zm * pr.xi0_minus.sqrt() + &shift;
        let w = &minv * rhs;
        let q = w.dot(&(&ex.sigma_plus * &w)) / p as f64;
        let r = w.dot(&ex.mu_hat) / (p as f64).sqrt();
        s += q;
        s2 += q * q;
        t += r;
        t2 += r * r;
    }
    let n = draws as f64;
    let (mq, mr) = (s / n, t / n);
    let (se_q, se_r) = (((s2 / n - mq * mq) / n).sqrt(), ((t2 / n - mr * mr) / n).sqrt());
    assert!(
        (mq - exact[0]).abs() <= 3.0 * se_q,
        "q0+: {mq} vs {} ± {se_q}",
        exact[0]
    );
    assert!((mr - exact[2]).abs() <= 3.0 * se_r, "R: {mr} vs {} ± {se_r}", exact[2]);
}

// ---------------------------------------------------------------------------
// Trainer against nested golden-section search on the scaled objective.

fn toy() -> Dataset {
    let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.5, 0.3, 1.2, 2.0, -0.4, -0.7, -0.2, 0.1, -1.5, -1.1, 0.6]);
    Dataset::new(x, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]).unwrap()
}

/// Minimum of `sum V(y (z^T w + w0)) + lambda/2 |w|^2` with `z = x / sqrt(2)`, written out directly.
fn brute_force(loss: &Loss, data: &Dataset, lambda: f64) -> f64 {
    let z: Vec<[f64; 2]> = (0..6)
        .map(|i| [data.features[(i, 0)] / 2f64.sqrt(), data.features[(i, 1)] / 2f64.sqrt()])
        .collect();
    let obj = |w1: f64, w2: f64, w0: f64| {
        let fit: f64 = (0..6)
            .map(|i| loss.evaluate(data.labels[i] * (z[i][0] * w1 + z[i][1] * w2 + w0)))
            .sum();
        fit + 0.5 * lambda * (w1 * w1 + w2 * w2)
    };
    let b = 30.0;
    let iters = 48;
    golden(
        |w1| golden(|w2| golden(|w0| obj(w1, w2, w0), -b, b, iters).1, -b, b, iters).1,
        -b,
        b,
        iters,
    )
    .1
}

#[test]
fn trainer_reaches_brute_force_minimum() {
    let data = toy();
    let losses = [
        Loss::svm(),
        Loss::plr(),
        Loss::dwd(1.0).unwrap(),
        Loss::dwd(0.5).unwrap(),
        Loss::lum(1.0, 3.0).unwrap(),
    ];
    for loss in &losses {
        let mut trainer = Trainer::new(
            &data,
            TrainOptions {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        for lambda in [2.0, 0.3] {
            let fit = trainer.fit(loss, lambda).unwrap();
            assert!(fit.converged, "{loss} at {lambda}");
            let ours = fit.objective(&data);
            let oracle = brute_force(loss, &data, lambda);
            assert!(
                (ours - oracle).abs() <= 1e-6,
                "{loss} lambda={lambda}: {ours} vs brute force {oracle}"
            );
            let direct = objective(loss, &data, lambda, &fit.w, fit.w0);
            assert_eq!(direct, ours);
        }
    }
}

// ---------------------------------------------------------------------------
// Population precision.

#[test]
fn unrelated_direction_is_at_chance() {
    let model = PopulationModel::homogeneous(2.0, 1.0, 0.5, vec![], vec![]).unwrap();
    let spec = GeneratorSpec::new(model, 2000, Noise::Gaussian, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = DVector::from_fn(2000, |_, _| rng.sample::<f64, _>(StandardNormal));
    let fit = FittedClassifier {
        w,
        w0: 0.0,
        lambda: 1.0,
        loss: Loss::svm(),
        kkt_residual: 0.0,
        converged: true,
        iterations: 0,
    };
    let (pp, pm) = population_precision(&fit, &spec).unwrap();
    assert!((pp - 0.5).abs() < 0.02 && (pm - 0.5).abs() < 0.02, "{pp} {pm}");
}

#[test]
fn sampled_precision_agrees_with_closed_form_direction() {
    // Rademacher noise has no closed form; the aligned rule should still land near Phi(mu / sigma).
    let model = PopulationModel::homogeneous(1.0, 1.0, 0.5, vec![], vec![]).unwrap();
    let spec = GeneratorSpec::new(model, 400, Noise::RademacherScaled, 2).unwrap();
    let geo = spec.geometry();
    let fit = FittedClassifier {
        w: geo.mu_hat.clone(),
        w0: 0.0,
        lambda: 1.0,
        loss: Loss::svm(),
        kkt_residual: 0.0,
        converged: true,
        iterations: 0,
    };
    let (pp, pm) = population_precision(&fit, &spec).unwrap();
    let target = hdmargin::normal_cdf(1.0);
    assert!(
        (pp - target).abs() < 0.01 && (pm - target).abs() < 0.01,
        "{pp} {pm} vs {target}"
    );
}
