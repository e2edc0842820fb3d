//! Finite-size Monte Carlo: draw spiked-model data, fit the regularized
//! classifier and measure its precision under the population.

mod generate;
mod train;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generate::{Dataset, GeneratorSpec, Geometry, Noise};
pub use train::{objective, train, FittedClassifier, TrainOptions, Trainer};

use crate::error::{Error, Result};
use crate::gauss::normal_cdf;
use crate::losses::Loss;
use crate::theory::{LambdaGrid, PrecisionCurve};

/// Test-set size per class when no closed form is available.
pub const FALLBACK_TEST_SIZE: usize = 50_000;

/// Class-conditional accuracy `(P[x_+^T w/sqrt(p) + w0 > 0], P[x_-^T w/sqrt(p) + w0 < 0])`
/// of a fitted rule under the generator's population.
///
/// Exact for Gaussian noise; otherwise estimated on a fresh test set drawn from the same spec.
pub fn population_precision(fit: &FittedClassifier, spec: &GeneratorSpec) -> Result<(f64, f64)> {
    population_precision_with(fit, spec, &spec.geometry())
}

pub fn population_precision_with(fit: &FittedClassifier, spec: &GeneratorSpec, geo: &Geometry) -> Result<(f64, f64)> {
    if fit.w.len() != spec.p {
        return Err(Error::Usage(format!(
            "classifier has {} weights but p = {}",
            fit.w.len(),
            spec.p
        )));
    }
    if fit.w.norm() == 0.0 {
        return Err(Error::Domain("precision is undefined for w = 0".into()));
    }
    match spec.noise {
        Noise::Gaussian => Ok(gaussian_precision(&fit.w, fit.w0, spec, geo)),
        Noise::RademacherScaled => sampled_precision(fit, spec),
    }
}

fn gaussian_precision(w: &DVector<f64>, w0: f64, spec: &GeneratorSpec, geo: &Geometry) -> (f64, f64) {
    let m = &spec.model;
    let p = spec.p as f64;
    let overlap = geo.mu_hat.dot(w) / p.sqrt();
    let proj = geo.spikes.tr_mul(w);
    let norm2 = w.norm_squared();
    let var = |sigma: f64, spikes: &[f64]| {
        let spiked: f64 = spikes.iter().zip(proj.iter()).map(|(l, c)| l * c * c).sum();
        sigma * sigma * (norm2 + spiked) / p
    };
    let sd_plus = var(m.sigma_plus, &m.lambda_plus).sqrt();
    let sd_minus = var(m.sigma_minus, &m.lambda_minus).sqrt();
    (
        normal_cdf((m.mu * overlap + w0) / sd_plus),
        normal_cdf((m.mu * overlap - w0) / sd_minus),
    )
}

fn sampled_precision(fit: &FittedClassifier, spec: &GeneratorSpec) -> Result<(f64, f64)> {
    let mut test = spec.with_seed(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    test.n_plus = FALLBACK_TEST_SIZE;
    test.n_minus = FALLBACK_TEST_SIZE;
    let data = test.generate_with_geometry(&spec.geometry())?;
    let scores = &data.features * &fit.w / (spec.p as f64).sqrt();
    let (mut hit_plus, mut hit_minus) = (0usize, 0usize);
    for (i, s) in scores.iter().enumerate() {
        let v = s + fit.w0;
        if data.labels[i] > 0.0 && v > 0.0 {
            hit_plus += 1;
        } else if data.labels[i] < 0.0 && v < 0.0 {
            hit_minus += 1;
        }
    }
    Ok((
        hit_plus as f64 / test.n_plus as f64,
        hit_minus as f64 / test.n_minus as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub lambda: f64,
    /// Mean balanced precision over converged replicates.
    pub mc_mean: f64,
    pub mc_se: f64,
    pub theory: Option<f64>,
    pub reps_converged: usize,
}

struct RepOutcome {
    precision: Vec<Option<f64>>,
}

/// For each grid value, fits `reps` datasets (replicate `r` uses `seed + r`)
/// and averages the balanced population precision. Replicates run in parallel;
/// within a replicate the grid is swept from large to small `lambda` with warm starts.
pub fn monte_carlo_curve(spec: &GeneratorSpec, loss: &Loss, grid: &LambdaGrid, reps: usize) -> Result<Vec<McPoint>> {
    monte_carlo_curve_with(spec, loss, grid, reps, &TrainOptions::default())
}

pub fn monte_carlo_curve_with(
    spec: &GeneratorSpec,
    loss: &Loss,
    grid: &LambdaGrid,
    reps: usize,
    opts: &TrainOptions,
) -> Result<Vec<McPoint>> {
    if reps < 2 {
        return Err(Error::Usage("Monte Carlo needs at least 2 replicates".into()));
    }
    spec.validate()?;
    let lambdas = grid.values();
    let outcomes: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|r| replicate(spec, loss, lambdas, r as u64, opts))
        .collect::<Result<_>>()?;

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let vals: Vec<f64> = outcomes.iter().filter_map(|o| o.precision[j]).collect();
            let k = vals.len();
            let mean = if k > 0 {
                vals.iter().sum::<f64>() / k as f64
            } else {
                f64::NAN
            };
            let se = if k > 1 {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
                (var / k as f64).sqrt()
            } else {
                f64::NAN
            };
            McPoint {
                lambda,
                mc_mean: mean,
                mc_se: se,
                theory: None,
                reps_converged: k,
            }
        })
        .collect())
}

fn replicate(spec: &GeneratorSpec, loss: &Loss, lambdas: &[f64], r: u64, opts: &TrainOptions) -> Result<RepOutcome> {
    let spec = spec.with_seed(spec.seed.wrapping_add(r));
    let data = spec.generate()?;
    let geo = spec.geometry();
    let mut trainer = Trainer::new(&data, *opts)?;
    let mut precision = vec![None; lambdas.len()];
    for (j, &lambda) in lambdas.iter().enumerate().rev() {
        let fit = trainer.fit(loss, lambda)?;
        if fit.converged && fit.w.norm() > 0.0 {
            let (pp, pm) = population_precision_with(&fit, &spec, &geo)?;
            precision[j] = Some(0.5 * (pp + pm));
        }
    }
    Ok(RepOutcome { precision })
}

/// Copies the balanced theory precision onto matching grid points.
pub fn attach_theory(points: &mut [McPoint], curve: &PrecisionCurve) {
    for (pt, th) in points.iter_mut().zip(&curve.points) {
        if th.order.converged && (th.lambda - pt.lambda).abs() <= 1e-12 * pt.lambda {
            pt.theory = Some(th.balanced);
        }
    }
}

impl McPoint {
    /// `|theory - mc_mean| <= 2 SE`; `None` without theory or a finite SE.
    pub fn agrees(&self) -> Option<bool> {
        let t = self.theory?;
        (self.mc_se.is_finite() && self.mc_mean.is_finite()).then(|| (t - self.mc_mean).abs() <= 2.0 * self.mc_se)
    }
}

/// CSV with columns `lambda,theory,mc_mean,mc_se,reps_converged,agree`.
pub fn write_mc_csv<W: std::io::Write>(points: &[McPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "theory", "mc_mean", "mc_se", "reps_converged", "agree"])?;
    for p in points {
        w.write_record([
            sig6(p.lambda),
            p.theory.map(sig6).unwrap_or_default(),
            sig6(p.mc_mean),
            sig6(p.mc_se),
            p.reps_converged.to_string(),
            p.agrees().map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Six significant digits; exponent notation outside `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let a = x.abs();
    if (1e-4..1e6).contains(&a) {
        return sci.parse::<f64>().unwrap_or(x).to_string();
    }
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}e{exp}")
}
