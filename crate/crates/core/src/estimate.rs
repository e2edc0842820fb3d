//! Spiked-model parameters from a labelled data matrix.
//!
//! Noise level from the median absolute deviation, signal size from the
//! bias-corrected mean difference, spikes from the sample eigenvalues above
//! the detection edge, debiased with the spiked-covariance phase-transition
//! formulas.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PopulationModel;
use crate::simulate::Dataset;

/// `Phi^{-1}(3/4)`, the MAD of a standard normal.
pub const MAD_NORMAL: f64 = 0.674_489_750_196_081_7;

/// Admissible norm of the projection vector after rescaling.
const R_NORM_CAP: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMode {
    /// Shared covariance: both classes centered by their own means, then pooled.
    #[default]
    Pooled,
    /// Separate spikes per class; `lambda` of the other class is zero for each spike.
    ClassSpecific,
}

impl std::str::FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" | "homogeneous" => Ok(EstimationMode::Pooled),
            "class-specific" | "heterogeneous" => Ok(EstimationMode::ClassSpecific),
            _ => Err(Error::Usage(format!(
                "unknown estimation mode `{s}` (expected pooled or class-specific)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationReport {
    pub model: PopulationModel,
    /// Retained sample eigenvalues `lambda~` (bulk-subtracted) per class; in pooled mode both hold the pooled ones.
    pub sample_eigs_plus: Vec<f64>,
    pub sample_eigs_minus: Vec<f64>,
    pub threshold_plus: f64,
    pub threshold_minus: f64,
    pub homogeneous: bool,
    pub mean_diff_norm: f64,
    pub warnings: Vec<String>,
}

/// Robust scale of all entries: `MAD / Phi^{-1}(3/4)`.
pub fn estimate_sigma(matrix: &DMatrix<f64>) -> Result<f64> {
    if matrix.is_empty() {
        return Err(Error::Estimation("cannot estimate noise from an empty matrix".into()));
    }
    let mut v: Vec<f64> = matrix.iter().copied().collect();
    let med = median(&mut v);
    for x in v.iter_mut() {
        *x = (*x - med).abs();
    }
    let mad = median(&mut v);
    if !(mad > 0.0) {
        return Err(Error::Estimation("median absolute deviation is zero".into()));
    }
    Ok(mad / MAD_NORMAL)
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// `1/2 sqrt(|mu_c|^2 - sigma_+^2/alpha_+ - sigma_-^2/alpha_-)`; the flag is set when the radicand was clamped at zero.
pub fn estimate_mu(
    mean_diff_norm: f64,
    sigma_plus: f64,
    sigma_minus: f64,
    alpha_plus: f64,
    alpha_minus: f64,
) -> (f64, bool) {
    let radicand = mean_diff_norm * mean_diff_norm
        - sigma_plus * sigma_plus / alpha_plus
        - sigma_minus * sigma_minus / alpha_minus;
    if radicand > 0.0 {
        (0.5 * radicand.sqrt(), false)
    } else {
        (0.0, true)
    }
}

/// Bulk-subtracted sample eigenvalue above which a spike is detectable: `(1 + sqrt(1/alpha))^2 - 1`.
pub fn detection_threshold(alpha: f64) -> f64 {
    let s = (1.0 / alpha).sqrt();
    (1.0 + s) * (1.0 + s) - 1.0
}

/// Population spike `lambda` whose sample image is `lambda~ = lambda + 1/alpha + 1/(alpha lambda)`.
pub fn debias_eigenvalue(sample: f64, alpha: f64) -> Option<f64> {
    let c = sample - 1.0 / alpha;
    let disc = c * c - 4.0 / alpha;
    // Rounding at the boundary itself.
    let disc = if disc < 0.0 && disc > -1e-12 * c * c { 0.0 } else { disc };
    (disc >= 0.0 && c > 0.0).then(|| 0.5 * (c + disc.sqrt()))
}

/// Cosine between a population spike direction and its sample eigenvector:
/// `sqrt((1 - 1/(alpha lambda^2)) / (1 + 1/(alpha lambda)))`.
pub fn eigenvector_overlap(lambda: f64, alpha: f64) -> Option<f64> {
    let num = 1.0 - 1.0 / (alpha * lambda * lambda);
    let den = 1.0 + 1.0 / (alpha * lambda);
    (num > 0.0 && den > 0.0).then(|| (num / den).sqrt())
}

#[derive(Debug, Clone, Default)]
pub struct SpikeEstimate {
    /// Retained bulk-subtracted sample eigenvalues, decreasing.
    pub sample: Vec<f64>,
    pub lambda: Vec<f64>,
    pub r: Vec<f64>,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

/// Spikes of a standardized, centered matrix (rows are samples).
///
/// `dof` is the covariance divisor (rows minus fitted means) and sets the
/// effective ratio `alpha = dof / p`. Projections are measured against the
/// mean difference `mean_diff` and normalized by `2 mu_hat` (the mean
/// difference itself carries sampling noise of order `1/alpha`). Eigenvector
/// signs are chosen so projections are nonnegative.
pub fn estimate_spikes(
    centered: &DMatrix<f64>,
    dof: usize,
    mean_diff: &DVector<f64>,
    mu_hat: f64,
) -> Result<SpikeEstimate> {
    let p = centered.ncols();
    if dof == 0 || p == 0 {
        return Err(Error::Estimation("not enough samples to form a covariance".into()));
    }
    if mean_diff.len() != p {
        return Err(Error::Estimation("mean difference has the wrong length".into()));
    }
    let alpha = dof as f64 / p as f64;
    let threshold = detection_threshold(alpha);
    let cov = centered.tr_mul(centered) / dof as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let norm = if mu_hat > 0.0 { 2.0 * mu_hat } else { mean_diff.norm() };
    let mut out = SpikeEstimate {
        threshold,
        ..Default::default()
    };
    if mu_hat <= 0.0 {
        out.warnings
            .push("signal estimate is zero; projections normalized by the raw mean difference".into());
    }
    for &i in &order {
        let sample = eig.eigenvalues[i] - 1.0;
        if sample <= threshold {
            break;
        }
        let Some(lambda) = debias_eigenvalue(sample, alpha) else {
            out.warnings
                .push(format!("sample eigenvalue {sample:.4} cannot be debiased; dropped"));
            continue;
        };
        let overlap = match eigenvector_overlap(lambda, alpha) {
            Some(o) if o > 0.0 => o,
            _ => {
                out.warnings
                    .push(format!("spike {lambda:.4} has no real eigenvector overlap; dropped"));
                continue;
            }
        };
        let proj = mean_diff.dot(&eig.eigenvectors.column(i)).abs();
        let r = if norm > 0.0 { proj / (norm * overlap) } else { 0.0 };
        out.sample.push(sample);
        out.lambda.push(lambda);
        out.r.push(r);
    }
    Ok(out)
}

fn class_centered(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = x.row_mean().transpose();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    (c, mean)
}

/// Clips each projection to `[-1, 1]` and rescales the vector if its squared norm exceeds one.
fn admissible(r: &mut [f64], warnings: &mut Vec<String>) {
    for x in r.iter_mut() {
        *x = x.clamp(-1.0, 1.0);
    }
    let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > R_NORM_CAP {
        warnings.push(format!("estimated projections have norm {norm:.4} > 1; rescaled"));
        for x in r.iter_mut() {
            *x *= R_NORM_CAP / norm;
        }
    }
}

pub fn estimate_model(data: &Dataset, mode: EstimationMode) -> Result<EstimationReport> {
    data.validate()?;
    let p = data.p();
    let (xp, xm) = (data.class_matrix(1.0), data.class_matrix(-1.0));
    let (n_plus, n_minus) = (xp.nrows(), xm.nrows());
    if n_plus < 2 || n_minus < 2 {
        return Err(Error::Estimation("each class needs at least two samples".into()));
    }
    let (cp, mean_plus) = class_centered(&xp);
    let (cm, mean_minus) = class_centered(&xm);
    let mean_diff = &mean_plus - &mean_minus;
    let alpha_plus = n_plus as f64 / p as f64;
    let alpha_minus = n_minus as f64 / p as f64;
    let mut warnings = Vec::new();

    let (sigma_plus, sigma_minus) = match mode {
        EstimationMode::Pooled => {
            let s = estimate_sigma(&stack(&cp, &cm))?;
            (s, s)
        }
        EstimationMode::ClassSpecific => (estimate_sigma(&cp)?, estimate_sigma(&cm)?),
    };
    let (mu, clamped) = estimate_mu(mean_diff.norm(), sigma_plus, sigma_minus, alpha_plus, alpha_minus);
    if clamped {
        warnings.push("mean difference is within noise; signal size clamped to zero".into());
    }

    let report = match mode {
        EstimationMode::Pooled => {
            let pooled = stack(&cp, &cm) / sigma_plus;
            let mut s = estimate_spikes(&pooled, n_plus + n_minus - 2, &mean_diff, mu)?;
            warnings.append(&mut s.warnings);
            admissible(&mut s.r, &mut warnings);
            let model = PopulationModel {
                mu,
                sigma_plus,
                sigma_minus,
                alpha_plus,
                alpha_minus,
                lambda_plus: s.lambda.clone(),
                lambda_minus: s.lambda.clone(),
                r: s.r.clone(),
            };
            EstimationReport {
                model,
                sample_eigs_plus: s.sample.clone(),
                sample_eigs_minus: s.sample,
                threshold_plus: s.threshold,
                threshold_minus: s.threshold,
                homogeneous: true,
                mean_diff_norm: mean_diff.norm(),
                warnings,
            }
        }
        EstimationMode::ClassSpecific => {
            let mut sp = estimate_spikes(&(cp / sigma_plus), n_plus - 1, &mean_diff, mu)?;
            let mut sm = estimate_spikes(&(cm / sigma_minus), n_minus - 1, &mean_diff, mu)?;
            warnings.append(&mut sp.warnings);
            warnings.append(&mut sm.warnings);
            let (kp, km) = (sp.lambda.len(), sm.lambda.len());
            let mut r: Vec<f64> = sp.r.iter().chain(&sm.r).copied().collect();
            admissible(&mut r, &mut warnings);
            let mut lambda_plus = sp.lambda.clone();
            lambda_plus.extend(std::iter::repeat_n(0.0, km));
            let mut lambda_minus = vec![0.0; kp];
            lambda_minus.extend(&sm.lambda);
            let model = PopulationModel {
                mu,
                sigma_plus,
                sigma_minus,
                alpha_plus,
                alpha_minus,
                lambda_plus,
                lambda_minus,
                r,
            };
            EstimationReport {
                model,
                sample_eigs_plus: sp.sample,
                sample_eigs_minus: sm.sample,
                threshold_plus: sp.threshold,
                threshold_minus: sm.threshold,
                homogeneous: false,
                mean_diff_norm: mean_diff.norm(),
                warnings,
            }
        }
    };
    report.model.validate()?;
    Ok(report)
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}
