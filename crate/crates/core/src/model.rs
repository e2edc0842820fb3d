//! Spiked two-class population model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the two-class spiked population.
///
/// Class `±` has mean `±mu * mu_hat` and covariance
/// `sigma_±^2 (I + sum_k lambda_k^± v_k v_k^T)`, with `R_k = v_k^T mu_hat`.
/// `alpha_±` are the per-class sample ratios `n_± / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct PopulationModel {
    pub mu: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    pub r: Vec<f64>,
}

// On-disk layout; carries the redundant `K` key.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    mu: f64,
    sigma_plus: f64,
    sigma_minus: f64,
    alpha_plus: f64,
    alpha_minus: f64,
    #[serde(rename = "K")]
    k: usize,
    lambda_plus: Vec<f64>,
    lambda_minus: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
}

impl TryFrom<ModelFile> for PopulationModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.lambda_plus.len() != f.k || f.lambda_minus.len() != f.k || f.r.len() != f.k {
            return Err(Error::InvalidModel(format!(
                "K = {} but lambda_plus/lambda_minus/R have lengths {}/{}/{}",
                f.k,
                f.lambda_plus.len(),
                f.lambda_minus.len(),
                f.r.len()
            )));
        }
        let model = PopulationModel {
            mu: f.mu,
            sigma_plus: f.sigma_plus,
            sigma_minus: f.sigma_minus,
            alpha_plus: f.alpha_plus,
            alpha_minus: f.alpha_minus,
            lambda_plus: f.lambda_plus,
            lambda_minus: f.lambda_minus,
            r: f.r,
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<PopulationModel> for ModelFile {
    fn from(m: PopulationModel) -> Self {
        ModelFile {
            mu: m.mu,
            sigma_plus: m.sigma_plus,
            sigma_minus: m.sigma_minus,
            alpha_plus: m.alpha_plus,
            alpha_minus: m.alpha_minus,
            k: m.r.len(),
            lambda_plus: m.lambda_plus,
            lambda_minus: m.lambda_minus,
            r: m.r,
        }
    }
}

impl PopulationModel {
    /// Shared-covariance model with balanced classes. `alpha` is the total ratio `n / p`.
    pub fn homogeneous(mu: f64, sigma: f64, alpha: f64, spikes: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let model = PopulationModel {
            mu,
            sigma_plus: sigma,
            sigma_minus: sigma,
            alpha_plus: alpha / 2.0,
            alpha_minus: alpha / 2.0,
            lambda_minus: spikes.clone(),
            lambda_plus: spikes,
            r,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return bad(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        for (name, v) in [
            ("sigma_plus", self.sigma_plus),
            ("sigma_minus", self.sigma_minus),
            ("alpha_plus", self.alpha_plus),
            ("alpha_minus", self.alpha_minus),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        let k = self.r.len();
        if self.lambda_plus.len() != k || self.lambda_minus.len() != k {
            return bad(format!(
                "spike vectors disagree in length: lambda_plus {}, lambda_minus {}, R {}",
                self.lambda_plus.len(),
                self.lambda_minus.len(),
                k
            ));
        }
        if let Some(l) = self
            .lambda_plus
            .iter()
            .chain(&self.lambda_minus)
            .find(|l| !(l.is_finite() && **l >= 0.0))
        {
            return bad(format!("spike strengths must be >= 0, got {l}"));
        }
        if let Some(r) = self.r.iter().find(|r| !(r.is_finite() && r.abs() <= 1.0)) {
            return bad(format!("projections must lie in [-1, 1], got {r}"));
        }
        let s: f64 = self.r.iter().map(|r| r * r).sum();
        if s > 1.0 + 1e-12 {
            return bad(format!("sum of squared projections is {s} > 1"));
        }
        Ok(())
    }

    /// Number of spikes `K`.
    pub fn k(&self) -> usize {
        self.r.len()
    }

    /// Projection of `mu_hat` onto the complement of the spike directions.
    pub fn residual_projection(&self) -> f64 {
        (1.0 - self.r.iter().map(|r| r * r).sum::<f64>()).max(0.0).sqrt()
    }

    pub fn alpha_total(&self) -> f64 {
        self.alpha_plus + self.alpha_minus
    }

    /// True when both classes share noise level, sample ratio and spikes.
    pub fn is_homogeneous(&self) -> bool {
        self.sigma_plus == self.sigma_minus
            && self.alpha_plus == self.alpha_minus
            && self.lambda_plus == self.lambda_minus
    }

    /// The same population with class labels exchanged.
    pub fn swapped(&self) -> Self {
        PopulationModel {
            mu: self.mu,
            sigma_plus: self.sigma_minus,
            sigma_minus: self.sigma_plus,
            alpha_plus: self.alpha_minus,
            alpha_minus: self.alpha_plus,
            lambda_plus: self.lambda_minus.clone(),
            lambda_minus: self.lambda_plus.clone(),
            r: self.r.clone(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
