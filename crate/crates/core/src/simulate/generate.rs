use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PopulationModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    #[default]
    Gaussian,
    /// `±sigma` with equal probability; factor scores are `±1`.
    RademacherScaled,
}

impl std::str::FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Noise::Gaussian),
            "rademacher-scaled" | "rademacher" => Ok(Noise::RademacherScaled),
            _ => Err(Error::Usage(format!(
                "unknown noise `{s}` (expected gaussian or rademacher-scaled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: PopulationModel,
    pub p: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub noise: Noise,
    pub seed: u64,
}

/// Spike directions `v_k` (columns) and the unit signal direction.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub spikes: DMatrix<f64>,
    pub mu_hat: DVector<f64>,
}

impl GeneratorSpec {
    /// Class sizes `n_± = round(alpha_± p)`.
    pub fn new(model: PopulationModel, p: usize, noise: Noise, seed: u64) -> Result<Self> {
        let n_plus = (model.alpha_plus * p as f64).round() as usize;
        let n_minus = (model.alpha_minus * p as f64).round() as usize;
        let spec = GeneratorSpec {
            model,
            p,
            n_plus,
            n_minus,
            noise,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.p == 0 {
            return Err(Error::Usage("p must be positive".into()));
        }
        if self.model.k() >= self.p {
            return Err(Error::InvalidModel(format!(
                "K = {} must be < p = {}",
                self.model.k(),
                self.p
            )));
        }
        if self.n_plus == 0 || self.n_minus == 0 {
            return Err(Error::Usage(format!(
                "both classes need samples (n_plus = {}, n_minus = {})",
                self.n_plus, self.n_minus
            )));
        }
        Ok(())
    }

    /// The population model with `alpha_±` replaced by the realized `n_± / p`.
    pub fn effective_model(&self) -> PopulationModel {
        let mut m = self.model.clone();
        m.alpha_plus = self.n_plus as f64 / self.p as f64;
        m.alpha_minus = self.n_minus as f64 / self.p as f64;
        m
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GeneratorSpec { seed, ..self.clone() }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Orthonormal `v_1..v_K` plus the signal direction
    /// `mu_hat = sum_k R_k v_k + R_{K+1} u`, all from Gram-Schmidt of seeded Gaussian vectors.
    pub fn geometry(&self) -> Geometry {
        let mut rng = self.rng();
        geometry_from(&self.model, self.p, &mut rng)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = self.rng();
        let geo = geometry_from(&self.model, self.p, &mut rng);
        self.fill(&mut rng, &geo)
    }

    /// Draws samples around a fixed geometry, e.g. a test set for an existing population.
    pub fn generate_with_geometry(&self, geo: &Geometry) -> Result<Dataset> {
        self.validate()?;
        if geo.mu_hat.len() != self.p || geo.spikes.ncols() != self.model.k() {
            return Err(Error::Usage("geometry does not match the generator spec".into()));
        }
        self.fill(&mut self.rng(), geo)
    }

    fn fill(&self, rng: &mut ChaCha8Rng, geo: &Geometry) -> Result<Dataset> {
        let (p, k) = (self.p, self.model.k());
        let n = self.n_plus + self.n_minus;
        let mu = &geo.mu_hat * self.model.mu;
        let mut rows = Vec::with_capacity(n * p);
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; k];
        for i in 0..n {
            let plus = i < self.n_plus;
            let (sign, sigma, spikes) = if plus {
                (1.0, self.model.sigma_plus, &self.model.lambda_plus)
            } else {
                (-1.0, self.model.sigma_minus, &self.model.lambda_minus)
            };
            for zk in z.iter_mut() {
                *zk = draw(rng, self.noise);
            }
            for j in 0..p {
                let mut x = sign * mu[j] + sigma * draw(rng, self.noise);
                for (kk, zk) in z.iter().enumerate() {
                    x += sigma * spikes[kk].sqrt() * geo.spikes[(j, kk)] * zk;
                }
                rows.push(x);
            }
            labels.push(sign);
        }
        Ok(Dataset {
            features: DMatrix::from_row_slice(n, p, &rows),
            labels,
            provenance: Some(self.clone()),
        })
    }
}

fn draw(rng: &mut ChaCha8Rng, noise: Noise) -> f64 {
    match noise {
        Noise::Gaussian => rng.sample(StandardNormal),
        Noise::RademacherScaled => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

fn geometry_from(model: &PopulationModel, p: usize, rng: &mut ChaCha8Rng) -> Geometry {
    let k = model.k();
    let cols = (k + 1).min(p);
    let mut basis = DMatrix::<f64>::from_fn(p, cols, |_, _| rng.sample(StandardNormal));
    for c in 0..cols {
        // Two passes of classical Gram-Schmidt.
        for _ in 0..2 {
            for prev in 0..c {
                let dot = basis.column(prev).dot(&basis.column(c));
                let v = basis.column(prev).clone_owned();
                basis.column_mut(c).axpy(-dot, &v, 1.0);
            }
        }
        let norm = basis.column(c).norm();
        basis.column_mut(c).unscale_mut(norm);
    }
    let mut mu_hat = DVector::zeros(p);
    for (kk, r) in model.r.iter().enumerate() {
        mu_hat.axpy(*r, &basis.column(kk), 1.0);
    }
    if cols > k {
        mu_hat.axpy(model.residual_projection(), &basis.column(k), 1.0);
    }
    let norm = mu_hat.norm();
    if norm > 0.0 {
        mu_hat.unscale_mut(norm);
    }
    Geometry {
        spikes: basis.columns(0, k).clone_owned(),
        mu_hat,
    }
}

/// Labelled feature matrix; labels are `+1.0` or `-1.0`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub provenance: Option<GeneratorSpec>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        let d = Dataset {
            features,
            labels,
            provenance: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.features.ncols() == 0 {
            return Err(Error::Dataset("no feature columns".into()));
        }
        if let Some(l) = self.labels.iter().find(|l| **l != 1.0 && **l != -1.0) {
            return Err(Error::Dataset(format!("labels must be +1 or -1, got {l}")));
        }
        if self.n_plus() == 0 || self.n_minus() == 0 {
            return Err(Error::Dataset("both classes must be present".into()));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dataset("features contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_plus(&self) -> usize {
        self.labels.iter().filter(|l| **l > 0.0).count()
    }

    pub fn n_minus(&self) -> usize {
        self.labels.iter().filter(|l| **l < 0.0).count()
    }

    /// Rows of one class (`+1` or `-1`) as a matrix.
    pub fn class_matrix(&self, label: f64) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| self.labels[i] == label).collect();
        self.features.select_rows(&idx)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            provenance: None,
        }
    }

    /// CSV with header `label,f1,...,fp`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.p()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            record.clear();
            record.push(if self.labels[i] > 0.0 {
                "1".to_string()
            } else {
                "-1".to_string()
            });
            record.extend(self.features.row(i).iter().map(|x| format!("{x:e}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "label" {
            return Err(Error::Dataset("missing header row `label,f1,...,fp`".into()));
        }
        let p = header.len() - 1;
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::Dataset(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    p + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Dataset(format!("row {}: cannot parse `{s}`", line + 2)))
            };
            let label = parse(&rec[0])?;
            labels.push(label);
            for field in rec.iter().skip(1) {
                values.push(parse(field)?);
            }
        }
        if labels.is_empty() {
            return Err(Error::Dataset("no data rows".into()));
        }
        Dataset::new(DMatrix::from_row_slice(labels.len(), p, &values), labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_model() -> PopulationModel {
        PopulationModel::homogeneous(2.0, 1.0, 0.5, vec![4.0, 4.0], vec![0.5f64.sqrt(), 0.0]).unwrap()
    }

    #[test]
    fn geometry_realizes_projections() {
        let spec = GeneratorSpec::new(fig3_model(), 50, Noise::Gaussian, 7).unwrap();
        let g = spec.geometry();
        let gram = g.spikes.tr_mul(&g.spikes);
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!((g.mu_hat.norm() - 1.0).abs() < 1e-12);
        let proj = g.spikes.tr_mul(&g.mu_hat);
        assert!((proj[0] - 0.5f64.sqrt()).abs() < 1e-12 && proj[1].abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = GeneratorSpec::new(fig3_model(), 30, Noise::Gaussian, 3).unwrap();
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.features, b.features);
        let c = spec.with_seed(4).generate().unwrap();
        assert_ne!(a.features, c.features);
        assert_eq!(a.n_plus(), 8);
        assert_eq!(a.n_minus(), 8);
    }

    #[test]
    fn refuses_bad_specs() {
        let m = PopulationModel::homogeneous(1.0, 1.0, 1.0, vec![1.0; 3], vec![0.1; 3]).unwrap();
        assert!(GeneratorSpec::new(m, 3, Noise::Gaussian, 0).is_err());
        let mut m = fig3_model();
        m.r = vec![0.9, 0.9];
        assert!(GeneratorSpec::new(m, 10, Noise::Gaussian, 0).is_err());
    }

    #[test]
    fn rademacher_entries_take_two_values_per_class() {
        let m = PopulationModel::homogeneous(0.0, 2.0, 1.0, vec![], vec![]).unwrap();
        let d = GeneratorSpec::new(m, 20, Noise::RademacherScaled, 1)
            .unwrap()
            .generate()
            .unwrap();
        assert!(d.features.iter().all(|x| (x.abs() - 2.0).abs() < 1e-15));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let d = GeneratorSpec::new(fig3_model(), 6, Noise::Gaussian, 2)
            .unwrap()
            .generate()
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,f1,f2,f3,f4,f5,f6\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.labels, d.labels);
        assert!((back.features - &d.features).abs().max() < 1e-12);

        assert!(Dataset::read_csv("1,2,3\n-1,0,1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("label,f1\n1,0.5\n1,0.2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("label,f1\n1,0.5\n2,0.2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("label,f1\n1,x\n-1,0.2\n".as_bytes()).is_err());
    }
}
