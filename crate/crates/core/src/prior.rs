//! Gendered Gaussian shape prior.
//!
//! One Gaussian over shape coefficients per gender label plus a label-free
//! `neutral` class fitted on all samples. The penalty is the squared
//! Mahalanobis distance `(β − μ)ᵀ Σ⁻¹ (β − μ)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative ridge added to the sample covariance, scaled by `trace / n`.
pub const RIDGE_SCALE: f64 = 1e-6;
/// Absolute ridge used when every sample coincides (zero trace).
pub const RIDGE_FLOOR: f64 = 1e-6;
const PRECISION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    /// Key of the prior class used for this label.
    pub fn class_key(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "neutral",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        })
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "unknown" | "neutral" | "none" => Ok(Gender::Unknown),
            other => Err(Error::ConfigInvalid(format!("unknown gender label {other:?}"))),
        }
    }
}

/// Mean, covariance and precision of one class. Matrices are row-major `n × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub mu: Vec<f64>,
    pub cov: Vec<f64>,
    pub precision: Vec<f64>,
}

impl GaussianClass {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Builds a class from a mean and covariance, inverting by Cholesky.
    pub fn from_mean_cov(mu: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        check_len("covariance", n * n, cov.len())?;
        let c = DMatrix::from_row_slice(n, n, &cov);
        let chol = c.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let p = chol.inverse();
        let p = (&p + p.transpose()) * 0.5;
        let err = (&p * &c - DMatrix::identity(n, n)).amax();
        if !err.is_finite() || err > PRECISION_TOL {
            return Err(Error::SingularCovariance);
        }
        Ok(GaussianClass {
            mu,
            cov,
            precision: row_major(&p),
        })
    }

    /// Zero mean, identity covariance: the plain `‖β‖²` penalty.
    pub fn standard(n: usize) -> Self {
        let eye = row_major(&DMatrix::identity(n, n));
        GaussianClass {
            mu: vec![0.0; n],
            cov: eye.clone(),
            precision: eye,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_len("covariance", n * n, self.cov.len())?;
        check_len("precision", n * n, self.precision.len())?;
        let c = DMatrix::from_row_slice(n, n, &self.cov);
        let p = DMatrix::from_row_slice(n, n, &self.precision);
        if (&c - c.transpose()).amax() > PRECISION_TOL || c.clone().cholesky().is_none() {
            return Err(Error::SingularCovariance);
        }
        if (&p * &c - DMatrix::identity(n, n)).amax() > PRECISION_TOL {
            return Err(Error::SingularCovariance);
        }
        Ok(())
    }

    /// `(β − μ)ᵀ P (β − μ)` and its gradient `2 P (β − μ)`.
    pub fn mahalanobis_sq_grad(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.dim();
        check_len("beta", n, beta.len())?;
        let d: Vec<f64> = beta.iter().zip(&self.mu).map(|(b, m)| b - m).collect();
        let mut pd = vec![0.0; n];
        for (i, out) in pd.iter_mut().enumerate() {
            let row = &self.precision[i * n..(i + 1) * n];
            *out = row.iter().zip(&d).map(|(p, x)| p * x).sum();
        }
        let value = d.iter().zip(&pd).map(|(a, b)| a * b).sum();
        Ok((value, pd.into_iter().map(|x| 2.0 * x).collect()))
    }

    pub fn mahalanobis_sq(&self, beta: &[f64]) -> Result<f64> {
        Ok(self.mahalanobis_sq_grad(beta)?.0)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Sample mean and unbiased covariance plus a trace-scaled ridge.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianClass> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples[0].len();
    for s in samples {
        check_len("sample", n, s.len())?;
        if !s.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteComponent("sample".into()));
        }
    }
    let count = samples.len() as f64;
    let mut mu = DVector::zeros(n);
    for s in samples {
        mu += DVector::from_column_slice(s);
    }
    mu /= count;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mu;
        cov += &d * d.transpose();
    }
    cov /= count - 1.0;
    let trace = cov.trace();
    let eps = if trace > 0.0 && n > 0 {
        RIDGE_SCALE * trace / n as f64
    } else {
        RIDGE_FLOOR
    };
    for i in 0..n {
        cov[(i, i)] += eps;
    }
    GaussianClass::from_mean_cov(mu.iter().copied().collect(), row_major(&cov))
}

/// Per-label Gaussian classes keyed by `female`, `male` and `neutral`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenderPrior {
    pub classes: BTreeMap<String, GaussianClass>,
}

impl GenderPrior {
    /// Only a label-free class with zero mean and identity precision.
    pub fn standard(n: usize) -> Self {
        let mut classes = BTreeMap::new();
        classes.insert("neutral".to_string(), GaussianClass::standard(n));
        GenderPrior { classes }
    }

    /// Fits female and male classes, and the neutral class on their union.
    pub fn from_samples(female: &[Vec<f64>], male: &[Vec<f64>]) -> Result<Self> {
        let mut prior = GenderPrior::default();
        prior.insert(Gender::Female, fit_gaussian(female)?);
        prior.insert(Gender::Male, fit_gaussian(male)?);
        let all: Vec<Vec<f64>> = female.iter().chain(male).cloned().collect();
        prior.insert(Gender::Unknown, fit_gaussian(&all)?);
        Ok(prior)
    }

    pub fn insert(&mut self, label: Gender, class: GaussianClass) {
        self.classes.insert(label.class_key().to_string(), class);
    }

    pub fn class(&self, label: Gender) -> Result<&GaussianClass> {
        self.classes
            .get(label.class_key())
            .ok_or_else(|| Error::UnknownLabelClassMissing(label.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for c in self.classes.values() {
            c.validate()?;
            match dim {
                None => dim = Some(c.dim()),
                Some(d) => check_len("prior class dimension", d, c.dim())?,
            }
        }
        Ok(())
    }
}

/// Fits one class from samples; `label` decides the key when merged into a prior.
pub fn fit_gender_prior(samples: &[Vec<f64>], label: Gender) -> Result<GenderPrior> {
    let mut prior = GenderPrior::default();
    prior.insert(label, fit_gaussian(samples)?);
    Ok(prior)
}

/// Squared Mahalanobis distance of `beta` to the class selected by `label`.
pub fn gendered_shape_loss(beta: &[f64], label: Gender, prior: &GenderPrior) -> Result<f64> {
    prior.class(label)?.mahalanobis_sq(beta)
}

pub fn gendered_shape_loss_grad(
    beta: &[f64],
    label: Gender,
    prior: &GenderPrior,
) -> Result<(f64, Vec<f64>)> {
    prior.class(label)?.mahalanobis_sq_grad(beta)
}
