//! Sampled continuous sources: class-conditional Gaussians, and Gaussian
//! inputs labeled by a halfspace (the realizable case).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::check_simplex;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_GAUSSIAN_DIM: usize = 16;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_cdf`] by bisection, for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    priors: Vec<f64>,
    chol: Vec<DMatrix<f64>>,
}

impl PartialEq for GaussianMixtureSpec {
    fn eq(&self, other: &Self) -> bool {
        self.means == other.means
            && self.covariances == other.covariances
            && self.priors == other.priors
    }
}

impl GaussianMixtureSpec {
    pub fn new(
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
        priors: Vec<f64>,
    ) -> Result<Self> {
        let k = means.len();
        if k < 2 {
            return Err(Error::validation("means", "need at least two classes"));
        }
        let d = means[0].len();
        if d == 0 || d > MAX_GAUSSIAN_DIM {
            return Err(Error::validation(
                "means",
                format!("dimension {d} outside 1..={MAX_GAUSSIAN_DIM}"),
            ));
        }
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::validation("means", "mean vectors differ in length"));
        }
        if covariances.len() != k {
            return Err(Error::validation("covariances", format!("expected {k} matrices")));
        }
        check_simplex(&priors, k).map_err(|r| Error::validation("priors", r))?;
        let mut chol = Vec::with_capacity(k);
        for (c, cov) in covariances.iter().enumerate() {
            let field = format!("covariances[{c}]");
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::validation(field, format!("expected {d}x{d}")));
            }
            let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
            if (&m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::validation(field, "not symmetric"));
            }
            let l = m
                .cholesky()
                .ok_or_else(|| Error::validation(field, "not positive definite"))?;
            chol.push(l.l());
        }
        Ok(Self {
            means,
            covariances,
            priors,
            chol,
        })
    }

    /// Two classes with means `±(shift, 0, …, 0)`, unit variance along the
    /// first axis and standard deviation `nuisance_std` along the rest.
    /// Class 0 sits at `+shift`.
    pub fn binary_shift(shift: f64, dim: usize, nuisance_std: f64) -> Result<Self> {
        let mut m0 = vec![0.0; dim];
        m0[0] = shift;
        let m1: Vec<f64> = m0.iter().map(|v| -v).collect();
        let cov: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| match (i == j, i) {
                        (true, 0) => 1.0,
                        (true, _) => nuisance_std * nuisance_std,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        Self::new(vec![m0, m1], vec![cov.clone(), cov], vec![0.5, 0.5])
    }

    /// `k` classes with means `shift·e_k` in `dim ≥ k` dimensions, identity
    /// covariance, balanced priors.
    pub fn one_hot(k: usize, dim: usize, shift: f64) -> Result<Self> {
        if dim < k {
            return Err(Error::validation("dim", format!("need at least {k} dimensions")));
        }
        let means = (0..k)
            .map(|c| (0..dim).map(|i| if i == c { shift } else { 0.0 }).collect())
            .collect();
        let eye: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(means, vec![eye; k], vec![1.0 / k as f64; k])
    }

    /// Means `±(1, 0)`, identity covariance, balanced classes.
    pub fn standard_2d() -> Self {
        Self::binary_shift(1.0, 2, 1.0).expect("valid default")
    }

    pub fn with_priors(mut self, priors: Vec<f64>) -> Result<Self> {
        check_simplex(&priors, self.num_classes()).map_err(|r| Error::validation("priors", r))?;
        self.priors = priors;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn covariances(&self) -> &[Vec<Vec<f64>>] {
        &self.covariances
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sample_class(&self, k: usize, rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &self.chol[k] * z;
        (0..d).map(|i| self.means[k][i] + x[i]).collect()
    }

    fn shared_covariance(&self) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let first = &self.covariances[0];
        if self.covariances.iter().all(|c| c == first) {
            Some(DMatrix::from_fn(d, d, |i, j| first[i][j]))
        } else {
            None
        }
    }

    /// Closed-form Bayes accuracy for two classes with a shared covariance.
    pub fn binary_bayes_accuracy(&self) -> Result<f64> {
        if self.num_classes() != 2 {
            return Err(Error::Unsupported("closed form needs two classes".into()));
        }
        let cov = self
            .shared_covariance()
            .ok_or_else(|| Error::Unsupported("closed form needs a shared covariance".into()))?;
        let d = self.dim();
        let diff = DVector::from_fn(d, |i, _| self.means[0][i] - self.means[1][i]);
        let solved = cov
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance not positive definite".into()))?
            .solve(&diff);
        let delta = diff.dot(&solved).sqrt();
        let (p0, p1) = (self.priors[0], self.priors[1]);
        if delta == 0.0 {
            return Ok(p0.max(p1));
        }
        let log_odds = (p0 / p1).ln();
        Ok(p0 * normal_cdf(delta / 2.0 + log_odds / delta)
            + p1 * normal_cdf(delta / 2.0 - log_odds / delta))
    }

    /// Exact accuracy of the rule "class 0 iff `w·x + b ≥ 0`".
    pub fn linear_accuracy(&self, w: &[f64], b: f64) -> Result<f64> {
        if self.num_classes() != 2 || w.len() != self.dim() {
            return Err(Error::Shape("linear accuracy needs two classes and matching w".into()));
        }
        let d = self.dim();
        let wv = DVector::from_column_slice(w);
        let mut acc = 0.0;
        for k in 0..2 {
            let cov = DMatrix::from_fn(d, d, |i, j| self.covariances[k][i][j]);
            let sd = (wv.dot(&(&cov * &wv))).sqrt();
            let mean: f64 = w.iter().zip(&self.means[k]).map(|(a, m)| a * m).sum::<f64>() + b;
            let p_class0 = if sd == 0.0 {
                if mean >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                normal_cdf(mean / sd)
            };
            acc += self.priors[k] * if k == 0 { p_class0 } else { 1.0 - p_class0 };
        }
        Ok(acc)
    }
}

/// Standard normal inputs labeled by a halfspace: class 0 iff
/// `normal·x + offset ≥ 0`. The Bayes risk is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfspaceSpec {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        if normal.is_empty() || normal.len() > MAX_GAUSSIAN_DIM {
            return Err(Error::validation("normal", "dimension outside 1..=16"));
        }
        if normal.iter().all(|&v| v == 0.0) {
            return Err(Error::validation("normal", "must be non-zero"));
        }
        Ok(Self { normal, offset })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn label(&self, x: &[f64]) -> usize {
        let s: f64 = self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offset;
        if s >= 0.0 {
            0
        } else {
            1
        }
    }

    pub fn priors(&self) -> [f64; 2] {
        let norm = self.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        let p0 = normal_cdf(self.offset / norm);
        [p0, 1.0 - p0]
    }

    /// Rejection sampling from the side of the halfspace that holds `k`.
    pub fn sample_class(&self, k: usize, rng: &mut Rng) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
            if self.label(&x) == k {
                return x;
            }
        }
    }
}
