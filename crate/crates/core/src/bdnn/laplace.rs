use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{jacobian_features, MlpModel};
use super::BdnnError;
use crate::linalg;
use crate::market_data::DecisionSample;

/// Largest weight count for which the dense posterior covariance is handed out.
pub const MAX_MATERIALIZED_COVARIANCE: usize = 64;

/// Gaussian posterior `N(θ*, Λ⁻¹)` with `Λ = Σ φφᵀ + λI`.
#[derive(Debug, Clone)]
pub struct LaplacePosterior {
    pub theta_star: Vec<f64>,
    pub lambda: f64,
    precision: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl LaplacePosterior {
    pub fn from_precision(
        theta_star: Vec<f64>,
        precision: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self, BdnnError> {
        let m = theta_star.len();
        if precision.nrows() != m || precision.ncols() != m {
            return Err(BdnnError::InvalidArchitecture(format!(
                "precision is {}x{} for {m} weights",
                precision.nrows(),
                precision.ncols()
            )));
        }
        let scale = precision.amax().max(1.0);
        for i in 0..m {
            for j in 0..i {
                if (precision[(i, j)] - precision[(j, i)]).abs() > 1e-10 * scale {
                    return Err(BdnnError::NotPositiveDefinite(format!(
                        "precision not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let factor = linalg::cholesky(&precision)
            .map_err(|e| BdnnError::NotPositiveDefinite(e.to_string()))?;
        Ok(LaplacePosterior {
            theta_star,
            lambda,
            precision,
            factor,
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// `φᵀ Λ⁻¹ φ` through the cached factor.
    pub fn quadratic_form(&self, phi: &[f64]) -> f64 {
        let v = linalg::forward_substitute(&self.factor, &DVector::from_column_slice(phi));
        v.norm_squared()
    }

    /// Dense `Λ⁻¹`, only for small networks.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let m = self.dim();
        if m > MAX_MATERIALIZED_COVARIANCE {
            return None;
        }
        let mut cov = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = 1.0;
            cov.set_column(j, &linalg::cholesky_solve(&self.factor, &e));
        }
        Some(cov)
    }
}

/// Generalized Gauss–Newton data-term Hessian `Σ φ(dₙ)φ(dₙ)ᵀ`.
pub fn gauss_newton(model: &MlpModel, dataset: &[DecisionSample]) -> DMatrix<f64> {
    let m = model.parameter_count();
    let mut h = DMatrix::zeros(m, m);
    for s in dataset {
        let phi = DVector::from_vec(jacobian_features(model, s.d));
        h.ger(1.0, &phi, &phi, 1.0);
    }
    h
}

pub fn laplace_posterior(
    model: &MlpModel,
    dataset: &[DecisionSample],
    lambda: f64,
) -> Result<LaplacePosterior, BdnnError> {
    if dataset.is_empty() {
        return Err(BdnnError::EmptyDataset);
    }
    let mut precision = gauss_newton(model, dataset);
    for i in 0..precision.nrows() {
        precision[(i, i)] += lambda;
    }
    LaplacePosterior::from_precision(model.weights.clone(), precision, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// `N(f_θ*(d), φ(d)ᵀΛ⁻¹φ(d) + σ²)`.
pub fn predictive(
    posterior: &LaplacePosterior,
    model: &MlpModel,
    sigma: f64,
    d: f64,
) -> PredictiveDistribution {
    let (mean, phi) = model.forward_with_gradient(d);
    let kernel = posterior.quadratic_form(&phi);
    PredictiveDistribution {
        mean,
        variance: kernel + sigma * sigma,
    }
}

/// Independent marginals for a batch of inputs.
pub fn predictive_batch(
    posterior: &LaplacePosterior,
    model: &MlpModel,
    sigma: f64,
    inputs: &[f64],
) -> Vec<PredictiveDistribution> {
    inputs
        .par_iter()
        .map(|&d| predictive(posterior, model, sigma, d))
        .collect()
}
