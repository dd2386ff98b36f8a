//! Bayesian neural regression of price change on the quantized decision:
//! MAP training of a small MLP, a Laplace (Gauss–Newton) posterior over its
//! weights, and the Gaussian predictive distribution of the price change.

mod laplace;
mod mlp;

pub use laplace::{
    gauss_newton, laplace_posterior, predictive, predictive_batch, LaplacePosterior,
    PredictiveDistribution, MAX_MATERIALIZED_COVARIANCE,
};
pub use mlp::{
    jacobian_features, loss, train_map, Activation, Architecture, MlpModel, TrainConfig, WeightInit,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::DecisionSample;

#[derive(Debug, Error)]
pub enum BdnnError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Divergence { epoch: usize, loss: f64 },
    #[error("posterior precision is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("model file: {0}")]
    Format(String),
}

/// A trained regressor: MAP network, its weight posterior, and the residual
/// noise level.
#[derive(Debug, Clone)]
pub struct Bdnn {
    pub model: MlpModel,
    pub posterior: LaplacePosterior,
    pub sigma: f64,
}

/// On-disk form of [`Bdnn`]. The precision matrix is dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BdnnFile {
    format: String,
    architecture: Architecture,
    theta: Vec<f64>,
    input_shift: f64,
    input_scale: f64,
    lambda: f64,
    sigma: f64,
    precision: Vec<f64>,
}

const FORMAT_TAG: &str = "pihedge-bdnn/1";

impl Bdnn {
    pub fn fit(
        dataset: &[DecisionSample],
        config: &TrainConfig,
        architecture: &Architecture,
    ) -> Result<Self, BdnnError> {
        let model = train_map(dataset, config, architecture)?;
        let posterior = laplace_posterior(&model, dataset, config.lambda)?;
        Ok(Bdnn {
            model,
            posterior,
            sigma: config.sigma,
        })
    }

    pub fn predict(&self, d: f64) -> PredictiveDistribution {
        predictive(&self.posterior, &self.model, self.sigma, d)
    }

    pub fn predict_batch(&self, inputs: &[f64]) -> Vec<PredictiveDistribution> {
        predictive_batch(&self.posterior, &self.model, self.sigma, inputs)
    }

    /// Fraction of samples whose target falls within one predictive standard
    /// deviation of the mean.
    pub fn coverage(&self, dataset: &[DecisionSample]) -> f64 {
        if dataset.is_empty() {
            return f64::NAN;
        }
        let inputs: Vec<f64> = dataset.iter().map(|s| s.d).collect();
        let hits = self
            .predict_batch(&inputs)
            .iter()
            .zip(dataset)
            .filter(|(p, s)| (s.g - p.mean).abs() <= p.std_dev())
            .count();
        hits as f64 / dataset.len() as f64
    }

    pub fn to_json(&self) -> String {
        let m = self.posterior.dim();
        let p = self.posterior.precision();
        let precision = (0..m)
            .flat_map(|i| (0..m).map(move |j| p[(i, j)]))
            .collect();
        let file = BdnnFile {
            format: FORMAT_TAG.into(),
            architecture: self.model.architecture.clone(),
            theta: self.model.weights.clone(),
            input_shift: self.model.input_shift,
            input_scale: self.model.input_scale,
            lambda: self.posterior.lambda,
            sigma: self.sigma,
            precision,
        };
        serde_json::to_string_pretty(&file).expect("bdnn file serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, BdnnError> {
        let file: BdnnFile =
            serde_json::from_slice(bytes).map_err(|e| BdnnError::Format(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(BdnnError::Format(format!(
                "unknown format tag `{}`",
                file.format
            )));
        }
        let model = MlpModel::with_scaling(
            file.architecture,
            file.theta,
            file.input_shift,
            file.input_scale,
        )?;
        let m = model.parameter_count();
        if file.precision.len() != m * m {
            return Err(BdnnError::Format(format!(
                "precision has {} entries, expected {}",
                file.precision.len(),
                m * m
            )));
        }
        if !(file.sigma > 0.0 && file.sigma.is_finite())
            || !(file.lambda > 0.0 && file.lambda.is_finite())
        {
            return Err(BdnnError::Format(
                "sigma and lambda must be positive".into(),
            ));
        }
        let precision = DMatrix::from_row_slice(m, m, &file.precision);
        let posterior =
            LaplacePosterior::from_precision(model.weights.clone(), precision, file.lambda)?;
        Ok(Bdnn {
            model,
            posterior,
            sigma: file.sigma,
        })
    }
}
