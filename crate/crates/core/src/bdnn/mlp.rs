use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BdnnError;
use crate::market_data::DecisionSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths from input to output. Hidden layers use `activation`; the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            widths: vec![1, 16, 16, 1],
            activation: Activation::Tanh,
            bias: true,
        }
    }
}

impl Architecture {
    /// `f(d) = θ·d`.
    pub fn linear() -> Self {
        Architecture {
            widths: vec![1, 1],
            activation: Activation::Identity,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<(), BdnnError> {
        if self.widths.len() < 2
            || self.widths[0] != 1
            || *self.widths.last().unwrap() != 1
            || self.widths.contains(&0)
        {
            return Err(BdnnError::InvalidArchitecture(format!(
                "widths must start and end with 1 and be non-zero, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Gaussian weights with variance `1/fan_in`, zero biases.
    Scaled,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains on the full dataset every step.
    pub batch_size: Option<usize>,
    pub rng_seed: u64,
    pub init: WeightInit,
    pub standardize_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.7,
            sigma: 2.5,
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: None,
            rng_seed: 0,
            init: WeightInit::Scaled,
            standardize_input: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BdnnError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(BdnnError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("lambda", self.lambda)?;
        positive("sigma", self.sigma)?;
        positive("learning_rate", self.learning_rate)?;
        if self.epochs == 0 {
            return Err(BdnnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(BdnnError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A scalar-in, scalar-out MLP with a flat weight vector and the input
/// standardization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub architecture: Architecture,
    pub weights: Vec<f64>,
    pub input_shift: f64,
    pub input_scale: f64,
}

impl MlpModel {
    pub fn new(architecture: Architecture, weights: Vec<f64>) -> Result<Self, BdnnError> {
        Self::with_scaling(architecture, weights, 0.0, 1.0)
    }

    pub fn with_scaling(
        architecture: Architecture,
        weights: Vec<f64>,
        input_shift: f64,
        input_scale: f64,
    ) -> Result<Self, BdnnError> {
        architecture.validate()?;
        if weights.len() != architecture.parameter_count() {
            return Err(BdnnError::InvalidArchitecture(format!(
                "expected {} weights, got {}",
                architecture.parameter_count(),
                weights.len()
            )));
        }
        if !(input_scale > 0.0 && input_scale.is_finite() && input_shift.is_finite()) {
            return Err(BdnnError::InvalidArchitecture(
                "input scaling must be finite with positive scale".into(),
            ));
        }
        Ok(MlpModel {
            architecture,
            weights,
            input_shift,
            input_scale,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }

    fn standardize(&self, d: f64) -> f64 {
        (d - self.input_shift) / self.input_scale
    }

    fn activations(&self, d: f64) -> Vec<Vec<f64>> {
        let arch = &self.architecture;
        let layers = arch.widths.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(vec![self.standardize(d)]);
        let mut offset = 0;
        for (l, w) in arch.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let input = &acts[l];
            let weights = &self.weights[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            let biases = if arch.bias {
                let b = &self.weights[offset..offset + fan_out];
                offset += fan_out;
                Some(b)
            } else {
                None
            };
            let is_output = l + 1 == layers;
            let out: Vec<f64> = (0..fan_out)
                .map(|i| {
                    let row = &weights[i * fan_in..(i + 1) * fan_in];
                    let z = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
                        + biases.map_or(0.0, |b| b[i]);
                    if is_output {
                        z
                    } else {
                        arch.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, d: f64) -> f64 {
        self.activations(d).last().unwrap()[0]
    }

    /// Output and its gradient with respect to every weight.
    pub fn forward_with_gradient(&self, d: f64) -> (f64, Vec<f64>) {
        let arch = &self.architecture;
        let acts = self.activations(d);
        let layers = arch.widths.len() - 1;

        // Weight-block offsets per layer.
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in arch.widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + if arch.bias { w[1] } else { 0 };
        }

        let mut grad = vec![0.0; self.weights.len()];
        let mut delta = vec![1.0];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
            let input = &acts[l];
            let base = offsets[l];
            for i in 0..fan_out {
                for j in 0..fan_in {
                    grad[base + i * fan_in + j] = delta[i] * input[j];
                }
                if arch.bias {
                    grad[base + fan_in * fan_out + i] = delta[i];
                }
            }
            if l > 0 {
                let weights = &self.weights[base..base + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|j| {
                        let back: f64 = (0..fan_out)
                            .map(|i| weights[i * fan_in + j] * delta[i])
                            .sum();
                        back * arch.activation.derivative_from_output(input[j])
                    })
                    .collect();
            }
        }
        (acts[layers][0], grad)
    }
}

/// `Σ ½(g − f(d))² + (λ/2)·θᵀθ`.
pub fn loss(model: &MlpModel, dataset: &[DecisionSample], lambda: f64) -> Result<f64, BdnnError> {
    if dataset.is_empty() {
        return Err(BdnnError::EmptyDataset);
    }
    let data: f64 = dataset
        .iter()
        .map(|s| 0.5 * (s.g - model.forward(s.d)).powi(2))
        .sum();
    let reg: f64 = 0.5 * lambda * model.weights.iter().map(|w| w * w).sum::<f64>();
    Ok(data + reg)
}

fn init_weights(arch: &Architecture, init: WeightInit, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut weights = Vec::with_capacity(arch.parameter_count());
    for w in arch.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        match init {
            WeightInit::Zeros => weights.extend(std::iter::repeat_n(0.0, fan_in * fan_out)),
            WeightInit::Scaled => {
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
                weights.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            }
        }
        if arch.bias {
            weights.extend(std::iter::repeat_n(0.0, fan_out));
        }
    }
    weights
}

/// Gradient descent on the regularized loss. Mini-batch gradients are rescaled
/// to the full-dataset sum. Returns the lowest-loss iterate seen at epoch
/// boundaries, so the result never scores worse than the initialization.
pub fn train_map(
    dataset: &[DecisionSample],
    config: &TrainConfig,
    architecture: &Architecture,
) -> Result<MlpModel, BdnnError> {
    config.validate()?;
    architecture.validate()?;
    if dataset.is_empty() {
        return Err(BdnnError::EmptyDataset);
    }
    let n = dataset.len();
    let (shift, scale) = if config.standardize_input {
        let mean = dataset.iter().map(|s| s.d).sum::<f64>() / n as f64;
        let var = dataset.iter().map(|s| (s.d - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let weights = init_weights(architecture, config.init, &mut rng);
    let mut model = MlpModel::with_scaling(architecture.clone(), weights, shift, scale)?;

    let mut best_loss = loss(&model, dataset, config.lambda)?;
    if !best_loss.is_finite() {
        return Err(BdnnError::Divergence {
            epoch: 0,
            loss: best_loss,
        });
    }
    let mut best = model.weights.clone();

    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; model.weights.len()];
    for epoch in 1..=config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let rescale = n as f64 / chunk.len() as f64;
            for &i in chunk {
                let sample = &dataset[i];
                let (f, phi) = model.forward_with_gradient(sample.d);
                let residual = rescale * (f - sample.g);
                grad.iter_mut()
                    .zip(&phi)
                    .for_each(|(g, p)| *g += residual * p);
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * (g + config.lambda * *w);
            }
        }
        let current = loss(&model, dataset, config.lambda)?;
        if !current.is_finite() {
            return Err(BdnnError::Divergence {
                epoch,
                loss: current,
            });
        }
        if current < best_loss {
            best_loss = current;
            best.copy_from_slice(&model.weights);
        }
    }
    model.weights = best;
    Ok(model)
}

/// Gradient of the network output with respect to its weights at `d`.
pub fn jacobian_features(model: &MlpModel, d: f64) -> Vec<f64> {
    model.forward_with_gradient(d).1
}
