//! Visible-hidden Markov network: a hidden Markov chain whose state emits a
//! visible state (the binned open price), which in turn emits an observation
//! (the binned decision). Parameters are `A` (hidden transitions), `B`
//! (visible given hidden), `C` (observation given visible) and `Z` (initial
//! hidden distribution).

mod inference;
mod sampling;

pub use inference::{
    backward, em_from, fit, fit_single, forward, forward_backward, posteriors, random_params,
    reestimate, FitConfig, FitResult, Posteriors, RestartSummary, Trellis,
};
pub use sampling::{sample_path, sample_path_seeded, SampledPath};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::DecisionSample;

/// Tolerance on row sums accepted when loading parameters from outside.
pub const LOAD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VhmnError {
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("bin index {index} out of range for {bins} bins")]
    IndexOutOfRange { index: usize, bins: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("sequence has zero probability under the model at step {step}")]
    ImpossibleSequence { step: usize },
    #[error("model file: {0}")]
    Format(String),
}

/// Uniform binning of `[min, max]` into `bins` cells with clamping outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl Quantizer {
    pub fn new(min: f64, max: f64, bins: usize) -> Result<Self, VhmnError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(VhmnError::InvalidQuantizer(format!(
                "need finite min < max, got [{min}, {max}]"
            )));
        }
        if bins < 2 {
            return Err(VhmnError::InvalidQuantizer(format!(
                "need at least 2 bins, got {bins}"
            )));
        }
        Ok(Quantizer { min, max, bins })
    }

    /// Bounds taken from the sample range. A constant sample gets a unit-width
    /// window around its value.
    pub fn spanning(values: &[f64], bins: usize) -> Result<Self, VhmnError> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(VhmnError::InvalidQuantizer("no finite samples".into()));
        }
        if lo == hi {
            let half = 0.5 * lo.abs().max(1.0);
            return Quantizer::new(lo - half, hi + half, bins);
        }
        Quantizer::new(lo, hi, bins)
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins as f64
    }

    pub fn encode(&self, s: f64) -> usize {
        let raw = ((s - self.min) / self.width()).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.bins - 1)
        }
    }

    /// Midpoint of bin `index`.
    pub fn decode(&self, index: usize) -> Result<f64, VhmnError> {
        if index >= self.bins {
            return Err(VhmnError::IndexOutOfRange {
                index,
                bins: self.bins,
            });
        }
        Ok(self.min + (index as f64 + 0.5) * self.width())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![1.0 / cols as f64; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, VhmnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(VhmnError::InvalidParams(
                "matrix rows must be non-empty and of equal length".into(),
            ));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Largest `|row sum − 1|` over all rows, or infinity if any entry is
    /// negative or non-finite.
    pub fn stochastic_error(&self) -> f64 {
        (0..self.rows)
            .map(|i| row_error(self.row(i)))
            .fold(0.0, f64::max)
    }
}

fn row_error(row: &[f64]) -> f64 {
    if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return f64::INFINITY;
    }
    (row.iter().sum::<f64>() - 1.0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// `J`
    pub hidden: usize,
    /// `K`
    pub visible: usize,
    /// `L`
    pub observed: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            hidden: 2,
            visible: 30,
            observed: 30,
        }
    }
}

/// `Γ = {A, B, C, Z}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VhmnParams {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub z: Vec<f64>,
}

impl VhmnParams {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, z: Vec<f64>) -> Result<Self, VhmnError> {
        let params = VhmnParams { a, b, c, z };
        params.validate(LOAD_TOLERANCE)?;
        Ok(params)
    }

    pub fn from_rows(
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        c: &[Vec<f64>],
        z: &[f64],
    ) -> Result<Self, VhmnError> {
        Self::new(
            Matrix::from_rows(a)?,
            Matrix::from_rows(b)?,
            Matrix::from_rows(c)?,
            z.to_vec(),
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            hidden: self.a.rows(),
            visible: self.b.cols(),
            observed: self.c.cols(),
        }
    }

    /// Largest deviation from row-stochasticity across `A`, `B`, `C`, `Z`.
    pub fn stochastic_error(&self) -> f64 {
        [
            self.a.stochastic_error(),
            self.b.stochastic_error(),
            self.c.stochastic_error(),
            row_error(&self.z),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn validate(&self, tol: f64) -> Result<(), VhmnError> {
        let j = self.a.rows();
        if self.a.cols() != j
            || self.b.rows() != j
            || self.z.len() != j
            || self.c.rows() != self.b.cols()
        {
            return Err(VhmnError::InvalidParams(format!(
                "inconsistent shapes: A {}x{}, B {}x{}, C {}x{}, Z {}",
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols(),
                self.c.rows(),
                self.c.cols(),
                self.z.len()
            )));
        }
        let err = self.stochastic_error();
        if !(err <= tol) {
            return Err(VhmnError::InvalidParams(format!(
                "rows are not stochastic (max error {err:e})"
            )));
        }
        Ok(())
    }

    /// Joint emission `b_i(s)·c_s(o)` of hidden state `i`.
    pub fn emission(&self, i: usize, s: usize, o: usize) -> f64 {
        self.b.get(i, s) * self.c.get(s, o)
    }
}

/// Visible-state and observation index sequences of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePair {
    pub visible: Vec<usize>,
    pub observed: Vec<usize>,
}

impl SequencePair {
    pub fn new(visible: Vec<usize>, observed: Vec<usize>) -> Result<Self, VhmnError> {
        if visible.len() != observed.len() {
            return Err(VhmnError::InvalidSequence(format!(
                "visible has {} entries, observed {}",
                visible.len(),
                observed.len()
            )));
        }
        if visible.is_empty() {
            return Err(VhmnError::InvalidSequence("sequence is empty".into()));
        }
        Ok(SequencePair { visible, observed })
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn check_bounds(&self, visible_bins: usize, observed_bins: usize) -> Result<(), VhmnError> {
        if let Some(&s) = self.visible.iter().find(|&&s| s >= visible_bins) {
            return Err(VhmnError::IndexOutOfRange {
                index: s,
                bins: visible_bins,
            });
        }
        if let Some(&o) = self.observed.iter().find(|&&o| o >= observed_bins) {
            return Err(VhmnError::IndexOutOfRange {
                index: o,
                bins: observed_bins,
            });
        }
        Ok(())
    }
}

/// A fitted network together with the quantizers that map open prices and
/// decisions onto its index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct VhmnModel {
    pub params: VhmnParams,
    pub visible_quantizer: Quantizer,
    pub observation_quantizer: Quantizer,
}

#[derive(Debug, Serialize, Deserialize)]
struct VhmnFile {
    format: String,
    dims: Dims,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    z: Vec<f64>,
    visible_quantizer: Quantizer,
    observation_quantizer: Quantizer,
}

const FORMAT_TAG: &str = "pihedge-vhmn/1";

/// Quantizers spanning an episode's open prices and decisions, and the
/// encoded sequences.
pub fn encode_dataset(
    samples: &[DecisionSample],
    visible_bins: usize,
    observed_bins: usize,
) -> Result<(Quantizer, Quantizer, SequencePair), VhmnError> {
    let opens: Vec<f64> = samples.iter().map(|s| s.open).collect();
    let decisions: Vec<f64> = samples.iter().map(|s| s.d).collect();
    let vq = Quantizer::spanning(&opens, visible_bins)?;
    let oq = Quantizer::spanning(&decisions, observed_bins)?;
    let seq = SequencePair::new(
        opens.iter().map(|&v| vq.encode(v)).collect(),
        decisions.iter().map(|&d| oq.encode(d)).collect(),
    )?;
    Ok((vq, oq, seq))
}

impl VhmnModel {
    pub fn new(
        params: VhmnParams,
        visible_quantizer: Quantizer,
        observation_quantizer: Quantizer,
    ) -> Result<Self, VhmnError> {
        let dims = params.dims();
        if visible_quantizer.bins != dims.visible || observation_quantizer.bins != dims.observed {
            return Err(VhmnError::InvalidParams(format!(
                "quantizer bins ({}, {}) do not match K={}, L={}",
                visible_quantizer.bins, observation_quantizer.bins, dims.visible, dims.observed
            )));
        }
        Ok(VhmnModel {
            params,
            visible_quantizer,
            observation_quantizer,
        })
    }

    pub fn to_json(&self) -> String {
        let file = VhmnFile {
            format: FORMAT_TAG.into(),
            dims: self.params.dims(),
            a: self.params.a.to_rows(),
            b: self.params.b.to_rows(),
            c: self.params.c.to_rows(),
            z: self.params.z.clone(),
            visible_quantizer: self.visible_quantizer,
            observation_quantizer: self.observation_quantizer,
        };
        serde_json::to_string_pretty(&file).expect("vhmn file serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, VhmnError> {
        let file: VhmnFile =
            serde_json::from_slice(bytes).map_err(|e| VhmnError::Format(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(VhmnError::Format(format!(
                "unknown format tag `{}`",
                file.format
            )));
        }
        let params = VhmnParams::from_rows(&file.a, &file.b, &file.c, &file.z)?;
        if params.dims() != file.dims {
            return Err(VhmnError::Format(format!(
                "dims {:?} disagree with matrices {:?}",
                file.dims,
                params.dims()
            )));
        }
        let vq = Quantizer::new(
            file.visible_quantizer.min,
            file.visible_quantizer.max,
            file.visible_quantizer.bins,
        )?;
        let oq = Quantizer::new(
            file.observation_quantizer.min,
            file.observation_quantizer.max,
            file.observation_quantizer.bins,
        )?;
        VhmnModel::new(params, vq, oq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let q = Quantizer::new(0.0, 30.0, 30).unwrap();
        assert_eq!(q.encode(15.0), 15);
        assert_eq!(q.encode(0.0), 0);
        assert_eq!(q.encode(30.0), 29);
        assert_eq!(q.encode(-5.0), 0);
        assert_eq!(q.encode(1e9), 29);
        let signed = Quantizer::new(-10.0, 10.0, 4).unwrap();
        assert_eq!(signed.encode(-10.0), 0);
        assert_eq!(signed.encode(9.99), 3);
    }

    #[test]
    fn decode_examples() {
        let q = Quantizer::new(0.0, 30.0, 30).unwrap();
        assert_eq!(q.decode(15).unwrap(), 15.5);
        assert_eq!(
            Quantizer::new(-10.0, 10.0, 4).unwrap().decode(0).unwrap(),
            -7.5
        );
        assert_eq!(
            q.decode(30),
            Err(VhmnError::IndexOutOfRange {
                index: 30,
                bins: 30
            })
        );
    }

    #[test]
    fn bad_quantizers() {
        assert!(Quantizer::new(1.0, 1.0, 4).is_err());
        assert!(Quantizer::new(0.0, 1.0, 1).is_err());
        assert!(Quantizer::new(f64::NAN, 1.0, 4).is_err());
        let flat = Quantizer::spanning(&[3.0, 3.0], 5).unwrap();
        assert_eq!(flat.encode(3.0), 2);
    }

    proptest! {
        #[test]
        fn encode_decode_section(min in -1e9f64..1e9, width in 1e-3f64..1e9, bins in 2usize..200) {
            let q = Quantizer::new(min, min + width, bins).unwrap();
            for i in 0..bins {
                prop_assert_eq!(q.encode(q.decode(i).unwrap()), i);
            }
        }

        #[test]
        fn encode_is_always_in_range(s in proptest::num::f64::ANY, bins in 2usize..50) {
            let q = Quantizer::new(-3.0, 7.0, bins).unwrap();
            prop_assert!(q.encode(s) < bins);
        }
    }

    #[test]
    fn params_validation() {
        let ok = VhmnParams::from_rows(
            &[vec![0.9, 0.1], vec![0.2, 0.8]],
            &[vec![0.5, 0.5], vec![1.0, 0.0]],
            &[vec![0.3, 0.7], vec![0.6, 0.4]],
            &[0.5, 0.5],
        );
        assert!(ok.is_ok());
        let bad = VhmnParams::from_rows(
            &[vec![0.9, 0.2], vec![0.2, 0.8]],
            &[vec![1.0], vec![1.0]],
            &[vec![1.0]],
            &[0.5, 0.5],
        );
        assert!(bad.is_err());
        let shape = VhmnParams::from_rows(&[vec![1.0]], &[vec![1.0]], &[vec![1.0]], &[0.5, 0.5]);
        assert!(shape.is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let params = VhmnParams::from_rows(
            &[vec![0.9, 0.1], vec![0.2, 0.8]],
            &[vec![0.25, 0.75], vec![1.0 / 3.0, 2.0 / 3.0]],
            &[vec![0.1, 0.9], vec![0.6, 0.4]],
            &[0.3, 0.7],
        )
        .unwrap();
        let model = VhmnModel::new(
            params,
            Quantizer::new(10.0, 20.0, 2).unwrap(),
            Quantizer::new(-1e6, 2.5e6, 2).unwrap(),
        )
        .unwrap();
        let text = model.to_json();
        assert_eq!(VhmnModel::from_json(text.as_bytes()).unwrap(), model);
        assert!(VhmnModel::from_json(b"{\"format\":\"x\"}").is_err());
    }
}
