use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::HedgeError;

const DEGREE: usize = 3;

/// Cubic B-spline basis on a clamped knot vector. Points outside the knot span
/// are clamped to its ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    knots: Vec<f64>,
    count: usize,
}

impl BasisSet {
    /// `count` functions on uniform interior knots over `[lo, hi]`.
    pub fn clamped_uniform(lo: f64, hi: f64, count: usize) -> Result<Self, HedgeError> {
        if count < DEGREE + 1 {
            return Err(HedgeError::InvalidSpec(format!(
                "basis needs at least {} functions, got {count}",
                DEGREE + 1
            )));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(HedgeError::DegenerateRange { min: lo, max: hi });
        }
        let spans = count - DEGREE;
        let mut knots = vec![lo; DEGREE];
        knots.extend((0..spans).map(|i| lo + (hi - lo) * i as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Ok(BasisSet { knots, count })
    }

    /// Basis over the range of `values` widened by `margin` of its width on each side.
    pub fn spanning<'a>(
        values: impl IntoIterator<Item = &'a f64>,
        count: usize,
        margin: f64,
    ) -> Result<Self, HedgeError> {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(HedgeError::DegenerateRange { min, max });
        }
        let pad = (max - min) * margin;
        Self::clamped_uniform(min - pad, max + pad, count)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn span(&self, x: f64) -> usize {
        let last = self.count - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // Largest k in [DEGREE, last] with knots[k] <= x.
        let upper = self.knots[DEGREE + 1..=last].partition_point(|&k| k <= x);
        DEGREE + upper
    }

    /// Writes all `count` basis values at `x` into `out`.
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (lo, hi) = self.domain();
        let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
        let k = self.span(x);
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - self.knots[k + 1 - j];
            right[j] = self.knots[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[k - DEGREE..=k].copy_from_slice(&n);
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Row `u` holds the basis evaluated at `states[u]`.
    pub fn design_matrix(&self, states: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(states.len(), self.count);
        let mut row = vec![0.0; self.count];
        for (u, &x) in states.iter().enumerate() {
            self.evaluate_into(x, &mut row);
            for (n, v) in row.iter().enumerate() {
                m[(u, n)] = *v;
            }
        }
        m
    }
}
