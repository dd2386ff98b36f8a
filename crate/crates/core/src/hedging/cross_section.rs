use super::HedgeError;
use crate::paths::{remove_drift, PricePath};

/// Prices and drift-removed states of `U` paths over `T+1` times, stored
/// time-major, with `ΔS_t = S_{t+1} − e^r S_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    prices: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    delta_s: Vec<Vec<f64>>,
}

impl CrossSection {
    pub fn new(paths: &[PricePath], mu: f64, sigma_s: f64, rate: f64) -> Result<Self, HedgeError> {
        let Some(first) = paths.first() else {
            return Err(HedgeError::InsufficientPaths(0));
        };
        let len = first.prices.len();
        if len < 2 {
            return Err(HedgeError::InvalidSpec(
                "paths need at least two prices".into(),
            ));
        }
        for (u, p) in paths.iter().enumerate() {
            if p.prices.len() != len {
                return Err(HedgeError::InvalidSpec(format!(
                    "path {u} has {} prices, expected {len}",
                    p.prices.len()
                )));
            }
            if let Some(s) = p.prices.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                return Err(HedgeError::InvalidSpec(format!(
                    "path {u} has non-positive price {s}"
                )));
            }
        }
        let state_paths: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| remove_drift(p, mu, sigma_s).states)
            .collect();
        let transpose = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..len)
                .map(|t| rows.iter().map(|r| r[t]).collect())
                .collect()
        };
        let price_rows: Vec<Vec<f64>> = paths.iter().map(|p| p.prices.clone()).collect();
        let prices = transpose(&price_rows);
        let states = transpose(&state_paths);
        let growth = rate.exp();
        let delta_s = (0..len - 1)
            .map(|t| {
                prices[t + 1]
                    .iter()
                    .zip(&prices[t])
                    .map(|(next, now)| next - growth * now)
                    .collect()
            })
            .collect();
        Ok(CrossSection {
            prices,
            states,
            delta_s,
        })
    }

    /// Builds from raw price rows, one per path.
    pub fn from_rows(
        rows: &[Vec<f64>],
        mu: f64,
        sigma_s: f64,
        rate: f64,
    ) -> Result<Self, HedgeError> {
        let paths: Vec<PricePath> = rows
            .iter()
            .map(|r| PricePath { prices: r.clone() })
            .collect();
        Self::new(&paths, mu, sigma_s, rate)
    }

    pub fn paths(&self) -> usize {
        self.prices[0].len()
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.prices.len() - 1
    }

    pub fn prices(&self, t: usize) -> &[f64] {
        &self.prices[t]
    }

    pub fn states(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    pub fn delta_s(&self, t: usize) -> &[f64] {
        &self.delta_s[t]
    }

    pub fn all_states(&self) -> impl Iterator<Item = &f64> {
        self.states.iter().flatten()
    }

    /// Rows of prices per path.
    pub fn price_rows(&self) -> Vec<Vec<f64>> {
        (0..self.paths())
            .map(|u| self.prices.iter().map(|col| col[u]).collect())
            .collect()
    }
}
