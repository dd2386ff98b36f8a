//! Monte Carlo path generation: decision paths from a fitted network, price
//! paths from the regressor's predictive distribution, the drift-removed state
//! variable, and a geometric Brownian motion generator.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bdnn::Bdnn;
use crate::vhmn::{sample_path, Quantizer, VhmnError, VhmnParams};

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("price path exploded at step {step}: price change {change} is not above -1")]
    PathExplosion { step: usize, change: f64 },
    #[error(transparent)]
    Vhmn(#[from] VhmnError),
    #[error("path matrix line {line}: {message}")]
    Matrix { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub decisions: Vec<f64>,
}

/// Prices `S_0..=S_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub prices: Vec<f64>,
}

/// Drift-removed log prices `ln S_t − (μ − σ²/2)t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    pub states: Vec<f64>,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// `count` decision paths of `len` steps, observation bins decoded to midpoints.
pub fn simulate_decisions(
    params: &VhmnParams,
    quantizer: &Quantizer,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<DecisionPath>, PathError> {
    if quantizer.bins != params.dims().observed {
        return Err(PathError::InvalidParameter(format!(
            "quantizer has {} bins but the network emits {} observations",
            quantizer.bins,
            params.dims().observed
        )));
    }
    (0..count)
        .into_par_iter()
        .map(|u| {
            let sampled = sample_path(params, len, &mut path_rng(seed, u));
            let decisions = sampled
                .observed
                .iter()
                .map(|&o| quantizer.decode(o))
                .collect::<Result<_, _>>()?;
            Ok(DecisionPath { decisions })
        })
        .collect()
}

/// How a price change is drawn from the predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMode {
    #[default]
    Mean,
    Sample,
}

fn check_s0(s0: f64) -> Result<(), PathError> {
    if s0 > 0.0 && s0.is_finite() {
        Ok(())
    } else {
        Err(PathError::InvalidParameter(format!(
            "initial price must be positive, got {s0}"
        )))
    }
}

fn compound(s0: f64, changes: impl Iterator<Item = f64>) -> Result<PricePath, PathError> {
    let mut prices = vec![s0];
    let mut s = s0;
    for (step, g) in changes.enumerate() {
        if !(g > -1.0) || !g.is_finite() {
            return Err(PathError::PathExplosion { step, change: g });
        }
        s *= 1.0 + g;
        prices.push(s);
    }
    Ok(PricePath { prices })
}

/// `S_{t+1} = S_t·(1 + E[g | d_t])`.
pub fn decisions_to_prices(
    bdnn: &Bdnn,
    path: &DecisionPath,
    s0: f64,
) -> Result<PricePath, PathError> {
    check_s0(s0)?;
    compound(s0, path.decisions.iter().map(|&d| bdnn.predict(d).mean))
}

/// Like [`decisions_to_prices`] but each change is drawn from the predictive Gaussian.
pub fn decisions_to_prices_sampled(
    bdnn: &Bdnn,
    path: &DecisionPath,
    s0: f64,
    rng: &mut impl Rng,
) -> Result<PricePath, PathError> {
    check_s0(s0)?;
    let draws: Vec<f64> = path
        .decisions
        .iter()
        .map(|&d| {
            let p = bdnn.predict(d);
            let z: f64 = StandardNormal.sample(rng);
            p.mean + p.std_dev() * z
        })
        .collect();
    compound(s0, draws.into_iter())
}

/// Price paths for a batch of decision paths; path `u` uses stream `u` of `seed`
/// in sampling mode.
pub fn simulate_prices(
    bdnn: &Bdnn,
    paths: &[DecisionPath],
    s0: f64,
    mode: PriceMode,
    seed: u64,
) -> Result<Vec<PricePath>, PathError> {
    paths
        .par_iter()
        .enumerate()
        .map(|(u, p)| match mode {
            PriceMode::Mean => decisions_to_prices(bdnn, p, s0),
            PriceMode::Sample => decisions_to_prices_sampled(bdnn, p, s0, &mut path_rng(seed, u)),
        })
        .collect()
}

pub fn remove_drift(path: &PricePath, mu: f64, sigma_s: f64) -> StatePath {
    let drift = mu - sigma_s * sigma_s / 2.0;
    StatePath {
        states: path
            .prices
            .iter()
            .enumerate()
            .map(|(t, s)| s.ln() - drift * t as f64)
            .collect(),
    }
}

pub fn add_drift(path: &StatePath, mu: f64, sigma_s: f64) -> PricePath {
    let drift = mu - sigma_s * sigma_s / 2.0;
    PricePath {
        prices: path
            .states
            .iter()
            .enumerate()
            .map(|(t, x)| (x + drift * t as f64).exp())
            .collect(),
    }
}

/// Exact lognormal stepping with `len` steps of size `dt`.
pub fn gbm_paths(
    s0: f64,
    mu: f64,
    sigma_s: f64,
    len: usize,
    count: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<PricePath>, PathError> {
    check_s0(s0)?;
    if !(dt > 0.0) || !(sigma_s >= 0.0) || !mu.is_finite() || !sigma_s.is_finite() {
        return Err(PathError::InvalidParameter(format!(
            "need dt > 0 and finite σ ≥ 0 (dt={dt}, σ={sigma_s})"
        )));
    }
    let drift = (mu - sigma_s * sigma_s / 2.0) * dt;
    let step = Normal::new(drift, sigma_s * dt.sqrt()).expect("validated");
    Ok((0..count)
        .into_par_iter()
        .map(|u| {
            let mut rng = path_rng(seed, u);
            let mut log_s = s0.ln();
            let mut prices = Vec::with_capacity(len + 1);
            prices.push(s0);
            for _ in 0..len {
                log_s += step.sample(&mut rng);
                prices.push(log_s.exp());
            }
            PricePath { prices }
        })
        .collect())
}

/// Writes one row per path with header `t0,t1,...`.
pub fn write_path_matrix<W: Write>(writer: W, rows: &[Vec<f64>]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(first) = rows.first() {
        w.write_record((0..first.len()).map(|t| format!("t{t}")))?;
    }
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a rectangular matrix of finite values written by [`write_path_matrix`].
pub fn read_path_matrix<R: Read>(reader: R) -> Result<Vec<Vec<f64>>, PathError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let width = r
        .headers()
        .map_err(|e| PathError::Matrix {
            line: 1,
            message: e.to_string(),
        })?
        .len();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| PathError::Matrix {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(PathError::Matrix {
                line,
                message: format!("{} columns, expected {width}", record.len()),
            });
        }
        let row = record
            .iter()
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(PathError::Matrix {
                    line,
                    message: format!("`{f}` is not a finite number"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdnn::{Architecture, LaplacePosterior, MlpModel};
    use nalgebra::DMatrix;

    fn constant_bdnn(g: f64) -> Bdnn {
        // f(d) = 0·d + g through a linear network with a bias.
        let arch = Architecture {
            bias: true,
            ..Architecture::linear()
        };
        let model = MlpModel::new(arch, vec![0.0, g]).unwrap();
        let posterior =
            LaplacePosterior::from_precision(vec![0.0, g], DMatrix::identity(2, 2), 1.0).unwrap();
        Bdnn {
            model,
            posterior,
            sigma: 0.01,
        }
    }

    #[test]
    fn zero_change_keeps_price() {
        let p = decisions_to_prices(
            &constant_bdnn(0.0),
            &DecisionPath {
                decisions: vec![1e6, -3e7, 0.0],
            },
            42.0,
        )
        .unwrap();
        assert_eq!(p.prices, vec![42.0; 4]);
    }

    #[test]
    fn single_step_compounds() {
        let p = decisions_to_prices(
            &constant_bdnn(0.05),
            &DecisionPath {
                decisions: vec![7.0],
            },
            100.0,
        )
        .unwrap();
        assert!((p.prices[1] - 105.0).abs() < 1e-12);
    }

    #[test]
    fn explosion_names_step() {
        let err = decisions_to_prices(
            &constant_bdnn(-1.5),
            &DecisionPath {
                decisions: vec![0.0, 0.0],
            },
            10.0,
        );
        assert_eq!(
            err,
            Err(PathError::PathExplosion {
                step: 0,
                change: -1.5
            })
        );
        assert!(decisions_to_prices(
            &constant_bdnn(0.0),
            &DecisionPath { decisions: vec![] },
            0.0
        )
        .is_err());
    }

    #[test]
    fn drift_examples() {
        let sigma: f64 = 0.3;
        let prices = PricePath {
            prices: vec![1.0, 2.0, 3.0],
        };
        let s = remove_drift(&prices, sigma * sigma / 2.0, sigma);
        assert_eq!(s.states, vec![0.0, 2f64.ln(), 3f64.ln()]);

        let flat = PricePath {
            prices: vec![50.0; 5],
        };
        let s = remove_drift(&flat, 0.05, 0.2926);
        let slope = -(0.05 - 0.2926 * 0.2926 / 2.0);
        for t in 1..5 {
            assert!((s.states[t] - s.states[t - 1] - slope).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_gbm_is_exponential() {
        let paths = gbm_paths(100.0, 0.01, 0.0, 10, 3, 1.0, 1).unwrap();
        for p in &paths {
            for (t, s) in p.prices.iter().enumerate() {
                assert!((s - 100.0 * (0.01 * t as f64).exp()).abs() < 1e-10);
            }
        }
        assert!(gbm_paths(100.0, 0.0, 0.1, 10, 3, 0.0, 1).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let rows = vec![vec![1.5, 2.25, 1e-300], vec![3.0, -0.0, 1.0 / 3.0]];
        let mut buf = Vec::new();
        write_path_matrix(&mut buf, &rows).unwrap();
        assert_eq!(read_path_matrix(buf.as_slice()).unwrap(), rows);
        assert!(read_path_matrix("t0,t1\n1,2\n3\n".as_bytes()).is_err());
        assert!(matches!(
            read_path_matrix("t0\nNaN\n".as_bytes()),
            Err(PathError::Matrix { line: 2, .. })
        ));
    }
}
