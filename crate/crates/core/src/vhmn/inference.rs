use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dims, Matrix, SequencePair, VhmnError, VhmnParams};

/// Scaled forward–backward quantities.
///
/// `alpha[t]` is normalized to sum to one and `scale[t]` is the factor that
/// normalized it, so `log P(S, O | Γ) = −Σ_t ln scale[t]`. `beta` uses the same
/// factors from step `t+1` on, which makes `Σ_i alpha[t][i]·beta[t][i] = 1`
/// for every `t`. Unscaled values are recovered as
/// `α_t = alpha[t] / Π_{τ≤t} scale[τ]` and `β_t = beta[t] / Π_{τ>t} scale[τ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trellis {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub scale: Vec<f64>,
    pub log_likelihood: f64,
}

fn check(params: &VhmnParams, seq: &SequencePair) -> Result<(), VhmnError> {
    let dims = params.dims();
    seq.check_bounds(dims.visible, dims.observed)
}

/// Forward pass; the returned trellis has an empty `beta`.
pub fn forward(params: &VhmnParams, seq: &SequencePair) -> Result<Trellis, VhmnError> {
    check(params, seq)?;
    let j = params.dims().hidden;
    let t_len = seq.len();
    let mut alpha = Vec::with_capacity(t_len);
    let mut scale = Vec::with_capacity(t_len);
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        let (s, o) = (seq.visible[t], seq.observed[t]);
        let mut next: Vec<f64> = (0..j)
            .map(|i| {
                let prior = if t == 0 {
                    params.z[i]
                } else {
                    let prev: &Vec<f64> = &alpha[t - 1];
                    (0..j).map(|k| prev[k] * params.a.get(k, i)).sum()
                };
                prior * params.emission(i, s, o)
            })
            .collect();
        let total: f64 = next.iter().sum();
        if !(total > 0.0) {
            return Err(VhmnError::ImpossibleSequence { step: t });
        }
        let c = 1.0 / total;
        next.iter_mut().for_each(|v| *v *= c);
        log_likelihood += total.ln();
        alpha.push(next);
        scale.push(c);
    }
    Ok(Trellis {
        alpha,
        beta: Vec::new(),
        scale,
        log_likelihood,
    })
}

/// Backward pass scaled with the forward factors.
pub fn backward(
    params: &VhmnParams,
    seq: &SequencePair,
    scale: &[f64],
) -> Result<Vec<Vec<f64>>, VhmnError> {
    check(params, seq)?;
    let t_len = seq.len();
    if scale.len() != t_len {
        return Err(VhmnError::InvalidSequence(format!(
            "{} scale factors for {t_len} steps",
            scale.len()
        )));
    }
    let j = params.dims().hidden;
    let mut beta = vec![vec![0.0; j]; t_len];
    beta[t_len - 1] = vec![1.0; j];
    for t in (0..t_len - 1).rev() {
        let (s, o) = (seq.visible[t + 1], seq.observed[t + 1]);
        let emit: Vec<f64> = (0..j)
            .map(|k| params.emission(k, s, o) * beta[t + 1][k])
            .collect();
        for i in 0..j {
            let v: f64 = (0..j).map(|k| params.a.get(i, k) * emit[k]).sum();
            beta[t][i] = v * scale[t + 1];
        }
    }
    Ok(beta)
}

pub fn forward_backward(params: &VhmnParams, seq: &SequencePair) -> Result<Trellis, VhmnError> {
    let mut trellis = forward(params, seq)?;
    trellis.beta = backward(params, seq, &trellis.scale)?;
    Ok(trellis)
}

/// Pair posteriors `digamma[t][i][j] = P(h_t = i, h_{t+1} = j | S, O)` and
/// single posteriors `gamma[t][i] = P(h_t = i | S, O)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub digamma: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<f64>>,
}

pub fn posteriors(trellis: &Trellis, params: &VhmnParams, seq: &SequencePair) -> Posteriors {
    let j = params.dims().hidden;
    let t_len = seq.len();
    let mut digamma = Vec::with_capacity(t_len.saturating_sub(1));
    let mut gamma = Vec::with_capacity(t_len);
    for t in 0..t_len.saturating_sub(1) {
        let (s, o) = (seq.visible[t + 1], seq.observed[t + 1]);
        let mut pair = vec![vec![0.0; j]; j];
        let mut total = 0.0;
        for (i, row) in pair.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = trellis.alpha[t][i]
                    * params.a.get(i, k)
                    * params.emission(k, s, o)
                    * trellis.beta[t + 1][k]
                    * trellis.scale[t + 1];
                total += *cell;
            }
        }
        // Analytically `total` is one; renormalizing absorbs rounding.
        if total > 0.0 {
            pair.iter_mut().flatten().for_each(|v| *v /= total);
        }
        gamma.push(pair.iter().map(|row| row.iter().sum()).collect());
        digamma.push(pair);
    }
    let last = &trellis.alpha[t_len - 1];
    let total: f64 = last.iter().sum();
    gamma.push(last.iter().map(|v| v / total).collect());
    Posteriors { digamma, gamma }
}

fn normalize_or_uniform(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|v| *v /= total);
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    }
}

/// M-step. `C` is the conditional frequency of each observation given its
/// visible state, which does not depend on the hidden posteriors. Rows that
/// received no mass are reset to uniform.
pub fn reestimate(
    post: &Posteriors,
    seq: &SequencePair,
    visible_bins: usize,
    observed_bins: usize,
) -> VhmnParams {
    let j = post.gamma.first().map_or(0, Vec::len);

    let mut z = post.gamma[0].clone();
    normalize_or_uniform(&mut z);

    let mut a = Matrix::zeros(j, j);
    for pair in &post.digamma {
        for (i, row) in pair.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                a.set(i, k, a.get(i, k) + v);
            }
        }
    }
    for i in 0..j {
        normalize_or_uniform(a.row_mut(i));
    }

    let mut b = Matrix::zeros(j, visible_bins);
    for (t, g) in post.gamma.iter().enumerate() {
        let s = seq.visible[t];
        for (i, v) in g.iter().enumerate() {
            b.set(i, s, b.get(i, s) + v);
        }
    }
    for i in 0..j {
        normalize_or_uniform(b.row_mut(i));
    }

    let mut c = Matrix::zeros(visible_bins, observed_bins);
    for (&s, &o) in seq.visible.iter().zip(&seq.observed) {
        c.set(s, o, c.get(s, o) + 1.0);
    }
    for k in 0..visible_bins {
        normalize_or_uniform(c.row_mut(k));
    }

    VhmnParams { a, b, c, z }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub dirichlet_alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Fresh Dirichlet draws tried when a start makes the sequence impossible.
    pub max_init_retries: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            dirichlet_alpha: 1000.0,
            max_iters: 500,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            max_init_retries: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: VhmnParams,
    /// Log-likelihood of the initial parameters followed by one entry per EM update.
    pub trace: Vec<f64>,
    /// EM updates that raised the log-likelihood by at least `tol`.
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
}

fn dirichlet_row(len: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut row: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    normalize_or_uniform(&mut row);
    row
}

fn dirichlet_matrix(rows: usize, cols: usize, alpha: f64, rng: &mut impl Rng) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| dirichlet_row(cols, alpha, rng)).collect();
    Matrix::from_rows(&data).expect("non-empty dims")
}

pub fn random_params(dims: Dims, alpha: f64, rng: &mut impl Rng) -> VhmnParams {
    VhmnParams {
        a: dirichlet_matrix(dims.hidden, dims.hidden, alpha, rng),
        b: dirichlet_matrix(dims.hidden, dims.visible, alpha, rng),
        c: dirichlet_matrix(dims.visible, dims.observed, alpha, rng),
        z: dirichlet_row(dims.hidden, alpha, rng),
    }
}

fn validate_fit_inputs(
    seq: &SequencePair,
    dims: Dims,
    config: &FitConfig,
) -> Result<(), VhmnError> {
    if dims.hidden == 0 || dims.visible == 0 || dims.observed == 0 {
        return Err(VhmnError::InvalidParams(format!(
            "dimensions must be positive, got {dims:?}"
        )));
    }
    if !(config.dirichlet_alpha > 0.0 && config.dirichlet_alpha.is_finite()) {
        return Err(VhmnError::InvalidParams(
            "Dirichlet concentration must be positive".into(),
        ));
    }
    if !(config.tol >= 0.0) {
        return Err(VhmnError::InvalidParams(
            "tolerance must be non-negative".into(),
        ));
    }
    seq.check_bounds(dims.visible, dims.observed)
}

/// EM from an explicit starting point.
pub fn em_from(
    init: VhmnParams,
    seq: &SequencePair,
    max_iters: usize,
    tol: f64,
) -> Result<(VhmnParams, Vec<f64>, usize, bool), VhmnError> {
    let dims = init.dims();
    let mut params = init;
    let mut trellis = forward_backward(&params, seq)?;
    let mut trace = vec![trellis.log_likelihood];
    let mut improving = 0;
    let mut converged = false;
    for _ in 0..max_iters {
        let post = posteriors(&trellis, &params, seq);
        let next = reestimate(&post, seq, dims.visible, dims.observed);
        let next_trellis = forward_backward(&next, seq)?;
        let gain = next_trellis.log_likelihood - trellis.log_likelihood;
        params = next;
        trellis = next_trellis;
        trace.push(trellis.log_likelihood);
        if gain < tol {
            converged = true;
            break;
        }
        improving += 1;
    }
    Ok((params, trace, improving, converged))
}

/// One EM run from a Dirichlet start drawn with `seed`.
pub fn fit_single(
    seq: &SequencePair,
    dims: Dims,
    config: &FitConfig,
    seed: u64,
    stream: u64,
) -> Result<(VhmnParams, Vec<f64>, usize, bool), VhmnError> {
    validate_fit_inputs(seq, dims, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut last_err = None;
    for _ in 0..=config.max_init_retries {
        let init = random_params(dims, config.dirichlet_alpha, &mut rng);
        match em_from(init, seq, config.max_iters, config.tol) {
            Err(err @ VhmnError::ImpossibleSequence { .. }) => last_err = Some(err),
            other => return other,
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// EM with `config.restarts` independent Dirichlet starts, keeping the run
/// with the highest final log-likelihood.
pub fn fit(seq: &SequencePair, dims: Dims, config: &FitConfig) -> Result<FitResult, VhmnError> {
    validate_fit_inputs(seq, dims, config)?;
    let restarts = config.restarts.max(1);
    let runs: Vec<_> = (0..restarts)
        .into_par_iter()
        .map(|r| fit_single(seq, dims, config, config.seed, r as u64))
        .collect::<Result<_, _>>()?;

    let summaries: Vec<RestartSummary> = runs
        .iter()
        .enumerate()
        .map(
            |(restart, (_, trace, iterations, converged))| RestartSummary {
                restart,
                log_likelihood: *trace.last().unwrap(),
                iterations: *iterations,
                converged: *converged,
            },
        )
        .collect();
    let best = summaries.iter().fold(0, |best, s| {
        if s.log_likelihood > summaries[best].log_likelihood {
            s.restart
        } else {
            best
        }
    });
    let (params, trace, iterations, converged) = runs.into_iter().nth(best).unwrap();
    Ok(FitResult {
        params,
        trace,
        iterations,
        converged,
        best_restart: best,
        restarts: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> VhmnParams {
        VhmnParams::from_rows(
            &[vec![0.7, 0.3], vec![0.4, 0.6]],
            &[vec![0.2, 0.8], vec![0.9, 0.1]],
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            &[0.6, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn single_hidden_state_collapses() {
        let params = VhmnParams::from_rows(
            &[vec![1.0]],
            &[vec![0.3, 0.7]],
            &[vec![0.4, 0.6], vec![0.1, 0.9]],
            &[1.0],
        )
        .unwrap();
        let seq = SequencePair::new(vec![0, 1, 1, 0], vec![1, 1, 0, 0]).unwrap();
        let expected: f64 = seq
            .visible
            .iter()
            .zip(&seq.observed)
            .map(|(&s, &o)| (params.b.get(0, s) * params.c.get(s, o)).ln())
            .sum();
        let tr = forward(&params, &seq).unwrap();
        assert!((tr.log_likelihood - expected).abs() < 1e-12);
    }

    #[test]
    fn impossible_first_step() {
        let params = VhmnParams::from_rows(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &[vec![0.0, 1.0], vec![0.0, 1.0]],
            &[vec![1.0], vec![1.0]],
            &[0.5, 0.5],
        )
        .unwrap();
        let seq = SequencePair::new(vec![0, 1], vec![0, 0]).unwrap();
        assert_eq!(
            forward(&params, &seq),
            Err(VhmnError::ImpossibleSequence { step: 0 })
        );
    }

    #[test]
    fn backward_base_case_and_identity() {
        let params = toy();
        let one = SequencePair::new(vec![1], vec![0]).unwrap();
        let tr = forward_backward(&params, &one).unwrap();
        assert_eq!(tr.beta, vec![vec![1.0, 1.0]]);

        let seq = SequencePair::new(vec![0, 1, 1, 0, 1], vec![1, 0, 1, 1, 0]).unwrap();
        let tr = forward_backward(&params, &seq).unwrap();
        for t in 0..seq.len() {
            let s: f64 = (0..2).map(|i| tr.alpha[t][i] * tr.beta[t][i]).sum();
            assert!((s - 1.0).abs() < 1e-12, "t={t}: {s}");
        }
    }

    #[test]
    fn posterior_normalization() {
        let params = toy();
        let seq = SequencePair::new(vec![0, 1, 1, 0, 1, 0], vec![1, 0, 1, 1, 0, 0]).unwrap();
        let tr = forward_backward(&params, &seq).unwrap();
        let post = posteriors(&tr, &params, &seq);
        for g in &post.gamma {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (t, pair) in post.digamma.iter().enumerate() {
            for i in 0..2 {
                assert!((pair[i].iter().sum::<f64>() - post.gamma[t][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_posterior_resets_unvisited_rows() {
        let seq = SequencePair::new(vec![0, 1, 1], vec![0, 0, 1]).unwrap();
        let post = Posteriors {
            digamma: vec![vec![vec![1.0, 0.0], vec![0.0, 0.0]]; 2],
            gamma: vec![vec![1.0, 0.0]; 3],
        };
        let p = reestimate(&post, &seq, 3, 2);
        assert_eq!(p.a.row(0), &[1.0, 0.0]);
        assert_eq!(p.a.row(1), &[0.5, 0.5]);
        assert_eq!(p.b.row(0), &[1.0 / 3.0, 2.0 / 3.0, 0.0]);
        assert_eq!(p.b.row(1), &[1.0 / 3.0; 3]);
        assert_eq!(p.c.row(1), &[0.5, 0.5]);
        assert_eq!(p.c.row(2), &[0.5, 0.5]);
        assert!(p.stochastic_error() <= 1e-12);
    }

    #[test]
    fn single_hidden_state_fit_converges_in_one_update() {
        let seq = SequencePair::new(vec![0, 1, 1, 2, 0, 1], vec![1, 0, 1, 1, 0, 0]).unwrap();
        let dims = Dims {
            hidden: 1,
            visible: 3,
            observed: 2,
        };
        let fit = fit(
            &seq,
            dims,
            &FitConfig {
                restarts: 1,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
        assert!((fit.params.b.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((fit.params.c.get(1, 0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic() {
        let seq = SequencePair::new(
            (0..60).map(|t| (t * 7) % 5).collect(),
            (0..60).map(|t| (t * 3) % 4).collect(),
        )
        .unwrap();
        let dims = Dims {
            hidden: 2,
            visible: 5,
            observed: 4,
        };
        let cfg = FitConfig {
            seed: 11,
            restarts: 3,
            ..FitConfig::default()
        };
        let a = fit(&seq, dims, &cfg).unwrap();
        let b = fit(&seq, dims, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
        assert_eq!(a.restarts.len(), 3);
        assert!(a
            .restarts
            .iter()
            .all(|r| r.log_likelihood <= *a.trace.last().unwrap()));
    }
}
