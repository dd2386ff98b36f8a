use std::fs;
use std::path::{Path, PathBuf};

use pihedge_core::bdnn::{loss, Bdnn, TrainConfig};
use pihedge_core::black_scholes;
use pihedge_core::hedging::{price_and_hedge, CrossSection, HedgeError, OptionSpec, PriceImpact};
use pihedge_core::market_data::{build_dataset, load_ohlcv_csv, DecisionSample, Episode};
use pihedge_core::paths::{
    gbm_paths, read_path_matrix, remove_drift, simulate_decisions, simulate_prices,
    write_path_matrix, PricePath,
};
use pihedge_core::vhmn::{self, encode_dataset, VhmnModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::CliError;

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_path_matrix(&mut buf, rows)
        .map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))?;
    write_file(path, &buf)
}

fn write_meta(
    dir: &Path,
    cfg: &PipelineConfig,
    command: &str,
    extra: Value,
) -> Result<(), CliError> {
    let mut meta = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    write_json(&dir.join("meta.json"), &meta)
}

fn compute<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Compute(format!("{context}: {e}"))
}

struct LoadedEpisode {
    index: usize,
    label: String,
    samples: Vec<DecisionSample>,
}

fn load_episodes(cfg: &PipelineConfig) -> Result<Vec<LoadedEpisode>, CliError> {
    let path = &cfg.data.input;
    let bytes = read_file(path)?;
    let episodes: Vec<Episode> = load_ohlcv_csv(bytes.as_slice(), &cfg.data.columns)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let selected: Vec<usize> = match &cfg.episodes {
        Some(list) => list.clone(),
        None => (0..episodes.len()).collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Usage("no episodes selected".into()));
    }
    selected
        .into_iter()
        .map(|index| {
            let episode = episodes.get(index).ok_or_else(|| {
                CliError::Usage(format!(
                    "episode {index} out of range; {} has {}",
                    path.display(),
                    episodes.len()
                ))
            })?;
            let samples = build_dataset(episode)
                .map_err(|e| CliError::Usage(format!("{} episode {index}: {e}", path.display())))?;
            if samples.is_empty() {
                return Err(CliError::Usage(format!(
                    "episode {index} ({}) has no samples",
                    episode.label
                )));
            }
            Ok(LoadedEpisode {
                index,
                label: episode.label.clone(),
                samples,
            })
        })
        .collect()
}

fn bdnn_path(cfg: &PipelineConfig, index: usize) -> PathBuf {
    cfg.output
        .dir
        .join("bdnn")
        .join(format!("episode_{index}.json"))
}

fn vhmn_path(cfg: &PipelineConfig, index: usize) -> PathBuf {
    cfg.output
        .dir
        .join("vhmn")
        .join(format!("episode_{index}.json"))
}

fn load_bdnn(path: &Path) -> Result<Bdnn, CliError> {
    Bdnn::from_json(&read_file(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_vhmn(path: &Path) -> Result<VhmnModel, CliError> {
    VhmnModel::from_json(&read_file(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Trains one B-DNN per selected episode. Writes `bdnn/episode_<i>.json`,
/// `bdnn/metrics.json` and the sidecar.
pub fn fit_bdnn(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let episodes = load_episodes(cfg)?;
    let dir = cfg.output.dir.join("bdnn");
    let train = TrainConfig {
        rng_seed: cfg.seed,
        ..cfg.bdnn.train.clone()
    };
    let mut metrics = Vec::new();
    for ep in &episodes {
        let context = format!("episode {} ({})", ep.index, ep.label);
        let bdnn =
            Bdnn::fit(&ep.samples, &train, &cfg.bdnn.architecture).map_err(compute(&context))?;
        let final_loss = loss(&bdnn.model, &ep.samples, train.lambda).map_err(compute(&context))?;
        write_file(&bdnn_path(cfg, ep.index), bdnn.to_json().as_bytes())?;
        metrics.push(json!({
            "episode": ep.index,
            "label": ep.label,
            "samples": ep.samples.len(),
            "final_loss": final_loss,
            "coverage_1sd": bdnn.coverage(&ep.samples),
        }));
    }
    write_json(&dir.join("metrics.json"), &json!({ "episodes": metrics }))?;
    write_meta(
        &dir,
        cfg,
        "fit-bdnn",
        json!({ "episodes": episodes.iter().map(|e| e.index).collect::<Vec<_>>() }),
    )?;
    Ok(dir)
}

/// Fits one network per selected episode. Writes `vhmn/episode_<i>.json`,
/// `vhmn/trace_<i>.csv`, `vhmn/restarts.json` and the sidecar.
pub fn fit_vhmn(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let episodes = load_episodes(cfg)?;
    let dir = cfg.output.dir.join("vhmn");
    let dims = cfg.vhmn.dims();
    let fit_config = cfg.vhmn.fit_config(cfg.seed);
    let mut summaries = Vec::new();
    for ep in &episodes {
        let context = format!("episode {} ({})", ep.index, ep.label);
        let (vq, oq, seq) =
            encode_dataset(&ep.samples, dims.visible, dims.observed).map_err(compute(&context))?;
        let fit = vhmn::fit(&seq, dims, &fit_config).map_err(compute(&context))?;
        let model = VhmnModel::new(fit.params, vq, oq).map_err(compute(&context))?;
        write_file(&vhmn_path(cfg, ep.index), model.to_json().as_bytes())?;

        let mut trace = String::from("iteration,log_likelihood\n");
        for (i, ll) in fit.trace.iter().enumerate() {
            trace.push_str(&format!("{i},{ll:?}\n"));
        }
        write_file(
            &dir.join(format!("trace_{}.csv", ep.index)),
            trace.as_bytes(),
        )?;
        summaries.push(json!({
            "episode": ep.index,
            "label": ep.label,
            "best_restart": fit.best_restart,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "log_likelihood": fit.trace.last(),
            "restarts": fit.restarts,
        }));
    }
    write_json(
        &dir.join("restarts.json"),
        &json!({ "episodes": summaries }),
    )?;
    write_meta(
        &dir,
        cfg,
        "fit-vhmn",
        json!({ "episodes": episodes.iter().map(|e| e.index).collect::<Vec<_>>() }),
    )?;
    Ok(dir)
}

/// Independent seed for segment `k`, role `role` (0 decisions, 1 prices).
fn segment_seed(seed: u64, k: usize, role: u64) -> u64 {
    seed.wrapping_add((2 * k as u64 + role).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Simulates `U` price paths. Selected episodes are chained: the first
/// episode's models drive the first segment (its sample count in steps), the
/// next episode's the following one, cycling until `T` steps are filled.
/// Writes `paths/prices.csv`, `paths/states.csv` and the sidecar.
pub fn simulate(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let episodes = load_episodes(cfg)?;
    let models = episodes
        .iter()
        .map(|ep| {
            Ok((
                load_bdnn(&bdnn_path(cfg, ep.index))?,
                load_vhmn(&vhmn_path(cfg, ep.index))?,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let sim = &cfg.simulate;
    let count = sim.paths;
    let steps = sim.steps.unwrap_or(episodes[0].samples.len());
    let s0 = sim.s0.unwrap_or(episodes[0].samples[0].open);

    let mut rows = vec![vec![s0]; count];
    let mut segments = Vec::new();
    let mut filled = 0;
    while filled < steps {
        let k = segments.len();
        let which = k % episodes.len();
        let (bdnn, model) = &models[which];
        let len = episodes[which].samples.len().min(steps - filled);
        let context = format!("segment {k} (episode {})", episodes[which].index);
        let decisions = simulate_decisions(
            &model.params,
            &model.observation_quantizer,
            count,
            len,
            segment_seed(cfg.seed, k, 0),
        )
        .map_err(compute(&context))?;
        let relative = simulate_prices(
            bdnn,
            &decisions,
            1.0,
            sim.price_mode,
            segment_seed(cfg.seed, k, 1),
        )
        .map_err(compute(&context))?;
        for (row, rel) in rows.iter_mut().zip(&relative) {
            let base = *row.last().expect("rows start with s0");
            row.extend(rel.prices[1..].iter().map(|m| base * m));
        }
        segments.push(json!({ "episode": episodes[which].index, "steps": len }));
        filled += len;
    }

    let rates = cfg.slot_rates();
    let states: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| remove_drift(&PricePath { prices: r.clone() }, rates.mu, rates.sigma).states)
        .collect();
    let dir = cfg.output.dir.join("paths");
    write_matrix(&dir.join("prices.csv"), &rows)?;
    write_matrix(&dir.join("states.csv"), &states)?;
    write_meta(
        &dir,
        cfg,
        "simulate",
        json!({
            "paths": count,
            "steps": steps,
            "s0": s0,
            "mu": sim.mu,
            "sigma": sim.sigma,
            "slot_minutes": cfg.data.slot_minutes,
            "mu_per_slot": rates.mu,
            "sigma_per_slot": rates.sigma,
            "price_mode": sim.price_mode,
            "segments": segments,
        }),
    )?;
    Ok(dir)
}

/// Where `price` gets its path matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceSource {
    /// `paths/prices.csv` under the output directory.
    Simulated,
    File(PathBuf),
    /// Geometric Brownian motion with the configured drift and volatility.
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub paths: usize,
    pub mean_q0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceReport {
    pub price: f64,
    pub source: String,
    pub kind: pihedge_core::hedging::OptionKind,
    pub strike: f64,
    pub shares: f64,
    pub s0: f64,
    pub paths: usize,
    pub steps: usize,
    pub rate_per_slot: f64,
    pub mu_per_slot: f64,
    pub sigma_per_slot: f64,
    /// `None` when hedging purely for variance.
    pub action_eta: Option<f64>,
    pub pricing_eta: f64,
    pub kappa: f64,
    pub ridge: f64,
    pub basis_count: usize,
    pub terminal_variance: f64,
    pub mean_action: Vec<f64>,
    pub mean_portfolio: Vec<f64>,
    /// Running mean of `−Q_0` over growing path subsets.
    pub convergence: Vec<ConvergencePoint>,
    /// Analytic reference for GBM paths.
    pub black_scholes: Option<f64>,
}

fn column_means(time_major: &[Vec<f64>]) -> Vec<f64> {
    time_major
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect()
}

fn path_major(time_major: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let paths = time_major.first().map_or(0, Vec::len);
    (0..paths)
        .map(|u| time_major.iter().map(|v| v[u]).collect())
        .collect()
}

/// Prices and hedges on the chosen paths. Writes `price/report.json`,
/// `price/actions.csv`, `price/portfolio.csv`, `price/q_values.csv` and the
/// sidecar.
pub fn price(cfg: &PipelineConfig, source: &PriceSource) -> Result<PriceReport, CliError> {
    let rates = cfg.slot_rates();
    let opt = &cfg.option;
    let rows = match source {
        PriceSource::Gbm => {
            let steps = cfg.simulate.steps.or(opt.maturity_slots).unwrap_or(77);
            gbm_paths(
                cfg.simulate.s0.unwrap_or(100.0),
                rates.mu,
                rates.sigma,
                steps,
                cfg.simulate.paths,
                1.0,
                cfg.seed,
            )
            .map_err(|e| CliError::Usage(format!("gbm paths: {e}")))?
            .into_iter()
            .map(|p| p.prices)
            .collect()
        }
        PriceSource::File(_) | PriceSource::Simulated => {
            let path = match source {
                PriceSource::File(p) => p.clone(),
                _ => cfg.output.dir.join("paths").join("prices.csv"),
            };
            read_path_matrix(read_file(&path)?.as_slice())
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    let steps = rows.first().map_or(0, |r| r.len().saturating_sub(1));
    if steps == 0 {
        return Err(CliError::Usage(
            "path matrix needs at least two columns".into(),
        ));
    }
    if let Some(m) = opt.maturity_slots.filter(|&m| m != steps) {
        return Err(CliError::Usage(format!(
            "option.maturity_slots is {m} but the paths have {steps} steps"
        )));
    }
    let s0 = if rows.iter().all(|r| r[0] == rows[0][0]) {
        rows[0][0]
    } else {
        rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64
    };
    let strike = opt.strike.unwrap_or(s0);
    let spec = OptionSpec {
        kind: opt.kind,
        strike,
        maturity_slots: steps,
        shares: opt.shares,
        rate: rates.rate,
        risk_aversion: opt.risk_aversion(),
        kappa: opt.kappa,
        drift_mu: rates.mu,
        vol_sigma: rates.sigma,
        ridge: opt.ridge,
    };
    let impact = if opt.kappa > 0.0 {
        Some(load_bdnn(&bdnn_path(cfg, opt.impact_episode))?)
    } else {
        None
    };

    let hedge_error = |e: HedgeError| match e {
        HedgeError::InvalidSpec(msg) => CliError::Usage(msg),
        other => CliError::Compute(format!("pricing: {other}")),
    };
    let xs =
        CrossSection::from_rows(&rows, rates.mu, rates.sigma, rates.rate).map_err(hedge_error)?;
    let sol = price_and_hedge(
        &xs,
        &spec,
        &opt.hedge_config(),
        impact.as_ref().map(|b| b as &dyn PriceImpact),
    )
    .map_err(hedge_error)?;
    if !sol.price.is_finite() {
        return Err(CliError::Compute(format!(
            "pricing produced a non-finite price ({})",
            sol.price
        )));
    }

    let q0 = &sol.q_values[0];
    let convergence = (1..=10)
        .map(|k| (k * q0.len()).div_ceil(10))
        .filter(|&n| n > 0)
        .map(|n| ConvergencePoint {
            paths: n,
            mean_q0: -q0[..n].iter().sum::<f64>() / n as f64,
        })
        .collect::<Vec<_>>();
    let report = PriceReport {
        price: sol.price,
        source: match source {
            PriceSource::Gbm => "gbm".into(),
            PriceSource::Simulated => "simulated".into(),
            PriceSource::File(p) => p.display().to_string(),
        },
        kind: opt.kind,
        strike,
        shares: opt.shares,
        s0,
        paths: rows.len(),
        steps,
        rate_per_slot: rates.rate,
        mu_per_slot: rates.mu,
        sigma_per_slot: rates.sigma,
        action_eta: spec.risk_aversion.action_eta(),
        pricing_eta: sol.pricing_eta,
        kappa: opt.kappa,
        ridge: opt.ridge,
        basis_count: opt.basis_count,
        terminal_variance: sol.terminal_variance,
        mean_action: column_means(&sol.actions),
        mean_portfolio: column_means(&sol.portfolio),
        convergence,
        black_scholes: matches!(source, PriceSource::Gbm).then(|| {
            opt.shares
                * black_scholes::price(opt.kind, s0, strike, rates.rate, rates.sigma, steps as f64)
        }),
    };

    let dir = cfg.output.dir.join("price");
    write_json(&dir.join("report.json"), &report)?;
    write_matrix(&dir.join("actions.csv"), &path_major(&sol.actions))?;
    write_matrix(&dir.join("portfolio.csv"), &path_major(&sol.portfolio))?;
    write_matrix(&dir.join("q_values.csv"), &path_major(&sol.q_values))?;
    write_meta(&dir, cfg, "price", json!({ "source": report.source }))?;
    Ok(report)
}
