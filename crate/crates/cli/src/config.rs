//! Pipeline configuration. One TOML file with a section per stage; every
//! key has a default, so an empty file is a valid config.

use std::path::PathBuf;

use pihedge_core::bdnn::{Architecture, TrainConfig};
use pihedge_core::hedging::{Centering, HedgeConfig, OptionKind, RiskAversion};
use pihedge_core::market_data::CsvSchema;
use pihedge_core::paths::PriceMode;
use pihedge_core::vhmn::{Dims, FitConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Trading minutes in a year: 252 sessions of 390 minutes.
pub const MINUTES_PER_YEAR: f64 = 98_280.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds B-DNN initialization, EM restarts and path simulation.
    pub seed: u64,
    /// Episode indices (file order) to fit and, for `simulate`, to chain.
    /// `None` selects every episode.
    pub episodes: Option<Vec<usize>>,
    pub data: DataSection,
    pub bdnn: BdnnSection,
    pub vhmn: VhmnSection,
    pub simulate: SimulateSection,
    pub option: OptionSection,
    pub output: OutputSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            episodes: None,
            data: DataSection::default(),
            bdnn: BdnnSection::default(),
            vhmn: VhmnSection::default(),
            simulate: SimulateSection::default(),
            option: OptionSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: PathBuf,
    pub columns: CsvSchema,
    /// Bar length, used to convert annualized rates to per-slot ones.
    pub slot_minutes: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            input: PathBuf::from("fixtures/ohlcv_6x78.csv"),
            columns: CsvSchema::default(),
            slot_minutes: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdnnSection {
    pub train: TrainConfig,
    pub architecture: Architecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VhmnSection {
    pub hidden: usize,
    pub visible: usize,
    pub observed: usize,
    pub dirichlet_alpha: f64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub max_init_retries: usize,
}

impl Default for VhmnSection {
    fn default() -> Self {
        let dims = Dims::default();
        let fit = FitConfig::default();
        VhmnSection {
            hidden: dims.hidden,
            visible: dims.visible,
            observed: dims.observed,
            dirichlet_alpha: fit.dirichlet_alpha,
            restarts: fit.restarts,
            tol: fit.tol,
            max_iters: fit.max_iters,
            max_init_retries: fit.max_init_retries,
        }
    }
}

impl VhmnSection {
    pub fn dims(&self) -> Dims {
        Dims {
            hidden: self.hidden,
            visible: self.visible,
            observed: self.observed,
        }
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            dirichlet_alpha: self.dirichlet_alpha,
            max_iters: self.max_iters,
            tol: self.tol,
            restarts: self.restarts,
            seed,
            max_init_retries: self.max_init_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub paths: usize,
    /// Defaults to the length of the first chained episode.
    pub steps: Option<usize>,
    /// Defaults to the first open of the first chained episode, or 100 for
    /// GBM paths.
    pub s0: Option<f64>,
    /// Annualized drift.
    pub mu: f64,
    /// Annualized volatility.
    pub sigma: f64,
    pub price_mode: PriceMode,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            paths: 1000,
            steps: None,
            s0: None,
            mu: 0.05,
            sigma: 0.2926,
            price_mode: PriceMode::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionSection {
    pub kind: OptionKind,
    /// `None` prices at the money.
    pub strike: Option<f64>,
    pub shares: f64,
    /// Must equal the path length when set.
    pub maturity_slots: Option<usize>,
    /// Annualized risk-free rate.
    pub rate: f64,
    pub eta: f64,
    /// Hedge for minimum variance and use `eta` only for the risk charge.
    pub pure_risk_hedge: bool,
    pub kappa: f64,
    /// Episode whose B-DNN supplies the impact function when `kappa > 0`.
    pub impact_episode: usize,
    pub ridge: f64,
    pub basis_count: usize,
    pub basis_margin: f64,
    pub centering: Centering,
}

impl Default for OptionSection {
    fn default() -> Self {
        let hedge = HedgeConfig::default();
        OptionSection {
            kind: OptionKind::Call,
            strike: None,
            shares: 100.0,
            maturity_slots: None,
            rate: 0.01059,
            eta: 1.0,
            pure_risk_hedge: true,
            kappa: 0.0,
            impact_episode: 0,
            ridge: 0.001,
            basis_count: hedge.basis_count,
            basis_margin: hedge.basis_margin,
            centering: hedge.centering,
        }
    }
}

impl OptionSection {
    pub fn risk_aversion(&self) -> RiskAversion {
        if self.pure_risk_hedge {
            RiskAversion::PureHedge {
                pricing_eta: self.eta,
            }
        } else {
            RiskAversion::Finite(self.eta)
        }
    }

    pub fn hedge_config(&self) -> HedgeConfig {
        HedgeConfig {
            basis_count: self.basis_count,
            basis_margin: self.basis_margin,
            centering: self.centering,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

/// Per-slot rates derived from the annualized inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotRates {
    pub rate: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Usage(format!("config: {msg}")));
        if !(self.data.slot_minutes > 0.0 && self.data.slot_minutes.is_finite()) {
            return bad("data.slot_minutes must be positive");
        }
        if let Err(e) = self.bdnn.train.validate() {
            return Err(CliError::Usage(format!("config: bdnn.train: {e}")));
        }
        if let Err(e) = self.bdnn.architecture.validate() {
            return Err(CliError::Usage(format!("config: bdnn.architecture: {e}")));
        }
        let v = &self.vhmn;
        if v.hidden == 0 || v.visible == 0 || v.observed == 0 {
            return bad("vhmn dimensions must be at least 1");
        }
        if !(v.dirichlet_alpha > 0.0) || !(v.tol >= 0.0) || v.max_iters == 0 {
            return bad("vhmn needs dirichlet_alpha > 0, tol >= 0 and max_iters >= 1");
        }
        let s = &self.simulate;
        if s.paths == 0 || s.steps == Some(0) {
            return bad("simulate.paths and simulate.steps must be at least 1");
        }
        if matches!(s.s0, Some(x) if !(x > 0.0 && x.is_finite())) {
            return bad("simulate.s0 must be positive");
        }
        if !s.mu.is_finite() || !(s.sigma >= 0.0 && s.sigma.is_finite()) {
            return bad("simulate.mu must be finite and simulate.sigma non-negative");
        }
        let o = &self.option;
        if matches!(o.strike, Some(k) if !(k > 0.0 && k.is_finite())) {
            return bad("option.strike must be positive");
        }
        if !(o.shares > 0.0)
            || !(o.eta > 0.0 && o.eta.is_finite())
            || !(o.kappa >= 0.0)
            || !(o.ridge >= 0.0)
        {
            return bad("option needs shares > 0, eta > 0, kappa >= 0 and ridge >= 0");
        }
        if !o.rate.is_finite() || o.basis_count < 4 || !(o.basis_margin >= 0.0) {
            return bad("option needs a finite rate, basis_count >= 4 and basis_margin >= 0");
        }
        Ok(())
    }

    /// `annual × slot_minutes / 98 280` for rates, square-root scaling for
    /// volatility.
    pub fn slot_rates(&self) -> SlotRates {
        let f = self.data.slot_minutes / MINUTES_PER_YEAR;
        SlotRates {
            rate: self.option.rate * f,
            mu: self.simulate.mu * f,
            sigma: self.simulate.sigma * f.sqrt(),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory so
    /// the same run written to two places hashes the same.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(
            cfg.vhmn.dims(),
            Dims {
                hidden: 2,
                visible: 30,
                observed: 30
            }
        );
        assert_eq!(cfg.bdnn.train.sigma, 2.5);
        assert_eq!(cfg.bdnn.train.lambda, 0.7);
        assert_eq!(cfg.option.ridge, 0.001);
        assert_eq!(cfg.option.kappa, 0.0);
        assert_eq!(cfg.simulate.paths, 1000);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
            seed = 7
            episodes = [0, 2]
            [data]
            input = "bars.csv"
            [data.columns]
            open = "Open"
            drop_first_slot = false
            [bdnn.train]
            epochs = 10
            [bdnn.architecture]
            widths = [1, 8, 1]
            activation = "tanh"
            bias = true
            [vhmn]
            hidden = 1
            [simulate]
            paths = 10
            price_mode = "sample"
            [option]
            kind = "put"
            strike = 100.0
            pure_risk_hedge = false
            centering = "cross_sectional"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.episodes, Some(vec![0, 2]));
        assert_eq!(cfg.data.columns.open, "Open");
        assert!(!cfg.data.columns.drop_first_slot);
        assert_eq!(cfg.data.columns.close, "close");
        assert_eq!(cfg.bdnn.train.epochs, 10);
        assert_eq!(cfg.bdnn.train.sigma, 2.5);
        assert_eq!(cfg.vhmn.hidden, 1);
        assert_eq!(cfg.simulate.price_mode, PriceMode::Sample);
        assert_eq!(cfg.option.kind, OptionKind::Put);
        assert_eq!(cfg.option.risk_aversion(), RiskAversion::Finite(1.0));
        assert_eq!(cfg.option.centering, Centering::CrossSectional);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(
            PipelineConfig::from_toml_str("[option]\nstrik = 1.0"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[option]\neta = -1.0"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[vhmn]\nhidden = 0"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[simulate]\npaths = 0"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn annual_rates_convert_per_slot() {
        let cfg = PipelineConfig::default();
        let r = cfg.slot_rates();
        assert!((r.rate - 0.01059 * 5.0 / 98_280.0).abs() < 1e-18);
        assert!((r.mu - 0.05 * 5.0 / 98_280.0).abs() < 1e-18);
        assert!((r.sigma - 0.2926 * (5.0f64 / 98_280.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
