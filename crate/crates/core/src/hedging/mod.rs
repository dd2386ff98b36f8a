//! Option pricing and hedging on a simulated price cross-section by backward
//! recursion: optimal hedge positions in closed form from a cubic B-spline
//! expansion, a self-financing portfolio rollback, one-step risk-adjusted
//! rewards, and a least-squares fit of the action-value function.

mod basis;
mod cross_section;

pub use basis::BasisSet;
pub use cross_section::CrossSection;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bdnn::{Bdnn, MlpModel};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HedgeError {
    #[error("invalid option setup: {0}")]
    InvalidSpec(String),
    #[error("need at least 2 paths, got {0}")]
    InsufficientPaths(usize),
    #[error("state range [{min}, {max}] is degenerate")]
    DegenerateRange { min: f64, max: f64 },
    #[error("{system} system at t={t} is singular ({source}); try a larger ridge")]
    Singular {
        system: &'static str,
        t: usize,
        source: linalg::SingularMatrix,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

/// Risk aversion used for the hedge and for the risk charge in rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskAversion {
    Finite(f64),
    /// Hedge purely to minimize variance; rewards and the terminal charge use
    /// `pricing_eta`.
    PureHedge {
        pricing_eta: f64,
    },
}

impl RiskAversion {
    /// `η` of the hedge solve, `None` in the pure-hedge limit.
    pub fn action_eta(&self) -> Option<f64> {
        match *self {
            RiskAversion::Finite(eta) => Some(eta),
            RiskAversion::PureHedge { .. } => None,
        }
    }

    pub fn pricing_eta(&self) -> f64 {
        match *self {
            RiskAversion::Finite(eta) => eta,
            RiskAversion::PureHedge { pricing_eta } => pricing_eta,
        }
    }
}

impl Default for RiskAversion {
    fn default() -> Self {
        RiskAversion::PureHedge { pricing_eta: 1.0 }
    }
}

/// All rates and volatilities are per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
    pub maturity_slots: usize,
    pub shares: f64,
    pub rate: f64,
    pub risk_aversion: RiskAversion,
    pub kappa: f64,
    pub drift_mu: f64,
    pub vol_sigma: f64,
    pub ridge: f64,
}

impl OptionSpec {
    pub fn discount(&self) -> f64 {
        (-self.rate).exp()
    }

    pub fn validate(&self) -> Result<(), HedgeError> {
        let bad = |msg: String| Err(HedgeError::InvalidSpec(msg));
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad(format!("strike must be positive, got {}", self.strike));
        }
        if self.maturity_slots == 0 {
            return bad("maturity must be at least one slot".into());
        }
        if !(self.shares > 0.0 && self.shares.is_finite()) {
            return bad(format!("share count must be positive, got {}", self.shares));
        }
        if !self.rate.is_finite()
            || !self.drift_mu.is_finite()
            || !(self.vol_sigma >= 0.0 && self.vol_sigma.is_finite())
        {
            return bad(
                "rate, drift and volatility must be finite with non-negative volatility".into(),
            );
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be non-negative, got {}", self.ridge));
        }
        let positive = |eta: f64| eta > 0.0 && eta.is_finite();
        match self.risk_aversion {
            RiskAversion::Finite(eta) if !positive(eta) => {
                bad(format!("risk aversion must be positive, got {eta}"))
            }
            RiskAversion::PureHedge { pricing_eta }
                if !(pricing_eta >= 0.0 && pricing_eta.is_finite()) =>
            {
                bad(format!(
                    "pricing risk aversion must be non-negative, got {pricing_eta}"
                ))
            }
            _ => Ok(()),
        }
    }
}

pub fn terminal_payoff(spec: &OptionSpec, s_t: f64) -> f64 {
    match spec.kind {
        OptionKind::Call => (s_t - spec.strike).max(0.0),
        OptionKind::Put => (spec.strike - s_t).max(0.0),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn centered(values: &[f64]) -> Vec<f64> {
    let m = mean(values);
    values.iter().map(|v| v - m).collect()
}

/// `Π_T = H(S_T)` and `Q_T = −H(S_T) − η·Var̂[H(S_T)]` with the pricing `η`.
pub fn terminal_init(
    spec: &OptionSpec,
    xs: &CrossSection,
) -> Result<(Vec<f64>, Vec<f64>), HedgeError> {
    if xs.paths() < 2 {
        return Err(HedgeError::InsufficientPaths(xs.paths()));
    }
    let payoff: Vec<f64> = xs
        .prices(xs.steps())
        .iter()
        .map(|&s| terminal_payoff(spec, s))
        .collect();
    let charge = spec.risk_aversion.pricing_eta() * sample_variance(&payoff);
    let q = payoff.iter().map(|h| -h - charge).collect();
    Ok((payoff, q))
}

/// Price change caused by a traded dollar flow.
pub trait PriceImpact: Sync {
    fn impact(&self, flow: f64) -> f64;
}

impl PriceImpact for Bdnn {
    fn impact(&self, flow: f64) -> f64 {
        self.predict(flow).mean
    }
}

impl PriceImpact for MlpModel {
    fn impact(&self, flow: f64) -> f64 {
        self.forward(flow)
    }
}

/// Per-path quantities entering one backward step.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub psi: DMatrix<f64>,
    pub s: Vec<f64>,
    pub s_c: Vec<f64>,
    pub delta_s: Vec<f64>,
    pub delta_s_c: Vec<f64>,
    pub pi_next: Vec<f64>,
    pub pi_dot: Vec<f64>,
    /// `κ·f(F)` per path.
    pub kf: Vec<f64>,
}

impl StepInputs {
    pub fn new(
        basis: &BasisSet,
        xs: &CrossSection,
        t: usize,
        pi_next: &[f64],
        kf: Vec<f64>,
        centering: Centering,
        ridge: f64,
    ) -> Result<Self, HedgeError> {
        let psi = basis.design_matrix(xs.states(t));
        let (delta_s_c, pi_dot) = match centering {
            Centering::CrossSectional => (centered(xs.delta_s(t)), centered(pi_next)),
            Centering::Conditional => (
                conditional_residual(&psi, xs.delta_s(t), ridge, t)?,
                conditional_residual(&psi, pi_next, ridge, t)?,
            ),
        };
        Ok(StepInputs {
            s: xs.prices(t).to_vec(),
            s_c: centered(xs.prices(t)),
            delta_s: xs.delta_s(t).to_vec(),
            delta_s_c,
            pi_next: pi_next.to_vec(),
            pi_dot,
            kf,
            psi,
        })
    }

    fn xi(&self, u: usize) -> f64 {
        self.delta_s_c[u] + self.kf[u] * self.s_c[u]
    }
}

/// Residual of `values` after removing the mean and its basis regression on
/// the state, re-centered so it sums to zero exactly.
fn conditional_residual(
    psi: &DMatrix<f64>,
    values: &[f64],
    ridge: f64,
    t: usize,
) -> Result<Vec<f64>, HedgeError> {
    let c = centered(values);
    let (_, fitted) = qfit(psi, &c, ridge, t)?;
    let residual: Vec<f64> = c.iter().zip(fitted).map(|(v, f)| v - f).collect();
    Ok(centered(&residual))
}

/// `Σ_u ψψᵀ·c_u` for per-path weights `c`.
fn weighted_gram(psi: &DMatrix<f64>, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut scaled = psi.clone();
    for u in 0..psi.nrows() {
        let c = weights(u);
        scaled.row_mut(u).iter_mut().for_each(|v| *v *= c);
    }
    psi.transpose() * scaled
}

fn weighted_sum(psi: &DMatrix<f64>, weights: impl Fn(usize) -> f64) -> DVector<f64> {
    let w = DVector::from_iterator(psi.nrows(), (0..psi.nrows()).map(weights));
    psi.transpose() * w
}

/// Hedge coefficients `w = (E + ςI)⁻¹ D`.
pub fn optimal_action_coeffs(
    step: &StepInputs,
    spec: &OptionSpec,
    t: usize,
) -> Result<DVector<f64>, HedgeError> {
    let gamma = spec.discount();
    let inv = spec
        .risk_aversion
        .action_eta()
        .map_or(0.0, |eta| 1.0 / (2.0 * eta * gamma));
    let e = weighted_gram(&step.psi, |u| step.xi(u).powi(2));
    let d = weighted_sum(&step.psi, |u| {
        step.delta_s[u] * inv + step.pi_dot[u] * step.xi(u) + step.kf[u] * step.s[u] * inv
    });
    linalg::solve_ridge(&e, &d, spec.ridge).map_err(|source| HedgeError::Singular {
        system: "hedge",
        t,
        source,
    })
}

pub fn optimal_action(w: &DVector<f64>, psi: &DMatrix<f64>) -> Vec<f64> {
    (psi * w).iter().copied().collect()
}

/// Sampled hedge objective that `optimal_action_coeffs` minimizes.
pub fn action_objective(w: &DVector<f64>, step: &StepInputs, spec: &OptionSpec) -> f64 {
    let gamma = spec.discount();
    let a = optimal_action(w, &step.psi);
    let linear = spec
        .risk_aversion
        .action_eta()
        .map_or(0.0, |eta| 1.0 / (eta * gamma));
    let data: f64 = (0..a.len())
        .map(|u| {
            let residual = step.pi_dot[u] - a[u] * step.xi(u);
            residual * residual - a[u] * (step.delta_s[u] + step.kf[u] * step.s[u]) * linear
        })
        .sum();
    data + spec.ridge * w.norm_squared()
}

/// `Π_t = γ(Π_{t+1} − aΔS − κf·a·S)`.
pub fn portfolio_rollback(step: &StepInputs, a: &[f64], spec: &OptionSpec) -> Vec<f64> {
    let gamma = spec.discount();
    (0..a.len())
        .map(|u| gamma * (step.pi_next[u] - a[u] * step.delta_s[u] - step.kf[u] * a[u] * step.s[u]))
        .collect()
}

pub fn reward(step: &StepInputs, a: &[f64], spec: &OptionSpec) -> Vec<f64> {
    let gamma = spec.discount();
    let eta = spec.risk_aversion.pricing_eta();
    (0..a.len())
        .map(|u| {
            let gain = a[u] * step.delta_s[u] + step.kf[u] * a[u] * step.s[u];
            let residual =
                step.pi_dot[u] - (a[u] * step.delta_s_c[u] + step.kf[u] * a[u] * step.s_c[u]);
            gamma * gain - eta * gamma * gamma * residual * residual
        })
        .collect()
}

/// Least-squares fit of `targets` on the basis; returns coefficients and fitted values.
pub fn qfit(
    psi: &DMatrix<f64>,
    targets: &[f64],
    ridge: f64,
    t: usize,
) -> Result<(DVector<f64>, Vec<f64>), HedgeError> {
    let g = psi.transpose() * psi;
    let h = weighted_sum(psi, |u| targets[u]);
    let phi = linalg::solve_ridge(&g, &h, ridge).map_err(|source| HedgeError::Singular {
        system: "value",
        t,
        source,
    })?;
    let fitted = optimal_action(&phi, psi);
    Ok((phi, fitted))
}

/// How forward quantities `ΔS_t` and `Π_{t+1}` are centered before entering
/// the hedge solve and the risk charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Subtract the mean over all paths.
    CrossSectional,
    /// Also subtract the basis regression on the state at `t`, an estimate of
    /// the mean given `S_t`.
    #[default]
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HedgeConfig {
    pub basis_count: usize,
    /// Fraction of the state range added on each side of the knot span.
    pub basis_margin: f64,
    pub centering: Centering,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig {
            basis_count: 12,
            basis_margin: 0.01,
            centering: Centering::default(),
        }
    }
}

/// Everything the recursion produced. Per-step vectors indexed by `t`:
/// `actions`, `portfolio` and `q_values` run to `T`, the rest to `T−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeSolution {
    pub price: f64,
    pub pricing_eta: f64,
    pub terminal_variance: f64,
    pub basis: BasisSet,
    pub hedge_coeffs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub portfolio: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub q_coeffs: Vec<Vec<f64>>,
    pub q_values: Vec<Vec<f64>>,
    /// `κ·f(F)` per path per step.
    pub impact_terms: Vec<Vec<f64>>,
}

fn impact_for_step(
    impact: Option<&dyn PriceImpact>,
    step_pure: &StepInputs,
    spec: &OptionSpec,
    a_next: &[f64],
    t: usize,
) -> Result<Vec<f64>, HedgeError> {
    let n = a_next.len();
    let Some(f) = impact.filter(|_| spec.kappa > 0.0) else {
        return Ok(vec![0.0; n]);
    };
    // Flow is evaluated with a preliminary pure-hedge position at t.
    let pure = OptionSpec {
        risk_aversion: RiskAversion::PureHedge { pricing_eta: 0.0 },
        ..spec.clone()
    };
    let w = optimal_action_coeffs(step_pure, &pure, t)?;
    let a_pre = optimal_action(&w, &step_pure.psi);
    Ok((0..n)
        .map(|u| spec.kappa * f.impact((a_next[u] - a_pre[u]) * spec.shares * step_pure.s[u]))
        .collect())
}

/// Runs the full backward recursion on `xs`.
pub fn price_and_hedge(
    xs: &CrossSection,
    spec: &OptionSpec,
    config: &HedgeConfig,
    impact: Option<&dyn PriceImpact>,
) -> Result<HedgeSolution, HedgeError> {
    spec.validate()?;
    if spec.maturity_slots != xs.steps() {
        return Err(HedgeError::InvalidSpec(format!(
            "maturity is {} slots but paths have {} steps",
            spec.maturity_slots,
            xs.steps()
        )));
    }
    let basis = BasisSet::spanning(xs.all_states(), config.basis_count, config.basis_margin)?;
    let (pi_terminal, q_terminal) = terminal_init(spec, xs)?;
    let terminal_variance = sample_variance(&pi_terminal);
    let gamma = spec.discount();
    let steps = xs.steps();
    let u_count = xs.paths();

    let mut actions = vec![vec![0.0; u_count]; steps + 1];
    let mut portfolio = vec![Vec::new(); steps + 1];
    let mut q_values = vec![Vec::new(); steps + 1];
    let mut hedge_coeffs = vec![Vec::new(); steps];
    let mut q_coeffs = vec![Vec::new(); steps];
    let mut rewards = vec![Vec::new(); steps];
    let mut impact_terms = vec![Vec::new(); steps];
    portfolio[steps] = pi_terminal;
    q_values[steps] = q_terminal;

    for t in (0..steps).rev() {
        let mut step = StepInputs::new(
            &basis,
            xs,
            t,
            &portfolio[t + 1],
            vec![0.0; u_count],
            config.centering,
            spec.ridge,
        )?;
        step.kf = impact_for_step(impact, &step, spec, &actions[t + 1], t)?;
        let w = optimal_action_coeffs(&step, spec, t)?;
        let a = optimal_action(&w, &step.psi);
        portfolio[t] = portfolio_rollback(&step, &a, spec);
        let r = reward(&step, &a, spec);
        let targets: Vec<f64> = r
            .iter()
            .zip(&q_values[t + 1])
            .map(|(r, q)| r + gamma * q)
            .collect();
        let (phi, q) = qfit(&step.psi, &targets, spec.ridge, t)?;
        hedge_coeffs[t] = w.iter().copied().collect();
        q_coeffs[t] = phi.iter().copied().collect();
        actions[t] = a;
        rewards[t] = r;
        q_values[t] = q;
        impact_terms[t] = step.kf;
    }

    Ok(HedgeSolution {
        price: -mean(&q_values[0]),
        pricing_eta: spec.risk_aversion.pricing_eta(),
        terminal_variance,
        basis,
        hedge_coeffs,
        actions,
        portfolio,
        rewards,
        q_coeffs,
        q_values,
        impact_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: OptionKind) -> OptionSpec {
        OptionSpec {
            kind,
            strike: 100.0,
            maturity_slots: 1,
            shares: 1.0,
            rate: 0.0,
            risk_aversion: RiskAversion::Finite(1.0),
            kappa: 0.0,
            drift_mu: 0.0,
            vol_sigma: 0.0,
            ridge: 0.001,
        }
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(terminal_payoff(&spec(OptionKind::Call), 120.0), 20.0);
        assert_eq!(terminal_payoff(&spec(OptionKind::Call), 100.0), 0.0);
        assert_eq!(terminal_payoff(&spec(OptionKind::Put), 80.0), 20.0);
    }

    #[test]
    fn terminal_examples() {
        let s = spec(OptionKind::Call);
        let xs = CrossSection::from_rows(&[vec![100.0, 90.0], vec![100.0, 110.0]], 0.0, 0.0, 0.0)
            .unwrap();
        let (pi, q) = terminal_init(&s, &xs).unwrap();
        assert_eq!(pi, vec![0.0, 10.0]);
        assert_eq!(q, vec![-50.0, -60.0]);

        let flat = CrossSection::from_rows(&[vec![100.0, 100.0], vec![99.0, 100.0]], 0.0, 0.0, 0.0)
            .unwrap();
        assert_eq!(
            terminal_init(&s, &flat).unwrap(),
            (vec![0.0, 0.0], vec![0.0, 0.0])
        );

        let one = CrossSection::from_rows(&[vec![100.0, 90.0]], 0.0, 0.0, 0.0).unwrap();
        assert_eq!(
            terminal_init(&s, &one),
            Err(HedgeError::InsufficientPaths(1))
        );
    }

    #[test]
    fn spec_validation() {
        assert!(spec(OptionKind::Call).validate().is_ok());
        let bad = OptionSpec {
            risk_aversion: RiskAversion::Finite(0.0),
            ..spec(OptionKind::Call)
        };
        assert!(bad.validate().is_err());
        let bad = OptionSpec {
            ridge: -1.0,
            ..spec(OptionKind::Put)
        };
        assert!(bad.validate().is_err());
        assert_eq!(RiskAversion::default().pricing_eta(), 1.0);
        assert_eq!(RiskAversion::default().action_eta(), None);
    }
}
