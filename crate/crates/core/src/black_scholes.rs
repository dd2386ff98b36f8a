//! Closed-form European option values under geometric Brownian motion.
//! `rate` and `sigma` are per unit of `tau`.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::hedging::OptionKind;

fn d1_d2(spot: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let vol = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + (rate + sigma * sigma / 2.0) * tau) / vol;
    (d1, d1 - vol)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn price(kind: OptionKind, spot: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> f64 {
    let discounted = strike * (-rate * tau).exp();
    if tau <= 0.0 || sigma <= 0.0 {
        let forward = spot - discounted;
        return match kind {
            OptionKind::Call => forward.max(0.0),
            OptionKind::Put => (-forward).max(0.0),
        };
    }
    let n = std_normal();
    let (d1, d2) = d1_d2(spot, strike, rate, sigma, tau);
    match kind {
        OptionKind::Call => spot * n.cdf(d1) - discounted * n.cdf(d2),
        OptionKind::Put => discounted * n.cdf(-d2) - spot * n.cdf(-d1),
    }
}

pub fn delta(kind: OptionKind, spot: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> f64 {
    let itm = spot > strike * (-rate * tau).exp();
    if tau <= 0.0 || sigma <= 0.0 {
        return match (kind, itm) {
            (OptionKind::Call, true) => 1.0,
            (OptionKind::Put, false) => -1.0,
            _ => 0.0,
        };
    }
    let n1 = std_normal().cdf(d1_d2(spot, strike, rate, sigma, tau).0);
    match kind {
        OptionKind::Call => n1,
        OptionKind::Put => n1 - 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        // S = K = 100, r = 5%, σ = 20%, one year.
        let c = price(OptionKind::Call, 100.0, 100.0, 0.05, 0.2, 1.0);
        assert!((c - 10.450583572185565).abs() < 1e-9, "{c}");
        let p = price(OptionKind::Put, 100.0, 100.0, 0.05, 0.2, 1.0);
        assert!((c - p - (100.0 - 100.0 * (-0.05f64).exp())).abs() < 1e-12);
        assert!(
            (delta(OptionKind::Call, 100.0, 100.0, 0.05, 0.2, 1.0) - 0.6368306511756191).abs()
                < 1e-9
        );
    }

    #[test]
    fn expiry_limits() {
        assert_eq!(price(OptionKind::Call, 120.0, 100.0, 0.0, 0.2, 0.0), 20.0);
        assert_eq!(delta(OptionKind::Put, 80.0, 100.0, 0.0, 0.2, 0.0), -1.0);
    }
}
