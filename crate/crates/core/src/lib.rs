//! Behavioral price-path imitation and reinforcement-learned option hedging.
//!
//! The pipeline runs left to right through the modules:
//! [`market_data`] turns OHLCV bars into (decision, price change) samples,
//! [`bdnn`] learns a Gaussian predictive distribution of price change given a
//! decision, [`vhmn`] learns a visible-hidden Markov network over (open price,
//! decision) sequences, [`paths`] samples decision and price paths from the two,
//! and [`hedging`] prices and hedges a European option on the simulated
//! cross-section by backward-recursive basis regression.

pub mod bdnn;
pub mod black_scholes;
pub mod hedging;
pub mod linalg;
pub mod market_data;
pub mod paths;
pub mod vhmn;
