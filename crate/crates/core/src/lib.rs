//! Analytic model, protocol optimizer and Monte Carlo validator for
//! two-way quantum repeater chains with optional entanglement purification.

pub mod bell;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod monte_carlo;
pub mod network_model;
pub mod optimizer;
pub mod pipeline;
pub mod timing;

pub use bell::BellDiagonal;
pub use error::{ModelError, Result};
pub use network_model::{NetworkParams, Protocol, RateReport, SessionPlan};
