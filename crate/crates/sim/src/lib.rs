//! Deterministic in-process deployment of the token currency: one mint, its
//! banks, wallets and merchants talking over a simulated network with seeded
//! faults, plus scripted scenarios, adversaries, metrics and benchmarks.

use thiserror::Error;

pub mod adversary;
pub mod bench;
pub mod bus;
pub mod config;
pub mod report;
pub mod scenario;

pub use config::ScenarioConfig;
pub use report::MetricsReport;
pub use scenario::{run, simulate, RunOutput};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("deployment setup failed: {0}")]
    Setup(String),
    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: String, detail: String },
}
