//! Stand-alone adversary runs built on the scenario engine.

use crate::config::{AdversaryConfig, ScenarioConfig};
use crate::scenario::{simulate, RunOutput};
use crate::ScenarioError;

/// Adversary names accepted by [`run_named`].
pub const NAMES: [&str; 4] = [
    "cheating-refresher",
    "double-spender",
    "stolen-key",
    "conspiring-merchant",
];

/// A market with one customer who makes no payments, on a clean network.
fn quiet_market(name: &str, seed: u64, kappa: usize) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::from_toml("scenario = \"market\"")?;
    cfg.name = name.into();
    cfg.seed = seed;
    cfg.kappa = kappa;
    cfg.actors.customers = 1;
    cfg.actors.merchants = 2;
    cfg.workload.payments_per_customer = 0;
    Ok(cfg)
}

fn run_with(
    mut cfg: ScenarioConfig,
    adversary: AdversaryConfig,
) -> Result<RunOutput, ScenarioError> {
    cfg.adversaries = vec![adversary];
    simulate(&cfg)
}

/// Runs `trials` refresh sessions that each corrupt one of the `kappa`
/// constructions and returns the fraction the mint caught.
pub fn adversary_cheating_refresher(
    trials: usize,
    kappa: usize,
    seed: u64,
) -> Result<f64, ScenarioError> {
    if trials < 1000 {
        return Err(ScenarioError::Config(format!(
            "need at least 1000 trials, got {trials}"
        )));
    }
    let cfg = quiet_market("cheating-refresher", seed, kappa)?;
    let out = run_with(cfg, AdversaryConfig::CheatingRefresher { sessions: trials })?;
    out.outcome("cheating_refresher")
        .and_then(|o| o["caught_fraction"].as_f64())
        .ok_or_else(|| ScenarioError::Invariant {
            name: "cheating refresher ran".into(),
            detail: "no outcome".into(),
        })
}

/// A merchant paid with a refresh change coin races the customer who can
/// rebuild that coin from link data.
pub fn conspiring_merchant_scenario(
    customer_first: bool,
    seed: u64,
) -> Result<RunOutput, ScenarioError> {
    let cfg = quiet_market("conspiring-merchant", seed, 3)?;
    run_with(cfg, AdversaryConfig::ConspiringMerchant { customer_first })
}

/// Runs the adversary `name` with `trials` as its size parameter.
pub fn run_named(
    name: &str,
    trials: usize,
    kappa: usize,
    seed: u64,
) -> Result<RunOutput, ScenarioError> {
    let cfg = quiet_market(name, seed, kappa)?;
    let adversary = match name {
        "cheating-refresher" => AdversaryConfig::CheatingRefresher { sessions: trials },
        "double-spender" => AdversaryConfig::DoubleSpender { coins: trials },
        "stolen-key" => AdversaryConfig::StolenKey {
            coins: trials,
            value: None,
        },
        "conspiring-merchant" => AdversaryConfig::ConspiringMerchant {
            customer_first: seed % 2 == 0,
        },
        other => {
            return Err(ScenarioError::Config(format!(
                "unknown adversary `{other}`; known: {}",
                NAMES.join(", ")
            )))
        }
    };
    run_with(cfg, adversary)
}
