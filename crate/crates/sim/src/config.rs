//! Scenario configuration, read from TOML or JSON.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use cbdc_core::crypto::CryptoMode;
use cbdc_core::Amount;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ScenarioError;

/// An amount written as a decimal string such as `"12.50"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Money(pub Amount);

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Amount::from_str(&s)
            .map(Money)
            .map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn money(s: &str) -> Money {
    Money(s.parse().expect("valid literal"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Customers withdraw and pay random merchants; adversaries act afterwards.
    Market,
    /// One withdrawal and one payment with every protocol step logged.
    Figures,
    /// A customer holds coins of one denomination, spends some, and the
    /// denomination is revoked.
    Revocation,
    /// Refresh followed by link and reconstruction, repeated.
    LinkRoundTrip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: CryptoMode,
    /// Overrides the mode's RSA modulus size.
    #[serde(default)]
    pub rsa_bits: Option<u32>,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default)]
    pub denominations: DenominationConfig,
    #[serde(default)]
    pub actors: ActorConfig,
    #[serde(default)]
    pub faults: FaultModel,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub adversaries: Vec<AdversaryConfig>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_mode() -> CryptoMode {
    CryptoMode::Toy
}

fn default_shards() -> usize {
    4
}

fn default_kappa() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenominationConfig {
    pub values: Vec<Money>,
    pub refresh_fee: Money,
    /// Length of each validity phase in seconds.
    pub lifetime_secs: u64,
}

impl Default for DenominationConfig {
    fn default() -> Self {
        DenominationConfig {
            values: [
                "0.01", "0.05", "0.10", "0.50", "1.00", "2.00", "5.00", "10.00", "20.00", "50.00",
            ]
            .into_iter()
            .map(money)
            .collect(),
            refresh_fee: Money(Amount::ZERO),
            lifetime_secs: 30 * 24 * 3600,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorConfig {
    pub banks: usize,
    pub customers: usize,
    pub merchants: usize,
    pub customer_balance: Money,
    /// Opening central-bank reserves of each commercial bank.
    pub bank_reserves: Money,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            banks: 1,
            customers: 10,
            merchants: 3,
            customer_balance: money("1000.00"),
            bank_reserves: money("10000000.00"),
        }
    }
}

/// One-way message latency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum LatencyDist {
    Fixed { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
    Exponential { mean_ms: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultModel {
    /// Probability that a request or a reply is dropped.
    pub loss: f64,
    /// Probability that a delivered request is delivered a second time.
    pub duplication: f64,
    pub latency: LatencyDist,
    /// How long a caller waits before treating a message as lost.
    pub timeout_ms: f64,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel {
            loss: 0.0,
            duplication: 0.0,
            latency: LatencyDist::Uniform {
                min_ms: 1.0,
                max_ms: 20.0,
            },
            timeout_ms: 200.0,
        }
    }
}

impl FaultModel {
    /// Same latency, no loss or duplication.
    pub fn reliable(&self) -> Self {
        FaultModel {
            loss: 0.0,
            duplication: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    /// Amount each customer withdraws on arrival.
    pub withdraw_amount: Money,
    pub payments_per_customer: usize,
    pub min_payment: Money,
    pub max_payment: Money,
    /// Chance that a customer refreshes a partly spent coin after paying.
    pub change_probability: f64,
    /// Customer arrivals per simulated second; `None` starts each customer
    /// as soon as the previous one finishes.
    pub arrival_rate_per_sec: Option<f64>,
    /// Coins withdrawn in the revocation scenario.
    pub coins: usize,
    /// Coins spent before the revocation.
    pub spent: usize,
    /// Repetitions in the link round-trip scenario.
    pub trials: usize,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            withdraw_amount: money("20.00"),
            payments_per_customer: 2,
            min_payment: money("0.50"),
            max_payment: money("9.99"),
            change_probability: 0.0,
            arrival_rate_per_sec: None,
            coins: 10,
            spent: 4,
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdversaryConfig {
    /// Pays with each coin at one merchant and replays it at another.
    DoubleSpender { coins: usize },
    /// Runs refresh sessions with one construction that does not follow the protocol.
    CheatingRefresher { sessions: usize },
    /// Holds a leaked denomination key and deposits coins it signed itself.
    /// `value` picks the denomination; the largest one by default.
    StolenKey {
        coins: usize,
        #[serde(default)]
        value: Option<Money>,
    },
    /// Accepts payment as a refresh change coin instead of a deposit; the
    /// customer races to reclaim it through the link protocol.
    ConspiringMerchant { customer_first: bool },
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let cfg: ScenarioConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Config(m));
        if self.kappa < 2 {
            return fail(format!(
                "kappa must be at least 2, got {}: with one construction a cheater is never caught",
                self.kappa
            ));
        }
        if self.kappa > 255 {
            return fail(format!("kappa must be at most 255, got {}", self.kappa));
        }
        if self.shards == 0 {
            return fail("shards must be positive".into());
        }
        if self.denominations.values.is_empty()
            || self.denominations.values.iter().any(|v| v.0.is_zero())
        {
            return fail("denominations need at least one positive value".into());
        }
        let a = &self.actors;
        if a.banks == 0 || a.customers == 0 {
            return fail("need at least one bank and one customer".into());
        }
        let f = &self.faults;
        for (name, p) in [
            ("loss", f.loss),
            ("duplication", f.duplication),
            ("change_probability", self.workload.change_probability),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        let latency_ok = match f.latency {
            LatencyDist::Fixed { ms } => ms >= 0.0,
            LatencyDist::Uniform { min_ms, max_ms } => min_ms >= 0.0 && max_ms >= min_ms,
            LatencyDist::Exponential { mean_ms } => mean_ms > 0.0,
        };
        if !latency_ok || f.timeout_ms.is_nan() || f.timeout_ms <= 0.0 {
            return fail("latency parameters must be non-negative and the timeout positive".into());
        }
        let w = &self.workload;
        if w.min_payment.0.is_zero() || w.min_payment > w.max_payment {
            return fail("payments need 0 < min_payment <= max_payment".into());
        }
        if w.arrival_rate_per_sec
            .is_some_and(|r| r.is_nan() || r <= 0.0)
        {
            return fail("arrival_rate_per_sec must be positive".into());
        }
        if self.scenario == ScenarioKind::Revocation && (w.coins == 0 || w.spent > w.coins) {
            return fail("revocation needs coins > 0 and spent <= coins".into());
        }
        let merchants_needed = match self.scenario {
            ScenarioKind::Market if w.payments_per_customer > 0 => 1,
            ScenarioKind::Figures | ScenarioKind::Revocation => 1,
            _ => 0,
        };
        for adv in &self.adversaries {
            if let AdversaryConfig::StolenKey { value: Some(v), .. } = adv {
                if !self.denominations.values.contains(v) {
                    return fail(format!("stolen-key value {v} is not a denomination"));
                }
            }
        }
        let merchants_needed = self
            .adversaries
            .iter()
            .map(|adv| match adv {
                AdversaryConfig::DoubleSpender { .. } => 2,
                AdversaryConfig::StolenKey { .. } | AdversaryConfig::ConspiringMerchant { .. } => 1,
                AdversaryConfig::CheatingRefresher { .. } => 0,
            })
            .fold(merchants_needed, usize::max);
        if a.merchants < merchants_needed {
            return fail(format!(
                "this scenario needs at least {merchants_needed} merchants"
            ));
        }
        Ok(())
    }
}
