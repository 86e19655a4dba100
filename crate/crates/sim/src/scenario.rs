//! Scenario scripts executed over the bus, and the checks run when they end.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use cbdc_core::api::{GatewayApi, MintApi};
use cbdc_core::clock::Timestamp;
use cbdc_core::crypto::{group_keygen, rsa_sign};
use cbdc_core::deploy::{open_schedule, Deployment, DeploymentSpec};
use cbdc_core::gateway::{Gateway, GatewayError};
use cbdc_core::merchant::{Contract, Merchant};
use cbdc_core::mint::{coin_digest, Mint, MintError, MintStores, SessionState, SpentRecord};
use cbdc_core::rpc::{serve_gateway, serve_mint, GatewayClient, MintClient};
use cbdc_core::store::KvStore;
use cbdc_core::wallet::{
    sign_payment, Coin, CoinOrigin, PaymentPlan, RefreshOutcome, Wallet, WalletError,
};
use cbdc_core::wire::{sha256, Body, DenomId, DepositRequest, KeysDocument, MerchantAccount, Uint};
use cbdc_core::Amount;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde_json::json;

use crate::bus::Bus;
use crate::config::{AdversaryConfig, Money, ScenarioConfig, ScenarioKind};
use crate::report::{
    AuditLine, Balances, Check, DoubleSpendStats, Metrics, MetricsReport, RefreshStats, StoreSize,
};
use crate::ScenarioError;

/// Mint clock at virtual time zero.
pub const START_TIME: Timestamp = 1_000_000;

/// Independent seed for one named consumer of randomness.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let h = sha256(&[&seed.to_be_bytes()[..], label.as_bytes()]);
    u64::from_be_bytes(h[..8].try_into().expect("8 bytes"))
}

pub struct RunOutput {
    pub report: MetricsReport,
    pub log: Vec<String>,
}

impl RunOutput {
    pub fn log_text(&self) -> String {
        join_log(&self.log)
    }

    /// The first failed check as an error.
    pub fn check(&self) -> Result<(), ScenarioError> {
        match self.report.first_failure() {
            Some(c) => Err(ScenarioError::Invariant {
                name: c.name.clone(),
                detail: c.detail.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn outcome(&self, key: &str) -> Option<&serde_json::Value> {
        self.report.outcomes.get(key)
    }
}

fn join_log(lines: &[String]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

/// Runs the scenario and fails with the first violated invariant.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    let out = simulate(cfg)?;
    out.check()?;
    Ok(out)
}

/// Runs the scenario and returns its report whether or not every check
/// passed. Errors only for invalid configurations.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let wall = Instant::now();
    let mut sim = Sim::new(cfg.clone())?;
    sim.bus
        .note(format!("scenario {} seed {}", cfg.name, cfg.seed));
    match cfg.scenario {
        ScenarioKind::Market => sim.market(),
        ScenarioKind::Figures => sim.figures(),
        ScenarioKind::Revocation => sim.revocation(),
        ScenarioKind::LinkRoundTrip => sim.link_round_trip(),
    }
    for adv in cfg.adversaries.clone() {
        match adv {
            AdversaryConfig::DoubleSpender { coins } => sim.double_spender(coins),
            AdversaryConfig::CheatingRefresher { sessions } => sim.cheating_refresher(sessions),
            AdversaryConfig::StolenKey { coins, value } => sim.stolen_key(coins, value),
            AdversaryConfig::ConspiringMerchant { customer_first } => {
                sim.conspiring_merchant(customer_first)
            }
        }
    }
    sim.quiesce();
    Ok(sim.finish(wall))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Claim {
    Honest,
    /// A coin already spent elsewhere; must be refused.
    Replay,
    /// Signed with a stolen denomination key.
    Forged,
}

struct Payment {
    merchant: usize,
    contract: Contract,
    parts: Vec<DepositRequest>,
    claim: Claim,
}

struct Sim {
    cfg: ScenarioConfig,
    bus: Arc<Bus>,
    d: Deployment,
    coin_store: Arc<dyn KvStore>,
    withdrawal_store: Arc<dyn KvStore>,
    banks: Vec<Arc<Gateway>>,
    wallets: Vec<Wallet>,
    merchants: Vec<Merchant>,
    keys: KeysDocument,
    rng: ChaCha20Rng,
    metrics: Metrics,
    unsettled: Vec<Payment>,
    double_spend: DoubleSpendStats,
    accepted_replays: u64,
    forged: Amount,
    stolen: BTreeSet<DenomId>,
    opening: Amount,
    outcomes: BTreeMap<String, serde_json::Value>,
    checks: Vec<Check>,
    refresh_stats: RefreshStats,
    audits: Vec<AuditLine>,
    balances: Balances,
}

fn setup_err(e: MintError) -> ScenarioError {
    ScenarioError::Setup(e.to_string())
}

impl Sim {
    fn new(cfg: ScenarioConfig) -> Result<Self, ScenarioError> {
        let bus = Bus::new(cfg.faults.clone(), sub_seed(cfg.seed, "bus"));
        let values: Vec<Amount> = cfg.denominations.values.iter().map(|m| m.0).collect();
        let spec = DeploymentSpec {
            mode: cfg.mode,
            rsa_bits: cfg.rsa_bits,
            denominations: open_schedule(
                &values,
                cfg.denominations.refresh_fee.0,
                START_TIME,
                cfg.denominations.lifetime_secs,
            ),
            kappa: cfg.kappa,
            shards: cfg.shards,
            seed: sub_seed(cfg.seed, "mint"),
            start_time: START_TIME,
        };
        let stores = MintStores::in_memory(cfg.shards);
        let (coin_store, withdrawal_store) = (stores.coins.clone(), stores.withdrawals.clone());
        let mut d = Deployment::observed(&spec, stores, bus.observer()).map_err(setup_err)?;
        bus.drive_clock(d.clock.clone(), START_TIME);
        let mint = d.mint.clone();
        bus.register("mint", Arc::new(move |req: &[u8]| serve_mint(&*mint, req)));

        let mut banks = Vec::new();
        for b in 0..cfg.actors.banks {
            let id = format!("bank-{b}");
            let api: Arc<dyn MintApi> = Arc::new(MintClient::new(bus.link(&id, "mint")));
            let gw = d
                .add_bank_via(&id, cfg.actors.bank_reserves.0, api)
                .map_err(setup_err)?;
            let served = gw.clone();
            bus.register(
                &id,
                Arc::new(move |req: &[u8]| serve_gateway(&*served, req)),
            );
            banks.push(gw);
        }
        let mut merchants = Vec::new();
        for j in 0..cfg.actors.merchants {
            let id = format!("shop-{j:03}");
            let bank = &banks[j % banks.len()];
            bank.open_merchant(&id, None);
            let account = MerchantAccount {
                bank_id: bank.bank_id().into(),
                merchant_id: id.clone(),
            };
            let api: Arc<dyn GatewayApi> =
                Arc::new(GatewayClient::new(bus.link(&id, bank.bank_id())));
            merchants.push(d.merchant_via(account, api));
        }
        let keys = Mint::keys(&d.mint);
        Ok(Sim {
            rng: ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, "script")),
            cfg,
            bus,
            d,
            coin_store,
            withdrawal_store,
            banks,
            wallets: Vec::new(),
            merchants,
            keys,
            metrics: Metrics::default(),
            unsettled: Vec::new(),
            double_spend: DoubleSpendStats::default(),
            accepted_replays: 0,
            forged: Amount::ZERO,
            stolen: BTreeSet::new(),
            opening: Amount::ZERO,
            outcomes: BTreeMap::new(),
            checks: Vec::new(),
            refresh_stats: RefreshStats::default(),
            audits: Vec::new(),
            balances: Balances::default(),
        })
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            ok,
            detail: detail.into(),
        });
    }

    fn bank_of(&self, customer: usize) -> &Arc<Gateway> {
        &self.banks[customer % self.banks.len()]
    }

    /// Opens a funded account and returns the index of its wallet.
    fn add_customer(&mut self, id: &str) -> usize {
        let idx = self.wallets.len();
        let bank = self.bank_of(idx).clone();
        let secret = format!("{id}-pw");
        let balance = self.cfg.actors.customer_balance.0;
        bank.open_customer(id, &secret, balance, None);
        self.opening = self.opening.checked_add(balance).expect("amount overflow");
        let gw: Arc<dyn GatewayApi> =
            Arc::new(GatewayClient::new(self.bus.link(id, bank.bank_id())));
        let mint: Arc<dyn MintApi> = Arc::new(MintClient::new(self.bus.link(id, "mint")));
        let wallet = self.d.wallet(
            id,
            &secret,
            bank.bank_id(),
            gw,
            mint,
            sub_seed(self.cfg.seed, id),
        );
        self.wallets.push(wallet);
        idx
    }

    /// Runs `f` and records its virtual duration under `op`.
    fn timed<T, E>(&mut self, op: &str, f: impl FnOnce(&mut Self) -> Result<T, E>) -> Result<T, E> {
        let t0 = self.bus.now_us();
        let r = f(self);
        let dt = self.bus.now_us() - t0;
        self.metrics.record(op, dt, r.is_ok());
        r
    }

    /// Denominations sorted by value.
    fn denoms(&self) -> Vec<(Amount, DenomId, Amount)> {
        let mut v: Vec<_> = self
            .keys
            .denominations
            .iter()
            .map(|d| (d.value, d.denom_id, d.refresh_fee))
            .collect();
        v.sort();
        v
    }

    /// Largest denomination not above the configured withdrawal amount.
    fn unit_denom(&self) -> (DenomId, Amount) {
        let target = self.cfg.workload.withdraw_amount.0;
        let ds = self.denoms();
        let (v, id, _) = ds
            .iter()
            .rev()
            .find(|d| d.0 <= target)
            .copied()
            .unwrap_or(ds[0]);
        (id, v)
    }

    fn contract(&mut self, merchant: usize, amount: Amount, what: &[u8]) -> Contract {
        self.merchants[merchant]
            .create_contract(amount, what, &mut self.rng)
            .expect("positive amount")
    }

    /// Customer `ci` pays `amount` at merchant `mi`; true once delivered.
    fn pay(&mut self, ci: usize, mi: usize, amount: Amount) -> bool {
        let contract = self.contract(mi, amount, b"order");
        let r = self.timed("pay", |s| {
            let w = &mut s.wallets[ci];
            let plan = w.plan_payment(&contract).map_err(|e| e.to_string())?;
            let parts = w.pay(&contract, &plan).map_err(|e| e.to_string())?;
            if s.submit(mi, contract, parts, Claim::Honest) {
                Ok(())
            } else {
                Err("not delivered".to_string())
            }
        });
        r.is_ok()
    }

    /// Customer `ci` pays with exactly one coin at merchant `mi`.
    fn pay_with(
        &mut self,
        ci: usize,
        mi: usize,
        coin_pub: &Uint,
        amount: Amount,
    ) -> Result<bool, WalletError> {
        let contract = self.contract(mi, amount, b"order");
        let plan = PaymentPlan {
            contract_hash: contract.contract_hash,
            parts: vec![(coin_pub.clone(), amount)],
            total: amount,
        };
        let parts = self.wallets[ci].pay(&contract, &plan)?;
        Ok(self.submit(mi, contract, parts, Claim::Honest))
    }

    fn submit(
        &mut self,
        merchant: usize,
        contract: Contract,
        parts: Vec<DepositRequest>,
        claim: Claim,
    ) -> bool {
        if let Err(e) = self.merchants[merchant].validate_payment(&contract, &parts, &self.keys) {
            self.bus
                .note(format!("merchant {merchant} refused payment: {e}"));
            return false;
        }
        self.settle(Payment {
            merchant,
            contract,
            parts,
            claim,
        })
    }

    fn settle(&mut self, p: Payment) -> bool {
        let res = self.merchants[p.merchant].settle(&p.contract, &p.parts, &self.keys.mint_pub);
        let pending = res.has_pending();
        match p.claim {
            Claim::Replay if !res.double_spent().is_empty() => self.double_spend.rejections += 1,
            Claim::Replay if res.delivered => self.accepted_replays += 1,
            Claim::Forged if res.delivered => {
                self.forged = self
                    .forged
                    .checked_add(p.contract.amount)
                    .expect("amount overflow")
            }
            _ => {}
        }
        let delivered = res.delivered;
        if !delivered && pending {
            self.unsettled.push(p);
        }
        delivered
    }

    fn market(&mut self) {
        let w = self.cfg.workload.clone();
        let arrivals = w
            .arrival_rate_per_sec
            .map(|r| Exp::new(r).expect("validated rate"));
        let mut t = self.bus.now_us() as f64;
        for i in 0..self.cfg.actors.customers {
            if let Some(exp) = &arrivals {
                t += exp.sample(&mut self.rng) * 1e6;
                self.bus.advance_to(t as u64);
            }
            let ci = self.add_customer(&format!("cust-{i:04}"));
            let _ = self.timed("withdraw", |s| s.wallets[ci].withdraw(w.withdraw_amount.0));
            for _ in 0..w.payments_per_customer {
                let mi = self.rng.gen_range(0..self.merchants.len());
                let amount = Amount::from_minor(
                    self.rng
                        .gen_range(w.min_payment.0.minor()..=w.max_payment.0.minor()),
                );
                self.pay(ci, mi, amount);
            }
            if w.change_probability > 0.0 && self.rng.gen_bool(w.change_probability) {
                let partly_spent = self.wallets[ci]
                    .coins()
                    .iter()
                    .find(|c| !c.local_residual.is_zero() && c.local_residual < c.face_value)
                    .map(|c| c.coin_pub.clone());
                if let Some(coin) = partly_spent {
                    let _ = self.timed("refresh", |s| s.wallets[ci].make_change(&coin));
                }
            }
        }
    }

    /// One withdrawal and one payment, then the step trace is compared with
    /// the numbered steps of both flows.
    fn figures(&mut self) {
        let ci = self.add_customer("alice");
        let (denom, value) = self.unit_denom();
        let step_start = self.bus.log().len();
        self.bus.note("figure withdrawal");
        let withdrawn = self.timed("withdraw", |s| s.wallets[ci].withdraw_denomination(&denom));
        self.bus.note("figure payment");
        let delivered = withdrawn.is_ok() && self.pay(ci, 0, value);
        self.check(
            "figure run completed",
            delivered,
            format!(
                "withdrawal ok: {}, delivered: {delivered}",
                withdrawn.is_ok()
            ),
        );

        let steps: Vec<(String, String)> = self.bus.log()[step_start..]
            .iter()
            .filter_map(|l| {
                let mut it = l.split_whitespace().skip(1);
                (it.next() == Some("step")).then(|| {
                    (
                        it.next().unwrap_or("").to_string(),
                        it.next().unwrap_or("").to_string(),
                    )
                })
            })
            .collect();
        let labels: Vec<&str> = steps.iter().map(|s| s.0.as_str()).collect();
        let expected: Vec<String> = (1..=9)
            .map(|i| format!("withdraw.{i}"))
            .chain((1..=9).map(|i| format!("pay.{i}")))
            .collect();
        self.check(
            "figure steps in order",
            labels == expected,
            format!("{labels:?}"),
        );

        let bank = self.bank_of(ci).bank_id().to_string();
        let actor_of = |label: &str| -> &str {
            match label {
                "withdraw.1" | "withdraw.2" | "withdraw.3" | "withdraw.9" | "pay.1" => "alice",
                "withdraw.6" | "withdraw.7" | "pay.4" | "pay.5" | "pay.6" => "mint",
                "pay.2" | "pay.9" => "shop-000",
                _ => &bank,
            }
        };
        let wrong: Vec<String> = steps
            .iter()
            .filter(|(l, a)| actor_of(l) != a)
            .map(|(l, a)| format!("{l} by {a}"))
            .collect();
        self.check(
            "figure steps by the right actor",
            wrong.is_empty(),
            format!("mismatched: {wrong:?}"),
        );

        let debit = self.opening.saturating_sub(
            self.bank_of(ci)
                .customer("alice")
                .map_or(Amount::ZERO, |a| a.balance),
        );
        let credit = self.merchant_balance(0);
        self.check(
            "customer debit = merchant credit = coin value",
            debit == value && credit == value,
            format!("debit {debit}, credit {credit}, coin {value}"),
        );
        self.outcomes.insert(
            "trace".into(),
            json!(steps
                .iter()
                .map(|(l, a)| format!("{l} {a}"))
                .collect::<Vec<_>>()),
        );
    }

    fn merchant_balance(&self, j: usize) -> Amount {
        let id = &self.merchants[j].account().merchant_id;
        self.banks[j % self.banks.len()]
            .merchant(id)
            .map_or(Amount::ZERO, |m| m.balance)
    }

    /// Withdraw coins of one denomination, spend some, revoke it, and
    /// recover the rest through refunds.
    fn revocation(&mut self) {
        let w = self.cfg.workload.clone();
        let ci = self.add_customer("rhea");
        let (denom, face) = self.unit_denom();
        let mut held = Vec::new();
        for _ in 0..w.coins {
            if let Ok(c) = self.timed("withdraw", |s| s.wallets[ci].withdraw_denomination(&denom)) {
                held.push(c.coin_pub);
            }
        }
        let mut spent = Vec::new();
        for (k, coin) in held.iter().take(w.spent).enumerate() {
            let mi = k % self.merchants.len();
            if matches!(self.pay_with(ci, mi, coin, face), Ok(true)) {
                spent.push(coin.clone());
            }
        }
        let notice = match self.d.mint.revoke_denomination(&denom) {
            Ok(n) => n,
            Err(e) => return self.check("revocation", false, e.to_string()),
        };
        self.bus
            .note(format!("revoked denomination of value {face}"));
        let report = self
            .timed("recover", |s| {
                Ok::<_, ()>(s.wallets[ci].recover_revoked(&notice))
            })
            .expect("infallible");
        let unspent = held.len() - spent.len();
        let expected = Amount::from_minor(face.minor() * unspent as u64);
        self.check(
            "unspent coins refunded at face value",
            report.refunded == expected && report.coins_refunded == unspent,
            format!(
                "refunded {} over {} coins, expected {expected} over {unspent}",
                report.refunded, report.coins_refunded
            ),
        );
        let spent_refused = report.failures.len() == spent.len()
            && report.failures.iter().all(|(c, e)| {
                spent.contains(c)
                    && matches!(
                        e,
                        WalletError::Gateway(GatewayError::MintRejected(
                            MintError::AlreadyRefunded
                        ))
                    )
            });
        self.check(
            "spent coins refunded nothing",
            spent_refused,
            format!(
                "{} spent, failures {:?}",
                spent.len(),
                report
                    .failures
                    .iter()
                    .map(|f| f.1.to_string())
                    .collect::<Vec<_>>()
            ),
        );
        self.outcomes.insert(
            "revocation".into(),
            json!({"coins": held.len(), "spent": spent.len(), "refunded": report.refunded.to_string(), "coins_refunded": report.coins_refunded}),
        );
    }

    /// Refresh, then rebuild the change from link data on a second device
    /// that holds only the original coin.
    fn link_round_trip(&mut self) {
        let trials = self.cfg.workload.trials;
        let ci = self.add_customer("lena");
        let (value, target, fee) = self.denoms()[0];
        let (unit, _) = self.unit_denom();
        let id = self.wallets[ci].customer_id().to_string();
        let mut matches = 0;
        for t in 0..trials {
            let parent = match self.wallets[ci]
                .coins()
                .iter()
                .find(|c| c.local_residual >= value.checked_add(fee).expect("small"))
            {
                Some(c) => c.clone(),
                None => {
                    match self.timed("withdraw", |s| s.wallets[ci].withdraw_denomination(&unit)) {
                        Ok(c) => c,
                        Err(_) => continue,
                    }
                }
            };
            let change = match self.timed("refresh", |s| {
                s.wallets[ci].refresh(&parent.coin_pub, &target)
            }) {
                Ok(RefreshOutcome::Change(c)) => c,
                _ => continue,
            };
            let device = format!("{id}-restore");
            let bank = self.bank_of(ci).bank_id().to_string();
            let gw: Arc<dyn GatewayApi> =
                Arc::new(GatewayClient::new(self.bus.link(&device, &bank)));
            let mint: Arc<dyn MintApi> = Arc::new(MintClient::new(self.bus.link(&device, "mint")));
            let mut restored = self.d.wallet(
                &id,
                "",
                &bank,
                gw,
                mint,
                sub_seed(self.cfg.seed, &format!("restore-{t}")),
            );
            restored.adopt(vec![parent.clone()]);
            let derived = self
                .timed("link", |_| restored.derive_linked_change(&parent.coin_pub))
                .unwrap_or_default();
            if derived.iter().any(|c| same_coin(c, &change)) {
                matches += 1;
            }
        }
        self.check(
            "linked change matches refresh output",
            matches == trials,
            format!("{matches}/{trials} rebuilt bit-exactly"),
        );
        self.outcomes.insert(
            "link_round_trip".into(),
            json!({"trials": trials, "matches": matches}),
        );
    }

    fn double_spender(&mut self, coins: usize) {
        let ci = self.add_customer(&format!("mallory-{}", self.wallets.len()));
        let (denom, face) = self.unit_denom();
        let group = self.d.group.clone();
        for _ in 0..coins {
            let Ok(coin) = self.timed("withdraw", |s| s.wallets[ci].withdraw_denomination(&denom))
            else {
                continue;
            };
            if !matches!(self.pay_with(ci, 0, &coin.coin_pub, face), Ok(true)) {
                continue;
            }
            let contract = self.contract(1, face, b"replay");
            let replay = vec![sign_payment(&coin, &contract, face, &group, &mut self.rng)];
            self.double_spend.attempts += 1;
            self.submit(1, contract, replay, Claim::Replay);
        }
    }

    fn cheating_refresher(&mut self, sessions: usize) {
        let ci = self.add_customer(&format!("mallory-{}", self.wallets.len()));
        let (value, target, fee) = self.denoms()[0];
        let cost = value.checked_add(fee).expect("small");
        let (mut caught, mut smuggled, mut failed) = (0u64, 0u64, 0u64);
        for _ in 0..sessions {
            let mut coin = self.wallets[ci]
                .coins()
                .iter()
                .find(|c| c.local_residual >= cost)
                .map(|c| c.coin_pub.clone());
            if coin.is_none() {
                // Small coins keep each coin's session history short.
                let chunk = Amount::from_minor(cost.minor() * 100);
                let ds = self.denoms();
                let (_, top_up, _) = ds
                    .iter()
                    .find(|d| d.0 >= chunk)
                    .copied()
                    .unwrap_or(ds[ds.len() - 1]);
                let _ = self.timed("withdraw", |s| s.wallets[ci].withdraw_denomination(&top_up));
                coin = self.wallets[ci]
                    .coins()
                    .iter()
                    .find(|c| c.local_residual >= cost)
                    .map(|c| c.coin_pub.clone());
            }
            let Some(coin) = coin else { break };
            let bad = self.rng.gen_range(0..self.cfg.kappa);
            match self.timed("refresh", |s| {
                s.wallets[ci].refresh_with(&coin, &target, Some(bad))
            }) {
                Ok(RefreshOutcome::Forfeited) => caught += 1,
                Ok(RefreshOutcome::Change(_)) => smuggled += 1,
                Err(_) => failed += 1,
            }
        }
        let n = caught + smuggled;
        let fraction = if n == 0 {
            0.0
        } else {
            caught as f64 / n as f64
        };
        let p = 1.0 - 1.0 / self.cfg.kappa as f64;
        let tolerance = if n == 0 {
            0.0
        } else {
            5.0 * (p * (1.0 - p) / n as f64).sqrt()
        };
        self.check(
            "cut-and-choose catch rate",
            n > 0 && (fraction - p).abs() <= tolerance,
            format!("caught {caught}/{n} = {fraction:.4}, expected {p:.4} within {tolerance:.4}"),
        );
        self.outcomes.insert(
            "cheating_refresher".into(),
            json!({"sessions": n, "caught": caught, "smuggled": smuggled, "failed": failed,
                   "caught_fraction": fraction, "expected": p}),
        );
    }

    fn stolen_key(&mut self, coins: usize, value: Option<Money>) {
        let ds = self.denoms();
        let denom = match value {
            Some(v) => ds.iter().find(|d| d.0 == v.0).map(|d| d.1),
            None => ds.last().map(|d| d.1),
        }
        .expect("validated denomination");
        let key = self.d.registry.get(&denom).expect("registered");
        self.stolen.insert(denom);
        let group = self.d.group.clone();
        for k in 0..coins {
            let pair = group_keygen(&group, &mut self.rng);
            let coin_pub = Uint(group.encode_element(pair.public()));
            let f = coin_digest(&key.public, coin_pub.as_bytes()).expect("coin key hashes");
            let s = rsa_sign(&key.private, &f).expect("digest below modulus");
            let coin = Coin {
                private: Uint(group.encode_scalar(pair.private())),
                coin_pub,
                denom_id: denom,
                denom_sig: Uint::from_int(&s, key.public.width()).expect("below modulus"),
                face_value: key.value(),
                local_residual: key.value(),
                blinding: Uint(Vec::new()),
                origin: CoinOrigin::Withdrawn {
                    withdrawal_id: [0; 32],
                },
            };
            let mi = k % self.merchants.len();
            let contract = self.contract(mi, key.value(), b"forged");
            let parts = vec![sign_payment(
                &coin,
                &contract,
                key.value(),
                &group,
                &mut self.rng,
            )];
            self.submit(mi, contract, parts, Claim::Forged);
        }
        self.outcomes.insert(
            "stolen_key".into(),
            json!({"coins": coins, "deposited": self.forged.to_string()}),
        );
    }

    /// The customer turns value into a refresh change coin and hands it to a
    /// merchant instead of paying. Both still know the coin's private key,
    /// so whoever spends it first keeps it.
    fn conspiring_merchant(&mut self, customer_first: bool) {
        let id = format!("carol-{}", self.wallets.len());
        let ci = self.add_customer(&id);
        let amount = self.cfg.workload.withdraw_amount.0;
        let _ = self.timed("withdraw", |s| s.wallets[ci].withdraw(amount));
        let Some(parent) = self.wallets[ci]
            .coins()
            .iter()
            .max_by_key(|c| c.local_residual)
            .cloned()
        else {
            return self.check("conspiring merchant", false, "withdrawal failed");
        };
        let Some((value, target, _)) = self.denoms().into_iter().rev().find(|d| {
            d.0.checked_add(d.2)
                .is_some_and(|c| c <= parent.local_residual)
        }) else {
            return self.check(
                "conspiring merchant",
                false,
                "no denomination fits the coin",
            );
        };
        let handed = match self.timed("refresh", |s| {
            s.wallets[ci].refresh(&parent.coin_pub, &target)
        }) {
            Ok(RefreshOutcome::Change(c)) => {
                self.wallets[ci].remove(&c.coin_pub).expect("just added")
            }
            other => {
                return self.check(
                    "conspiring merchant",
                    false,
                    format!("refresh failed: {other:?}"),
                )
            }
        };
        let shop = 0;
        let elsewhere = 1 % self.merchants.len();
        let group = self.d.group.clone();

        let merchant_claim = |s: &mut Sim| {
            let contract = s.contract(shop, value, b"hidden income");
            let parts = vec![sign_payment(&handed, &contract, value, &group, &mut s.rng)];
            let _ = s.merchants[shop].validate_payment(&contract, &parts, &s.keys);
            s.merchants[shop].settle(&contract, &parts, &s.keys.mint_pub)
        };
        let merchant_first = if customer_first {
            None
        } else {
            Some(merchant_claim(self))
        };

        self.bus.start_tap();
        let linked = self.timed("link", |s| {
            s.wallets[ci].derive_linked_change(&parent.coin_pub)
        });
        let tapped = self.bus.take_tap();
        let linked = linked.unwrap_or_default();
        let reclaimed = linked.iter().find(|c| same_coin(c, &handed)).cloned();
        self.check(
            "linked coin equals the handed-over coin",
            reclaimed.is_some(),
            format!("{} coins rebuilt from link data", linked.len()),
        );
        let secret = format!("{id}-pw");
        let needles = [
            id.as_bytes(),
            secret.as_bytes(),
            self.bank_of(ci).bank_id().as_bytes(),
        ];
        let leaks = tapped
            .iter()
            .filter(|t| {
                needles
                    .iter()
                    .any(|n| t.bytes.windows(n.len()).any(|w| w == *n))
            })
            .count();
        self.check(
            "link traffic carries no customer identity",
            leaks == 0 && !tapped.is_empty(),
            format!(
                "{} link messages, {leaks} containing customer or bank identifiers",
                tapped.len()
            ),
        );
        let customer_paid = match &reclaimed {
            Some(c) => matches!(self.pay_with(ci, elsewhere, &c.coin_pub, value), Ok(true)),
            None => false,
        };
        let merchant_result = match merchant_first {
            Some(r) => r,
            None => merchant_claim(self),
        };
        let merchant_paid = merchant_result.delivered;
        let merchant_refused = !merchant_result.double_spent().is_empty();
        let winner_ok = if customer_first {
            customer_paid && merchant_refused
        } else {
            merchant_paid && !customer_paid
        };
        self.check(
            "first spender keeps the coin",
            winner_ok,
            format!("customer first: {customer_first}, customer paid: {customer_paid}, merchant paid: {merchant_paid}"),
        );
        let key = if customer_first {
            "conspiring_merchant.customer_first"
        } else {
            "conspiring_merchant.merchant_first"
        };
        self.outcomes.insert(
            key.into(),
            json!({"customer_first": customer_first, "customer_paid": customer_paid, "merchant_paid": merchant_paid,
                   "outcome": if customer_paid { "customer reclaimed the coin" } else { "merchant kept the coin under shared control" },
                   "link_messages": tapped.len()}),
        );
    }

    /// Stops injecting faults and lets every interrupted operation finish.
    fn quiesce(&mut self) {
        self.bus.set_faults(self.cfg.faults.reliable());
        self.bus.note("quiesce");
        for w in &mut self.wallets {
            w.resume_pending();
        }
        for _ in 0..3 {
            for p in std::mem::take(&mut self.unsettled) {
                self.settle(p);
            }
        }
    }

    /// Value conservation across mint counters, reserve accounts, the coin
    /// store, bank ledgers and wallets.
    fn conservation_checks(&mut self) {
        let m = |a: Amount| i128::from(a.minor());
        let mint = self.d.mint.clone();
        let registry = self.d.registry.clone();
        let (mut issued, mut change, mut deposited, mut melted, mut refunded, mut forfeited) =
            (0, 0, 0, 0, 0, 0);
        let mut flagged = BTreeSet::new();
        for key in registry.iter() {
            let c = mint.counters(&key.denom_id);
            issued += m(c.issued_value);
            change += m(c.change_issued_value);
            deposited += m(c.deposited_value);
            melted += m(c.melted_value);
            refunded += m(c.refunded_value);
            forfeited += m(c.forfeited_value);
            if let Ok(a) = mint.audit_denomination(&key.denom_id) {
                if a.violation {
                    flagged.insert(key.denom_id);
                }
                self.audits.push(AuditLine {
                    value: key.value().to_string(),
                    issued: a.issued_value.to_string(),
                    deposited: a.deposited_value.to_string(),
                    refunded: a.refunded_value.to_string(),
                    forfeited: a.forfeited_value.to_string(),
                    violation: a.violation,
                });
            }
        }

        let r = mint.reserve_totals();
        let (debits, credits) = (issued - change, deposited - melted + refunded);
        self.check(
            "reserve accounts match issuance and returns",
            m(r.debits) == debits && m(r.credits) == credits,
            format!(
                "debits {} vs {}, credits {} vs {}",
                r.debits,
                money(debits),
                r.credits,
                money(credits)
            ),
        );

        let (mut over_face, mut corrupt, mut committed, mut sessions, mut forfeited_sessions) =
            (0u64, 0u64, 0i128, 0u64, 0u64);
        let scanned = self
            .coin_store
            .scan(&mut |_, v| match SpentRecord::from_bytes(&v.value) {
                Ok(rec) => {
                    let face = registry
                        .get(&rec.denom_id)
                        .map(|k| k.value())
                        .unwrap_or(Amount::ZERO);
                    if rec.spent_total > face {
                        over_face += 1;
                    }
                    for s in &rec.sessions {
                        sessions += 1;
                        match s.state {
                            SessionState::Committed => committed += m(s.reserved),
                            SessionState::Forfeited => forfeited_sessions += 1,
                            SessionState::Completed => {}
                        }
                    }
                }
                Err(_) => corrupt += 1,
            });
        self.check(
            "no coin spent beyond its face value",
            scanned.is_ok() && over_face == 0 && corrupt == 0,
            format!("{over_face} over face, {corrupt} unreadable records"),
        );
        self.refresh_stats = RefreshStats {
            sessions,
            forfeited: forfeited_sessions,
            forfeited_value: money(forfeited),
        };

        let forged = m(self.forged);
        let wallets: i128 = self.wallets.iter().map(|w| m(w.residual_total())).sum();
        let outstanding = issued + forged - deposited - refunded - forfeited - committed;
        self.check(
            "outstanding coin value equals wallet holdings",
            outstanding == wallets,
            format!(
                "mint says {}, wallets hold {}",
                money(outstanding),
                money(wallets)
            ),
        );

        let customers: i128 = (0..self.wallets.len())
            .map(|i| {
                self.bank_of(i)
                    .customer(self.wallets[i].customer_id())
                    .map_or(0, |a| m(a.balance))
            })
            .sum();
        let merchants: i128 = (0..self.merchants.len())
            .map(|j| m(self.merchant_balance(j)))
            .sum();
        let mut accounts = BTreeMap::new();
        for (i, w) in self.wallets.iter().enumerate() {
            let bal = self
                .bank_of(i)
                .customer(w.customer_id())
                .map_or(Amount::ZERO, |a| a.balance);
            accounts.insert(
                w.customer_id().to_string(),
                json!({"bank": bal.to_string(), "coins": w.residual_total().to_string()}),
            );
        }
        for (j, shop) in self.merchants.iter().enumerate() {
            accounts.insert(
                shop.account().merchant_id.clone(),
                json!({"bank": self.merchant_balance(j).to_string()}),
            );
        }
        self.outcomes.insert("accounts".into(), json!(accounts));
        let fees = melted - change;
        let before = m(self.opening) + forged;
        let after = customers + merchants + wallets + forfeited + committed + fees;
        self.check(
            "system value conserved",
            before == after,
            format!(
                "opening plus forged {} vs customers + merchants + coins + forfeited + fees {}",
                money(before),
                money(after)
            ),
        );
        self.balances = Balances {
            customers_opening: money(m(self.opening)),
            customers: money(customers),
            merchants: money(merchants),
            wallets: money(wallets),
            outstanding_coins: money(outstanding),
            fees: money(fees),
            forfeited: money(forfeited),
        };

        let expected_flags = if self.forged.is_zero() {
            BTreeSet::new()
        } else {
            self.stolen.clone()
        };
        self.check(
            "audit flags exactly the stolen denominations",
            flagged == expected_flags,
            format!(
                "{} flagged, {} expected",
                flagged.len(),
                expected_flags.len()
            ),
        );
        let ds = self.double_spend.clone();
        self.check(
            "every double spend rejected",
            ds.rejections == ds.attempts && self.accepted_replays == 0,
            format!(
                "{}/{} rejected, {} accepted",
                ds.rejections, ds.attempts, self.accepted_replays
            ),
        );
        let net = self.bus.stats();
        self.check(
            "duplicated requests answered identically",
            net.divergent_duplicates == 0,
            format!(
                "{} duplicates, {} divergent",
                net.duplicates, net.divergent_duplicates
            ),
        );
        let stuck = self
            .wallets
            .iter()
            .map(|w| w.pending_withdrawals())
            .sum::<usize>();
        self.check(
            "all operations settled",
            self.unsettled.is_empty() && stuck == 0,
            format!(
                "{} payments and {stuck} withdrawals unsettled",
                self.unsettled.len()
            ),
        );
    }

    fn finish(mut self, wall: Instant) -> RunOutput {
        self.conservation_checks();
        let store = StoreSize {
            coin_records: self.coin_store.stats().records,
            coin_bytes: self.coin_store.stats().bytes,
            withdrawal_records: self.withdrawal_store.stats().records,
            withdrawal_bytes: self.withdrawal_store.stats().bytes,
        };
        let log = self.bus.log();
        let virtual_seconds = self.bus.now_us() as f64 / 1e6;
        let completed = self.metrics.completed();
        let green = self.checks.iter().all(|c| c.ok);
        let report = MetricsReport {
            name: self.cfg.name.clone(),
            scenario: serde_json::to_value(self.cfg.scenario)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            seed: self.cfg.seed,
            mode: serde_json::to_value(self.cfg.mode)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            green,
            checks: self.checks,
            operations: self.metrics.summarize(),
            completed_ops: completed,
            virtual_seconds,
            throughput_ops_per_sec: if virtual_seconds > 0.0 {
                completed as f64 / virtual_seconds
            } else {
                0.0
            },
            wall_seconds: wall.elapsed().as_secs_f64(),
            store,
            network: self.bus.stats(),
            double_spend: self.double_spend,
            refresh: self.refresh_stats,
            audits: self.audits,
            balances: self.balances,
            outcomes: self.outcomes,
            log_lines: log.len(),
            log_sha256: hex::encode(sha256(&[join_log(&log).as_bytes()])),
        };
        RunOutput { report, log }
    }
}

/// Minor units rendered as a signed decimal amount.
fn money(minor: i128) -> String {
    let a = Amount::from_minor(minor.unsigned_abs() as u64);
    if minor < 0 {
        format!("-{a}")
    } else {
        a.to_string()
    }
}

/// Same key pair, denomination and signature.
fn same_coin(a: &Coin, b: &Coin) -> bool {
    a.private == b.private
        && a.coin_pub == b.coin_pub
        && a.denom_id == b.denom_id
        && a.denom_sig == b.denom_sig
}
