//! The customer's wallet: withdrawing, paying, refreshing for change,
//! recovering linked change and refunds after revocation.

use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::Integer;
use thiserror::Error;

use crate::amount::Amount;
use crate::api::{GatewayApi, MintApi};
use crate::clock::{Clock, Timestamp};
use crate::crypto::{
    blind, coin_sign, derive_refresh, group_keygen, kx, rsa_verify, sample_blinding, unblind,
    BlindingFactor, GroupParams, RefreshDerivation, RsaPublicKey,
};
use crate::gateway::GatewayError;
use crate::merchant::Contract;
use crate::mint::{coin_digest, MintError};
use crate::observe::{noop, ProtocolStep, StepObserver};
use crate::wire::{
    payment_message, sha256, Body, CustomerRefundRequest, CustomerWithdrawRequest, DenomId,
    DepositRequest, Hash32, KeysDocument, LinkEntry, LinkRequest, PublishedDenomination, Reader,
    RefreshCommitRequest, RefreshCommitment, RefreshRevealRequest, RefreshRevealResponse,
    RefundRequest, RevocationNotice, Uint, WireError, Writer,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("amount must be positive")]
    InvalidAmount,
    #[error("no exact cover with the available denominations ({remaining} left over)")]
    ExactCoverImpossible { remaining: Amount },
    #[error("insufficient residual")]
    InsufficientResidual,
    #[error("unknown coin")]
    UnknownCoin,
    #[error("unknown denomination")]
    UnknownDenomination,
    #[error("mint signature does not verify")]
    BadMintSignature,
    #[error("gateway: {0}")]
    Gateway(GatewayError),
    #[error("mint: {0}")]
    Mint(MintError),
    #[error("wallet file: {0}")]
    Storage(String),
}

impl WalletError {
    pub fn is_retriable(&self) -> bool {
        match self {
            WalletError::Gateway(e) => e.is_retriable(),
            WalletError::Mint(MintError::Unavailable(_)) => true,
            _ => false,
        }
    }
}

impl From<GatewayError> for WalletError {
    fn from(e: GatewayError) -> Self {
        WalletError::Gateway(e)
    }
}

impl From<MintError> for WalletError {
    fn from(e: MintError) -> Self {
        WalletError::Mint(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoinOrigin {
    /// `withdrawal_id` is the hash of the blinded value sent to the bank.
    Withdrawn { withdrawal_id: Hash32 },
    Change {
        parent: Uint,
        session_id: Hash32,
        gamma: u8,
    },
    /// Reconstructed from link data of `parent`.
    Linked { parent: Uint },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coin {
    /// Private scalar `c` at group scalar width.
    pub private: Uint,
    /// Public element `C` at group element width.
    pub coin_pub: Uint,
    pub denom_id: DenomId,
    /// Unblinded denomination signature at modulus width.
    pub denom_sig: Uint,
    pub face_value: Amount,
    pub local_residual: Amount,
    /// Blinding factor used at issue, kept for revocation refunds.
    pub blinding: Uint,
    pub origin: CoinOrigin,
}

impl Coin {
    /// True iff the denomination signature verifies under `denom`.
    pub fn verifies(&self, denom: &RsaPublicKey) -> bool {
        coin_digest(denom, self.coin_pub.as_bytes())
            .map(|f| {
                self.denom_sig.len() == denom.width()
                    && rsa_verify(denom, &f, &self.denom_sig.to_int())
            })
            .unwrap_or(false)
    }
}

impl Body for Coin {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0)
            .uint(&self.private)
            .uint(&self.coin_pub)
            .uint(&self.denom_sig)
            .uint(&self.blinding)
            .amount(self.face_value)
            .amount(self.local_residual);
        match &self.origin {
            CoinOrigin::Withdrawn { withdrawal_id } => {
                w.u8(0).fixed(withdrawal_id);
            }
            CoinOrigin::Change {
                parent,
                session_id,
                gamma,
            } => {
                w.u8(1).uint(parent).fixed(session_id).u8(*gamma);
            }
            CoinOrigin::Linked { parent } => {
                w.u8(2).uint(parent);
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let denom_id = DenomId(r.hash()?);
        let private = r.uint()?;
        let coin_pub = r.uint()?;
        let denom_sig = r.uint()?;
        let blinding = r.uint()?;
        let face_value = r.amount()?;
        let local_residual = r.amount()?;
        let origin = match r.u8()? {
            0 => CoinOrigin::Withdrawn {
                withdrawal_id: r.hash()?,
            },
            1 => CoinOrigin::Change {
                parent: r.uint()?,
                session_id: r.hash()?,
                gamma: r.u8()?,
            },
            2 => CoinOrigin::Linked { parent: r.uint()? },
            _ => return Err(WireError::Malformed("coin origin tag")),
        };
        Ok(Coin {
            private,
            coin_pub,
            denom_id,
            denom_sig,
            face_value,
            local_residual,
            blinding,
            origin,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentPlan {
    pub contract_hash: Hash32,
    /// `(coin_pub, amount)` in signing order.
    pub parts: Vec<(Uint, Amount)>,
    pub total: Amount,
}

/// A withdrawal whose blind signature could not be verified; the blinding
/// factor is kept as evidence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dispute {
    pub denom_id: DenomId,
    pub blinded: Uint,
    pub blinding: Uint,
    pub received: Uint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RefreshOutcome {
    Change(Coin),
    Forfeited,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub refunded: Amount,
    pub coins_refunded: usize,
    pub failures: Vec<(Uint, WalletError)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangePlan {
    pub denoms: Vec<DenomId>,
    /// Residual no denomination can absorb.
    pub dust: Amount,
}

/// Greedy largest-first decomposition of `amount` into denomination values.
pub fn plan_withdrawal(
    amount: Amount,
    denoms: &[(DenomId, Amount)],
) -> Result<Vec<DenomId>, WalletError> {
    if amount.is_zero() {
        return Err(WalletError::InvalidAmount);
    }
    let mut sorted = denoms.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut remaining = amount;
    let mut plan = Vec::new();
    for (id, value) in sorted {
        if value.is_zero() {
            continue;
        }
        while remaining >= value {
            remaining = remaining.saturating_sub(value);
            plan.push(id);
        }
    }
    if !remaining.is_zero() {
        return Err(WalletError::ExactCoverImpossible { remaining });
    }
    Ok(plan)
}

/// Greedy change plan for a refresh residual given `(denom, value, fee)`
/// triples: repeatedly takes the largest value whose value plus fee still
/// fits. Fails when not even one change coin fits.
pub fn plan_change(
    residual: Amount,
    denoms: &[(DenomId, Amount, Amount)],
) -> Result<ChangePlan, WalletError> {
    let mut sorted = denoms.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut remaining = residual;
    let mut plan = Vec::new();
    for (id, value, fee) in sorted {
        let Some(cost) = value.checked_add(fee) else {
            continue;
        };
        if value.is_zero() {
            continue;
        }
        while remaining >= cost {
            remaining = remaining.saturating_sub(cost);
            plan.push(id);
        }
    }
    if plan.is_empty() {
        return Err(WalletError::ExactCoverImpossible { remaining });
    }
    Ok(ChangePlan {
        denoms: plan,
        dust: remaining,
    })
}

pub fn denom_public(d: &PublishedDenomination) -> RsaPublicKey {
    RsaPublicKey {
        e: d.e.to_int(),
        n: d.n.to_int(),
    }
}

/// Signs one payment part with a coin's key. Does not touch any wallet state.
pub fn sign_payment<R: RngCore + ?Sized>(
    coin: &Coin,
    contract: &Contract,
    amount: Amount,
    group: &GroupParams,
    rng: &mut R,
) -> DepositRequest {
    let msg = payment_message(&contract.contract_hash, &contract.merchant, amount);
    let sig = coin_sign(&coin.private.to_int(), &msg, group, rng);
    DepositRequest {
        coin_pub: coin.coin_pub.clone(),
        denom_id: coin.denom_id,
        denom_sig: coin.denom_sig.clone(),
        amount,
        contract_hash: contract.contract_hash,
        merchant: contract.merchant.clone(),
        coin_sig: Uint(sig.to_bytes(group)),
    }
}

/// Everything a wallet computes for one refresh session.
#[derive(Clone, Debug)]
pub struct RefreshBuild {
    pub request: RefreshCommitRequest,
    pub transfer_privs: Vec<Integer>,
    pub derivations: Vec<RefreshDerivation>,
}

impl RefreshBuild {
    pub fn reveal_for(
        &self,
        session_id: Hash32,
        gamma: u8,
        group: &GroupParams,
    ) -> RefreshRevealRequest {
        let transfer_privs = self
            .transfer_privs
            .iter()
            .enumerate()
            .filter(|(i, _)| i + 1 != usize::from(gamma))
            .map(|(_, t)| Uint(group.encode_scalar(t)))
            .collect();
        RefreshRevealRequest {
            session_id,
            transfer_privs,
        }
    }
}

/// Builds `kappa` commitments to change coins of `target` for `coin`. With
/// `cheat_at = Some(j)` construction `j` (0-based) blinds an independent
/// coin instead of the one derived from its transfer key, so a successful
/// cheat yields a valid coin the link protocol cannot reconstruct.
pub fn build_refresh<R: RngCore + ?Sized>(
    coin: &Coin,
    target: &PublishedDenomination,
    kappa: usize,
    group: &GroupParams,
    rng: &mut R,
    cheat_at: Option<usize>,
) -> Result<RefreshBuild, WalletError> {
    let target_pub = denom_public(target);
    let coin_point = group
        .decode_element(coin.coin_pub.as_bytes())
        .map_err(|_| WalletError::UnknownCoin)?;
    let mut commitments = Vec::with_capacity(kappa);
    let mut transfer_privs = Vec::with_capacity(kappa);
    let mut derivations = Vec::with_capacity(kappa);
    for i in 0..kappa {
        let t = group_keygen(group, rng);
        let secret = kx(t.private(), &coin_point, group).map_err(|_| WalletError::UnknownCoin)?;
        let mut d = derive_refresh(&secret, &target_pub, group)
            .map_err(|_| WalletError::UnknownDenomination)?;
        if cheat_at == Some(i) {
            d = RefreshDerivation {
                blinding: sample_blinding(&target_pub.n, rng),
                coin_key: group_keygen(group, rng),
            };
        }
        let change_pub = group.encode_element(d.coin_key.public());
        let f =
            coin_digest(&target_pub, &change_pub).map_err(|_| WalletError::UnknownDenomination)?;
        let blinded = blind(&f, &d.blinding, &target_pub);
        commitments.push(RefreshCommitment {
            transfer_pub: Uint(group.encode_element(t.public())),
            blinded: Uint::from_int(&blinded, target_pub.width()).expect("below n"),
        });
        transfer_privs.push(t.private().clone());
        derivations.push(d);
    }
    let mut request = RefreshCommitRequest {
        coin_pub: coin.coin_pub.clone(),
        denom_id: coin.denom_id,
        denom_sig: coin.denom_sig.clone(),
        target_denom_id: target.denom_id,
        commitments,
        coin_sig: Uint::default(),
    };
    let sig = coin_sign(
        &coin.private.to_int(),
        &request.signed_message(),
        group,
        rng,
    );
    request.coin_sig = Uint(sig.to_bytes(group));
    Ok(RefreshBuild {
        request,
        transfer_privs,
        derivations,
    })
}

/// Rebuilds change coins from link data using the parent's private key.
/// Entries whose result fails verification (wrong key) come back as errors.
pub fn coins_from_link(
    parent_private: &Integer,
    parent_pub: &Uint,
    entries: &[LinkEntry],
    keys: &KeysDocument,
    group: &GroupParams,
) -> Vec<Result<Coin, WalletError>> {
    entries
        .iter()
        .map(|entry| {
            let target = keys
                .denominations
                .iter()
                .find(|d| d.denom_id == entry.target_denom_id)
                .ok_or(WalletError::UnknownDenomination)?;
            let target_pub = denom_public(target);
            let t = group
                .decode_element(entry.transfer_pub.as_bytes())
                .map_err(|_| WalletError::BadMintSignature)?;
            let secret =
                kx(parent_private, &t, group).map_err(|_| WalletError::BadMintSignature)?;
            let d = derive_refresh(&secret, &target_pub, group)
                .map_err(|_| WalletError::BadMintSignature)?;
            let s = unblind(&entry.blind_sig.to_int(), &d.blinding, &target_pub.n)
                .map_err(|_| WalletError::BadMintSignature)?;
            let coin = Coin {
                private: Uint(group.encode_scalar(d.coin_key.private())),
                coin_pub: Uint(group.encode_element(d.coin_key.public())),
                denom_id: target.denom_id,
                denom_sig: Uint::from_int(&s, target_pub.width()).expect("below n"),
                face_value: target.value,
                local_residual: target.value,
                blinding: Uint::from_int(d.blinding.value(), target_pub.width()).expect("below n"),
                origin: CoinOrigin::Linked {
                    parent: parent_pub.clone(),
                },
            };
            if !coin.verifies(&target_pub) {
                return Err(WalletError::BadMintSignature);
            }
            Ok(coin)
        })
        .collect()
}

struct PendingWithdrawal {
    denom_id: DenomId,
    key_private: Integer,
    key_public: Integer,
    blinding: BlindingFactor,
    blinded: Uint,
}

pub struct WalletConfig {
    pub customer_id: String,
    pub secret: String,
    pub bank_id: String,
    pub kappa: usize,
    /// Attempts per request on transport failure.
    pub attempts: u32,
}

pub struct Wallet {
    customer_id: String,
    secret: String,
    bank_id: String,
    kappa: usize,
    attempts: u32,
    group: GroupParams,
    mint: Arc<dyn MintApi>,
    gateway: Arc<dyn GatewayApi>,
    clock: Arc<dyn Clock>,
    keys: Option<KeysDocument>,
    coins: Vec<Coin>,
    disputes: Vec<Dispute>,
    pending: Vec<PendingWithdrawal>,
    rng: ChaCha20Rng,
    observer: Arc<dyn StepObserver>,
}

const FILE_MAGIC: &[u8; 7] = b"CBDCWLT";
const FILE_VERSION: u8 = 1;

impl Wallet {
    pub fn new(
        config: WalletConfig,
        group: GroupParams,
        mint: Arc<dyn MintApi>,
        gateway: Arc<dyn GatewayApi>,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Self {
        Wallet {
            customer_id: config.customer_id,
            secret: config.secret,
            bank_id: config.bank_id,
            kappa: config.kappa,
            attempts: config.attempts.max(1),
            group,
            mint,
            gateway,
            clock,
            keys: None,
            coins: Vec::new(),
            disputes: Vec::new(),
            pending: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            observer: noop(),
        }
    }

    pub fn with_observer(mut self, observer: Arc<dyn StepObserver>) -> Self {
        self.observer = observer;
        self
    }

    pub fn customer_id(&self) -> &str {
        &self.customer_id
    }

    pub fn coins(&self) -> &[Coin] {
        &self.coins
    }

    pub fn coin(&self, coin_pub: &Uint) -> Option<&Coin> {
        self.coins.iter().find(|c| &c.coin_pub == coin_pub)
    }

    pub fn disputes(&self) -> &[Dispute] {
        &self.disputes
    }

    pub fn pending_withdrawals(&self) -> usize {
        self.pending.len()
    }

    pub fn residual_total(&self) -> Amount {
        self.coins.iter().map(|c| c.local_residual).sum()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn group(&self) -> &GroupParams {
        &self.group
    }

    /// Adds coins obtained elsewhere, skipping ones already held.
    pub fn adopt(&mut self, coins: Vec<Coin>) {
        for c in coins {
            if self.coin(&c.coin_pub).is_none() {
                self.coins.push(c);
            }
        }
    }

    /// Hands a coin to another party; the wallet stops tracking it.
    pub fn remove(&mut self, coin_pub: &Uint) -> Option<Coin> {
        let i = self.coins.iter().position(|c| &c.coin_pub == coin_pub)?;
        Some(self.coins.remove(i))
    }

    fn retry<T>(&self, mut f: impl FnMut() -> Result<T, WalletError>) -> Result<T, WalletError> {
        let mut last = None;
        for _ in 0..self.attempts {
            match f() {
                Err(e) if e.is_retriable() => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Fetches the published registry from the mint.
    pub fn refresh_keys(&mut self) -> Result<&KeysDocument, WalletError> {
        let mint = self.mint.clone();
        let doc = self.retry(|| mint.keys().map_err(WalletError::from))?;
        self.keys = Some(doc);
        Ok(self.keys.as_ref().unwrap())
    }

    pub fn keys(&mut self) -> Result<&KeysDocument, WalletError> {
        if self.keys.is_none() {
            self.refresh_keys()?;
        }
        Ok(self.keys.as_ref().unwrap())
    }

    pub fn denomination(
        &mut self,
        denom_id: &DenomId,
    ) -> Result<PublishedDenomination, WalletError> {
        let find = |k: &KeysDocument| {
            k.denominations
                .iter()
                .find(|d| &d.denom_id == denom_id)
                .cloned()
        };
        if let Some(d) = self
            .keys()?
            .denominations
            .iter()
            .find(|d| &d.denom_id == denom_id)
        {
            return Ok(d.clone());
        }
        find(self.refresh_keys()?).ok_or(WalletError::UnknownDenomination)
    }

    fn withdrawable(&mut self, now: Timestamp) -> Result<Vec<PublishedDenomination>, WalletError> {
        Ok(self
            .keys()?
            .denominations
            .iter()
            .filter(|d| !d.revoked && d.withdraw_start <= now && now <= d.withdraw_end)
            .cloned()
            .collect())
    }

    /// Withdraws `amount` as a greedy set of coins. Coins obtained before a
    /// failure stay in the wallet.
    pub fn withdraw(&mut self, amount: Amount) -> Result<Vec<Coin>, WalletError> {
        let now = self.clock.now();
        let denoms: Vec<_> = self
            .withdrawable(now)?
            .iter()
            .map(|d| (d.denom_id, d.value))
            .collect();
        let plan = plan_withdrawal(amount, &denoms)?;
        let mut out = Vec::with_capacity(plan.len());
        for id in plan {
            out.push(self.withdraw_denomination(&id)?);
        }
        Ok(out)
    }

    pub fn withdraw_denomination(&mut self, denom_id: &DenomId) -> Result<Coin, WalletError> {
        let denom = self.denomination(denom_id)?;
        let public = denom_public(&denom);
        // Credentials travel with the blinded coin; presenting them opens the session.
        self.observer
            .step(&self.customer_id, ProtocolStep::W1Authenticate);
        let key = group_keygen(&self.group, &mut self.rng);
        let coin_pub = self.group.encode_element(key.public());
        let f = coin_digest(&public, &coin_pub).map_err(|_| WalletError::UnknownDenomination)?;
        let blinding = sample_blinding(&public.n, &mut self.rng);
        let blinded =
            Uint::from_int(&blind(&f, &blinding, &public), public.width()).expect("below n");
        self.observer
            .step(&self.customer_id, ProtocolStep::W2PrepareCoin);
        self.pending.push(PendingWithdrawal {
            denom_id: *denom_id,
            key_private: key.private().clone(),
            key_public: key.public().clone(),
            blinding,
            blinded,
        });
        self.complete_pending(self.pending.len() - 1)
    }

    /// Retries withdrawals that earlier failed in transit. Returns the coins
    /// obtained and the errors of those still failing.
    pub fn resume_pending(&mut self) -> (Vec<Coin>, Vec<WalletError>) {
        let mut coins = Vec::new();
        let mut errors = Vec::new();
        let mut i = 0;
        while i < self.pending.len() {
            let before = self.pending.len();
            match self.complete_pending(i) {
                Ok(c) => coins.push(c),
                Err(e) => errors.push(e),
            }
            if self.pending.len() == before {
                i += 1;
            }
        }
        (coins, errors)
    }

    /// Sends pending withdrawal `i`. Definitive outcomes remove it from the
    /// pending list; transport failures leave it for a later retry.
    fn complete_pending(&mut self, i: usize) -> Result<Coin, WalletError> {
        let p = &self.pending[i];
        let denom = self.keys.as_ref().and_then(|k| {
            k.denominations
                .iter()
                .find(|d| d.denom_id == p.denom_id)
                .cloned()
        });
        let denom = match denom {
            Some(d) => d,
            None => {
                let id = p.denom_id;
                self.denomination(&id)?
            }
        };
        let p = &self.pending[i];
        let public = denom_public(&denom);
        let req = CustomerWithdrawRequest {
            customer_id: self.customer_id.clone(),
            secret: self.secret.clone(),
            denom_id: p.denom_id,
            blinded: p.blinded.clone(),
        };
        self.observer
            .step(&self.customer_id, ProtocolStep::W3SendBlinded);
        let gateway = self.gateway.clone();
        let result = self.retry(|| {
            gateway
                .withdraw_for_customer(&req)
                .map_err(WalletError::from)
        });
        let resp = match result {
            Ok(r) => r,
            Err(e) if e.is_retriable() => return Err(e),
            Err(e) => {
                self.pending.remove(i);
                return Err(e);
            }
        };
        let p = self.pending.remove(i);
        let s = unblind(&resp.blind_sig.to_int(), &p.blinding, &public.n).ok();
        let coin_pub = Uint(self.group.encode_element(&p.key_public));
        let coin = s.map(|s| Coin {
            private: Uint(self.group.encode_scalar(&p.key_private)),
            coin_pub: coin_pub.clone(),
            denom_id: p.denom_id,
            denom_sig: Uint::from_int(&s, public.width()).expect("below n"),
            face_value: denom.value,
            local_residual: denom.value,
            blinding: Uint::from_int(p.blinding.value(), public.width()).expect("below n"),
            origin: CoinOrigin::Withdrawn {
                withdrawal_id: sha256(&[p.blinded.as_bytes()]),
            },
        });
        match coin {
            Some(coin) if resp.blind_sig.len() == public.width() && coin.verifies(&public) => {
                self.observer
                    .step(&self.customer_id, ProtocolStep::W9Unblind);
                self.coins.push(coin.clone());
                Ok(coin)
            }
            _ => {
                self.disputes.push(Dispute {
                    denom_id: p.denom_id,
                    blinded: p.blinded,
                    blinding: Uint::from_int(p.blinding.value(), public.width()).expect("below n"),
                    received: resp.blind_sig,
                });
                Err(WalletError::BadMintSignature)
            }
        }
    }

    fn spendable(&self, coin: &Coin, now: Timestamp) -> bool {
        coin.local_residual > Amount::ZERO
            && self.keys.as_ref().is_some_and(|k| {
                k.denominations
                    .iter()
                    .any(|d| d.denom_id == coin.denom_id && !d.revoked && now <= d.deposit_end)
            })
    }

    /// Largest residual first, ties by coin key bytes.
    pub fn plan_payment(&mut self, contract: &Contract) -> Result<PaymentPlan, WalletError> {
        if contract.amount.is_zero() {
            return Err(WalletError::InvalidAmount);
        }
        self.keys()?;
        let now = self.clock.now();
        let mut candidates: Vec<&Coin> = self
            .coins
            .iter()
            .filter(|c| self.spendable(c, now))
            .collect();
        candidates.sort_by(|a, b| {
            b.local_residual
                .cmp(&a.local_residual)
                .then(a.coin_pub.cmp(&b.coin_pub))
        });
        let mut remaining = contract.amount;
        let mut parts = Vec::new();
        for c in candidates {
            if remaining.is_zero() {
                break;
            }
            let take = c.local_residual.min(remaining);
            parts.push((c.coin_pub.clone(), take));
            remaining = remaining.saturating_sub(take);
        }
        if !remaining.is_zero() {
            return Err(WalletError::InsufficientResidual);
        }
        Ok(PaymentPlan {
            contract_hash: contract.contract_hash,
            parts,
            total: contract.amount,
        })
    }

    /// Signs every part of `plan` and deducts the amounts. Nothing is signed
    /// unless the whole plan fits.
    pub fn pay(
        &mut self,
        contract: &Contract,
        plan: &PaymentPlan,
    ) -> Result<Vec<DepositRequest>, WalletError> {
        if plan.contract_hash != contract.contract_hash || plan.total != contract.amount {
            return Err(WalletError::InvalidAmount);
        }
        let sum = Amount::checked_sum(plan.parts.iter().map(|p| p.1))
            .ok_or(WalletError::InvalidAmount)?;
        if sum != plan.total {
            return Err(WalletError::InvalidAmount);
        }
        for (coin_pub, amount) in &plan.parts {
            let coin = self.coin(coin_pub).ok_or(WalletError::UnknownCoin)?;
            if amount.is_zero() {
                return Err(WalletError::InvalidAmount);
            }
            let others: Amount = plan
                .parts
                .iter()
                .filter(|p| &p.0 == coin_pub)
                .map(|p| p.1)
                .sum();
            if others > coin.local_residual {
                return Err(WalletError::InsufficientResidual);
            }
        }
        let mut out = Vec::with_capacity(plan.parts.len());
        for (coin_pub, amount) in &plan.parts {
            let idx = self
                .coins
                .iter()
                .position(|c| &c.coin_pub == coin_pub)
                .expect("checked above");
            let req = sign_payment(
                &self.coins[idx],
                contract,
                *amount,
                &self.group,
                &mut self.rng,
            );
            self.coins[idx].local_residual = self.coins[idx].local_residual.saturating_sub(*amount);
            out.push(req);
        }
        self.observer
            .step(&self.customer_id, ProtocolStep::P1SignContract);
        Ok(out)
    }

    /// Runs one refresh session turning part of `coin_pub`'s residual into a
    /// fresh coin of `target_id`.
    pub fn refresh(
        &mut self,
        coin_pub: &Uint,
        target_id: &DenomId,
    ) -> Result<RefreshOutcome, WalletError> {
        self.refresh_with(coin_pub, target_id, None)
    }

    /// `refresh` with an optional cheating construction, see [`build_refresh`].
    pub fn refresh_with(
        &mut self,
        coin_pub: &Uint,
        target_id: &DenomId,
        cheat_at: Option<usize>,
    ) -> Result<RefreshOutcome, WalletError> {
        let target = self.denomination(target_id)?;
        let cost = target
            .value
            .checked_add(target.refresh_fee)
            .ok_or(WalletError::InsufficientResidual)?;
        let coin = self.coin(coin_pub).ok_or(WalletError::UnknownCoin)?.clone();
        if coin.local_residual < cost {
            return Err(WalletError::InsufficientResidual);
        }
        let build = build_refresh(
            &coin,
            &target,
            self.kappa,
            &self.group,
            &mut self.rng,
            cheat_at,
        )?;
        let mint = self.mint.clone();
        let challenge = self.retry(|| {
            mint.refresh_commit(&build.request)
                .map_err(WalletError::from)
        })?;
        if let Some(c) = self.coins.iter_mut().find(|c| &c.coin_pub == coin_pub) {
            c.local_residual = c.local_residual.saturating_sub(cost);
        }
        let gamma = challenge.gamma;
        if gamma == 0 || usize::from(gamma) > self.kappa {
            return Err(WalletError::Mint(MintError::Malformed(
                "challenge out of range".into(),
            )));
        }
        let reveal = build.reveal_for(challenge.session_id, gamma, &self.group);
        let outcome = self.retry(|| mint.refresh_reveal(&reveal).map_err(WalletError::from))?;
        let blind_sig = match outcome {
            RefreshRevealResponse::Forfeited => return Ok(RefreshOutcome::Forfeited),
            RefreshRevealResponse::Signed { blind_sig } => blind_sig,
        };
        let target_pub = denom_public(&target);
        let d = &build.derivations[usize::from(gamma) - 1];
        let s = unblind(&blind_sig.to_int(), &d.blinding, &target_pub.n)
            .map_err(|_| WalletError::BadMintSignature)?;
        let change = Coin {
            private: Uint(self.group.encode_scalar(d.coin_key.private())),
            coin_pub: Uint(self.group.encode_element(d.coin_key.public())),
            denom_id: target.denom_id,
            denom_sig: Uint::from_int(&s, target_pub.width()).expect("below n"),
            face_value: target.value,
            local_residual: target.value,
            blinding: Uint::from_int(d.blinding.value(), target_pub.width()).expect("below n"),
            origin: CoinOrigin::Change {
                parent: coin_pub.clone(),
                session_id: challenge.session_id,
                gamma,
            },
        };
        if !change.verifies(&target_pub) {
            return Err(WalletError::BadMintSignature);
        }
        self.coins.push(change.clone());
        Ok(RefreshOutcome::Change(change))
    }

    /// Refreshes the whole residual of a coin into change coins, one session
    /// per planned coin. Residual that no denomination covers stays on the
    /// old coin.
    pub fn make_change(&mut self, coin_pub: &Uint) -> Result<Vec<Coin>, WalletError> {
        self.make_change_lasting(coin_pub, 0)
    }

    /// As `make_change`, using only denominations still depositable at
    /// `horizon`.
    fn make_change_lasting(
        &mut self,
        coin_pub: &Uint,
        horizon: Timestamp,
    ) -> Result<Vec<Coin>, WalletError> {
        let residual = self
            .coin(coin_pub)
            .ok_or(WalletError::UnknownCoin)?
            .local_residual;
        let now = self.clock.now();
        let denoms: Vec<_> = self
            .withdrawable(now)?
            .iter()
            .filter(|d| d.deposit_end > horizon)
            .map(|d| (d.denom_id, d.value, d.refresh_fee))
            .collect();
        let plan = plan_change(residual, &denoms)?;
        let mut out = Vec::new();
        for id in plan.denoms {
            if let RefreshOutcome::Change(c) = self.refresh(coin_pub, &id)? {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Change coins of `coin_pub` rebuilt from the mint's link data,
    /// whether or not the wallet already holds them.
    pub fn link_coins(&mut self, coin_pub: &Uint) -> Result<Vec<Coin>, WalletError> {
        let parent = self.coin(coin_pub).ok_or(WalletError::UnknownCoin)?.clone();
        let mint = self.mint.clone();
        let mut entries = Vec::new();
        let mut offset = 0;
        loop {
            let req = LinkRequest {
                coin_pub: coin_pub.clone(),
                offset,
            };
            let page = self.retry(|| mint.link(&req).map_err(WalletError::from))?;
            entries.extend(page.entries);
            match page.next_offset {
                Some(next) => offset = next,
                None => break,
            }
        }
        if entries.iter().any(|e| {
            !self.keys.as_ref().is_some_and(|k| {
                k.denominations
                    .iter()
                    .any(|d| d.denom_id == e.target_denom_id)
            })
        }) {
            self.refresh_keys()?;
        }
        let keys = self.keys()?.clone();
        coins_from_link(
            &parent.private.to_int(),
            coin_pub,
            &entries,
            &keys,
            &self.group,
        )
        .into_iter()
        .collect()
    }

    /// Linked change the wallet does not hold yet; such coins are added.
    pub fn derive_linked_change(&mut self, coin_pub: &Uint) -> Result<Vec<Coin>, WalletError> {
        let fresh: Vec<Coin> = self
            .link_coins(coin_pub)?
            .into_iter()
            .filter(|c| self.coin(&c.coin_pub).is_none())
            .collect();
        self.coins.extend(fresh.iter().cloned());
        Ok(fresh)
    }

    /// Submits every coin of the revoked denomination for a refund to this
    /// customer's bank account. Refunded coins leave the wallet.
    pub fn recover_revoked(&mut self, notice: &RevocationNotice) -> RecoveryReport {
        let mut report = RecoveryReport::default();
        let targets: Vec<Coin> = self
            .coins
            .iter()
            .filter(|c| c.denom_id == notice.denom_id)
            .cloned()
            .collect();
        let gateway = self.gateway.clone();
        for coin in targets {
            let req = CustomerRefundRequest {
                customer_id: self.customer_id.clone(),
                secret: self.secret.clone(),
                refund: RefundRequest {
                    coin_pub: coin.coin_pub.clone(),
                    denom_id: coin.denom_id,
                    denom_sig: coin.denom_sig.clone(),
                    blinding: coin.blinding.clone(),
                    bank_id: self.bank_id.clone(),
                },
            };
            match self.retry(|| gateway.refund_for_customer(&req).map_err(WalletError::from)) {
                Ok(resp) => {
                    report.refunded = report
                        .refunded
                        .checked_add(resp.credited)
                        .expect("amount overflow");
                    report.coins_refunded += 1;
                    self.coins.retain(|c| c.coin_pub != coin.coin_pub);
                }
                Err(e) => report.failures.push((coin.coin_pub.clone(), e)),
            }
        }
        if let Some(keys) = self.keys.as_mut() {
            if let Some(d) = keys
                .denominations
                .iter_mut()
                .find(|d| d.denom_id == notice.denom_id)
            {
                d.revoked = true;
            }
        }
        report
    }

    /// Refreshes coins whose deposit deadline falls within `window` seconds
    /// of `now` into issued denominations that outlast the window.
    pub fn sweep(&mut self, now: Timestamp, window: u64) -> Result<Vec<Coin>, WalletError> {
        let horizon = now.saturating_add(window);
        let keys = self.keys()?.clone();
        let expiring: Vec<Uint> = self
            .coins
            .iter()
            .filter(|c| c.local_residual > Amount::ZERO)
            .filter(|c| {
                keys.denominations
                    .iter()
                    .any(|d| d.denom_id == c.denom_id && !d.revoked && d.deposit_end <= horizon)
            })
            .map(|c| c.coin_pub.clone())
            .collect();
        let mut out = Vec::new();
        for coin_pub in expiring {
            match self.make_change_lasting(&coin_pub, horizon) {
                Ok(coins) => out.extend(coins),
                Err(WalletError::ExactCoverImpossible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Serializes the coin set: magic, version, customer id, coin count and
    /// one length-prefixed coin record per coin.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(FILE_MAGIC)
            .u8(FILE_VERSION)
            .str(&self.customer_id)
            .u32(self.coins.len() as u32);
        for c in &self.coins {
            let rec = c.to_bytes();
            w.u32(rec.len() as u32).fixed(&rec);
        }
        w.finish()
    }

    pub fn coins_from_file_bytes(bytes: &[u8]) -> Result<(String, Vec<Coin>), WalletError> {
        let corrupt = |e: WireError| WalletError::Storage(e.to_string());
        let mut r = Reader::new(bytes);
        if r.take(FILE_MAGIC.len()).map_err(corrupt)? != FILE_MAGIC {
            return Err(WalletError::Storage("not a wallet file".into()));
        }
        let version = r.u8().map_err(corrupt)?;
        if version != FILE_VERSION {
            return Err(WalletError::Storage(format!(
                "unsupported wallet file version {version}"
            )));
        }
        let owner = r.str().map_err(corrupt)?;
        let n = r.u32().map_err(corrupt)?;
        let mut coins = Vec::new();
        for _ in 0..n {
            let len = r.u32().map_err(corrupt)? as usize;
            coins.push(Coin::from_bytes(r.take(len).map_err(corrupt)?).map_err(corrupt)?);
        }
        r.finish().map_err(corrupt)?;
        Ok((owner, coins))
    }

    pub fn save(&self, path: &Path) -> Result<(), WalletError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_file_bytes())
            .map_err(|e| WalletError::Storage(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| WalletError::Storage(e.to_string()))
    }

    /// Replaces the coin set with the one stored at `path`.
    pub fn load(&mut self, path: &Path) -> Result<(), WalletError> {
        let bytes = std::fs::read(path).map_err(|e| WalletError::Storage(e.to_string()))?;
        let (owner, coins) = Self::coins_from_file_bytes(&bytes)?;
        if owner != self.customer_id {
            return Err(WalletError::Storage(
                "wallet file belongs to another customer".into(),
            ));
        }
        self.coins = coins;
        Ok(())
    }
}
