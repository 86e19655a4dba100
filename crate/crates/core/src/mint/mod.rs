//! The central bank: denomination keys, blind signing, the spent-coin
//! database with double-spend prevention, refresh and link, revocation
//! refunds and issuance auditing.

mod error;
mod records;
mod registry;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::Integer;

pub use error::MintError;
pub use records::{RefreshSessionRecord, SessionState, SpendEntry, SpentRecord, WithdrawalRecord};
pub use registry::{
    denom_id_of, setup_denominations, DenominationKey, DenominationRegistry, DenominationSpec,
};

use crate::amount::Amount;
use crate::clock::{Clock, Timestamp};
use crate::crypto::{
    blind, blind_sign, coin_sig_verify, coin_sign_deterministic, derive_refresh, fdh, kx,
    rsa_verify, BlindingFactor, CoinSignature, CryptoError, GroupKeyPair, GroupParams,
    RsaPublicKey,
};
use crate::observe::{noop, ProtocolStep, StepObserver};
use crate::store::{CasOutcome, KvStore, MemoryStore, ShardMap};
use crate::wire::{
    sha256, AuditReport, Body, DenomId, DepositConfirmation, DepositRequest, Hash32, KeysDocument,
    LinkEntry, LinkRequest, LinkResponse, RefreshChallenge, RefreshCommitRequest,
    RefreshRevealRequest, RefreshRevealResponse, RefundRequest, RefundResponse, RevocationNotice,
    Uint, WithdrawRequest, WithdrawResponse, LINK_PAGE_SIZE,
};

/// The message a denomination key signs for a coin: the FDH of the coin's
/// public key bytes over the key's modulus.
pub fn coin_digest(denom: &RsaPublicKey, coin_pub: &[u8]) -> Result<Integer, CryptoError> {
    fdh(&denom.n, coin_pub)
}

pub struct MintConfig {
    /// Number of refresh constructions per session.
    pub kappa: usize,
    pub group: GroupParams,
    /// Signs deposit confirmations.
    pub signing_key: GroupKeyPair,
    pub gamma_seed: u64,
}

impl MintConfig {
    pub fn validate(&self) -> Result<(), MintError> {
        if !(2..=255).contains(&self.kappa) {
            return Err(MintError::Config(format!(
                "kappa must be in 2..=255, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

pub struct MintStores {
    /// Spent-coin records keyed by coin public key.
    pub coins: Arc<dyn KvStore>,
    /// Issued blind signatures keyed by the hash of the blinded value.
    pub withdrawals: Arc<dyn KvStore>,
}

impl MintStores {
    pub fn in_memory(shards: usize) -> Self {
        MintStores {
            coins: Arc::new(MemoryStore::new(ShardMap::uniform(shards))),
            withdrawals: Arc::new(MemoryStore::new(ShardMap::uniform(shards))),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct BankAccount {
    key: Option<Integer>,
    opening: Amount,
    debits: Amount,
    credits: Amount,
}

impl BankAccount {
    fn balance(&self) -> Amount {
        self.opening
            .checked_add(self.credits)
            .expect("reserve overflow")
            .saturating_sub(self.debits)
    }
}

/// Running totals per denomination. `deposited_value` includes value melted
/// by refresh; `issued_value` includes change coins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DenomCounters {
    pub issued_count: u64,
    pub issued_value: Amount,
    pub deposited_value: Amount,
    pub refunded_value: Amount,
    pub forfeited_value: Amount,
    pub change_issued_value: Amount,
    pub melted_value: Amount,
}

/// Sums over all banks' central-bank accounts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReserveTotals {
    pub debits: Amount,
    pub credits: Amount,
}

fn add(a: &mut Amount, b: Amount) {
    *a = a.checked_add(b).expect("amount overflow");
}

enum Update<T> {
    Write(SpentRecord, T),
    Done(T),
}

pub struct Mint {
    kappa: usize,
    group: GroupParams,
    signing: GroupKeyPair,
    registry: Arc<DenominationRegistry>,
    clock: Arc<dyn Clock>,
    coins: Arc<dyn KvStore>,
    withdrawals: Arc<dyn KvStore>,
    banks: Mutex<BTreeMap<String, BankAccount>>,
    counters: Mutex<HashMap<DenomId, DenomCounters>>,
    sessions: Mutex<HashMap<Hash32, Vec<u8>>>,
    gamma_rng: Mutex<ChaCha20Rng>,
    observer: Arc<dyn StepObserver>,
}

impl Mint {
    /// Opens a mint over `stores`, rebuilding balances, counters and the
    /// session index from whatever records they already hold.
    pub fn new(
        config: MintConfig,
        registry: Arc<DenominationRegistry>,
        stores: MintStores,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, MintError> {
        config.validate()?;
        let mint = Mint {
            kappa: config.kappa,
            group: config.group,
            signing: config.signing_key,
            registry,
            clock,
            coins: stores.coins,
            withdrawals: stores.withdrawals,
            banks: Mutex::default(),
            counters: Mutex::default(),
            sessions: Mutex::default(),
            gamma_rng: Mutex::new(ChaCha20Rng::seed_from_u64(config.gamma_seed)),
            observer: noop(),
        };
        mint.rebuild()?;
        Ok(mint)
    }

    pub fn with_observer(mut self, observer: Arc<dyn StepObserver>) -> Self {
        self.observer = observer;
        self
    }

    pub fn registry(&self) -> &Arc<DenominationRegistry> {
        &self.registry
    }

    pub fn group(&self) -> &GroupParams {
        &self.group
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn coin_store(&self) -> &Arc<dyn KvStore> {
        &self.coins
    }

    pub fn public_key(&self) -> &Integer {
        self.signing.public()
    }

    /// Registers a commercial bank's countersignature key and opening
    /// reserves. Re-registering replaces the key and opening balance.
    pub fn register_bank(
        &self,
        bank_id: &str,
        countersign_pub: &Integer,
        opening: Amount,
    ) -> Result<(), MintError> {
        if !self.group.is_member(countersign_pub) {
            return Err(MintError::Config("bank key is not a group element".into()));
        }
        let mut banks = self.banks.lock();
        let acct = banks.entry(bank_id.to_string()).or_default();
        acct.key = Some(countersign_pub.clone());
        acct.opening = opening;
        Ok(())
    }

    pub fn bank_balance(&self, bank_id: &str) -> Option<Amount> {
        self.banks
            .lock()
            .get(bank_id)
            .filter(|a| a.key.is_some())
            .map(BankAccount::balance)
    }

    pub fn reserve_totals(&self) -> ReserveTotals {
        let banks = self.banks.lock();
        let mut t = ReserveTotals::default();
        for a in banks.values() {
            add(&mut t.debits, a.debits);
            add(&mut t.credits, a.credits);
        }
        t
    }

    pub fn counters(&self, denom_id: &DenomId) -> DenomCounters {
        self.counters
            .lock()
            .get(denom_id)
            .copied()
            .unwrap_or_default()
    }

    pub fn keys(&self) -> KeysDocument {
        self.registry
            .published(Uint(self.group.encode_element(self.signing.public())))
    }

    pub fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError> {
        let bank_key = self
            .banks
            .lock()
            .get(&req.bank_id)
            .and_then(|a| a.key.clone())
            .ok_or(MintError::UnknownBank)?;
        let countersig = CoinSignature::from_bytes(req.countersig.as_bytes(), &self.group)
            .ok_or(MintError::BadCountersignature)?;
        let auth = WithdrawRequest::auth_message(&req.bank_id, &req.denom_id, &req.blinded);
        if !coin_sig_verify(&bank_key, &auth, &countersig, &self.group) {
            return Err(MintError::BadCountersignature);
        }
        let key = self.registry.get(&req.denom_id)?;
        if self.registry.is_revoked(&key.denom_id) {
            return Err(MintError::DenominationRevoked);
        }
        let now = self.clock.now();
        if !key.can_withdraw(now) {
            return Err(MintError::DenominationExpired);
        }
        let blinded = parse_below(&req.blinded, &key.public)?;
        let id = req.blinded_hash();
        if let Some(v) = self.withdrawals.get(&id)? {
            return replay_withdrawal(&WithdrawalRecord::from_bytes(&v.value)?, req);
        }

        let value = key.value();
        {
            let mut banks = self.banks.lock();
            let acct = banks.get_mut(&req.bank_id).ok_or(MintError::UnknownBank)?;
            if acct.balance() < value {
                return Err(MintError::InsufficientReserves);
            }
            add(&mut acct.debits, value);
        }
        let sig = blind_sign(&key.private, &blinded);
        self.observer
            .step("mint", ProtocolStep::W6DebitReserveAndSign);
        let record = WithdrawalRecord {
            denom_id: key.denom_id,
            bank_id: req.bank_id.clone(),
            timestamp: now,
            blind_sig: Uint::from_int(&sig, key.public.width()).expect("signature below n"),
        };
        let outcome = self
            .withdrawals
            .compare_and_set(&id, None, Some(record.to_bytes()));
        if !matches!(outcome, Ok(CasOutcome::Applied)) {
            self.uncharge(&req.bank_id, value);
            outcome?;
            // A concurrent identical request won the race.
            let v = self
                .withdrawals
                .get(&id)?
                .ok_or_else(|| MintError::Storage("withdrawal vanished".into()))?;
            return replay_withdrawal(&WithdrawalRecord::from_bytes(&v.value)?, req);
        }
        self.count_issue(&key.denom_id, value, false);
        self.observer.step("mint", ProtocolStep::W7ReturnSignature);
        Ok(WithdrawResponse {
            blind_sig: record.blind_sig,
        })
    }

    pub fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError> {
        let key = self.registry.get(&req.denom_id)?;
        if self.registry.is_revoked(&key.denom_id) {
            return Err(MintError::DenominationRevoked);
        }
        let now = self.clock.now();
        if !key.can_deposit(now) {
            return Err(MintError::DenominationExpired);
        }
        if req.amount.is_zero() {
            return Err(MintError::Malformed("zero deposit amount".into()));
        }
        if self.bank_balance(&req.merchant.bank_id).is_none() {
            return Err(MintError::UnknownBank);
        }
        let coin = self.verify_coin(&key, &req.coin_pub, &req.denom_sig)?;
        self.verify_coin_sig(&coin, &req.signed_message(), &req.coin_sig)?;
        self.observer.step("mint", ProtocolStep::P4CheckSpent);

        let (timestamp, fresh) = self.update_coin(req.coin_pub.as_bytes(), |rec| {
            let mut rec = rec.unwrap_or_else(|| SpentRecord::new(key.denom_id));
            let replayed = rec.entries.iter().find_map(|e| match e {
                SpendEntry::Deposit {
                    contract_hash,
                    merchant,
                    amount,
                    timestamp,
                } if contract_hash == &req.contract_hash
                    && merchant == &req.merchant
                    && *amount == req.amount =>
                {
                    Some(*timestamp)
                }
                _ => None,
            });
            if let Some(ts) = replayed {
                return Ok(Update::Done(ts));
            }
            let entry = SpendEntry::Deposit {
                contract_hash: req.contract_hash,
                merchant: req.merchant.clone(),
                amount: req.amount,
                timestamp: now,
            };
            if !rec.try_add(entry, key.value()) {
                return Err(MintError::DoubleSpend);
            }
            Ok(Update::Write(rec, now))
        })?;
        if fresh {
            self.credit(&req.merchant.bank_id, req.amount);
            add(
                &mut self
                    .counters
                    .lock()
                    .entry(key.denom_id)
                    .or_default()
                    .deposited_value,
                req.amount,
            );
            self.observer.step("mint", ProtocolStep::P5RecordAndCredit);
        }
        let msg = DepositConfirmation::signed_message(
            &req.coin_pub,
            &req.contract_hash,
            req.amount,
            &req.merchant,
            timestamp,
        );
        let mint_sig = coin_sign_deterministic(self.signing.private(), &msg, &self.group);
        self.observer.step("mint", ProtocolStep::P6Confirm);
        Ok(DepositConfirmation {
            coin_pub: req.coin_pub.clone(),
            contract_hash: req.contract_hash,
            amount: req.amount,
            merchant: req.merchant.clone(),
            timestamp,
            mint_sig: Uint(mint_sig.to_bytes(&self.group)),
        })
    }

    pub fn refresh_commit(
        &self,
        req: &RefreshCommitRequest,
    ) -> Result<RefreshChallenge, MintError> {
        let key = self.registry.get(&req.denom_id)?;
        let target = self.registry.get(&req.target_denom_id)?;
        if self.registry.is_revoked(&key.denom_id) || self.registry.is_revoked(&target.denom_id) {
            return Err(MintError::DenominationRevoked);
        }
        let now = self.clock.now();
        if !key.can_deposit(now) || !target.can_withdraw(now) {
            return Err(MintError::DenominationExpired);
        }
        if req.commitments.len() != self.kappa {
            return Err(MintError::Malformed(format!(
                "expected {} commitments",
                self.kappa
            )));
        }
        let coin = self.verify_coin(&key, &req.coin_pub, &req.denom_sig)?;
        self.verify_coin_sig(&coin, &req.signed_message(), &req.coin_sig)?;
        for c in &req.commitments {
            self.group
                .decode_element(c.transfer_pub.as_bytes())
                .map_err(|_| MintError::Malformed("transfer key is not a group element".into()))?;
            parse_below(&c.blinded, &target.public)?;
        }
        let session_id = req.session_id();
        let reserve = target
            .value()
            .checked_add(target.spec.refresh_fee)
            .ok_or_else(|| MintError::Malformed("amount overflow".into()))?;

        let mut gamma_drawn = None;
        let (gamma, _) = self.update_coin(req.coin_pub.as_bytes(), |rec| {
            let mut rec = rec.unwrap_or_else(|| SpentRecord::new(key.denom_id));
            if let Some(s) = rec.session(&session_id) {
                return Ok(Update::Done(s.gamma));
            }
            let entry = SpendEntry::Refresh {
                session_id,
                amount: reserve,
                timestamp: now,
            };
            if !rec.try_add(entry, key.value()) {
                return Err(MintError::DoubleSpend);
            }
            let gamma = *gamma_drawn
                .get_or_insert_with(|| self.gamma_rng.lock().gen_range(1..=self.kappa) as u8);
            rec.sessions.push(RefreshSessionRecord {
                session_id,
                target_denom_id: target.denom_id,
                reserved: reserve,
                residual_after: key.value().saturating_sub(rec.spent_total),
                commitments: req.commitments.clone(),
                gamma,
                state: SessionState::Committed,
                reveal_digest: None,
                change_blind_sig: None,
            });
            Ok(Update::Write(rec, gamma))
        })?;
        self.sessions
            .lock()
            .insert(session_id, req.coin_pub.0.clone());
        Ok(RefreshChallenge { session_id, gamma })
    }

    pub fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError> {
        let coin_key = self
            .sessions
            .lock()
            .get(&req.session_id)
            .cloned()
            .ok_or(MintError::UnknownSession)?;
        let coin = self
            .group
            .decode_element(&coin_key)
            .map_err(|_| MintError::Storage("session index holds an invalid coin".into()))?;
        let digest = sha256(&[&req.to_bytes()]);
        loop {
            let v = self
                .coins
                .get(&coin_key)?
                .ok_or(MintError::UnknownSession)?;
            let mut rec = SpentRecord::from_bytes(&v.value)?;
            let session = rec
                .session(&req.session_id)
                .ok_or(MintError::UnknownSession)?
                .clone();
            if session.state != SessionState::Committed {
                if session.reveal_digest != Some(digest) {
                    return Err(MintError::WrongState);
                }
                return Ok(match session.change_blind_sig {
                    Some(blind_sig) => RefreshRevealResponse::Signed { blind_sig },
                    None => RefreshRevealResponse::Forfeited,
                });
            }
            let target = self.registry.get(&session.target_denom_id)?;
            if self.registry.is_revoked(&target.denom_id) {
                return Err(MintError::DenominationRevoked);
            }
            let honest =
                self.verify_reveal(&coin, &session, &req.transfer_privs, &target.public)?;
            let s = rec.session_mut(&req.session_id).expect("session present");
            s.reveal_digest = Some(digest);
            let response = if honest {
                let blinded = session.commitments[usize::from(session.gamma) - 1]
                    .blinded
                    .to_int();
                let sig = Uint::from_int(
                    &blind_sign(&target.private, &blinded),
                    target.public.width(),
                )
                .expect("below n");
                s.state = SessionState::Completed;
                s.change_blind_sig = Some(sig.clone());
                RefreshRevealResponse::Signed { blind_sig: sig }
            } else {
                s.state = SessionState::Forfeited;
                RefreshRevealResponse::Forfeited
            };
            if self
                .coins
                .compare_and_set(&coin_key, Some(v.version), Some(rec.to_bytes()))?
                == CasOutcome::Conflict
            {
                continue;
            }
            let mut counters = self.counters.lock();
            let old = counters.entry(rec.denom_id).or_default();
            match &response {
                RefreshRevealResponse::Signed { blind_sig } => {
                    add(&mut old.deposited_value, session.reserved);
                    add(&mut old.melted_value, session.reserved);
                    drop(counters);
                    self.count_issue(&target.denom_id, target.value(), true);
                    let blinded = &session.commitments[usize::from(session.gamma) - 1].blinded;
                    self.record_change_issue(blinded, &target.denom_id, blind_sig.clone())?;
                }
                RefreshRevealResponse::Forfeited => add(&mut old.forfeited_value, session.reserved),
            }
            return Ok(response);
        }
    }

    /// Checks every opened construction. `Ok(false)` means the wallet cheated.
    fn verify_reveal(
        &self,
        coin: &Integer,
        session: &RefreshSessionRecord,
        transfer_privs: &[Uint],
        target: &RsaPublicKey,
    ) -> Result<bool, MintError> {
        if transfer_privs.len() != self.kappa - 1 {
            return Err(MintError::Malformed(format!(
                "expected {} transfer keys",
                self.kappa - 1
            )));
        }
        let opened = (1..=session.commitments.len()).filter(|&i| i != usize::from(session.gamma));
        for (i, t_bytes) in opened.zip(transfer_privs) {
            let commitment = &session.commitments[i - 1];
            let Ok(t) = self.group.decode_scalar(t_bytes.as_bytes()) else {
                return Ok(false);
            };
            if self.group.encode_element(&self.group.exp_g(&t))
                != commitment.transfer_pub.as_bytes()
            {
                return Ok(false);
            }
            let Ok(secret) = kx(&t, coin, &self.group) else {
                return Ok(false);
            };
            let Ok(d) = derive_refresh(&secret, target, &self.group) else {
                return Ok(false);
            };
            let change_pub = self.group.encode_element(d.coin_key.public());
            let Ok(f) = coin_digest(target, &change_pub) else {
                return Ok(false);
            };
            let expected =
                Uint::from_int(&blind(&f, &d.blinding, target), target.width()).expect("below n");
            if expected != commitment.blinded {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError> {
        let Some(v) = self.coins.get(req.coin_pub.as_bytes())? else {
            return Ok(LinkResponse {
                entries: Vec::new(),
                next_offset: None,
            });
        };
        let rec = SpentRecord::from_bytes(&v.value)?;
        let completed: Vec<LinkEntry> = rec
            .sessions
            .iter()
            .filter(|s| s.state == SessionState::Completed)
            .map(|s| LinkEntry {
                transfer_pub: s.commitments[usize::from(s.gamma) - 1].transfer_pub.clone(),
                blind_sig: s
                    .change_blind_sig
                    .clone()
                    .expect("completed session has a signature"),
                target_denom_id: s.target_denom_id,
            })
            .collect();
        let start = (req.offset as usize).min(completed.len());
        let end = (start + LINK_PAGE_SIZE).min(completed.len());
        let next_offset = (end < completed.len()).then_some(end as u32);
        Ok(LinkResponse {
            entries: completed[start..end].to_vec(),
            next_offset,
        })
    }

    pub fn revoke_denomination(&self, denom_id: &DenomId) -> Result<RevocationNotice, MintError> {
        self.registry.revoke(denom_id, self.clock.now())
    }

    pub fn refund_revoked(&self, req: &RefundRequest) -> Result<RefundResponse, MintError> {
        let key = self.registry.get(&req.denom_id)?;
        if !self.registry.is_revoked(&key.denom_id) {
            return Err(MintError::NotRevoked);
        }
        self.verify_coin(&key, &req.coin_pub, &req.denom_sig)?;
        let b = BlindingFactor::new(req.blinding.to_int(), &key.public.n)
            .map_err(|_| MintError::NoMatchingWithdrawal)?;
        let f = coin_digest(&key.public, req.coin_pub.as_bytes())
            .map_err(|_| MintError::BadDenomSignature)?;
        let blinded =
            Uint::from_int(&blind(&f, &b, &key.public), key.public.width()).expect("below n");
        let issued = self.withdrawals.get(&sha256(&[blinded.as_bytes()]))?;
        match issued
            .map(|v| WithdrawalRecord::from_bytes(&v.value))
            .transpose()?
        {
            Some(w) if w.denom_id == key.denom_id => {}
            _ => return Err(MintError::NoMatchingWithdrawal),
        }
        if self.bank_balance(&req.bank_id).is_none() {
            return Err(MintError::UnknownBank);
        }
        let now = self.clock.now();
        let (credited, fresh) = self.update_coin(req.coin_pub.as_bytes(), |rec| {
            let mut rec = rec.unwrap_or_else(|| SpentRecord::new(key.denom_id));
            let previous = rec.entries.iter().find_map(|e| match e {
                SpendEntry::Refund { amount, .. } => Some(*amount),
                _ => None,
            });
            if let Some(amount) = previous {
                return Ok(Update::Done(amount));
            }
            let residual = key.value().saturating_sub(rec.spent_total);
            if residual.is_zero() {
                return Err(MintError::AlreadyRefunded);
            }
            rec.try_add(
                SpendEntry::Refund {
                    bank_id: req.bank_id.clone(),
                    amount: residual,
                    timestamp: now,
                },
                key.value(),
            );
            Ok(Update::Write(rec, residual))
        })?;
        if fresh {
            self.credit(&req.bank_id, credited);
            add(
                &mut self
                    .counters
                    .lock()
                    .entry(key.denom_id)
                    .or_default()
                    .refunded_value,
                credited,
            );
        }
        Ok(RefundResponse { credited })
    }

    pub fn audit_denomination(&self, denom_id: &DenomId) -> Result<AuditReport, MintError> {
        self.registry.get(denom_id)?;
        let c = self.counters(denom_id);
        let returned =
            Amount::checked_sum([c.deposited_value, c.refunded_value, c.forfeited_value])
                .expect("amount overflow");
        Ok(AuditReport {
            denom_id: *denom_id,
            issued_count: c.issued_count,
            issued_value: c.issued_value,
            deposited_value: c.deposited_value,
            refunded_value: c.refunded_value,
            forfeited_value: c.forfeited_value,
            violation: returned > c.issued_value,
        })
    }

    /// Drops spent-coin and withdrawal records of denominations whose legal
    /// period ended before `now`. Returns the number of records removed.
    pub fn gc(&self, now: Timestamp) -> Result<usize, MintError> {
        let expired = |id: &DenomId| {
            self.registry
                .get(id)
                .map(|k| k.spec.legal_end < now)
                .unwrap_or(false)
        };
        let mut removed = 0;
        for (store, is_coin) in [(&self.coins, true), (&self.withdrawals, false)] {
            let mut doomed = Vec::new();
            store.scan(&mut |k, v| {
                let denom = if is_coin {
                    SpentRecord::from_bytes(&v.value).map(|r| r.denom_id)
                } else {
                    WithdrawalRecord::from_bytes(&v.value).map(|r| r.denom_id)
                };
                if denom.map(|d| expired(&d)).unwrap_or(false) {
                    doomed.push((k.to_vec(), v.version));
                }
            })?;
            for (k, version) in doomed {
                if store.compare_and_set(&k, Some(version), None)? == CasOutcome::Applied {
                    removed += 1;
                }
            }
        }
        let coins = &self.coins;
        self.sessions
            .lock()
            .retain(|_, coin| coins.get(coin).map(|v| v.is_some()).unwrap_or(true));
        Ok(removed)
    }

    fn verify_coin(
        &self,
        key: &DenominationKey,
        coin_pub: &Uint,
        denom_sig: &Uint,
    ) -> Result<Integer, MintError> {
        let coin = self
            .group
            .decode_element(coin_pub.as_bytes())
            .map_err(|_| MintError::Malformed("coin key is not a group element".into()))?;
        if denom_sig.len() != key.public.width() {
            return Err(MintError::BadDenomSignature);
        }
        let f = coin_digest(&key.public, coin_pub.as_bytes())
            .map_err(|_| MintError::BadDenomSignature)?;
        if !rsa_verify(&key.public, &f, &denom_sig.to_int()) {
            return Err(MintError::BadDenomSignature);
        }
        Ok(coin)
    }

    fn verify_coin_sig(&self, coin: &Integer, msg: &[u8], sig: &Uint) -> Result<(), MintError> {
        let sig = CoinSignature::from_bytes(sig.as_bytes(), &self.group)
            .ok_or(MintError::BadCoinSignature)?;
        if !coin_sig_verify(coin, msg, &sig, &self.group) {
            return Err(MintError::BadCoinSignature);
        }
        Ok(())
    }

    /// Optimistic read-modify-write of one coin's record. Returns the
    /// closure's value and whether a write happened.
    fn update_coin<T>(
        &self,
        coin_pub: &[u8],
        mut f: impl FnMut(Option<SpentRecord>) -> Result<Update<T>, MintError>,
    ) -> Result<(T, bool), MintError> {
        loop {
            let current = self.coins.get(coin_pub)?;
            let version = current.as_ref().map(|v| v.version);
            let rec = current
                .map(|v| SpentRecord::from_bytes(&v.value))
                .transpose()?;
            match f(rec)? {
                Update::Done(t) => return Ok((t, false)),
                Update::Write(rec, t) => {
                    if self
                        .coins
                        .compare_and_set(coin_pub, version, Some(rec.to_bytes()))?
                        == CasOutcome::Applied
                    {
                        return Ok((t, true));
                    }
                }
            }
        }
    }

    fn credit(&self, bank_id: &str, amount: Amount) {
        add(
            &mut self
                .banks
                .lock()
                .entry(bank_id.to_string())
                .or_default()
                .credits,
            amount,
        );
    }

    fn uncharge(&self, bank_id: &str, amount: Amount) {
        if let Some(a) = self.banks.lock().get_mut(bank_id) {
            a.debits = a.debits.saturating_sub(amount);
        }
    }

    fn count_issue(&self, denom_id: &DenomId, value: Amount, change: bool) {
        let mut counters = self.counters.lock();
        let c = counters.entry(*denom_id).or_default();
        c.issued_count += 1;
        add(&mut c.issued_value, value);
        if change {
            add(&mut c.change_issued_value, value);
        }
    }

    /// Change coins are recorded like withdrawals so a revoked change coin
    /// can be refunded with its derived blinding factor.
    fn record_change_issue(
        &self,
        blinded: &Uint,
        denom_id: &DenomId,
        blind_sig: Uint,
    ) -> Result<(), MintError> {
        let record = WithdrawalRecord {
            denom_id: *denom_id,
            bank_id: String::new(),
            timestamp: self.clock.now(),
            blind_sig,
        };
        self.withdrawals.compare_and_set(
            &sha256(&[blinded.as_bytes()]),
            None,
            Some(record.to_bytes()),
        )?;
        Ok(())
    }

    fn rebuild(&self) -> Result<(), MintError> {
        let mut failure = None;
        let mut banks = self.banks.lock();
        let mut counters = self.counters.lock();
        let mut withdrawal_keys = std::collections::HashSet::new();
        self.withdrawals
            .scan(&mut |k, v| match WithdrawalRecord::from_bytes(&v.value) {
                Ok(w) => {
                    withdrawal_keys.insert(k.to_vec());
                    let Ok(key) = self.registry.get(&w.denom_id) else {
                        return;
                    };
                    let c = counters.entry(w.denom_id).or_default();
                    c.issued_count += 1;
                    add(&mut c.issued_value, key.value());
                    if w.from_refresh() {
                        add(&mut c.change_issued_value, key.value());
                    } else {
                        add(&mut banks.entry(w.bank_id).or_default().debits, key.value());
                    }
                }
                Err(e) => failure = Some(e),
            })?;
        let mut sessions = self.sessions.lock();
        let mut missing_change = Vec::new();
        self.coins.scan(&mut |k, v| {
            let rec = match SpentRecord::from_bytes(&v.value) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            };
            let c = counters.entry(rec.denom_id).or_default();
            for e in &rec.entries {
                match e {
                    SpendEntry::Deposit {
                        merchant, amount, ..
                    } => {
                        add(&mut c.deposited_value, *amount);
                        add(
                            &mut banks.entry(merchant.bank_id.clone()).or_default().credits,
                            *amount,
                        );
                    }
                    SpendEntry::Refund {
                        bank_id, amount, ..
                    } => {
                        add(&mut c.refunded_value, *amount);
                        add(
                            &mut banks.entry(bank_id.clone()).or_default().credits,
                            *amount,
                        );
                    }
                    SpendEntry::Refresh { .. } => {}
                }
            }
            for s in &rec.sessions {
                sessions.insert(s.session_id, k.to_vec());
                match s.state {
                    SessionState::Completed => {
                        add(&mut c.deposited_value, s.reserved);
                        add(&mut c.melted_value, s.reserved);
                        let blinded = &s.commitments[usize::from(s.gamma) - 1].blinded;
                        if !withdrawal_keys.contains(&sha256(&[blinded.as_bytes()]).to_vec()) {
                            missing_change.push((
                                blinded.clone(),
                                s.target_denom_id,
                                s.change_blind_sig.clone(),
                            ));
                        }
                    }
                    SessionState::Forfeited => add(&mut c.forfeited_value, s.reserved),
                    SessionState::Committed => {}
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        drop((banks, counters, sessions));
        // A crash between completing a session and recording its change coin
        // leaves the issue unrecorded; repair it here.
        for (blinded, denom_id, sig) in missing_change {
            let Some(sig) = sig else { continue };
            let key = self.registry.get(&denom_id)?;
            self.count_issue(&denom_id, key.value(), true);
            self.record_change_issue(&blinded, &denom_id, sig)?;
        }
        Ok(())
    }
}

fn replay_withdrawal(
    record: &WithdrawalRecord,
    req: &WithdrawRequest,
) -> Result<WithdrawResponse, MintError> {
    if record.denom_id != req.denom_id || record.bank_id != req.bank_id {
        return Err(MintError::IdempotencyConflict);
    }
    Ok(WithdrawResponse {
        blind_sig: record.blind_sig.clone(),
    })
}

/// A blinded value must be written at the modulus width and lie below `n`.
fn parse_below(v: &Uint, key: &RsaPublicKey) -> Result<Integer, MintError> {
    if v.len() != key.width() {
        return Err(MintError::Malformed(
            "blinded value has the wrong width".into(),
        ));
    }
    let x = v.to_int();
    if x >= key.n {
        return Err(MintError::Malformed(
            "blinded value not below the modulus".into(),
        ));
    }
    Ok(x)
}
