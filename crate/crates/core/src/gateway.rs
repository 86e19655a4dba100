//! A commercial bank: customer and merchant accounts, regulatory limits,
//! countersigned withdrawals and forwarded deposits.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use rug::Integer;
use thiserror::Error;

use crate::amount::Amount;
use crate::api::MintApi;
use crate::crypto::{coin_sign_deterministic, GroupKeyPair, GroupParams};
use crate::mint::MintError;
use crate::observe::{noop, ProtocolStep, StepObserver};
use crate::wire::{
    sha256, Body, CustomerRefundRequest, CustomerWithdrawRequest, DenomId, DepositConfirmation,
    DepositForwardRequest, ErrorBody, Hash32, KeysDocument, RefundResponse, Uint, WithdrawRequest,
    WithdrawResponse,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("daily withdrawal limit exceeded")]
    DailyLimitExceeded,
    #[error("unknown merchant")]
    UnknownMerchant,
    #[error("deposit names a different account")]
    AccountMismatch,
    #[error("merchant inbound limit exceeded")]
    MerchantLimitExceeded,
    #[error("mint rejected: {0}")]
    MintRejected(MintError),
    #[error("unavailable: {0}")]
    Unavailable(String),
}

impl GatewayError {
    pub fn to_body(&self) -> ErrorBody {
        let code = match self {
            GatewayError::AuthFailed => 200,
            GatewayError::InsufficientFunds => 201,
            GatewayError::DailyLimitExceeded => 202,
            GatewayError::UnknownMerchant => 203,
            GatewayError::AccountMismatch => 204,
            GatewayError::MerchantLimitExceeded => 205,
            GatewayError::Unavailable(detail) => {
                return ErrorBody {
                    code: 206,
                    detail: detail.clone(),
                }
            }
            GatewayError::MintRejected(inner) => return inner.to_body(),
        };
        ErrorBody {
            code,
            detail: String::new(),
        }
    }

    pub fn from_body(body: &ErrorBody) -> Option<Self> {
        Some(match body.code {
            200 => GatewayError::AuthFailed,
            201 => GatewayError::InsufficientFunds,
            202 => GatewayError::DailyLimitExceeded,
            203 => GatewayError::UnknownMerchant,
            204 => GatewayError::AccountMismatch,
            205 => GatewayError::MerchantLimitExceeded,
            206 => GatewayError::Unavailable(body.detail.clone()),
            _ => GatewayError::MintRejected(MintError::from_body(body)?),
        })
    }

    /// Transport-level failure worth retrying.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            GatewayError::Unavailable(_) | GatewayError::MintRejected(MintError::Unavailable(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CustomerAccount {
    pub customer_id: String,
    secret: String,
    pub balance: Amount,
    pub withdrawn_today: Amount,
    /// `None` is unlimited.
    pub daily_limit: Option<Amount>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerchantAccountState {
    pub merchant_id: String,
    pub balance: Amount,
    /// Largest total a single contract may bring in; `None` is unlimited.
    pub inbound_limit: Option<Amount>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum WithdrawalStatus {
    Pending,
    Relayed(Uint),
}

/// What the bank keeps about a withdrawal: who asked, for which denomination,
/// and the blinded value. Never the coin's public key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WithdrawalLogEntry {
    pub customer_id: String,
    pub denom_id: DenomId,
    pub blinded: Uint,
    pub value: Amount,
    status: WithdrawalStatus,
}

/// Running totals for the customer-funds conservation check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GatewayTotals {
    pub customer_debits: Amount,
    pub rollbacks: Amount,
    pub relayed_value: Amount,
    pub merchant_credits: Amount,
    pub refund_credits: Amount,
}

#[derive(Default)]
struct State {
    customers: BTreeMap<String, CustomerAccount>,
    merchants: BTreeMap<String, MerchantAccountState>,
    withdrawals: HashMap<Hash32, WithdrawalLogEntry>,
    credited_deposits: HashMap<Hash32, Amount>,
    contract_totals: HashMap<(String, Hash32), Amount>,
    credited_refunds: HashMap<Vec<u8>, Amount>,
    totals: GatewayTotals,
}

fn add(a: &mut Amount, b: Amount) {
    *a = a.checked_add(b).expect("amount overflow");
}

pub struct Gateway {
    bank_id: String,
    key: GroupKeyPair,
    group: GroupParams,
    mint: Arc<dyn MintApi>,
    retries: u32,
    state: Mutex<State>,
    keys: Mutex<Option<KeysDocument>>,
    observer: Arc<dyn StepObserver>,
}

impl Gateway {
    pub fn new(
        bank_id: &str,
        key: GroupKeyPair,
        group: GroupParams,
        mint: Arc<dyn MintApi>,
    ) -> Self {
        Gateway {
            bank_id: bank_id.to_string(),
            key,
            group,
            mint,
            retries: 3,
            state: Mutex::default(),
            keys: Mutex::default(),
            observer: noop(),
        }
    }

    /// Extra attempts after a transport failure before giving up.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn StepObserver>) -> Self {
        self.observer = observer;
        self
    }

    pub fn bank_id(&self) -> &str {
        &self.bank_id
    }

    /// The countersignature key to register with the mint.
    pub fn public_key(&self) -> &Integer {
        self.key.public()
    }

    pub fn open_customer(
        &self,
        customer_id: &str,
        secret: &str,
        balance: Amount,
        daily_limit: Option<Amount>,
    ) {
        self.state.lock().customers.insert(
            customer_id.to_string(),
            CustomerAccount {
                customer_id: customer_id.to_string(),
                secret: secret.to_string(),
                balance,
                withdrawn_today: Amount::ZERO,
                daily_limit,
            },
        );
    }

    pub fn open_merchant(&self, merchant_id: &str, inbound_limit: Option<Amount>) {
        self.state.lock().merchants.insert(
            merchant_id.to_string(),
            MerchantAccountState {
                merchant_id: merchant_id.to_string(),
                balance: Amount::ZERO,
                inbound_limit,
            },
        );
    }

    pub fn customer(&self, customer_id: &str) -> Option<CustomerAccount> {
        self.state.lock().customers.get(customer_id).cloned()
    }

    pub fn merchant(&self, merchant_id: &str) -> Option<MerchantAccountState> {
        self.state.lock().merchants.get(merchant_id).cloned()
    }

    pub fn totals(&self) -> GatewayTotals {
        self.state.lock().totals
    }

    /// Everything the bank stored about withdrawals it handled.
    pub fn withdrawal_log(&self) -> Vec<WithdrawalLogEntry> {
        let mut log: Vec<_> = self.state.lock().withdrawals.values().cloned().collect();
        log.sort_by(|a, b| a.blinded.cmp(&b.blinded));
        log
    }

    pub fn day_rollover(&self) {
        for c in self.state.lock().customers.values_mut() {
            c.withdrawn_today = Amount::ZERO;
        }
    }

    fn authenticate(&self, customer_id: &str, secret: &str) -> Result<(), GatewayError> {
        match self.state.lock().customers.get(customer_id) {
            Some(c) if c.secret == secret => Ok(()),
            _ => Err(GatewayError::AuthFailed),
        }
    }

    fn denomination_value(&self, denom_id: &DenomId) -> Result<Amount, GatewayError> {
        let find = |doc: &KeysDocument| {
            doc.denominations
                .iter()
                .find(|d| &d.denom_id == denom_id)
                .map(|d| d.value)
        };
        if let Some(v) = self.keys.lock().as_ref().and_then(find) {
            return Ok(v);
        }
        let doc = self.call_mint(|m| m.keys())?;
        let v = find(&doc);
        *self.keys.lock() = Some(doc);
        v.ok_or(GatewayError::MintRejected(MintError::UnknownDenomination))
    }

    fn call_mint<T>(
        &self,
        f: impl Fn(&dyn MintApi) -> Result<T, MintError>,
    ) -> Result<T, GatewayError> {
        let mut last = None;
        for _ in 0..=self.retries {
            match f(self.mint.as_ref()) {
                Ok(v) => return Ok(v),
                Err(MintError::Unavailable(why)) => last = Some(why),
                Err(e) => return Err(GatewayError::MintRejected(e)),
            }
        }
        Err(GatewayError::Unavailable(last.unwrap_or_default()))
    }

    pub fn withdraw_for_customer(
        &self,
        req: &CustomerWithdrawRequest,
    ) -> Result<WithdrawResponse, GatewayError> {
        self.authenticate(&req.customer_id, &req.secret)?;
        let value = self.denomination_value(&req.denom_id)?;
        let id = sha256(&[req.blinded.as_bytes()]);
        {
            let mut st = self.state.lock();
            if let Some(entry) = st.withdrawals.get(&id) {
                if entry.customer_id != req.customer_id || entry.denom_id != req.denom_id {
                    return Err(GatewayError::MintRejected(MintError::IdempotencyConflict));
                }
                return match &entry.status {
                    WithdrawalStatus::Relayed(sig) => Ok(WithdrawResponse {
                        blind_sig: sig.clone(),
                    }),
                    WithdrawalStatus::Pending => {
                        Err(GatewayError::Unavailable("withdrawal in progress".into()))
                    }
                };
            }
            let acct = st
                .customers
                .get_mut(&req.customer_id)
                .ok_or(GatewayError::AuthFailed)?;
            if acct.balance < value {
                return Err(GatewayError::InsufficientFunds);
            }
            let today = acct
                .withdrawn_today
                .checked_add(value)
                .ok_or(GatewayError::DailyLimitExceeded)?;
            if acct.daily_limit.is_some_and(|limit| today > limit) {
                return Err(GatewayError::DailyLimitExceeded);
            }
            acct.balance = acct.balance.saturating_sub(value);
            acct.withdrawn_today = today;
            add(&mut st.totals.customer_debits, value);
            st.withdrawals.insert(
                id,
                WithdrawalLogEntry {
                    customer_id: req.customer_id.clone(),
                    denom_id: req.denom_id,
                    blinded: req.blinded.clone(),
                    value,
                    status: WithdrawalStatus::Pending,
                },
            );
        }
        self.observer
            .step(&self.bank_id, ProtocolStep::W4DebitCustomer);

        let auth = WithdrawRequest::auth_message(&self.bank_id, &req.denom_id, &req.blinded);
        let countersig = coin_sign_deterministic(self.key.private(), &auth, &self.group);
        let forward = WithdrawRequest {
            bank_id: self.bank_id.clone(),
            denom_id: req.denom_id,
            blinded: req.blinded.clone(),
            countersig: Uint(countersig.to_bytes(&self.group)),
        };
        self.observer
            .step(&self.bank_id, ProtocolStep::W5Countersign);
        let result = self.call_mint(|m| m.withdraw(&forward));

        let mut st = self.state.lock();
        match result {
            Ok(resp) => {
                if let Some(entry) = st.withdrawals.get_mut(&id) {
                    entry.status = WithdrawalStatus::Relayed(resp.blind_sig.clone());
                }
                add(&mut st.totals.relayed_value, value);
                drop(st);
                self.observer.step(&self.bank_id, ProtocolStep::W8Relay);
                Ok(resp)
            }
            Err(e) => {
                st.withdrawals.remove(&id);
                if let Some(acct) = st.customers.get_mut(&req.customer_id) {
                    add(&mut acct.balance, value);
                    acct.withdrawn_today = acct.withdrawn_today.saturating_sub(value);
                }
                add(&mut st.totals.rollbacks, value);
                Err(e)
            }
        }
    }

    pub fn forward_deposit(
        &self,
        req: &DepositForwardRequest,
    ) -> Result<DepositConfirmation, GatewayError> {
        let dep = &req.deposit;
        let limit = {
            let st = self.state.lock();
            let merchant = st
                .merchants
                .get(&req.merchant_id)
                .ok_or(GatewayError::UnknownMerchant)?;
            merchant.inbound_limit
        };
        if dep.merchant.bank_id != self.bank_id || dep.merchant.merchant_id != req.merchant_id {
            return Err(GatewayError::AccountMismatch);
        }
        let mut key_input = dep.coin_pub.0.clone();
        key_input.extend_from_slice(&dep.contract_hash);
        key_input.extend_from_slice(&dep.amount.minor().to_be_bytes());
        key_input.extend(dep.merchant.to_bytes());
        let key = sha256(&[&key_input]);
        if let Some(limit) = limit {
            let st = self.state.lock();
            if !st.credited_deposits.contains_key(&key) {
                let so_far = st
                    .contract_totals
                    .get(&(req.merchant_id.clone(), dep.contract_hash))
                    .copied()
                    .unwrap_or_default();
                if so_far.checked_add(dep.amount).map_or(true, |t| t > limit) {
                    return Err(GatewayError::MerchantLimitExceeded);
                }
            }
        }
        self.observer.step(&self.bank_id, ProtocolStep::P3Forward);
        let conf = self.call_mint(|m| m.deposit(dep))?;

        let mut st = self.state.lock();
        if !st.credited_deposits.contains_key(&key) {
            st.credited_deposits.insert(key, dep.amount);
            add(
                st.contract_totals
                    .entry((req.merchant_id.clone(), dep.contract_hash))
                    .or_default(),
                dep.amount,
            );
            let merchant = st
                .merchants
                .get_mut(&req.merchant_id)
                .expect("merchant checked above");
            add(&mut merchant.balance, dep.amount);
            add(&mut st.totals.merchant_credits, dep.amount);
            drop(st);
            self.observer
                .step(&self.bank_id, ProtocolStep::P7CreditMerchant);
        } else {
            drop(st);
        }
        self.observer.step(&self.bank_id, ProtocolStep::P8Inform);
        Ok(conf)
    }

    pub fn refund_for_customer(
        &self,
        req: &CustomerRefundRequest,
    ) -> Result<RefundResponse, GatewayError> {
        self.authenticate(&req.customer_id, &req.secret)?;
        if req.refund.bank_id != self.bank_id {
            return Err(GatewayError::AccountMismatch);
        }
        let resp = self.call_mint(|m| m.refund(&req.refund))?;
        let mut st = self.state.lock();
        if !st.credited_refunds.contains_key(&req.refund.coin_pub.0) {
            st.credited_refunds
                .insert(req.refund.coin_pub.0.clone(), resp.credited);
            let acct = st
                .customers
                .get_mut(&req.customer_id)
                .expect("authenticated customer exists");
            add(&mut acct.balance, resp.credited);
            add(&mut st.totals.refund_credits, resp.credited);
        }
        Ok(resp)
    }
}
