//! The payee: contracts, payment validation and settlement through its bank.

use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::amount::Amount;
use crate::api::GatewayApi;
use crate::crypto::{coin_sig_verify, rsa_verify, CoinSignature, GroupParams, RsaPublicKey};
use crate::gateway::GatewayError;
use crate::mint::{coin_digest, MintError};
use crate::observe::{noop, ProtocolStep, StepObserver};
use crate::wire::{
    payment_message, sha256, Body, DepositConfirmation, DepositForwardRequest, DepositRequest,
    Hash32, KeysDocument, MerchantAccount, PublishedDenomination, Uint, Writer,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MerchantError {
    #[error("contract amount must be positive")]
    InvalidAmount,
    #[error("coin signature does not verify")]
    BadCoinSignature,
    #[error("denomination signature does not verify")]
    BadDenomSignature,
    #[error("unknown denomination")]
    UnknownDenomination,
    #[error("accepted parts do not add up to the contract amount")]
    AmountMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contract {
    pub merchant: MerchantAccount,
    pub amount: Amount,
    pub description: Vec<u8>,
    pub nonce: [u8; 32],
    pub contract_hash: Hash32,
}

impl Contract {
    pub fn new<R: RngCore + ?Sized>(
        merchant: MerchantAccount,
        amount: Amount,
        description: &[u8],
        rng: &mut R,
    ) -> Result<Self, MerchantError> {
        if amount.is_zero() {
            return Err(MerchantError::InvalidAmount);
        }
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        let contract_hash = Self::compute_hash(&merchant, amount, description, &nonce);
        Ok(Contract {
            merchant,
            amount,
            description: description.to_vec(),
            nonce,
            contract_hash,
        })
    }

    /// SHA-256 of `merchant ‖ amount ‖ description ‖ nonce` in wire encoding.
    pub fn compute_hash(
        merchant: &MerchantAccount,
        amount: Amount,
        description: &[u8],
        nonce: &[u8; 32],
    ) -> Hash32 {
        let mut w = Writer::new();
        w.fixed(b"contract");
        merchant.write(&mut w);
        w.amount(amount).bytes(description).fixed(nonce);
        sha256(&[&w.finish()])
    }

    pub fn hash_matches(&self) -> bool {
        Self::compute_hash(&self.merchant, self.amount, &self.description, &self.nonce)
            == self.contract_hash
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartStatus {
    Confirmed(DepositConfirmation),
    Rejected(GatewayError),
    /// Still unsettled after the retry budget; resubmitting is safe.
    Pending(GatewayError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartOutcome {
    pub coin_pub: Uint,
    pub amount: Amount,
    pub status: PartStatus,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettlementResult {
    pub contract_hash: Hash32,
    pub parts: Vec<PartOutcome>,
    pub delivered: bool,
}

impl SettlementResult {
    /// Coins the mint reported as already spent.
    pub fn double_spent(&self) -> Vec<&Uint> {
        self.parts
            .iter()
            .filter(|p| {
                matches!(
                    p.status,
                    PartStatus::Rejected(GatewayError::MintRejected(MintError::DoubleSpend))
                )
            })
            .map(|p| &p.coin_pub)
            .collect()
    }

    pub fn has_pending(&self) -> bool {
        self.parts
            .iter()
            .any(|p| matches!(p.status, PartStatus::Pending(_)))
    }
}

fn denom_public(d: &PublishedDenomination) -> RsaPublicKey {
    RsaPublicKey {
        e: d.e.to_int(),
        n: d.n.to_int(),
    }
}

pub struct Merchant {
    account: MerchantAccount,
    group: GroupParams,
    gateway: Arc<dyn GatewayApi>,
    attempts: u32,
    observer: Arc<dyn StepObserver>,
}

impl Merchant {
    pub fn new(account: MerchantAccount, group: GroupParams, gateway: Arc<dyn GatewayApi>) -> Self {
        Merchant {
            account,
            group,
            gateway,
            attempts: 8,
            observer: noop(),
        }
    }

    /// Attempts per part per `settle` call.
    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn StepObserver>) -> Self {
        self.observer = observer;
        self
    }

    pub fn account(&self) -> &MerchantAccount {
        &self.account
    }

    pub fn create_contract<R: RngCore + ?Sized>(
        &self,
        amount: Amount,
        description: &[u8],
        rng: &mut R,
    ) -> Result<Contract, MerchantError> {
        Contract::new(self.account.clone(), amount, description, rng)
    }

    /// Checks every part against the contract and the published keys. All
    /// parts must verify and together pay exactly the contract amount.
    pub fn validate_payment(
        &self,
        contract: &Contract,
        parts: &[DepositRequest],
        keys: &KeysDocument,
    ) -> Result<Vec<DepositRequest>, MerchantError> {
        let mut total = Amount::ZERO;
        for part in parts {
            let denom = keys
                .denominations
                .iter()
                .find(|d| d.denom_id == part.denom_id)
                .ok_or(MerchantError::UnknownDenomination)?;
            let coin = self
                .group
                .decode_element(part.coin_pub.as_bytes())
                .map_err(|_| MerchantError::BadCoinSignature)?;
            let msg = payment_message(&contract.contract_hash, &contract.merchant, part.amount);
            let sig = CoinSignature::from_bytes(part.coin_sig.as_bytes(), &self.group)
                .ok_or(MerchantError::BadCoinSignature)?;
            if part.contract_hash != contract.contract_hash
                || part.merchant != contract.merchant
                || !coin_sig_verify(&coin, &msg, &sig, &self.group)
            {
                return Err(MerchantError::BadCoinSignature);
            }
            let public = denom_public(denom);
            let f = coin_digest(&public, part.coin_pub.as_bytes())
                .map_err(|_| MerchantError::BadDenomSignature)?;
            if part.denom_sig.len() != public.width()
                || !rsa_verify(&public, &f, &part.denom_sig.to_int())
            {
                return Err(MerchantError::BadDenomSignature);
            }
            total = total
                .checked_add(part.amount)
                .ok_or(MerchantError::AmountMismatch)?;
        }
        if total != contract.amount {
            return Err(MerchantError::AmountMismatch);
        }
        self.observer
            .step(&self.account.merchant_id, ProtocolStep::P2Validate);
        Ok(parts.to_vec())
    }

    /// Deposits each part through the bank. Delivery happens only when every
    /// part carries a mint confirmation whose signature verifies under
    /// `mint_pub`. Calling again with the same parts is safe.
    pub fn settle(
        &self,
        contract: &Contract,
        parts: &[DepositRequest],
        mint_pub: &Uint,
    ) -> SettlementResult {
        let mint_key = self.group.decode_element(mint_pub.as_bytes()).ok();
        let mut outcomes = Vec::with_capacity(parts.len());
        for part in parts {
            let req = DepositForwardRequest {
                merchant_id: self.account.merchant_id.clone(),
                deposit: part.clone(),
            };
            let mut status = PartStatus::Pending(GatewayError::Unavailable("not attempted".into()));
            for _ in 0..self.attempts {
                match self.gateway.forward_deposit(&req) {
                    Ok(conf) => {
                        status = if self.confirmation_valid(&conf, part, mint_key.as_ref()) {
                            PartStatus::Confirmed(conf)
                        } else {
                            PartStatus::Rejected(GatewayError::MintRejected(MintError::Malformed(
                                "confirmation does not verify".into(),
                            )))
                        };
                        break;
                    }
                    Err(e) if e.is_retriable() => status = PartStatus::Pending(e),
                    Err(e) => {
                        status = PartStatus::Rejected(e);
                        break;
                    }
                }
            }
            outcomes.push(PartOutcome {
                coin_pub: part.coin_pub.clone(),
                amount: part.amount,
                status,
            });
        }
        let confirmed: Option<Amount> = outcomes
            .iter()
            .map(|o| matches!(o.status, PartStatus::Confirmed(_)).then_some(o.amount))
            .sum::<Option<Amount>>();
        let delivered = confirmed == Some(contract.amount);
        if delivered {
            self.observer
                .step(&self.account.merchant_id, ProtocolStep::P9Deliver);
        }
        SettlementResult {
            contract_hash: contract.contract_hash,
            parts: outcomes,
            delivered,
        }
    }

    fn confirmation_valid(
        &self,
        conf: &DepositConfirmation,
        part: &DepositRequest,
        mint_key: Option<&rug::Integer>,
    ) -> bool {
        let Some(mint_key) = mint_key else {
            return false;
        };
        if conf.coin_pub != part.coin_pub
            || conf.contract_hash != part.contract_hash
            || conf.amount != part.amount
            || conf.merchant != part.merchant
        {
            return false;
        }
        let msg = DepositConfirmation::signed_message(
            &conf.coin_pub,
            &conf.contract_hash,
            conf.amount,
            &conf.merchant,
            conf.timestamp,
        );
        CoinSignature::from_bytes(conf.mint_sig.as_bytes(), &self.group)
            .is_some_and(|sig| coin_sig_verify(mint_key, &msg, &sig, &self.group))
    }
}
