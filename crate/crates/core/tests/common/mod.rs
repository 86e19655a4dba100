#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use cbdc_core::crypto::{group_keygen, GroupKeyPair};
use cbdc_core::deploy::{Deployment, DeploymentSpec};
use cbdc_core::gateway::Gateway;
use cbdc_core::merchant::{Contract, Merchant};
use cbdc_core::wallet::{Coin, Wallet};
use cbdc_core::wire::DenomId;
use cbdc_core::Amount;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn c(minor: u64) -> Amount {
    Amount::from_minor(minor)
}

pub struct World {
    pub d: Deployment,
    pub bank: Arc<Gateway>,
    pub denoms: BTreeMap<u64, DenomId>,
    pub rng: ChaCha20Rng,
}

/// A toy deployment with one bank holding 1,000,000.00 in reserves and one
/// denomination per value (minor units).
pub fn world(values: &[u64], seed: u64) -> World {
    world_with(DeploymentSpec::toy(
        &values.iter().map(|&v| c(v)).collect::<Vec<_>>(),
        seed,
    ))
}

pub fn world_with(spec: cbdc_core::deploy::DeploymentSpec) -> World {
    let mut d = Deployment::in_memory(&spec).unwrap();
    let bank = d.add_bank("bank-a", c(100_000_000)).unwrap();
    let denoms = d
        .registry
        .iter()
        .map(|k| (k.value().minor(), k.denom_id))
        .collect();
    World {
        d,
        bank,
        denoms,
        rng: ChaCha20Rng::seed_from_u64(spec.seed ^ 0xfeed),
    }
}

impl World {
    pub fn denom(&self, value: u64) -> DenomId {
        self.denoms[&value]
    }

    pub fn wallet(&self, id: &str, balance: u64, seed: u64) -> Wallet {
        self.d.customer(&self.bank, id, c(balance), seed)
    }

    pub fn merchant(&self, id: &str) -> Merchant {
        self.d.merchant(&self.bank, id)
    }

    pub fn contract(&mut self, merchant: &Merchant, amount: u64) -> Contract {
        merchant
            .create_contract(c(amount), b"goods", &mut self.rng)
            .unwrap()
    }

    /// Withdraws one coin of exactly `value` into `wallet`.
    pub fn coin(&self, wallet: &mut Wallet, value: u64) -> Coin {
        wallet.withdraw_denomination(&self.denom(value)).unwrap()
    }

    /// A second bank with a key the test controls.
    pub fn raw_bank(&mut self, id: &str, reserves: u64) -> GroupKeyPair {
        let key = group_keygen(&self.d.group, &mut self.rng);
        self.d
            .mint
            .register_bank(id, key.public(), c(reserves))
            .unwrap();
        key
    }
}

use std::sync::atomic::{AtomicU32, Ordering};

use cbdc_core::api::{GatewayApi, MintApi};
use cbdc_core::gateway::GatewayError;
use cbdc_core::mint::MintError;
use cbdc_core::wire::{
    AuditReport, CustomerRefundRequest, CustomerWithdrawRequest, DepositConfirmation,
    DepositForwardRequest, DepositRequest, KeysDocument, LinkRequest, LinkResponse,
    RefreshChallenge, RefreshCommitRequest, RefreshRevealRequest, RefreshRevealResponse,
    RefundRequest, RefundResponse, WithdrawRequest, WithdrawResponse,
};

/// Fails the next `outages` calls with a transport error, then passes through.
/// Failures happen after the inner call when `lose_reply` is set.
pub struct FlakyMint {
    pub inner: Arc<dyn MintApi>,
    pub outages: AtomicU32,
    pub lose_reply: bool,
    pub reject_with: Option<MintError>,
}

impl FlakyMint {
    pub fn new(inner: Arc<dyn MintApi>, outages: u32, lose_reply: bool) -> Self {
        FlakyMint {
            inner,
            outages: AtomicU32::new(outages),
            lose_reply,
            reject_with: None,
        }
    }

    fn gate<T>(&self, f: impl FnOnce() -> Result<T, MintError>) -> Result<T, MintError> {
        if let Some(e) = &self.reject_with {
            return Err(e.clone());
        }
        let down = self
            .outages
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if !down {
            return f();
        }
        if self.lose_reply {
            let _ = f();
        }
        Err(MintError::Unavailable("link down".into()))
    }
}

impl MintApi for FlakyMint {
    fn keys(&self) -> Result<KeysDocument, MintError> {
        self.inner.keys()
    }
    fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError> {
        self.gate(|| self.inner.withdraw(req))
    }
    fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError> {
        self.gate(|| self.inner.deposit(req))
    }
    fn refresh_commit(&self, req: &RefreshCommitRequest) -> Result<RefreshChallenge, MintError> {
        self.gate(|| self.inner.refresh_commit(req))
    }
    fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError> {
        self.gate(|| self.inner.refresh_reveal(req))
    }
    fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError> {
        self.inner.link(req)
    }
    fn refund(&self, req: &RefundRequest) -> Result<RefundResponse, MintError> {
        self.gate(|| self.inner.refund(req))
    }
    fn audit(&self, denom_id: &DenomId) -> Result<AuditReport, MintError> {
        self.inner.audit(denom_id)
    }
}

/// Gateway wrapper that can drop replies or corrupt blind signatures.
pub struct FaultyGateway {
    pub inner: Arc<dyn GatewayApi>,
    pub outages: AtomicU32,
    pub tamper: bool,
}

impl FaultyGateway {
    fn down(&self) -> bool {
        self.outages
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }
}

impl GatewayApi for FaultyGateway {
    fn withdraw_for_customer(
        &self,
        req: &CustomerWithdrawRequest,
    ) -> Result<WithdrawResponse, GatewayError> {
        let mut resp = self.inner.withdraw_for_customer(req)?;
        if self.down() {
            return Err(GatewayError::Unavailable("reply lost".into()));
        }
        if self.tamper {
            let last = resp.blind_sig.0.len() - 1;
            resp.blind_sig.0[last] ^= 1;
        }
        Ok(resp)
    }
    fn forward_deposit(
        &self,
        req: &DepositForwardRequest,
    ) -> Result<DepositConfirmation, GatewayError> {
        let resp = self.inner.forward_deposit(req)?;
        if self.down() {
            return Err(GatewayError::Unavailable("reply lost".into()));
        }
        Ok(resp)
    }
    fn refund_for_customer(
        &self,
        req: &CustomerRefundRequest,
    ) -> Result<RefundResponse, GatewayError> {
        self.inner.refund_for_customer(req)
    }
}
