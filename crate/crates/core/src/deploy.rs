//! Wiring for an in-process deployment: one mint, its banks, and the wallets
//! and merchants attached to them. Transports wrap the handles as needed.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::amount::Amount;
use crate::api::{GatewayApi, MintApi};
use crate::clock::{Clock, ManualClock, Timestamp};
use crate::crypto::{group_keygen, CryptoMode, GroupParams};
use crate::gateway::Gateway;
use crate::merchant::Merchant;
use crate::mint::{
    setup_denominations, DenominationRegistry, DenominationSpec, Mint, MintConfig, MintError,
    MintStores,
};
use crate::observe::StepObserver;
use crate::wallet::{Wallet, WalletConfig};
use crate::wire::MerchantAccount;

/// One denomination per value, valid for withdrawal and deposit from `start`
/// for `lifetime` seconds, with the given refresh fee.
pub fn open_schedule(
    values: &[Amount],
    fee: Amount,
    start: Timestamp,
    lifetime: u64,
) -> Vec<DenominationSpec> {
    values
        .iter()
        .map(|&value| DenominationSpec {
            value,
            withdraw_start: start,
            withdraw_end: start + lifetime,
            deposit_end: start + 2 * lifetime,
            legal_end: start + 3 * lifetime,
            refresh_fee: fee,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct DeploymentSpec {
    pub mode: CryptoMode,
    /// Overrides the mode's RSA size; small values keep tests fast.
    pub rsa_bits: Option<u32>,
    pub denominations: Vec<DenominationSpec>,
    pub kappa: usize,
    pub shards: usize,
    pub seed: u64,
    pub start_time: Timestamp,
}

impl DeploymentSpec {
    pub fn toy(values: &[Amount], seed: u64) -> Self {
        DeploymentSpec {
            mode: CryptoMode::Toy,
            rsa_bits: None,
            denominations: open_schedule(values, Amount::ZERO, 1_000, 1_000_000),
            kappa: 3,
            shards: 4,
            seed,
            start_time: 1_000,
        }
    }
}

pub struct Deployment {
    pub clock: Arc<ManualClock>,
    pub mint: Arc<Mint>,
    pub registry: Arc<DenominationRegistry>,
    pub group: GroupParams,
    pub kappa: usize,
    rng: ChaCha20Rng,
    observer: Option<Arc<dyn StepObserver>>,
}

impl Deployment {
    pub fn new(spec: &DeploymentSpec, stores: MintStores) -> Result<Self, MintError> {
        Self::build(spec, stores, None)
    }

    /// Like `new`, with every actor reporting protocol steps to `observer`.
    pub fn observed(
        spec: &DeploymentSpec,
        stores: MintStores,
        observer: Arc<dyn StepObserver>,
    ) -> Result<Self, MintError> {
        Self::build(spec, stores, Some(observer))
    }

    fn build(
        spec: &DeploymentSpec,
        stores: MintStores,
        observer: Option<Arc<dyn StepObserver>>,
    ) -> Result<Self, MintError> {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let bits = spec.rsa_bits.unwrap_or(spec.mode.rsa_bits());
        let registry = Arc::new(setup_denominations(
            &spec.denominations,
            bits,
            &spec.mode.public_exponent(),
            &mut rng,
        )?);
        Self::assemble(spec, registry, stores, rng, observer)
    }

    /// Reuses an existing registry, for example to reopen a mint over the
    /// same stores after a restart.
    pub fn with_registry(
        spec: &DeploymentSpec,
        registry: Arc<DenominationRegistry>,
        stores: MintStores,
        rng: ChaCha20Rng,
    ) -> Result<Self, MintError> {
        Self::assemble(spec, registry, stores, rng, None)
    }

    fn assemble(
        spec: &DeploymentSpec,
        registry: Arc<DenominationRegistry>,
        stores: MintStores,
        mut rng: ChaCha20Rng,
        observer: Option<Arc<dyn StepObserver>>,
    ) -> Result<Self, MintError> {
        let group = spec.mode.group();
        let clock = Arc::new(ManualClock::new(spec.start_time));
        let signing_key = group_keygen(&group, &mut rng);
        let config = MintConfig {
            kappa: spec.kappa,
            group: group.clone(),
            signing_key,
            gamma_seed: spec.seed ^ 0x6761_6d6d_61,
        };
        let mut mint = Mint::new(
            config,
            registry.clone(),
            stores,
            clock.clone() as Arc<dyn Clock>,
        )?;
        if let Some(o) = &observer {
            mint = mint.with_observer(o.clone());
        }
        Ok(Deployment {
            clock,
            mint: Arc::new(mint),
            registry,
            group,
            kappa: spec.kappa,
            rng,
            observer,
        })
    }

    pub fn in_memory(spec: &DeploymentSpec) -> Result<Self, MintError> {
        Self::new(spec, MintStores::in_memory(spec.shards))
    }

    /// Registers a bank at the mint with `reserves` and returns its gateway,
    /// which reaches the mint through `mint_api`.
    pub fn add_bank_via(
        &mut self,
        bank_id: &str,
        reserves: Amount,
        mint_api: Arc<dyn MintApi>,
    ) -> Result<Arc<Gateway>, MintError> {
        let key = group_keygen(&self.group, &mut self.rng);
        self.mint.register_bank(bank_id, key.public(), reserves)?;
        let mut gateway = Gateway::new(bank_id, key, self.group.clone(), mint_api);
        if let Some(o) = &self.observer {
            gateway = gateway.with_observer(o.clone());
        }
        Ok(Arc::new(gateway))
    }

    pub fn add_bank(&mut self, bank_id: &str, reserves: Amount) -> Result<Arc<Gateway>, MintError> {
        let mint = self.mint.clone() as Arc<dyn MintApi>;
        self.add_bank_via(bank_id, reserves, mint)
    }

    /// A wallet for an account already opened at `bank_id`.
    pub fn wallet(
        &self,
        customer_id: &str,
        secret: &str,
        bank_id: &str,
        gateway: Arc<dyn GatewayApi>,
        mint_api: Arc<dyn MintApi>,
        seed: u64,
    ) -> Wallet {
        let config = WalletConfig {
            customer_id: customer_id.into(),
            secret: secret.into(),
            bank_id: bank_id.into(),
            kappa: self.kappa,
            attempts: 8,
        };
        let wallet = Wallet::new(
            config,
            self.group.clone(),
            mint_api,
            gateway,
            self.clock.clone() as Arc<dyn Clock>,
            seed,
        );
        match &self.observer {
            Some(o) => wallet.with_observer(o.clone()),
            None => wallet,
        }
    }

    /// Opens a funded customer account at `gateway` and returns its wallet
    /// talking to the mint directly for public data.
    pub fn customer(
        &self,
        gateway: &Arc<Gateway>,
        customer_id: &str,
        balance: Amount,
        seed: u64,
    ) -> Wallet {
        let secret = format!("{customer_id}-secret");
        gateway.open_customer(customer_id, &secret, balance, None);
        self.wallet(
            customer_id,
            &secret,
            gateway.bank_id(),
            gateway.clone() as Arc<dyn GatewayApi>,
            self.mint.clone() as Arc<dyn MintApi>,
            seed,
        )
    }

    pub fn merchant(&self, gateway: &Arc<Gateway>, merchant_id: &str) -> Merchant {
        gateway.open_merchant(merchant_id, None);
        let account = MerchantAccount {
            bank_id: gateway.bank_id().into(),
            merchant_id: merchant_id.into(),
        };
        self.merchant_via(account, gateway.clone() as Arc<dyn GatewayApi>)
    }

    /// A merchant whose bank is reached through `gateway`.
    pub fn merchant_via(&self, account: MerchantAccount, gateway: Arc<dyn GatewayApi>) -> Merchant {
        let merchant = Merchant::new(account, self.group.clone(), gateway);
        match &self.observer {
            Some(o) => merchant.with_observer(o.clone()),
            None => merchant,
        }
    }
}
