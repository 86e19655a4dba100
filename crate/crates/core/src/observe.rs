//! Hooks that report each numbered step of the withdrawal and payment flows.

use std::sync::Arc;

use parking_lot::Mutex;

/// Withdrawal steps are `W1`..`W9`, payment steps `P1`..`P9`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolStep {
    /// Customer authenticates at the commercial bank.
    W1Authenticate,
    /// Wallet creates a coin key, hashes and blinds it.
    W2PrepareCoin,
    /// Wallet sends the blinded coin to the bank.
    W3SendBlinded,
    /// Bank debits the customer's account.
    W4DebitCustomer,
    /// Bank countersigns and forwards to the mint.
    W5Countersign,
    /// Mint debits the bank's reserves and blind-signs.
    W6DebitReserveAndSign,
    /// Mint returns the blind signature.
    W7ReturnSignature,
    /// Bank relays the blind signature to the wallet.
    W8Relay,
    /// Wallet unblinds and stores the coin.
    W9Unblind,
    /// Wallet signs the contract with one or more coins.
    P1SignContract,
    /// Merchant validates the coins and signatures.
    P2Validate,
    /// Merchant's bank confirms the merchant and forwards.
    P3Forward,
    /// Mint verifies signatures and checks the spent list.
    P4CheckSpent,
    /// Mint records the spend and credits the bank.
    P5RecordAndCredit,
    /// Mint confirms the deposit.
    P6Confirm,
    /// Bank credits the merchant's account.
    P7CreditMerchant,
    /// Bank informs the merchant.
    P8Inform,
    /// Merchant delivers.
    P9Deliver,
}

impl ProtocolStep {
    pub fn label(self) -> &'static str {
        use ProtocolStep::*;
        match self {
            W1Authenticate => "withdraw.1",
            W2PrepareCoin => "withdraw.2",
            W3SendBlinded => "withdraw.3",
            W4DebitCustomer => "withdraw.4",
            W5Countersign => "withdraw.5",
            W6DebitReserveAndSign => "withdraw.6",
            W7ReturnSignature => "withdraw.7",
            W8Relay => "withdraw.8",
            W9Unblind => "withdraw.9",
            P1SignContract => "pay.1",
            P2Validate => "pay.2",
            P3Forward => "pay.3",
            P4CheckSpent => "pay.4",
            P5RecordAndCredit => "pay.5",
            P6Confirm => "pay.6",
            P7CreditMerchant => "pay.7",
            P8Inform => "pay.8",
            P9Deliver => "pay.9",
        }
    }
}

pub trait StepObserver: Send + Sync {
    fn step(&self, actor: &str, step: ProtocolStep);
}

#[derive(Debug, Default)]
pub struct NoopObserver;

impl StepObserver for NoopObserver {
    fn step(&self, _: &str, _: ProtocolStep) {}
}

pub fn noop() -> Arc<dyn StepObserver> {
    Arc::new(NoopObserver)
}

/// Collects steps in arrival order.
#[derive(Debug, Default)]
pub struct RecordingObserver {
    steps: Mutex<Vec<(String, ProtocolStep)>>,
}

impl RecordingObserver {
    pub fn take(&self) -> Vec<(String, ProtocolStep)> {
        std::mem::take(&mut *self.steps.lock())
    }
}

impl StepObserver for RecordingObserver {
    fn step(&self, actor: &str, step: ProtocolStep) {
        self.steps.lock().push((actor.to_string(), step));
    }
}
