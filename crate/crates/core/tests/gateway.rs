mod common;

use std::sync::Arc;

use cbdc_core::api::MintApi;
use cbdc_core::crypto::{coin_sig_verify, CoinSignature};
use cbdc_core::gateway::{Gateway, GatewayError};
use cbdc_core::mint::MintError;
use cbdc_core::wallet::{sign_payment, WalletError};
use cbdc_core::wire::{DepositForwardRequest, MerchantAccount, WithdrawRequest};
use common::{c, world, FlakyMint, World};

fn limited_customer(
    w: &World,
    gateway: &Arc<Gateway>,
    balance: u64,
    limit: u64,
    seed: u64,
) -> cbdc_core::wallet::Wallet {
    gateway.open_customer("bob", "pw", c(balance), Some(c(limit)));
    w.d.wallet(
        "bob",
        "pw",
        gateway.bank_id(),
        gateway.clone(),
        w.d.mint.clone(),
        seed,
    )
}

#[test]
fn daily_limit_and_rollover() {
    let w = world(&[100], 101);
    let mut wallet = limited_customer(&w, &w.bank, 1000, 500, 102);
    for _ in 0..5 {
        w.coin(&mut wallet, 100);
    }
    let err = wallet.withdraw_denomination(&w.denom(100)).unwrap_err();
    assert_eq!(err, WalletError::Gateway(GatewayError::DailyLimitExceeded));
    assert_eq!(wallet.coins().len(), 5);
    let acct = w.bank.customer("bob").unwrap();
    assert_eq!((acct.balance, acct.withdrawn_today), (c(500), c(500)));

    w.bank.day_rollover();
    w.bank.day_rollover();
    assert_eq!(w.bank.customer("bob").unwrap().withdrawn_today, c(0));
    w.coin(&mut wallet, 100);
}

#[test]
fn rollover_without_accounts_is_a_no_op() {
    let w = world(&[100], 103);
    w.bank.day_rollover();
    assert_eq!(w.bank.totals(), Default::default());
}

#[test]
fn insufficient_funds_and_bad_credentials() {
    let mut w = world(&[100], 105);
    let flaky = Arc::new(FlakyMint::new(w.d.mint.clone(), 0, false));
    let gw =
        w.d.add_bank_via("bank-z", c(100_000), flaky.clone())
            .unwrap();
    gw.open_customer("carol", "right", c(50), None);
    let mut poor = w.d.wallet(
        "carol",
        "right",
        "bank-z",
        gw.clone(),
        w.d.mint.clone(),
        106,
    );
    assert_eq!(
        poor.withdraw_denomination(&w.denom(100)).unwrap_err(),
        WalletError::Gateway(GatewayError::InsufficientFunds)
    );

    let mut thief = w.d.wallet(
        "carol",
        "wrong",
        "bank-z",
        gw.clone(),
        w.d.mint.clone(),
        107,
    );
    let reserves = w.d.mint.bank_balance("bank-z");
    assert_eq!(
        thief.withdraw_denomination(&w.denom(100)).unwrap_err(),
        WalletError::Gateway(GatewayError::AuthFailed)
    );
    assert_eq!(w.d.mint.bank_balance("bank-z"), reserves);
    assert_eq!(gw.totals().customer_debits, c(0));
}

#[test]
fn mint_rejection_rolls_back_the_debit() {
    let mut w = world(&[100], 109);
    let mut flaky = FlakyMint::new(w.d.mint.clone(), 0, false);
    flaky.reject_with = Some(MintError::DenominationRevoked);
    let gw =
        w.d.add_bank_via("bank-z", c(100_000), Arc::new(flaky))
            .unwrap();
    gw.open_customer("dave", "pw", c(1000), Some(c(1000)));
    let mut wallet =
        w.d.wallet("dave", "pw", "bank-z", gw.clone(), w.d.mint.clone(), 110);
    let err = wallet.withdraw_denomination(&w.denom(100)).unwrap_err();
    assert_eq!(
        err,
        WalletError::Gateway(GatewayError::MintRejected(MintError::DenominationRevoked))
    );
    let acct = gw.customer("dave").unwrap();
    assert_eq!((acct.balance, acct.withdrawn_today), (c(1000), c(0)));
    let t = gw.totals();
    assert_eq!(
        (t.customer_debits, t.rollbacks, t.relayed_value),
        (c(100), c(100), c(0))
    );
    assert!(gw.withdrawal_log().is_empty());
}

#[test]
fn lost_mint_replies_are_retried_without_double_debit() {
    let mut w = world(&[100], 111);
    let flaky = Arc::new(FlakyMint::new(w.d.mint.clone(), 2, true));
    let gw = w.d.add_bank_via("bank-z", c(100_000), flaky).unwrap();
    gw.open_customer("erin", "pw", c(1000), None);
    let mut wallet =
        w.d.wallet("erin", "pw", "bank-z", gw.clone(), w.d.mint.clone(), 112);
    w.coin(&mut wallet, 100);
    assert_eq!(w.d.mint.bank_balance("bank-z"), Some(c(99_900)));
    assert_eq!(gw.customer("erin").unwrap().balance, c(900));
}

struct RecordingMint {
    inner: Arc<dyn MintApi>,
    seen: parking_lot::Mutex<Vec<WithdrawRequest>>,
}

impl MintApi for RecordingMint {
    fn keys(&self) -> Result<cbdc_core::wire::KeysDocument, MintError> {
        self.inner.keys()
    }
    fn withdraw(
        &self,
        req: &WithdrawRequest,
    ) -> Result<cbdc_core::wire::WithdrawResponse, MintError> {
        self.seen.lock().push(req.clone());
        self.inner.withdraw(req)
    }
    fn deposit(
        &self,
        req: &cbdc_core::wire::DepositRequest,
    ) -> Result<cbdc_core::wire::DepositConfirmation, MintError> {
        self.inner.deposit(req)
    }
    fn refresh_commit(
        &self,
        req: &cbdc_core::wire::RefreshCommitRequest,
    ) -> Result<cbdc_core::wire::RefreshChallenge, MintError> {
        self.inner.refresh_commit(req)
    }
    fn refresh_reveal(
        &self,
        req: &cbdc_core::wire::RefreshRevealRequest,
    ) -> Result<cbdc_core::wire::RefreshRevealResponse, MintError> {
        self.inner.refresh_reveal(req)
    }
    fn link(
        &self,
        req: &cbdc_core::wire::LinkRequest,
    ) -> Result<cbdc_core::wire::LinkResponse, MintError> {
        self.inner.link(req)
    }
    fn refund(
        &self,
        req: &cbdc_core::wire::RefundRequest,
    ) -> Result<cbdc_core::wire::RefundResponse, MintError> {
        self.inner.refund(req)
    }
    fn audit(
        &self,
        denom_id: &cbdc_core::wire::DenomId,
    ) -> Result<cbdc_core::wire::AuditReport, MintError> {
        self.inner.audit(denom_id)
    }
}

#[test]
fn countersignatures_verify_under_the_registered_key() {
    let mut w = world(&[100, 500], 113);
    let recorder = Arc::new(RecordingMint {
        inner: w.d.mint.clone(),
        seen: Default::default(),
    });
    let gw =
        w.d.add_bank_via("bank-z", c(100_000), recorder.clone())
            .unwrap();
    gw.open_customer("hal", "pw", c(10_000), None);
    let mut wallet =
        w.d.wallet("hal", "pw", "bank-z", gw.clone(), w.d.mint.clone(), 114);
    wallet.withdraw(c(1300)).unwrap();
    let seen = recorder.seen.lock();
    assert_eq!(seen.len(), 5);
    for req in seen.iter() {
        let msg = WithdrawRequest::auth_message(&req.bank_id, &req.denom_id, &req.blinded);
        let sig = CoinSignature::from_bytes(req.countersig.as_bytes(), &w.d.group).unwrap();
        assert!(coin_sig_verify(gw.public_key(), &msg, &sig, &w.d.group));
        assert!(!coin_sig_verify(
            w.bank.public_key(),
            &msg,
            &sig,
            &w.d.group
        ));
    }
}

#[test]
fn withdrawal_log_holds_only_blinded_values() {
    let mut w = world(&[100, 500], 115);
    let mut wallet = w.wallet("alice", 10_000, 116);
    wallet.withdraw(c(700)).unwrap();
    let shop = w.merchant("shop");
    let k = w.contract(&shop, 600);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    assert!(
        shop.settle(&k, &parts, &w.d.mint.keys().unwrap().mint_pub)
            .delivered
    );
    let log = w.bank.withdrawal_log();
    assert_eq!(log.len(), wallet.coins().len());
    for coin in wallet.coins() {
        for entry in &log {
            assert_ne!(entry.blinded.as_bytes(), coin.coin_pub.as_bytes());
            assert!(!entry
                .blinded
                .as_bytes()
                .windows(coin.coin_pub.len())
                .any(|win| win == coin.coin_pub.as_bytes()));
        }
    }
}

#[test]
fn customer_funds_conservation() {
    let mut w = world(&[100], 117);
    let mut flaky = FlakyMint::new(w.d.mint.clone(), 0, false);
    flaky.reject_with = None;
    let gw = w.d.add_bank_via("bank-z", c(250), Arc::new(flaky)).unwrap();
    gw.open_customer("fay", "pw", c(1000), None);
    let mut wallet =
        w.d.wallet("fay", "pw", "bank-z", gw.clone(), w.d.mint.clone(), 118);
    let mut ok = 0;
    for _ in 0..4 {
        if wallet.withdraw_denomination(&w.denom(100)).is_ok() {
            ok += 1;
        }
    }
    assert_eq!(ok, 2);
    let t = gw.totals();
    assert_eq!(
        t.customer_debits.checked_sub(t.rollbacks).unwrap(),
        t.relayed_value
    );
    assert_eq!(t.relayed_value, c(200));
}

#[test]
fn deposits_credit_merchant_once_and_check_the_account() {
    let mut w = world(&[100], 119);
    let mut wallet = w.wallet("alice", 1000, 120);
    let coin = w.coin(&mut wallet, 100);
    let shop = w.merchant("shop");
    let k = w.contract(&shop, 100);
    let group = w.d.group.clone();
    let dep = sign_payment(&coin, &k, c(100), &group, &mut w.rng);
    let fwd = DepositForwardRequest {
        merchant_id: "shop".into(),
        deposit: dep.clone(),
    };
    let first = w.bank.forward_deposit(&fwd).unwrap();
    assert_eq!(w.bank.forward_deposit(&fwd).unwrap(), first);
    assert_eq!(w.bank.merchant("shop").unwrap().balance, c(100));

    let mut elsewhere = dep.clone();
    elsewhere.merchant = MerchantAccount {
        bank_id: "bank-q".into(),
        merchant_id: "shop".into(),
    };
    let before = w.d.mint.counters(&coin.denom_id);
    let r = w.bank.forward_deposit(&DepositForwardRequest {
        merchant_id: "shop".into(),
        deposit: elsewhere,
    });
    assert_eq!(r, Err(GatewayError::AccountMismatch));
    assert_eq!(w.d.mint.counters(&coin.denom_id), before);

    let r = w.bank.forward_deposit(&DepositForwardRequest {
        merchant_id: "ghost".into(),
        deposit: dep,
    });
    assert_eq!(r, Err(GatewayError::UnknownMerchant));
}

#[test]
fn double_spent_deposit_is_not_credited() {
    let mut w = world(&[100], 121);
    let mut wallet = w.wallet("alice", 1000, 122);
    let coin = w.coin(&mut wallet, 100);
    let a = w.merchant("a");
    let b = w.merchant("b");
    let group = w.d.group.clone();
    let ka = w.contract(&a, 100);
    let kb = w.contract(&b, 100);
    w.bank
        .forward_deposit(&DepositForwardRequest {
            merchant_id: "a".into(),
            deposit: sign_payment(&coin, &ka, c(100), &group, &mut w.rng),
        })
        .unwrap();
    let r = w.bank.forward_deposit(&DepositForwardRequest {
        merchant_id: "b".into(),
        deposit: sign_payment(&coin, &kb, c(100), &group, &mut w.rng),
    });
    assert_eq!(r, Err(GatewayError::MintRejected(MintError::DoubleSpend)));
    assert_eq!(w.bank.merchant("b").unwrap().balance, c(0));
}

#[test]
fn merchant_inbound_limit_applies_per_contract() {
    let mut w = world(&[100], 123);
    let mut wallet = w.wallet("alice", 1000, 124);
    w.bank.open_merchant("kiosk", Some(c(150)));
    let kiosk = cbdc_core::merchant::Merchant::new(
        MerchantAccount {
            bank_id: "bank-a".into(),
            merchant_id: "kiosk".into(),
        },
        w.d.group.clone(),
        w.bank.clone(),
    );
    let coins: Vec<_> = (0..2).map(|_| w.coin(&mut wallet, 100)).collect();
    let k = w.contract(&kiosk, 200);
    let group = w.d.group.clone();
    let parts: Vec<_> = coins
        .iter()
        .map(|coin| sign_payment(coin, &k, c(100), &group, &mut w.rng))
        .collect();
    assert!(w
        .bank
        .forward_deposit(&DepositForwardRequest {
            merchant_id: "kiosk".into(),
            deposit: parts[0].clone()
        })
        .is_ok());
    let r = w.bank.forward_deposit(&DepositForwardRequest {
        merchant_id: "kiosk".into(),
        deposit: parts[1].clone(),
    });
    assert_eq!(r, Err(GatewayError::MerchantLimitExceeded));
    assert_eq!(
        w.d.mint.counters(&coins[1].denom_id).deposited_value,
        c(100)
    );
}

#[test]
fn gateway_retries_give_up_as_unavailable() {
    let mut w = world(&[100], 125);
    let flaky = Arc::new(FlakyMint::new(
        w.d.mint.clone() as Arc<dyn MintApi>,
        100,
        false,
    ));
    let gw = w.d.add_bank_via("bank-z", c(100_000), flaky).unwrap();
    gw.open_customer("gus", "pw", c(1000), None);
    let mut wallet =
        w.d.wallet("gus", "pw", "bank-z", gw.clone(), w.d.mint.clone(), 126);
    let err = wallet.withdraw_denomination(&w.denom(100)).unwrap_err();
    assert!(matches!(
        err,
        WalletError::Gateway(GatewayError::Unavailable(_))
    ));
    assert_eq!(gw.customer("gus").unwrap().balance, c(1000));
    assert_eq!(wallet.pending_withdrawals(), 1);
}
