mod common;

use std::sync::atomic::AtomicU32;
use std::sync::Arc;

use cbdc_core::gateway::GatewayError;
use cbdc_core::merchant::{Contract, Merchant, MerchantError, PartStatus};
use cbdc_core::mint::MintError;
use cbdc_core::wallet::sign_payment;
use cbdc_core::wire::MerchantAccount;
use common::{c, world, FaultyGateway};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn contracts_hash_their_fields_with_a_fresh_nonce() {
    let mut rng = ChaCha20Rng::seed_from_u64(301);
    let acct = MerchantAccount {
        bank_id: "bank-a".into(),
        merchant_id: "shop".into(),
    };
    let a = Contract::new(acct.clone(), c(100), b"tea", &mut rng).unwrap();
    let b = Contract::new(acct.clone(), c(100), b"tea", &mut rng).unwrap();
    assert_ne!(a.nonce, b.nonce);
    assert_ne!(a.contract_hash, b.contract_hash);
    assert!(a.hash_matches());
    let mut edited = a.clone();
    edited.amount = c(99);
    assert!(!edited.hash_matches());
    assert_eq!(
        Contract::new(acct, c(0), b"tea", &mut rng),
        Err(MerchantError::InvalidAmount)
    );
}

#[test]
fn validation_checks_signatures_and_total() {
    let mut w = world(&[100, 200], 303);
    let mut wallet = w.wallet("alice", 10_000, 304);
    wallet.withdraw(c(300)).unwrap();
    let shop = w.merchant("shop");
    let keys = w.d.mint.keys();

    let k = w.contract(&shop, 100);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    assert_eq!(shop.validate_payment(&k, &parts, &keys).unwrap(), parts);

    let other = w.contract(&shop, 100);
    assert_eq!(
        shop.validate_payment(&other, &parts, &keys),
        Err(MerchantError::BadCoinSignature)
    );

    let big = w.contract(&shop, 150);
    assert_eq!(
        shop.validate_payment(&big, &parts, &keys),
        Err(MerchantError::BadCoinSignature)
    );
    let coin = wallet
        .coins()
        .iter()
        .find(|x| x.local_residual == c(100))
        .unwrap()
        .clone();
    let short = vec![sign_payment(&coin, &big, c(100), &w.d.group, &mut w.rng)];
    assert_eq!(
        shop.validate_payment(&big, &short, &keys),
        Err(MerchantError::AmountMismatch)
    );

    let mut forged = short.clone();
    forged[0].denom_sig.0[2] ^= 4;
    assert_eq!(
        shop.validate_payment(&big, &forged, &keys),
        Err(MerchantError::BadDenomSignature)
    );
}

#[test]
fn honest_customer_gets_delivery() {
    let mut w = world(&[100, 200], 305);
    let mut wallet = w.wallet("alice", 10_000, 306);
    wallet.withdraw(c(300)).unwrap();
    let shop = w.merchant("shop");
    let k = w.contract(&shop, 300);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = shop
        .validate_payment(&k, &wallet.pay(&k, &plan).unwrap(), &w.d.mint.keys())
        .unwrap();
    let result = shop.settle(&k, &parts, &w.d.mint.keys().mint_pub);
    assert!(result.delivered);
    assert!(result
        .parts
        .iter()
        .all(|p| matches!(p.status, PartStatus::Confirmed(_))));
    assert_eq!(w.bank.merchant("shop").unwrap().balance, c(300));
}

#[test]
fn double_spender_is_named_and_nothing_delivered() {
    let mut w = world(&[100], 307);
    let mut wallet = w.wallet("mallory", 10_000, 308);
    let coin = w.coin(&mut wallet, 100);
    let first = w.merchant("first");
    let second = w.merchant("second");
    let k1 = w.contract(&first, 100);
    let k2 = w.contract(&second, 100);
    let p1 = vec![sign_payment(&coin, &k1, c(100), &w.d.group, &mut w.rng)];
    let p2 = vec![sign_payment(&coin, &k2, c(100), &w.d.group, &mut w.rng)];
    let mint_pub = w.d.mint.keys().mint_pub;
    assert!(first.settle(&k1, &p1, &mint_pub).delivered);
    let r = second.settle(&k2, &p2, &mint_pub);
    assert!(!r.delivered);
    assert_eq!(r.double_spent(), vec![&coin.coin_pub]);
    assert_eq!(w.bank.merchant("second").unwrap().balance, c(0));
}

#[test]
fn unreachable_gateway_settles_exactly_once_on_resubmission() {
    let mut w = world(&[100], 309);
    let mut wallet = w.wallet("alice", 10_000, 310);
    wallet.withdraw(c(100)).unwrap();
    w.bank.open_merchant("shop", None);
    let faulty = Arc::new(FaultyGateway {
        inner: w.bank.clone(),
        outages: AtomicU32::new(5),
        tamper: false,
    });
    let acct = MerchantAccount {
        bank_id: "bank-a".into(),
        merchant_id: "shop".into(),
    };
    let shop = Merchant::new(acct, w.d.group.clone(), faulty).with_attempts(3);
    let k = w.contract(&shop, 100);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    let mint_pub = w.d.mint.keys().mint_pub;

    let r = shop.settle(&k, &parts, &mint_pub);
    assert!(!r.delivered && r.has_pending());
    assert!(matches!(
        r.parts[0].status,
        PartStatus::Pending(GatewayError::Unavailable(_))
    ));
    let r = shop.settle(&k, &parts, &mint_pub);
    assert!(r.delivered);
    assert_eq!(w.bank.merchant("shop").unwrap().balance, c(100));
    assert_eq!(
        w.d.mint.counters(&parts[0].denom_id).deposited_value,
        c(100)
    );
}

#[test]
fn confirmation_under_the_wrong_mint_key_is_not_delivery() {
    let mut w = world(&[100], 311);
    let mut wallet = w.wallet("alice", 10_000, 312);
    wallet.withdraw(c(100)).unwrap();
    let shop = w.merchant("shop");
    let k = w.contract(&shop, 100);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    let imposter = cbdc_core::wire::Uint(w.d.group.encode_element(&w.d.group.g.clone()));
    let r = shop.settle(&k, &parts, &imposter);
    assert!(!r.delivered);
    assert!(matches!(
        r.parts[0].status,
        PartStatus::Rejected(GatewayError::MintRejected(MintError::Malformed(_)))
    ));
}

#[test]
fn every_merchant_credit_traces_to_a_mint_entry() {
    let mut w = world(&[100, 500], 313);
    let mut wallet = w.wallet("alice", 100_000, 314);
    wallet.withdraw(c(2000)).unwrap();
    let shop = w.merchant("shop");
    let mint_pub = w.d.mint.keys().mint_pub;
    let mut confirmed = Vec::new();
    for amount in [120, 430, 50, 700] {
        let k = w.contract(&shop, amount);
        let plan = wallet.plan_payment(&k).unwrap();
        let parts = wallet.pay(&k, &plan).unwrap();
        let r = shop.settle(&k, &parts, &mint_pub);
        assert!(r.delivered);
        confirmed.extend(r.parts);
    }
    let mut traced = cbdc_core::Amount::ZERO;
    for part in &confirmed {
        let PartStatus::Confirmed(conf) = &part.status else {
            panic!()
        };
        let v =
            w.d.mint
                .coin_store()
                .get(part.coin_pub.as_bytes())
                .unwrap()
                .unwrap();
        let rec =
            <cbdc_core::mint::SpentRecord as cbdc_core::wire::Body>::from_bytes(&v.value).unwrap();
        assert!(rec.entries.iter().any(|e| matches!(e,
            cbdc_core::mint::SpendEntry::Deposit { contract_hash, amount, .. } if *contract_hash == conf.contract_hash && *amount == conf.amount)));
        traced = traced.checked_add(conf.amount).unwrap();
    }
    assert_eq!(traced, w.bank.merchant("shop").unwrap().balance);
}
