//! Golden encodings of every message type at deployment key sizes, captured
//! from a real protocol run. Set `CBDC_UPDATE_FIXTURES=1` to rewrite them.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use cbdc_core::api::{GatewayApi, MintApi};
use cbdc_core::crypto::CryptoMode;
use cbdc_core::deploy::{open_schedule, Deployment, DeploymentSpec};
use cbdc_core::merchant::Merchant;
use cbdc_core::rpc::{serve_gateway, serve_mint, GatewayClient, MintClient};
use cbdc_core::wallet::sign_payment;
use cbdc_core::wire::{decode, encode, MerchantAccount, Message, MsgType, MAX_MESSAGE_LEN};
use cbdc_core::Amount;
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

type Tap = Arc<Mutex<Vec<Vec<u8>>>>;

fn c(minor: u64) -> Amount {
    Amount::from_minor(minor)
}

/// Runs withdrawal, payment, a double spend, a full link page, audit and a
/// revocation refund through the byte-level clients, returning the largest
/// observed encoding of each message type.
fn capture() -> BTreeMap<u8, Vec<u8>> {
    let spec = DeploymentSpec {
        mode: CryptoMode::Full,
        rsa_bits: None,
        denominations: open_schedule(&[c(100), c(5)], Amount::ZERO, 1_000, 1_000_000),
        kappa: 3,
        shards: 4,
        seed: 2048,
        start_time: 1_000,
    };
    let mut d = Deployment::in_memory(&spec).unwrap();
    let tap: Tap = Arc::default();

    let (mint, t) = (d.mint.clone(), tap.clone());
    let mint_api: Arc<dyn MintApi> = Arc::new(MintClient::new(move |req: Vec<u8>| {
        let resp = serve_mint(&*mint, &req);
        t.lock().extend([req, resp.clone()]);
        Some(resp)
    }));
    let bank = d
        .add_bank_via("bank-a", c(1_000_000), mint_api.clone())
        .unwrap();
    let (gw, t) = (bank.clone(), tap.clone());
    let gw_api: Arc<dyn GatewayApi> = Arc::new(GatewayClient::new(move |req: Vec<u8>| {
        let resp = serve_gateway(&*gw, &req);
        t.lock().extend([req, resp.clone()]);
        Some(resp)
    }));
    bank.open_customer("alice", "alice-secret", c(10_000), None);
    bank.open_merchant("shop", None);
    let mut wallet = d.wallet(
        "alice",
        "alice-secret",
        "bank-a",
        gw_api.clone(),
        mint_api.clone(),
        7,
    );
    let keys = d.mint.keys().unwrap();
    let small = keys
        .denominations
        .iter()
        .find(|p| p.value == c(5))
        .unwrap()
        .denom_id;

    let coins = wallet.withdraw(c(200)).unwrap();
    let account = MerchantAccount {
        bank_id: "bank-a".into(),
        merchant_id: "shop".into(),
    };
    let shop = Merchant::new(account, d.group.clone(), gw_api);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let k = shop.create_contract(c(30), b"coffee", &mut rng).unwrap();
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    assert!(shop.settle(&k, &parts, &keys.mint_pub).delivered);

    let paid = wallet.coin(&parts[0].coin_pub).unwrap().clone();
    let k2 = shop.create_contract(c(100), b"again", &mut rng).unwrap();
    let replay = vec![sign_payment(&paid, &k2, c(100), &d.group, &mut rng)];
    assert!(!shop.settle(&k2, &replay, &keys.mint_pub).delivered);

    let other = coins
        .iter()
        .find(|x| x.coin_pub != paid.coin_pub)
        .unwrap()
        .coin_pub
        .clone();
    for _ in 0..17 {
        wallet.refresh(&other, &small).unwrap();
    }
    assert_eq!(wallet.link_coins(&other).unwrap().len(), 17);
    mint_api.audit(&small).unwrap();

    let notice = d.mint.revoke_denomination(&small).unwrap();
    let report = wallet.recover_revoked(&notice);
    assert!(report.coins_refunded > 0 && report.failures.is_empty());

    let mut seen: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    let mut all = tap.lock().clone();
    all.push(encode(&Message::RevocationNotice(notice)).unwrap());
    for bytes in all {
        let slot = seen.entry(bytes[1]).or_default();
        if bytes.len() > slot.len() {
            *slot = bytes;
        }
    }
    seen
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire")
}

fn fixture_path(code: u8) -> PathBuf {
    let name = MsgType::from_code(code).unwrap().name();
    fixture_dir().join(format!("{code:02}_{name}.hex"))
}

#[test]
fn every_message_type_fits_and_matches_its_golden_encoding() {
    let captured = capture();
    assert_eq!(
        captured.keys().copied().collect::<Vec<_>>(),
        (1..=21).collect::<Vec<u8>>()
    );
    let link = decode(&captured[&(MsgType::LinkResp as u8)]).unwrap();
    let Message::LinkResp(page) = link else {
        panic!()
    };
    assert_eq!(page.entries.len(), 16);
    assert_eq!(page.next_offset, Some(16));

    let update = std::env::var_os("CBDC_UPDATE_FIXTURES").is_some();
    if update {
        std::fs::create_dir_all(fixture_dir()).unwrap();
    }
    for (code, bytes) in &captured {
        assert!(
            bytes.len() <= MAX_MESSAGE_LEN,
            "type {code} is {} bytes",
            bytes.len()
        );
        assert_eq!(&encode(&decode(bytes).unwrap()).unwrap(), bytes);
        let path = fixture_path(*code);
        if update {
            std::fs::write(&path, hex::encode(bytes) + "\n").unwrap();
        }
        let golden = hex::decode(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
        assert_eq!(&golden, bytes, "encoding of type {code} changed");
    }
}

#[test]
fn golden_files_decode_and_reencode_identically() {
    for code in 1..=21u8 {
        let golden =
            hex::decode(std::fs::read_to_string(fixture_path(code)).unwrap().trim()).unwrap();
        assert!(golden.len() <= MAX_MESSAGE_LEN);
        let msg = decode(&golden).unwrap();
        assert_eq!(msg.msg_type() as u8, code);
        assert_eq!(encode(&msg).unwrap(), golden);
    }
}
