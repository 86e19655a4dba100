mod common;

use std::sync::Arc;

use cbdc_core::api::{GatewayApi, MintApi};
use cbdc_core::gateway::GatewayError;
use cbdc_core::mint::MintError;
use cbdc_core::rpc::{serve_gateway, serve_mint, GatewayClient, MintClient};
use cbdc_core::wire::{decode, encode, Empty, LinkRequest, Message, Uint};
use common::{c, world};

#[test]
fn wallet_and_merchant_work_end_to_end_over_encoded_messages() {
    let mut w = world(&[100, 500], 501);
    let mint = w.d.mint.clone();
    let mint_api: Arc<dyn MintApi> = Arc::new(MintClient::new(move |req: Vec<u8>| {
        Some(serve_mint(&*mint, &req))
    }));
    let gw =
        w.d.add_bank_via("bank-r", c(1_000_000), mint_api.clone())
            .unwrap();
    let served = gw.clone();
    let gw_api: Arc<dyn GatewayApi> = Arc::new(GatewayClient::new(move |req: Vec<u8>| {
        Some(serve_gateway(&*served, &req))
    }));
    gw.open_customer("rita", "pw", c(5_000), None);
    gw.open_merchant("shop", None);
    let mut wallet = w.d.wallet(
        "rita",
        "pw",
        "bank-r",
        gw_api.clone(),
        mint_api.clone(),
        502,
    );
    wallet.withdraw(c(600)).unwrap();
    let shop = cbdc_core::merchant::Merchant::new(
        cbdc_core::wire::MerchantAccount {
            bank_id: "bank-r".into(),
            merchant_id: "shop".into(),
        },
        w.d.group.clone(),
        gw_api,
    );
    let k = w.contract(&shop, 250);
    let plan = wallet.plan_payment(&k).unwrap();
    let parts = wallet.pay(&k, &plan).unwrap();
    assert!(
        shop.settle(&k, &parts, &mint_api.keys().unwrap().mint_pub)
            .delivered
    );
    assert_eq!(gw.merchant("shop").unwrap().balance, c(250));
    assert_eq!(mint_api.deposit(&parts[0]).unwrap().amount, parts[0].amount);
}

#[test]
fn errors_cross_the_wire_intact() {
    let w = world(&[100], 503);
    let mint = w.d.mint.clone();
    let client = MintClient::new(move |req: Vec<u8>| Some(serve_mint(&*mint, &req)));
    let unknown = LinkRequest {
        coin_pub: Uint(vec![1; 4]),
        offset: 0,
    };
    assert_eq!(client.link(&unknown), w.d.mint.link(&unknown));
    assert_eq!(
        client.audit(&cbdc_core::wire::DenomId([9; 32])),
        Err(MintError::UnknownDenomination)
    );
}

#[test]
fn lost_messages_surface_as_unavailable() {
    let mint = MintClient::new(|_: Vec<u8>| None);
    assert!(matches!(mint.keys(), Err(MintError::Unavailable(_))));
    let gw = GatewayClient::new(|_: Vec<u8>| None);
    let req = cbdc_core::wire::CustomerRefundRequest {
        customer_id: "x".into(),
        secret: "y".into(),
        refund: cbdc_core::wire::RefundRequest {
            coin_pub: Uint(vec![]),
            denom_id: cbdc_core::wire::DenomId([0; 32]),
            denom_sig: Uint(vec![]),
            blinding: Uint(vec![]),
            bank_id: "b".into(),
        },
    };
    assert!(matches!(
        gw.refund_for_customer(&req),
        Err(GatewayError::Unavailable(_))
    ));
}

#[test]
fn services_reject_garbage_and_foreign_requests() {
    let w = world(&[100], 505);
    for reply in [
        serve_mint(&*w.d.mint, &[1, 2, 3]),
        serve_gateway(&*w.bank, &[0xff; 9]),
    ] {
        assert!(matches!(decode(&reply).unwrap(), Message::Error(_)));
    }
    let keys_req = encode(&Message::KeysReq(Empty)).unwrap();
    let Message::Error(body) = decode(&serve_gateway(&*w.bank, &keys_req)).unwrap() else {
        panic!()
    };
    assert!(matches!(
        MintError::from_body(&body),
        Some(MintError::Malformed(_))
    ));
    let bad_reply = MintClient::new(move |_: Vec<u8>| Some(keys_req.clone()));
    assert!(matches!(bad_reply.keys(), Err(MintError::Malformed(_))));
}
