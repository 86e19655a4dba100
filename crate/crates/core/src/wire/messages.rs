//! Protocol message bodies. Field order here is the wire order.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::codec::{Reader, Uint, Writer};
use super::WireError;
use crate::amount::Amount;
use crate::clock::Timestamp;

pub type Hash32 = [u8; 32];

pub fn sha256(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Hash of a denomination's canonical public key encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DenomId(#[serde(with = "hex_32")] pub Hash32);

impl fmt::Debug for DenomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenomId({})", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for DenomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

mod hex_32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

pub trait Body: Sized {
    fn write(&self, w: &mut Writer);
    fn read(r: &mut Reader<'_>) -> Result<Self, WireError>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let v = Self::read(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

fn write_list<T: Body>(w: &mut Writer, items: &[T]) {
    w.count(items.len());
    for item in items {
        item.write(w);
    }
}

fn read_list<T: Body>(r: &mut Reader<'_>) -> Result<Vec<T>, WireError> {
    let n = r.count()?;
    (0..n).map(|_| T::read(r)).collect()
}

/// The merchant as named in a contract: the bank holding the account and the
/// account holder at that bank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MerchantAccount {
    pub bank_id: String,
    pub merchant_id: String,
}

impl Body for MerchantAccount {
    fn write(&self, w: &mut Writer) {
        w.str(&self.bank_id).str(&self.merchant_id);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(MerchantAccount {
            bank_id: r.str()?,
            merchant_id: r.str()?,
        })
    }
}

/// Bytes a coin signs to pay `amount` toward a contract.
pub fn payment_message(
    contract_hash: &Hash32,
    merchant: &MerchantAccount,
    amount: Amount,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.fixed(b"pay").fixed(contract_hash);
    merchant.write(&mut w);
    w.amount(amount);
    w.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedDenomination {
    pub denom_id: DenomId,
    pub value: Amount,
    pub e: Uint,
    pub n: Uint,
    pub withdraw_start: Timestamp,
    pub withdraw_end: Timestamp,
    pub deposit_end: Timestamp,
    pub legal_end: Timestamp,
    pub refresh_fee: Amount,
    pub revoked: bool,
}

impl Body for PublishedDenomination {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0)
            .amount(self.value)
            .uint(&self.e)
            .uint(&self.n)
            .u64(self.withdraw_start)
            .u64(self.withdraw_end)
            .u64(self.deposit_end)
            .u64(self.legal_end)
            .amount(self.refresh_fee)
            .bool(self.revoked);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(PublishedDenomination {
            denom_id: DenomId(r.hash()?),
            value: r.amount()?,
            e: r.uint()?,
            n: r.uint()?,
            withdraw_start: r.u64()?,
            withdraw_end: r.u64()?,
            deposit_end: r.u64()?,
            legal_end: r.u64()?,
            refresh_fee: r.amount()?,
            revoked: r.bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeysDocument {
    /// Hash of the textual registry document this view was built from.
    pub version: Hash32,
    /// Key the mint signs deposit confirmations with.
    pub mint_pub: Uint,
    pub denominations: Vec<PublishedDenomination>,
}

impl Body for KeysDocument {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.version).uint(&self.mint_pub);
        write_list(w, &self.denominations);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(KeysDocument {
            version: r.hash()?,
            mint_pub: r.uint()?,
            denominations: read_list(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WithdrawRequest {
    pub bank_id: String,
    pub denom_id: DenomId,
    pub blinded: Uint,
    /// Bank signature over [`WithdrawRequest::auth_message`].
    pub countersig: Uint,
}

impl WithdrawRequest {
    pub fn auth_message(bank_id: &str, denom_id: &DenomId, blinded: &Uint) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(b"withdraw")
            .str(bank_id)
            .fixed(&denom_id.0)
            .uint(blinded);
        w.finish()
    }

    /// Idempotency key: the hash of the blinded coin.
    pub fn blinded_hash(&self) -> Hash32 {
        sha256(&[self.blinded.as_bytes()])
    }
}

impl Body for WithdrawRequest {
    fn write(&self, w: &mut Writer) {
        w.str(&self.bank_id)
            .fixed(&self.denom_id.0)
            .uint(&self.blinded)
            .uint(&self.countersig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(WithdrawRequest {
            bank_id: r.str()?,
            denom_id: DenomId(r.hash()?),
            blinded: r.uint()?,
            countersig: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WithdrawResponse {
    pub blind_sig: Uint,
}

impl Body for WithdrawResponse {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.blind_sig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(WithdrawResponse {
            blind_sig: r.uint()?,
        })
    }
}

/// One coin's contribution to a payment, as handed from wallet to merchant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepositRequest {
    pub coin_pub: Uint,
    pub denom_id: DenomId,
    pub denom_sig: Uint,
    pub amount: Amount,
    pub contract_hash: Hash32,
    pub merchant: MerchantAccount,
    pub coin_sig: Uint,
}

impl DepositRequest {
    pub fn signed_message(&self) -> Vec<u8> {
        payment_message(&self.contract_hash, &self.merchant, self.amount)
    }
}

impl Body for DepositRequest {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.coin_pub)
            .fixed(&self.denom_id.0)
            .uint(&self.denom_sig)
            .amount(self.amount)
            .fixed(&self.contract_hash);
        self.merchant.write(w);
        w.uint(&self.coin_sig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(DepositRequest {
            coin_pub: r.uint()?,
            denom_id: DenomId(r.hash()?),
            denom_sig: r.uint()?,
            amount: r.amount()?,
            contract_hash: r.hash()?,
            merchant: MerchantAccount::read(r)?,
            coin_sig: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepositConfirmation {
    pub coin_pub: Uint,
    pub contract_hash: Hash32,
    pub amount: Amount,
    pub merchant: MerchantAccount,
    pub timestamp: Timestamp,
    pub mint_sig: Uint,
}

impl DepositConfirmation {
    pub fn signed_message(
        coin_pub: &Uint,
        contract_hash: &Hash32,
        amount: Amount,
        merchant: &MerchantAccount,
        timestamp: Timestamp,
    ) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(b"deposit-ok")
            .uint(coin_pub)
            .fixed(contract_hash)
            .amount(amount);
        merchant.write(&mut w);
        w.u64(timestamp);
        w.finish()
    }
}

impl Body for DepositConfirmation {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.coin_pub)
            .fixed(&self.contract_hash)
            .amount(self.amount);
        self.merchant.write(w);
        w.u64(self.timestamp).uint(&self.mint_sig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(DepositConfirmation {
            coin_pub: r.uint()?,
            contract_hash: r.hash()?,
            amount: r.amount()?,
            merchant: MerchantAccount::read(r)?,
            timestamp: r.u64()?,
            mint_sig: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshCommitment {
    pub transfer_pub: Uint,
    pub blinded: Uint,
}

impl Body for RefreshCommitment {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.transfer_pub).uint(&self.blinded);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RefreshCommitment {
            transfer_pub: r.uint()?,
            blinded: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshCommitRequest {
    pub coin_pub: Uint,
    pub denom_id: DenomId,
    pub denom_sig: Uint,
    pub target_denom_id: DenomId,
    pub commitments: Vec<RefreshCommitment>,
    /// Old coin's signature over [`RefreshCommitRequest::signed_message`].
    pub coin_sig: Uint,
}

impl RefreshCommitRequest {
    fn write_unsigned(&self, w: &mut Writer) {
        w.uint(&self.coin_pub)
            .fixed(&self.denom_id.0)
            .uint(&self.denom_sig)
            .fixed(&self.target_denom_id.0);
        write_list(w, &self.commitments);
    }

    pub fn signed_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.fixed(b"refresh-commit");
        self.write_unsigned(&mut w);
        w.finish()
    }

    /// Independent of the (randomised) coin signature, so a re-signed retry
    /// lands on the same session.
    pub fn session_id(&self) -> Hash32 {
        let mut w = Writer::new();
        w.fixed(b"refresh-session");
        self.write_unsigned(&mut w);
        sha256(&[&w.finish()])
    }
}

impl Body for RefreshCommitRequest {
    fn write(&self, w: &mut Writer) {
        self.write_unsigned(w);
        w.uint(&self.coin_sig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RefreshCommitRequest {
            coin_pub: r.uint()?,
            denom_id: DenomId(r.hash()?),
            denom_sig: r.uint()?,
            target_denom_id: DenomId(r.hash()?),
            commitments: read_list(r)?,
            coin_sig: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshChallenge {
    pub session_id: Hash32,
    /// 1-based index of the construction that stays hidden.
    pub gamma: u8,
}

impl Body for RefreshChallenge {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.session_id).u8(self.gamma);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RefreshChallenge {
            session_id: r.hash()?,
            gamma: r.u8()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshRevealRequest {
    pub session_id: Hash32,
    /// Transfer private keys for every index except gamma, in index order.
    pub transfer_privs: Vec<Uint>,
}

impl Body for RefreshRevealRequest {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.session_id).count(self.transfer_privs.len());
        for t in &self.transfer_privs {
            w.uint(t);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let session_id = r.hash()?;
        let n = r.count()?;
        let transfer_privs = (0..n).map(|_| r.uint()).collect::<Result<_, _>>()?;
        Ok(RefreshRevealRequest {
            session_id,
            transfer_privs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RefreshRevealResponse {
    Signed { blind_sig: Uint },
    Forfeited,
}

impl Body for RefreshRevealResponse {
    fn write(&self, w: &mut Writer) {
        match self {
            RefreshRevealResponse::Signed { blind_sig } => {
                w.u8(0).uint(blind_sig);
            }
            RefreshRevealResponse::Forfeited => {
                w.u8(1);
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            0 => Ok(RefreshRevealResponse::Signed {
                blind_sig: r.uint()?,
            }),
            1 => Ok(RefreshRevealResponse::Forfeited),
            _ => Err(WireError::Malformed("reveal outcome tag")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkRequest {
    pub coin_pub: Uint,
    pub offset: u32,
}

impl Body for LinkRequest {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.coin_pub).u32(self.offset);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(LinkRequest {
            coin_pub: r.uint()?,
            offset: r.u32()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkEntry {
    pub transfer_pub: Uint,
    pub blind_sig: Uint,
    pub target_denom_id: DenomId,
}

impl Body for LinkEntry {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.transfer_pub)
            .uint(&self.blind_sig)
            .fixed(&self.target_denom_id.0);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(LinkEntry {
            transfer_pub: r.uint()?,
            blind_sig: r.uint()?,
            target_denom_id: DenomId(r.hash()?),
        })
    }
}

/// One page of link data; `next_offset` is set when more entries remain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkResponse {
    pub entries: Vec<LinkEntry>,
    pub next_offset: Option<u32>,
}

impl Body for LinkResponse {
    fn write(&self, w: &mut Writer) {
        write_list(w, &self.entries);
        match self.next_offset {
            Some(o) => w.u8(1).u32(o),
            None => w.u8(0),
        };
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let entries = read_list(r)?;
        let next_offset = match r.u8()? {
            0 => None,
            1 => Some(r.u32()?),
            _ => return Err(WireError::Malformed("option tag")),
        };
        Ok(LinkResponse {
            entries,
            next_offset,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationNotice {
    pub denom_id: DenomId,
    pub revoked_at: Timestamp,
}

impl Body for RevocationNotice {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0).u64(self.revoked_at);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RevocationNotice {
            denom_id: DenomId(r.hash()?),
            revoked_at: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefundRequest {
    pub coin_pub: Uint,
    pub denom_id: DenomId,
    pub denom_sig: Uint,
    pub blinding: Uint,
    pub bank_id: String,
}

impl Body for RefundRequest {
    fn write(&self, w: &mut Writer) {
        w.uint(&self.coin_pub)
            .fixed(&self.denom_id.0)
            .uint(&self.denom_sig)
            .uint(&self.blinding)
            .str(&self.bank_id);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RefundRequest {
            coin_pub: r.uint()?,
            denom_id: DenomId(r.hash()?),
            denom_sig: r.uint()?,
            blinding: r.uint()?,
            bank_id: r.str()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefundResponse {
    pub credited: Amount,
}

impl Body for RefundResponse {
    fn write(&self, w: &mut Writer) {
        w.amount(self.credited);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(RefundResponse {
            credited: r.amount()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRequest {
    pub denom_id: DenomId,
}

impl Body for AuditRequest {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(AuditRequest {
            denom_id: DenomId(r.hash()?),
        })
    }
}

/// Per-denomination issuance balance. Refresh melts count as deposits of the
/// old coin's denomination and as issuance of the change denomination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub denom_id: DenomId,
    pub issued_count: u64,
    pub issued_value: Amount,
    pub deposited_value: Amount,
    pub refunded_value: Amount,
    pub forfeited_value: Amount,
    /// Set when more value came back than was ever issued.
    pub violation: bool,
}

impl Body for AuditReport {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0)
            .u64(self.issued_count)
            .amount(self.issued_value)
            .amount(self.deposited_value)
            .amount(self.refunded_value)
            .amount(self.forfeited_value)
            .bool(self.violation);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(AuditReport {
            denom_id: DenomId(r.hash()?),
            issued_count: r.u64()?,
            issued_value: r.amount()?,
            deposited_value: r.amount()?,
            refunded_value: r.amount()?,
            forfeited_value: r.amount()?,
            violation: r.bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CustomerWithdrawRequest {
    pub customer_id: String,
    pub secret: String,
    pub denom_id: DenomId,
    pub blinded: Uint,
}

impl Body for CustomerWithdrawRequest {
    fn write(&self, w: &mut Writer) {
        w.str(&self.customer_id)
            .str(&self.secret)
            .fixed(&self.denom_id.0)
            .uint(&self.blinded);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(CustomerWithdrawRequest {
            customer_id: r.str()?,
            secret: r.str()?,
            denom_id: DenomId(r.hash()?),
            blinded: r.uint()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepositForwardRequest {
    pub merchant_id: String,
    pub deposit: DepositRequest,
}

impl Body for DepositForwardRequest {
    fn write(&self, w: &mut Writer) {
        w.str(&self.merchant_id);
        self.deposit.write(w);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(DepositForwardRequest {
            merchant_id: r.str()?,
            deposit: DepositRequest::read(r)?,
        })
    }
}

/// A customer's revocation refund, submitted through their bank so the
/// refunded value lands in their account.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CustomerRefundRequest {
    pub customer_id: String,
    pub secret: String,
    pub refund: RefundRequest,
}

impl Body for CustomerRefundRequest {
    fn write(&self, w: &mut Writer) {
        w.str(&self.customer_id).str(&self.secret);
        self.refund.write(w);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(CustomerRefundRequest {
            customer_id: r.str()?,
            secret: r.str()?,
            refund: RefundRequest::read(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: u16,
    pub detail: String,
}

impl Body for ErrorBody {
    fn write(&self, w: &mut Writer) {
        w.u16(self.code).str(&self.detail);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ErrorBody {
            code: r.u16()?,
            detail: r.str()?,
        })
    }
}

/// Empty request body (`/keys`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Empty;

impl Body for Empty {
    fn write(&self, _: &mut Writer) {}

    fn read(_: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Empty)
    }
}
