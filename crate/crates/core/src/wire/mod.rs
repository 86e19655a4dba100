//! Canonical binary encoding for every protocol message.
//!
//! An envelope is `version (1) ‖ type (1) ‖ body_len (4, BE) ‖ body`. Inside
//! bodies, integers are big-endian, amounts are 8-byte minor units, hashes
//! are raw 32 bytes, and big integers, strings and lists carry a 2-byte
//! length or count prefix. Big integers are written at the width of their
//! modulus. Decoding rejects trailing bytes, so a valid byte string has
//! exactly one decoding and re-encodes to itself.

mod codec;
mod messages;

pub use codec::{Reader, Uint, Writer};
pub use messages::*;

use thiserror::Error;

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
/// Upper bound for a whole envelope.
pub const MAX_MESSAGE_LEN: usize = 10 * 1024;
/// Link entries per response page; keeps link pages under the size bound at
/// 2048-bit parameters.
pub const LINK_PAGE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unknown version {0}")]
    UnknownVersion(u8),
    #[error("message of {0} bytes exceeds the size bound")]
    TooLarge(usize),
}

macro_rules! messages {
    ($($variant:ident($ty:ty) = $code:literal,)*) => {
        #[derive(Clone, Debug, PartialEq, Eq)]
        pub enum Message {
            $($variant($ty),)*
        }

        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        #[repr(u8)]
        pub enum MsgType {
            $($variant = $code,)*
        }

        impl MsgType {
            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some(MsgType::$variant),)*
                    _ => None,
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(MsgType::$variant => stringify!($variant),)*
                }
            }
        }

        impl Message {
            pub fn msg_type(&self) -> MsgType {
                match self {
                    $(Message::$variant(_) => MsgType::$variant,)*
                }
            }

            fn body(&self) -> Vec<u8> {
                match self {
                    $(Message::$variant(b) => b.to_bytes(),)*
                }
            }

            fn from_body(ty: MsgType, body: &[u8]) -> Result<Self, WireError> {
                match ty {
                    $(MsgType::$variant => <$ty>::from_bytes(body).map(Message::$variant),)*
                }
            }
        }
    };
}

messages! {
    Keys(KeysDocument) = 1,
    WithdrawReq(WithdrawRequest) = 2,
    WithdrawResp(WithdrawResponse) = 3,
    DepositReq(DepositRequest) = 4,
    DepositResp(DepositConfirmation) = 5,
    RefreshCommitReq(RefreshCommitRequest) = 6,
    RefreshChallenge(RefreshChallenge) = 7,
    RefreshRevealReq(RefreshRevealRequest) = 8,
    RefreshRevealResp(RefreshRevealResponse) = 9,
    LinkReq(LinkRequest) = 10,
    LinkResp(LinkResponse) = 11,
    RevocationNotice(RevocationNotice) = 12,
    RefundReq(RefundRequest) = 13,
    RefundResp(RefundResponse) = 14,
    Error(ErrorBody) = 15,
    KeysReq(Empty) = 16,
    AuditReq(AuditRequest) = 17,
    AuditResp(AuditReport) = 18,
    CustomerWithdrawReq(CustomerWithdrawRequest) = 19,
    DepositForwardReq(DepositForwardRequest) = 20,
    CustomerRefundReq(CustomerRefundRequest) = 21,
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let body = msg.body();
    let total = HEADER_LEN + body.len();
    if total > MAX_MESSAGE_LEN {
        return Err(WireError::TooLarge(total));
    }
    let mut out = Vec::with_capacity(total);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() > MAX_MESSAGE_LEN {
        return Err(WireError::TooLarge(bytes.len()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Malformed("truncated header"));
    }
    if bytes[0] != VERSION {
        return Err(WireError::UnknownVersion(bytes[0]));
    }
    let ty = MsgType::from_code(bytes[1]).ok_or(WireError::UnknownType(bytes[1]))?;
    let len = u32::from_be_bytes(bytes[2..6].try_into().unwrap()) as usize;
    if len != bytes.len() - HEADER_LEN {
        return Err(WireError::Malformed("body length mismatch"));
    }
    Message::from_body(ty, &bytes[HEADER_LEN..])
}
