use thiserror::Error;

use crate::store::StoreError;
use crate::wire::{ErrorBody, WireError};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MintError {
    #[error("unknown bank")]
    UnknownBank,
    #[error("bank countersignature does not verify")]
    BadCountersignature,
    #[error("unknown denomination")]
    UnknownDenomination,
    #[error("denomination outside its validity window")]
    DenominationExpired,
    #[error("denomination revoked")]
    DenominationRevoked,
    #[error("insufficient reserves")]
    InsufficientReserves,
    #[error("denomination signature does not verify")]
    BadDenomSignature,
    #[error("coin signature does not verify")]
    BadCoinSignature,
    #[error("double spend")]
    DoubleSpend,
    #[error("unknown refresh session")]
    UnknownSession,
    #[error("refresh session already closed")]
    WrongState,
    #[error("denomination not revoked")]
    NotRevoked,
    #[error("no matching withdrawal")]
    NoMatchingWithdrawal,
    #[error("coin already refunded or fully spent")]
    AlreadyRefunded,
    #[error("idempotency key reused with different parameters")]
    IdempotencyConflict,
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
}

impl MintError {
    pub fn code(&self) -> u16 {
        use MintError::*;
        match self {
            UnknownBank => 100,
            BadCountersignature => 101,
            UnknownDenomination => 102,
            DenominationExpired => 103,
            DenominationRevoked => 104,
            InsufficientReserves => 105,
            BadDenomSignature => 106,
            BadCoinSignature => 107,
            DoubleSpend => 108,
            UnknownSession => 109,
            WrongState => 110,
            NotRevoked => 111,
            NoMatchingWithdrawal => 112,
            AlreadyRefunded => 113,
            IdempotencyConflict => 114,
            Malformed(_) => 115,
            Config(_) => 116,
            Storage(_) => 117,
            Unavailable(_) => 118,
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        let detail = match self {
            MintError::Malformed(s)
            | MintError::Config(s)
            | MintError::Storage(s)
            | MintError::Unavailable(s) => s.clone(),
            _ => String::new(),
        };
        ErrorBody {
            code: self.code(),
            detail,
        }
    }

    /// Inverse of [`MintError::to_body`]; `None` for codes outside the mint's range.
    pub fn from_body(body: &ErrorBody) -> Option<Self> {
        use MintError::*;
        let d = body.detail.clone();
        Some(match body.code {
            100 => UnknownBank,
            101 => BadCountersignature,
            102 => UnknownDenomination,
            103 => DenominationExpired,
            104 => DenominationRevoked,
            105 => InsufficientReserves,
            106 => BadDenomSignature,
            107 => BadCoinSignature,
            108 => DoubleSpend,
            109 => UnknownSession,
            110 => WrongState,
            111 => NotRevoked,
            112 => NoMatchingWithdrawal,
            113 => AlreadyRefunded,
            114 => IdempotencyConflict,
            115 => Malformed(d),
            116 => Config(d),
            117 => Storage(d),
            118 => Unavailable(d),
            _ => return None,
        })
    }
}

impl From<StoreError> for MintError {
    fn from(e: StoreError) -> Self {
        MintError::Storage(e.to_string())
    }
}

impl From<WireError> for MintError {
    fn from(e: WireError) -> Self {
        MintError::Storage(format!("undecodable record: {e}"))
    }
}
