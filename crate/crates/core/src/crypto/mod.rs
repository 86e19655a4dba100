//! Cryptographic building blocks. Pure functions over big integers; every
//! random choice comes from a caller-supplied RNG.
//!
//! Exponentiation is not constant time.

pub mod bigint;
pub mod fdh;
pub mod group;
pub mod refresh;
pub mod rsa;
pub mod schnorr;

use rug::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fdh::fdh;
pub use group::{group_keygen, kx, GroupKeyPair, GroupParams, TransferSecret};
pub use refresh::{derive_refresh, RefreshDerivation};
pub use rsa::{
    blind, blind_sign, rsa_keygen, rsa_sign, rsa_verify, sample_blinding, unblind, BlindingFactor,
    RsaPrivateKey, RsaPublicKey,
};
pub use schnorr::{coin_sig_verify, coin_sign, coin_sign_deterministic, CoinSignature};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key size {0} must be even and at least 16 bits")]
    InvalidKeySize(u32),
    #[error("invalid public exponent")]
    InvalidExponent,
    #[error("public exponent not invertible modulo phi(n)")]
    ExponentNotCoprime,
    #[error("primes must be distinct")]
    EqualPrimes,
    #[error("key generation retries exhausted")]
    KeygenExhausted,
    #[error("message not below the modulus")]
    MessageOutOfRange,
    #[error("blinding factor is not a unit")]
    InvalidBlindingFactor,
    #[error("modulus too small")]
    ModulusTooSmall,
    #[error("full-domain hash found no unit")]
    FdhExhausted,
    #[error("invalid group parameters")]
    InvalidGroup,
    #[error("element is not in the prime-order subgroup")]
    InvalidPoint,
    #[error("scalar out of range")]
    InvalidScalar,
    #[error("value does not fit in {width} bytes")]
    EncodingWidth { width: usize },
}

/// Parameter sets. `Toy` is small enough for fast simulation runs; `Full` is
/// the deployment size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CryptoMode {
    Toy,
    Full,
}

impl CryptoMode {
    pub fn rsa_bits(self) -> u32 {
        match self {
            CryptoMode::Toy => 512,
            CryptoMode::Full => 2048,
        }
    }

    pub fn public_exponent(self) -> Integer {
        match self {
            CryptoMode::Toy => Integer::from(3),
            CryptoMode::Full => Integer::from(65537),
        }
    }

    pub fn group(self) -> GroupParams {
        match self {
            CryptoMode::Toy => GroupParams::toy(),
            CryptoMode::Full => GroupParams::full(),
        }
    }
}

impl std::str::FromStr for CryptoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(CryptoMode::Toy),
            "full" => Ok(CryptoMode::Full),
            other => Err(format!("unknown crypto mode `{other}`")),
        }
    }
}
