//! Prime-order subgroup of `Z_p^*`: coin keys, transfer keys and Diffie-Hellman.
//!
//! Every element received from outside is checked for membership in the
//! order-`q` subgroup before use.

use rand::RngCore;
use rug::integer::IsPrime;
use rug::Integer;

use super::bigint::{byte_len, from_be, mod_pow, random_bits, random_range, to_fixed_be};
use super::CryptoError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub p: Integer,
    pub q: Integer,
    pub g: Integer,
}

// 512-bit modulus, 160-bit subgroup. Generated with `GroupParams::generate`.
const TOY_P: &str = include_str!("params/toy_p.hex");
const TOY_Q: &str = include_str!("params/toy_q.hex");
const TOY_G: &str = include_str!("params/toy_g.hex");
// 2048-bit modulus, 256-bit subgroup.
const FULL_P: &str = include_str!("params/full_p.hex");
const FULL_Q: &str = include_str!("params/full_q.hex");
const FULL_G: &str = include_str!("params/full_g.hex");

fn parse_hex(s: &str) -> Integer {
    Integer::from_str_radix(s.trim(), 16).expect("valid hex constant")
}

impl GroupParams {
    /// Checks `q | p-1`, `g^q = 1` and `g != 1`.
    pub fn new(p: Integer, q: Integer, g: Integer) -> Result<Self, CryptoError> {
        if p < 3 || q < 2 || g <= 1 || g >= p {
            return Err(CryptoError::InvalidGroup);
        }
        if !Integer::from(&p - 1u32).is_divisible(&q) || mod_pow(&g, &q, &p) != 1 {
            return Err(CryptoError::InvalidGroup);
        }
        Ok(GroupParams { p, q, g })
    }

    /// `p = 23, q = 11, g = 2`. Small enough to enumerate.
    pub fn tiny() -> Self {
        Self::new(Integer::from(23), Integer::from(11), Integer::from(2)).unwrap()
    }

    pub fn toy() -> Self {
        Self::new(parse_hex(TOY_P), parse_hex(TOY_Q), parse_hex(TOY_G)).unwrap()
    }

    pub fn full() -> Self {
        Self::new(parse_hex(FULL_P), parse_hex(FULL_Q), parse_hex(FULL_G)).unwrap()
    }

    /// Schnorr-group generation: random `q`, then `p = kq + 1`.
    pub fn generate<R: RngCore + ?Sized>(p_bits: u32, q_bits: u32, rng: &mut R) -> Self {
        assert!(p_bits > q_bits + 1);
        let q = loop {
            let q = random_bits(rng, q_bits).next_prime();
            if q.significant_bits() == q_bits {
                break q;
            }
        };
        let p = loop {
            let mut k = random_bits(rng, p_bits - q_bits);
            k.set_bit(0, false);
            let p = Integer::from(&k * &q) + 1u32;
            if p.significant_bits() == p_bits && p.is_probably_prime(40) != IsPrime::No {
                break p;
            }
        };
        let cofactor = Integer::from(&p - 1u32) / &q;
        let two = Integer::from(2);
        let p_minus_1 = Integer::from(&p - 1u32);
        loop {
            let h = random_range(rng, &two, &p_minus_1);
            let g = mod_pow(&h, &cofactor, &p);
            if g != 1 {
                return GroupParams { p, q, g };
            }
        }
    }

    /// Width of an encoded group element.
    pub fn element_width(&self) -> usize {
        byte_len(&self.p)
    }

    /// Width of an encoded scalar.
    pub fn scalar_width(&self) -> usize {
        byte_len(&self.q)
    }

    pub fn is_member(&self, x: &Integer) -> bool {
        *x > 1 && *x < self.p && mod_pow(x, &self.q, &self.p) == 1
    }

    pub fn exp_g(&self, x: &Integer) -> Integer {
        mod_pow(&self.g, x, &self.p)
    }

    pub fn encode_element(&self, x: &Integer) -> Vec<u8> {
        to_fixed_be(x, self.element_width()).expect("element below p")
    }

    pub fn encode_scalar(&self, x: &Integer) -> Vec<u8> {
        to_fixed_be(x, self.scalar_width()).expect("scalar below q")
    }

    /// Parses and membership-checks a received element.
    pub fn decode_element(&self, bytes: &[u8]) -> Result<Integer, CryptoError> {
        if bytes.len() != self.element_width() {
            return Err(CryptoError::InvalidPoint);
        }
        let x = from_be(bytes);
        if !self.is_member(&x) {
            return Err(CryptoError::InvalidPoint);
        }
        Ok(x)
    }

    /// Parses a scalar in `[1, q)`.
    pub fn decode_scalar(&self, bytes: &[u8]) -> Result<Integer, CryptoError> {
        if bytes.len() != self.scalar_width() {
            return Err(CryptoError::InvalidScalar);
        }
        let x = from_be(bytes);
        if x < 1 || x >= self.q {
            return Err(CryptoError::InvalidScalar);
        }
        Ok(x)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct GroupKeyPair {
    private: Integer,
    public: Integer,
}

impl std::fmt::Debug for GroupKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroupKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl GroupKeyPair {
    pub fn from_private(params: &GroupParams, private: Integer) -> Result<Self, CryptoError> {
        if private < 1 || private >= params.q {
            return Err(CryptoError::InvalidScalar);
        }
        let public = params.exp_g(&private);
        Ok(GroupKeyPair { private, public })
    }

    pub fn private(&self) -> &Integer {
        &self.private
    }

    pub fn public(&self) -> &Integer {
        &self.public
    }
}

/// Private key uniform in `[1, q)`.
pub fn group_keygen<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> GroupKeyPair {
    let private = random_range(rng, &Integer::from(1), &params.q);
    GroupKeyPair::from_private(params, private).expect("sampled in range")
}

/// Shared secret between a coin and a transfer key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransferSecret(Vec<u8>);

impl TransferSecret {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Diffie-Hellman: `peer^private mod p`, fixed-width encoded.
pub fn kx(
    private: &Integer,
    peer_public: &Integer,
    params: &GroupParams,
) -> Result<TransferSecret, CryptoError> {
    if !params.is_member(peer_public) {
        return Err(CryptoError::InvalidPoint);
    }
    let shared = mod_pow(peer_public, private, &params.p);
    Ok(TransferSecret(params.encode_element(&shared)))
}
