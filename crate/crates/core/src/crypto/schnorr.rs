//! Schnorr signatures over the same subgroup used for key exchange, so a coin
//! key can both sign contracts and act as a Diffie-Hellman key.
//!
//! A signature is `(e, s)` with `R = g^k`, `e = SHA-256(R ‖ X ‖ msg)` kept as
//! the full 256-bit digest, and `s = k - e·x mod q`.

use rand::RngCore;
use rug::ops::RemRounding;
use rug::Integer;
use sha2::{Digest, Sha256};

use super::bigint::{from_be, mod_pow, random_range, to_fixed_be};
use super::fdh::expand;
use super::group::GroupParams;

pub const CHALLENGE_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoinSignature {
    pub challenge: [u8; CHALLENGE_LEN],
    pub response: Integer,
}

impl CoinSignature {
    /// `challenge ‖ response` with the response at scalar width.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = self.challenge.to_vec();
        out.extend(params.encode_scalar(&self.response));
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &GroupParams) -> Option<Self> {
        if bytes.len() != CHALLENGE_LEN + params.scalar_width() {
            return None;
        }
        let mut challenge = [0u8; CHALLENGE_LEN];
        challenge.copy_from_slice(&bytes[..CHALLENGE_LEN]);
        let response = from_be(&bytes[CHALLENGE_LEN..]);
        if response >= params.q {
            return None;
        }
        Some(CoinSignature {
            challenge,
            response,
        })
    }

    pub fn encoded_len(params: &GroupParams) -> usize {
        CHALLENGE_LEN + params.scalar_width()
    }
}

fn challenge(
    params: &GroupParams,
    commitment: &Integer,
    public: &Integer,
    msg: &[u8],
) -> [u8; CHALLENGE_LEN] {
    let mut h = Sha256::new();
    h.update(b"coin-sig");
    h.update(params.encode_element(commitment));
    h.update(params.encode_element(public));
    h.update(msg);
    h.finalize().into()
}

fn sign_with_nonce(
    private: &Integer,
    msg: &[u8],
    params: &GroupParams,
    nonce: &Integer,
) -> CoinSignature {
    let public = params.exp_g(private);
    let commitment = params.exp_g(nonce);
    let challenge = challenge(params, &commitment, &public, msg);
    let e = from_be(&challenge);
    let response = Integer::from(nonce - Integer::from(&e * private)).rem_euc(&params.q);
    CoinSignature {
        challenge,
        response,
    }
}

pub fn coin_sign<R: RngCore + ?Sized>(
    private: &Integer,
    msg: &[u8],
    params: &GroupParams,
    rng: &mut R,
) -> CoinSignature {
    let nonce = random_range(rng, &Integer::from(1), &params.q);
    sign_with_nonce(private, msg, params, &nonce)
}

/// Nonce derived from the key and message, so identical inputs give identical
/// signatures. Used where responses must replay byte-for-byte.
pub fn coin_sign_deterministic(
    private: &Integer,
    msg: &[u8],
    params: &GroupParams,
) -> CoinSignature {
    let mut seed = b"coin-sig-nonce".to_vec();
    seed.extend(to_fixed_be(private, params.scalar_width()).expect("private below q"));
    seed.extend_from_slice(msg);
    let wide = from_be(&expand(0, &seed, params.scalar_width() + 16));
    let nonce = wide % Integer::from(&params.q - 1u32) + 1u32;
    sign_with_nonce(private, msg, params, &nonce)
}

pub fn coin_sig_verify(
    public: &Integer,
    msg: &[u8],
    sig: &CoinSignature,
    params: &GroupParams,
) -> bool {
    if !params.is_member(public) || sig.response.cmp0().is_lt() || sig.response >= params.q {
        return false;
    }
    let e = from_be(&sig.challenge);
    let commitment =
        Integer::from(params.exp_g(&sig.response) * mod_pow(public, &e, &params.p)) % &params.p;
    challenge(params, &commitment, public, msg) == sig.challenge
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::group::group_keygen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn tiny_round_trip_and_tamper() {
        let params = GroupParams::tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let private = Integer::from(3);
        let public = params.exp_g(&private);
        let sig = coin_sign(&private, b"pay", &params, &mut rng);
        assert!(coin_sig_verify(&public, b"pay", &sig, &params));
        assert!(!coin_sig_verify(&public, b"paz", &sig, &params));
        let other = params.exp_g(&Integer::from(4));
        assert!(!coin_sig_verify(&other, b"pay", &sig, &params));
    }

    #[test]
    fn bit_flips_in_signature_rejected() {
        let params = GroupParams::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let key = group_keygen(&params, &mut rng);
        let sig = coin_sign(key.private(), b"contract", &params, &mut rng);
        let bytes = sig.to_bytes(&params);
        assert!(coin_sig_verify(key.public(), b"contract", &sig, &params));
        for bit in 0..bytes.len() * 8 {
            let mut flipped = bytes.clone();
            flipped[bit / 8] ^= 1 << (bit % 8);
            if let Some(bad) = CoinSignature::from_bytes(&flipped, &params) {
                assert!(
                    !coin_sig_verify(key.public(), b"contract", &bad, &params),
                    "bit {bit}"
                );
            }
        }
    }

    #[test]
    fn deterministic_signing_is_stable() {
        let params = GroupParams::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let key = group_keygen(&params, &mut rng);
        let a = coin_sign_deterministic(key.private(), b"m", &params);
        let b = coin_sign_deterministic(key.private(), b"m", &params);
        assert_eq!(a, b);
        assert!(coin_sig_verify(key.public(), b"m", &a, &params));
        assert_ne!(a, coin_sign_deterministic(key.private(), b"n", &params));
    }

    #[test]
    fn rejects_non_member_public_key() {
        let params = GroupParams::tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let sig = coin_sign(&Integer::from(3), b"pay", &params, &mut rng);
        assert!(!coin_sig_verify(&Integer::from(1), b"pay", &sig, &params));
        assert!(!coin_sig_verify(&Integer::from(5), b"pay", &sig, &params));
    }
}
