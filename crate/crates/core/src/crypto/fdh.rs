//! Full-domain hash onto the unit group of an RSA modulus.
//!
//! SHA-256 is run in counter mode to produce as many bits as the modulus has;
//! candidates that land outside `[1, n)` or share a factor with `n` are
//! rejected and the outer counter is bumped.

use rug::Integer;
use sha2::{Digest, Sha256};

use super::bigint::{byte_len, from_be, gcd};
use super::CryptoError;

const MAX_ATTEMPTS: u32 = 256;

/// `out_len` bytes of SHA-256 output in counter mode over `(attempt, block, msg)`.
pub fn expand(attempt: u32, msg: &[u8], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len + 32);
    let mut block = 0u32;
    while out.len() < out_len {
        let mut h = Sha256::new();
        h.update(attempt.to_be_bytes());
        h.update(block.to_be_bytes());
        h.update(msg);
        out.extend_from_slice(&h.finalize());
        block += 1;
    }
    out.truncate(out_len);
    out
}

/// Maps `msg` to a unit of `Z/nZ`.
pub fn fdh(n: &Integer, msg: &[u8]) -> Result<Integer, CryptoError> {
    if *n < 3 {
        return Err(CryptoError::ModulusTooSmall);
    }
    let bits = n.significant_bits();
    let nbytes = byte_len(n);
    let excess = (nbytes * 8) as u32 - bits;
    for attempt in 0..MAX_ATTEMPTS {
        let mut buf = expand(attempt, msg, nbytes);
        if excess > 0 {
            buf[0] &= 0xff >> excess;
        }
        let f = from_be(&buf);
        if f >= 1 && f < *n && gcd(&f, n) == 1 {
            return Ok(f);
        }
    }
    Err(CryptoError::FdhExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line restatement of the construction, used as an oracle.
    fn oracle(n: u64, msg: &[u8]) -> u64 {
        let bits = 64 - n.leading_zeros();
        let nbytes = bits.div_ceil(8) as usize;
        for attempt in 0u32.. {
            let mut h = Sha256::new();
            h.update(attempt.to_be_bytes());
            h.update(0u32.to_be_bytes());
            h.update(msg);
            let digest = h.finalize();
            let mut v = 0u64;
            for byte in &digest[..nbytes] {
                v = (v << 8) | *byte as u64;
            }
            v &= (1u64 << bits) - 1;
            let g = num_gcd(v, n);
            if v >= 1 && v < n && g == 1 {
                return v;
            }
        }
        unreachable!()
    }

    fn num_gcd(mut a: u64, mut b: u64) -> u64 {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    }

    #[test]
    fn toy_modulus_matches_oracle() {
        let n = Integer::from(55);
        let f = fdh(&n, b"coin-A").unwrap();
        assert_eq!(f, oracle(55, b"coin-A"));
        assert!(f >= 1 && f < 55);
        assert_eq!(gcd(&f, &n), 1);
        assert_eq!(f, fdh(&n, b"coin-A").unwrap());
    }

    #[test]
    fn rejects_degenerate_modulus() {
        assert_eq!(
            fdh(&Integer::from(2), b"x").unwrap_err(),
            CryptoError::ModulusTooSmall
        );
    }

    #[test]
    fn single_bit_flips_change_output() {
        let n = (Integer::from(1) << 255u32) + 12345u32;
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in 0..1000 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let msg: Vec<u8> = (0..16)
                .map(|k| (state >> (k % 8 * 8)) as u8 ^ k as u8)
                .collect();
            let mut flipped = msg.clone();
            flipped[i % 16] ^= 1 << (i % 8);
            assert_ne!(fdh(&n, &msg).unwrap(), fdh(&n, &flipped).unwrap());
        }
    }

    proptest! {
        #[test]
        fn output_is_always_a_unit(n in 3u64..1_000_000, msg in proptest::collection::vec(any::<u8>(), 0..40)) {
            let n_big = Integer::from(n);
            if let Ok(f) = fdh(&n_big, &msg) {
                prop_assert!(f >= 1 && f < n_big);
                prop_assert_eq!(gcd(&f, &n_big), 1);
                prop_assert_eq!(f, oracle(n, &msg));
            }
        }
    }
}
