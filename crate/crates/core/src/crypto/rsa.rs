//! Textbook RSA with Chaum blinding. Inputs are expected to be full-domain
//! hashed already; see [`super::fdh`].

use std::sync::Arc;

use openssl::bn::BigNum;
use openssl::pkey::Private;
use openssl::rsa::{Padding, Rsa};
use rand::RngCore;
use rug::integer::{IsPrime, Order};
use rug::ops::RemRounding;
use rug::Integer;

use super::bigint::{
    byte_len, from_be, gcd, mod_inverse, mod_pow, random_below, random_bits, to_fixed_be,
};
use super::CryptoError;

const KEYGEN_ATTEMPTS: usize = 64;

/// Moduli at least this large sign through OpenSSL's vectorised CRT, which
/// is more than twice as fast as GMP's generic exponentiation at 2048 bits.
const ENGINE_MIN_BITS: u32 = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub e: Integer,
    pub n: Integer,
}

impl RsaPublicKey {
    /// Byte width used for every fixed-width encoding under this modulus.
    pub fn width(&self) -> usize {
        byte_len(&self.n)
    }

    pub fn bits(&self) -> u32 {
        self.n.significant_bits()
    }

    /// Canonical encoding: `e` then `n`, both at modulus width.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.width();
        let mut out = to_fixed_be(&self.e, w).expect("e < n");
        out.extend(to_fixed_be(&self.n, w).expect("n fits its own width"));
        out
    }
}

#[derive(Clone)]
pub struct RsaPrivateKey {
    pub d: Integer,
    pub p: Integer,
    pub q: Integer,
    pub n: Integer,
    dp: Integer,
    dq: Integer,
    q_inv: Integer,
    engine: Option<Arc<Rsa<Private>>>,
}

impl PartialEq for RsaPrivateKey {
    fn eq(&self, other: &Self) -> bool {
        (&self.d, &self.p, &self.q, &self.n) == (&other.d, &other.p, &other.q, &other.n)
    }
}

impl Eq for RsaPrivateKey {}

fn bignum(x: &Integer) -> BigNum {
    BigNum::from_slice(&x.to_digits::<u8>(Order::Msf)).expect("bignum allocation")
}

fn engine(e: &Integer, k: &RsaPrivateKey) -> Option<Arc<Rsa<Private>>> {
    if k.n.significant_bits() < ENGINE_MIN_BITS {
        return None;
    }
    let [n, e, d, p, q, dp, dq, qi] =
        [&k.n, e, &k.d, &k.p, &k.q, &k.dp, &k.dq, &k.q_inv].map(bignum);
    Rsa::from_private_components(n, e, d, p, q, dp, dq, qi)
        .ok()
        .map(Arc::new)
}

impl std::fmt::Debug for RsaPrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsaPrivateKey")
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl RsaPrivateKey {
    /// Builds a key pair from two primes. Fails when `e` has no inverse mod φ(n).
    pub fn from_primes(
        p: Integer,
        q: Integer,
        e: &Integer,
    ) -> Result<(RsaPublicKey, Self), CryptoError> {
        if p == q {
            return Err(CryptoError::EqualPrimes);
        }
        let phi = Integer::from(&p - 1u32) * Integer::from(&q - 1u32);
        let n = Integer::from(&p * &q);
        if *e <= 1 || *e >= n {
            return Err(CryptoError::InvalidExponent);
        }
        let d = mod_inverse(e, &phi).ok_or(CryptoError::ExponentNotCoprime)?;
        let dp = Integer::from(&d % Integer::from(&p - 1u32));
        let dq = Integer::from(&d % Integer::from(&q - 1u32));
        let q_inv = mod_inverse(&q, &p).ok_or(CryptoError::EqualPrimes)?;
        let public = RsaPublicKey {
            e: e.clone(),
            n: n.clone(),
        };
        let mut key = RsaPrivateKey {
            d,
            p,
            q,
            n,
            dp,
            dq,
            q_inv,
            engine: None,
        };
        key.engine = engine(e, &key);
        Ok((public, key))
    }

    /// `m^d mod n` through the CRT. `m` must already be reduced modulo `n`.
    fn private_op(&self, m: &Integer) -> Integer {
        match &self.engine {
            Some(rsa) => {
                let input = to_fixed_be(m, rsa.size() as usize).expect("m < n");
                let mut out = vec![0u8; rsa.size() as usize];
                let len = rsa
                    .private_encrypt(&input, &mut out, Padding::NONE)
                    .expect("unpadded input below n");
                from_be(&out[..len])
            }
            None => self.private_op_gmp(m),
        }
    }

    fn private_op_gmp(&self, m: &Integer) -> Integer {
        let m1 = mod_pow(&Integer::from(m % &self.p), &self.dp, &self.p);
        let m2 = mod_pow(&Integer::from(m % &self.q), &self.dq, &self.q);
        let h = Integer::from(&self.q_inv * Integer::from(&m1 - &m2)).rem_euc(&self.p);
        m2 + h * &self.q
    }
}

/// Generates a `bits`-bit modulus with public exponent `e`.
pub fn rsa_keygen<R: RngCore + ?Sized>(
    bits: u32,
    e: &Integer,
    rng: &mut R,
) -> Result<(RsaPublicKey, RsaPrivateKey), CryptoError> {
    if bits < 16 || bits % 2 != 0 {
        return Err(CryptoError::InvalidKeySize(bits));
    }
    let half = bits / 2;
    rsa_keygen_with(bits, e, || {
        (random_prime(rng, half), random_prime(rng, half))
    })
}

/// Key generation driven by an arbitrary prime-pair source; pairs that give
/// the wrong modulus size or a non-invertible `e` are discarded.
pub fn rsa_keygen_with<F>(
    bits: u32,
    e: &Integer,
    mut primes: F,
) -> Result<(RsaPublicKey, RsaPrivateKey), CryptoError>
where
    F: FnMut() -> (Integer, Integer),
{
    if e.is_even() || *e < 3 {
        return Err(CryptoError::InvalidExponent);
    }
    for _ in 0..KEYGEN_ATTEMPTS {
        let (p, q) = primes();
        if p == q || Integer::from(&p * &q).significant_bits() != bits {
            continue;
        }
        match RsaPrivateKey::from_primes(p, q, e) {
            Ok(pair) => return Ok(pair),
            Err(CryptoError::ExponentNotCoprime) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(CryptoError::KeygenExhausted)
}

fn random_prime<R: RngCore + ?Sized>(rng: &mut R, bits: u32) -> Integer {
    loop {
        let start = random_bits(rng, bits);
        let p = start.next_prime();
        if p.significant_bits() == bits && p.is_probably_prime(30) != IsPrime::No {
            return p;
        }
    }
}

pub fn rsa_sign(key: &RsaPrivateKey, m: &Integer) -> Result<Integer, CryptoError> {
    if m.cmp0().is_lt() || *m >= key.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    Ok(key.private_op(m))
}

pub fn rsa_verify(key: &RsaPublicKey, m: &Integer, s: &Integer) -> bool {
    if s.cmp0().is_lt() || *s >= key.n || m.cmp0().is_lt() || *m >= key.n {
        return false;
    }
    mod_pow(s, &key.e, &key.n) == *m
}

/// A unit modulo some RSA modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindingFactor(Integer);

impl BlindingFactor {
    pub fn new(b: Integer, n: &Integer) -> Result<Self, CryptoError> {
        if b < 1 || b >= *n || gcd(&b, n) != 1 {
            return Err(CryptoError::InvalidBlindingFactor);
        }
        Ok(BlindingFactor(b))
    }

    pub fn value(&self) -> &Integer {
        &self.0
    }

    pub fn into_inner(self) -> Integer {
        self.0
    }
}

/// Uniform over the units of `Z/nZ`.
pub fn sample_blinding<R: RngCore + ?Sized>(n: &Integer, rng: &mut R) -> BlindingFactor {
    assert!(*n >= 3, "modulus too small");
    loop {
        let b = random_below(rng, n);
        if let Ok(bf) = BlindingFactor::new(b, n) {
            return bf;
        }
    }
}

/// `f · b^e mod n`
pub fn blind(f: &Integer, b: &BlindingFactor, key: &RsaPublicKey) -> Integer {
    let be = mod_pow(&b.0, &key.e, &key.n);
    Integer::from(f * be).rem_euc(&key.n)
}

/// `f'^d mod n`; the signer learns nothing about the unblinded `f`.
pub fn blind_sign(key: &RsaPrivateKey, blinded: &Integer) -> Integer {
    key.private_op(&Integer::from(blinded.rem_euc(&key.n)))
}

/// `s' · b^{-1} mod n`
pub fn unblind(
    blind_sig: &Integer,
    b: &BlindingFactor,
    n: &Integer,
) -> Result<Integer, CryptoError> {
    let inv = mod_inverse(&b.0, n).ok_or(CryptoError::InvalidBlindingFactor)?;
    Ok(Integer::from(blind_sig * inv).rem_euc(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> (RsaPublicKey, RsaPrivateKey) {
        RsaPrivateKey::from_primes(Integer::from(5), Integer::from(11), &Integer::from(3)).unwrap()
    }

    fn int(x: u32) -> Integer {
        Integer::from(x)
    }

    #[test]
    fn toy_key_matches_extended_euclid() {
        let (public, private) = toy();
        assert_eq!(public.n, 55);
        assert_eq!(private.d, 27);
        assert_eq!(Integer::from(&private.d * &public.e) % 40u32, 1);
    }

    #[test]
    fn forced_non_coprime_exponent_resamples() {
        let mut calls = 0;
        let (public, private) = rsa_keygen_with(6, &int(5), || {
            calls += 1;
            if calls == 1 {
                (int(5), int(11))
            } else {
                (int(7), int(5))
            }
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(public.n, 35);
        assert_eq!(Integer::from(&private.d * 5u32) % 24u32, 1);
        assert_eq!(
            RsaPrivateKey::from_primes(int(5), int(11), &int(5)).unwrap_err(),
            CryptoError::ExponentNotCoprime
        );
    }

    #[test]
    fn keygen_gives_up_after_bounded_retries() {
        let err = rsa_keygen_with(6, &int(5), || (int(5), int(11))).unwrap_err();
        assert_eq!(err, CryptoError::KeygenExhausted);
        assert_eq!(
            rsa_keygen(15, &int(3), &mut ChaCha20Rng::seed_from_u64(0)).unwrap_err(),
            CryptoError::InvalidKeySize(15)
        );
    }

    #[test]
    fn sign_vectors() {
        let (_, private) = toy();
        assert_eq!(rsa_sign(&private, &int(2)).unwrap(), 18);
        assert_eq!(rsa_sign(&private, &int(0)).unwrap(), 0);
        assert_eq!(rsa_sign(&private, &int(1)).unwrap(), 1);
        assert_eq!(
            rsa_sign(&private, &int(55)).unwrap_err(),
            CryptoError::MessageOutOfRange
        );
    }

    #[test]
    fn verify_vectors() {
        let (public, _) = toy();
        assert!(rsa_verify(&public, &int(2), &int(18)));
        assert!(!rsa_verify(&public, &int(2), &int(19)));
        assert!(!rsa_verify(&public, &int(3), &int(18)));
        assert!(!rsa_verify(&public, &int(2), &int(18 + 55)));
    }

    #[test]
    fn blinding_vectors() {
        let (public, private) = toy();
        let b = BlindingFactor::new(int(7), &public.n).unwrap();
        let blinded = blind(&int(2), &b, &public);
        assert_eq!(blinded, 26);
        let s_prime = blind_sign(&private, &blinded);
        assert_eq!(s_prime, 16);
        assert_eq!(unblind(&s_prime, &b, &public.n).unwrap(), 18);
        assert_eq!(blind(&int(0), &b, &public), 0);
        let one = BlindingFactor::new(int(1), &public.n).unwrap();
        assert_eq!(blind(&int(2), &one, &public), 2);
        assert_eq!(unblind(&int(16), &one, &public.n).unwrap(), 16);
        assert_eq!(blind_sign(&private, &int(1)), 1);
    }

    #[test]
    fn blinding_factor_rejects_non_units() {
        let n = int(55);
        for bad in [0u32, 5, 11, 22, 55, 60] {
            assert!(BlindingFactor::new(int(bad), &n).is_err(), "{bad}");
        }
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..500 {
            let b = sample_blinding(&n, &mut rng);
            assert_eq!(gcd(b.value(), &n), 1);
        }
    }

    #[test]
    fn generated_keys_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (public, private) = rsa_keygen(256, &int(65537), &mut rng).unwrap();
        assert_eq!(public.bits(), 256);
        assert_eq!(private.p.significant_bits(), 128);
        assert_eq!(private.q.significant_bits(), 128);
        let phi = Integer::from(&private.p - 1u32) * Integer::from(&private.q - 1u32);
        assert_eq!(Integer::from(&private.d * &public.e) % phi, 1);
        for _ in 0..100 {
            let m = random_below(&mut rng, &public.n);
            let s = rsa_sign(&private, &m).unwrap();
            assert!(rsa_verify(&public, &m, &s));
        }
    }

    #[test]
    fn openssl_and_gmp_private_ops_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for bits in [1024, 2048] {
            let (public, private) = rsa_keygen(bits, &int(65537), &mut rng).unwrap();
            assert!(private.engine.is_some());
            for m in [
                int(0),
                int(1),
                Integer::from(&public.n - 1u32),
                random_below(&mut rng, &public.n),
            ] {
                let s = private.private_op(&m);
                assert_eq!(s, private.private_op_gmp(&m));
                assert_eq!(s, mod_pow(&m, &private.d, &public.n));
            }
        }
        assert!(toy().1.engine.is_none());
    }
}
