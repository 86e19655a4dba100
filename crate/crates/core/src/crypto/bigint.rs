//! Big-integer helpers: fixed-width encodings and sampling from an injected RNG.

use rand::RngCore;
use rug::integer::Order;
use rug::Integer;

use super::CryptoError;

/// Number of bytes needed to hold `n`.
pub fn byte_len(n: &Integer) -> usize {
    (n.significant_bits() as usize).div_ceil(8)
}

/// Fixed-width big-endian encoding. Fails if `x` is negative or does not fit.
pub fn to_fixed_be(x: &Integer, width: usize) -> Result<Vec<u8>, CryptoError> {
    if x.cmp0().is_lt() || byte_len(x) > width {
        return Err(CryptoError::EncodingWidth { width });
    }
    let digits = x.to_digits::<u8>(Order::Msf);
    let mut out = vec![0u8; width - digits.len()];
    out.extend_from_slice(&digits);
    Ok(out)
}

/// Big-endian bytes to a non-negative integer.
pub fn from_be(bytes: &[u8]) -> Integer {
    Integer::from_digits(bytes, Order::Msf)
}

/// Uniform integer in `[0, bound)` by masked rejection sampling.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &Integer) -> Integer {
    assert!(bound.cmp0().is_gt(), "bound must be positive");
    let bits = bound.significant_bits();
    let nbytes = (bits as usize).div_ceil(8);
    let excess = (nbytes * 8) as u32 - bits;
    let mut buf = vec![0u8; nbytes];
    loop {
        rng.fill_bytes(&mut buf);
        if excess > 0 {
            buf[0] &= 0xff >> excess;
        }
        let x = from_be(&buf);
        if &x < bound {
            return x;
        }
    }
}

/// Uniform integer in `[low, high)`.
pub fn random_range<R: RngCore + ?Sized>(rng: &mut R, low: &Integer, high: &Integer) -> Integer {
    let span = Integer::from(high - low);
    random_below(rng, &span) + low
}

/// Random integer of exactly `bits` bits (top bit set).
pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u32) -> Integer {
    let top = Integer::from(1) << (bits - 1);
    random_below(rng, &top) + top
}

pub fn mod_pow(base: &Integer, exp: &Integer, modulus: &Integer) -> Integer {
    Integer::from(
        base.pow_mod_ref(exp, modulus)
            .expect("non-negative exponent"),
    )
}

pub fn mod_inverse(x: &Integer, modulus: &Integer) -> Option<Integer> {
    x.invert_ref(modulus).map(Integer::from)
}

pub fn gcd(a: &Integer, b: &Integer) -> Integer {
    Integer::from(a.gcd_ref(b))
}
