//! Derivation of a change coin's blinding factor and private key from a
//! transfer secret. Both the wallet (from `t_i` and `C`) and the mint (from
//! the revealed `t_i`) run this; so does the original owner after `link`.

use rug::Integer;

use super::bigint::from_be;
use super::fdh::{expand, fdh};
use super::group::{GroupKeyPair, GroupParams, TransferSecret};
use super::rsa::{BlindingFactor, RsaPublicKey};
use super::CryptoError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshDerivation {
    pub blinding: BlindingFactor,
    pub coin_key: GroupKeyPair,
}

pub fn derive_refresh(
    secret: &TransferSecret,
    denom: &RsaPublicKey,
    params: &GroupParams,
) -> Result<RefreshDerivation, CryptoError> {
    let mut blind_input = secret.as_bytes().to_vec();
    blind_input.extend_from_slice(b"blind");
    let b = fdh(&denom.n, &blind_input)?;
    let blinding = BlindingFactor::new(b, &denom.n)?;

    let mut coin_input = secret.as_bytes().to_vec();
    coin_input.extend_from_slice(b"coin");
    let wide = from_be(&expand(0, &coin_input, params.scalar_width() + 16));
    let c = wide % Integer::from(&params.q - 1u32) + 1u32;
    let coin_key = GroupKeyPair::from_private(params, c)?;
    Ok(RefreshDerivation { blinding, coin_key })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::bigint::gcd;
    use crate::crypto::group::{group_keygen, kx};
    use crate::crypto::rsa::rsa_keygen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_valid() {
        let params = GroupParams::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (denom, _) = rsa_keygen(256, &Integer::from(3), &mut rng).unwrap();
        let mut seen = HashSet::new();
        for i in 0..10_000 {
            let c = group_keygen(&params, &mut rng);
            let t = group_keygen(&params, &mut rng);
            let k = kx(t.private(), c.public(), &params).unwrap();
            let a = derive_refresh(&k, &denom, &params).unwrap();
            if i < 1000 {
                assert_eq!(a, derive_refresh(&k, &denom, &params).unwrap());
                assert_eq!(gcd(a.blinding.value(), &denom.n), 1);
            }
            assert!(seen.insert(a.coin_key.private().clone()));
        }
    }

    #[test]
    fn both_sides_derive_same_values() {
        let params = GroupParams::tiny();
        let denom = RsaPublicKey {
            e: Integer::from(3),
            n: Integer::from(55),
        };
        for c in 1..11u32 {
            for t in 1..11u32 {
                let big_c = params.exp_g(&Integer::from(c));
                let big_t = params.exp_g(&Integer::from(t));
                let k1 = kx(&Integer::from(t), &big_c, &params).unwrap();
                let k2 = kx(&Integer::from(c), &big_t, &params).unwrap();
                assert_eq!(
                    derive_refresh(&k1, &denom, &params).unwrap(),
                    derive_refresh(&k2, &denom, &params).unwrap()
                );
            }
        }
    }
}
