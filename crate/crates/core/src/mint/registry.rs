//! Denomination keys and their validity windows.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::RngCore;
use rug::Integer;
use serde::{Deserialize, Serialize};

use super::MintError;
use crate::amount::Amount;
use crate::clock::Timestamp;
use crate::crypto::{rsa_keygen, RsaPrivateKey, RsaPublicKey};
use crate::wire::{sha256, DenomId, KeysDocument, PublishedDenomination, RevocationNotice, Uint};

/// One row of a denomination schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenominationSpec {
    pub value: Amount,
    pub withdraw_start: Timestamp,
    pub withdraw_end: Timestamp,
    pub deposit_end: Timestamp,
    pub legal_end: Timestamp,
    #[serde(default)]
    pub refresh_fee: Amount,
}

impl DenominationSpec {
    /// Windows are `withdraw_start < withdraw_end <= deposit_end <= legal_end`.
    pub fn validate(&self) -> Result<(), MintError> {
        if self.value.is_zero() {
            return Err(MintError::Config(
                "denomination value must be positive".into(),
            ));
        }
        if !(self.withdraw_start < self.withdraw_end
            && self.withdraw_end <= self.deposit_end
            && self.deposit_end <= self.legal_end)
        {
            return Err(MintError::Config(format!(
                "denomination {} has ill-ordered windows",
                self.value
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DenominationKey {
    pub denom_id: DenomId,
    pub spec: DenominationSpec,
    pub public: RsaPublicKey,
    pub private: RsaPrivateKey,
}

impl DenominationKey {
    pub fn new(
        spec: DenominationSpec,
        public: RsaPublicKey,
        private: RsaPrivateKey,
    ) -> Result<Self, MintError> {
        spec.validate()?;
        let denom_id = denom_id_of(&public);
        Ok(DenominationKey {
            denom_id,
            spec,
            public,
            private,
        })
    }

    pub fn value(&self) -> Amount {
        self.spec.value
    }

    pub fn can_withdraw(&self, now: Timestamp) -> bool {
        self.spec.withdraw_start <= now && now <= self.spec.withdraw_end
    }

    pub fn can_deposit(&self, now: Timestamp) -> bool {
        now <= self.spec.deposit_end
    }
}

pub fn denom_id_of(public: &RsaPublicKey) -> DenomId {
    DenomId(sha256(&[&public.to_bytes()]))
}

/// Canonical field order of the published registry document.
#[derive(Serialize)]
struct RegistryEntry<'a> {
    denom_id: String,
    value: u64,
    e: String,
    n: String,
    withdraw_start: Timestamp,
    withdraw_end: Timestamp,
    deposit_end: Timestamp,
    legal_end: Timestamp,
    refresh_fee: u64,
    revoked: bool,
    #[serde(skip)]
    _key: std::marker::PhantomData<&'a ()>,
}

/// All denominations the mint signs with. Keys are immutable once set up;
/// only the revocation set changes.
#[derive(Debug)]
pub struct DenominationRegistry {
    keys: BTreeMap<DenomId, Arc<DenominationKey>>,
    order: Vec<DenomId>,
    revoked: RwLock<HashMap<DenomId, Timestamp>>,
}

impl DenominationRegistry {
    pub fn from_keys(keys: Vec<DenominationKey>) -> Result<Self, MintError> {
        if keys.is_empty() {
            return Err(MintError::Config("empty denomination schedule".into()));
        }
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for key in keys {
            order.push(key.denom_id);
            if map.insert(key.denom_id, Arc::new(key)).is_some() {
                return Err(MintError::Config("duplicate denomination key".into()));
            }
        }
        Ok(DenominationRegistry {
            keys: map,
            order,
            revoked: RwLock::default(),
        })
    }

    pub fn get(&self, id: &DenomId) -> Result<Arc<DenominationKey>, MintError> {
        self.keys
            .get(id)
            .cloned()
            .ok_or(MintError::UnknownDenomination)
    }

    pub fn by_value(&self, value: Amount) -> Vec<Arc<DenominationKey>> {
        self.iter().filter(|k| k.value() == value).collect()
    }

    /// Keys in schedule order.
    pub fn iter(&self) -> impl Iterator<Item = Arc<DenominationKey>> + '_ {
        self.order.iter().map(|id| self.keys[id].clone())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_revoked(&self, id: &DenomId) -> bool {
        self.revoked.read().contains_key(id)
    }

    /// Marks a key revoked. Repeating the call returns the original notice.
    pub fn revoke(&self, id: &DenomId, now: Timestamp) -> Result<RevocationNotice, MintError> {
        self.get(id)?;
        let at = *self.revoked.write().entry(*id).or_insert(now);
        Ok(RevocationNotice {
            denom_id: *id,
            revoked_at: at,
        })
    }

    pub fn revocations(&self) -> Vec<RevocationNotice> {
        let revoked = self.revoked.read();
        self.order
            .iter()
            .filter_map(|id| {
                revoked.get(id).map(|at| RevocationNotice {
                    denom_id: *id,
                    revoked_at: *at,
                })
            })
            .collect()
    }

    /// The public registry as JSON text: per denomination, `denom_id`, `value`,
    /// `e`, `n` (fixed-width lowercase hex), the four windows in epoch
    /// seconds, `refresh_fee` and `revoked`.
    pub fn document(&self) -> String {
        let entries: Vec<RegistryEntry> = self
            .iter()
            .map(|k| {
                let w = k.public.width();
                RegistryEntry {
                    denom_id: k.denom_id.to_string(),
                    value: k.value().minor(),
                    e: hex::encode(Uint::from_int(&k.public.e, w).unwrap().0),
                    n: hex::encode(Uint::from_int(&k.public.n, w).unwrap().0),
                    withdraw_start: k.spec.withdraw_start,
                    withdraw_end: k.spec.withdraw_end,
                    deposit_end: k.spec.deposit_end,
                    legal_end: k.spec.legal_end,
                    refresh_fee: k.spec.refresh_fee.minor(),
                    revoked: self.is_revoked(&k.denom_id),
                    _key: std::marker::PhantomData,
                }
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("registry serializes")
    }

    pub fn version(&self) -> [u8; 32] {
        sha256(&[self.document().as_bytes()])
    }

    /// Binary view served at `/keys`.
    pub fn published(&self, mint_pub: Uint) -> KeysDocument {
        let denominations = self
            .iter()
            .map(|k| {
                let w = k.public.width();
                PublishedDenomination {
                    denom_id: k.denom_id,
                    value: k.value(),
                    e: Uint::from_int(&k.public.e, w).unwrap(),
                    n: Uint::from_int(&k.public.n, w).unwrap(),
                    withdraw_start: k.spec.withdraw_start,
                    withdraw_end: k.spec.withdraw_end,
                    deposit_end: k.spec.deposit_end,
                    legal_end: k.spec.legal_end,
                    refresh_fee: k.spec.refresh_fee,
                    revoked: self.is_revoked(&k.denom_id),
                }
            })
            .collect();
        KeysDocument {
            version: self.version(),
            mint_pub,
            denominations,
        }
    }
}

/// Generates one key per schedule row.
pub fn setup_denominations<R: RngCore + ?Sized>(
    schedule: &[DenominationSpec],
    key_bits: u32,
    public_exponent: &Integer,
    rng: &mut R,
) -> Result<DenominationRegistry, MintError> {
    if schedule.is_empty() {
        return Err(MintError::Config("empty denomination schedule".into()));
    }
    let mut keys = Vec::with_capacity(schedule.len());
    for spec in schedule {
        spec.validate()?;
        let (public, private) = rsa_keygen(key_bits, public_exponent, rng)
            .map_err(|e| MintError::Config(e.to_string()))?;
        keys.push(DenominationKey::new(spec.clone(), public, private)?);
    }
    DenominationRegistry::from_keys(keys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn spec(value: u64) -> DenominationSpec {
        DenominationSpec {
            value: Amount::from_minor(value),
            withdraw_start: 0,
            withdraw_end: 100,
            deposit_end: 200,
            legal_end: 300,
            refresh_fee: Amount::ZERO,
        }
    }

    #[test]
    fn two_denominations_distinct_ids() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let reg =
            setup_denominations(&[spec(100), spec(500)], 256, &Integer::from(3), &mut rng).unwrap();
        assert_eq!(reg.len(), 2);
        let ids: Vec<_> = reg.iter().map(|k| k.denom_id).collect();
        assert_ne!(ids[0], ids[1]);
        assert_eq!(reg.by_value(Amount::from_minor(500)).len(), 1);
        assert!(matches!(
            reg.get(&DenomId([0; 32])),
            Err(MintError::UnknownDenomination)
        ));
    }

    #[test]
    fn config_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(
            setup_denominations(&[], 256, &Integer::from(3), &mut rng),
            Err(MintError::Config(_))
        ));
        let mut bad = spec(100);
        bad.withdraw_end = 250;
        assert!(matches!(
            setup_denominations(&[bad], 256, &Integer::from(3), &mut rng),
            Err(MintError::Config(_))
        ));
        assert!(matches!(
            setup_denominations(&[spec(0)], 256, &Integer::from(3), &mut rng),
            Err(MintError::Config(_))
        ));
    }

    #[test]
    fn published_view_and_document() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let reg = setup_denominations(&[spec(100)], 256, &Integer::from(3), &mut rng).unwrap();
        let id = reg.iter().next().unwrap().denom_id;
        let v1 = reg.version();
        let doc = reg.document();
        let fields: Vec<usize> = [
            "denom_id",
            "\"value",
            "\"e\"",
            "\"n\"",
            "withdraw_start",
            "withdraw_end",
            "deposit_end",
            "legal_end",
            "refresh_fee",
            "revoked",
        ]
        .iter()
        .map(|f| doc.find(f).unwrap())
        .collect();
        assert!(fields.windows(2).all(|w| w[0] < w[1]), "{doc}");
        assert!(!doc.contains(&reg.get(&id).unwrap().private.d.to_string_radix(16)));

        let n1 = reg.revoke(&id, 50).unwrap();
        let n2 = reg.revoke(&id, 60).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(reg.version(), v1);
        assert!(reg.published(Uint(vec![1])).denominations[0].revoked);
        assert_eq!(reg.revocations(), vec![n1]);
    }
}
