//! Range-sharded key-value storage for the mint's spent-coin database.
//!
//! Keys are routed by the first eight bytes of their SHA-256 hash into one
//! of `shard_count` contiguous ranges. Every call touches exactly one shard;
//! there are no cross-shard operations. Updates are optimistic: read a
//! versioned value, compute, then `compare_and_set` against that version.

mod file;
mod memory;

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::wire::sha256;

pub use file::FileStore;
pub use memory::MemoryStore;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Versioned {
    pub version: u64,
    pub value: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CasOutcome {
    Applied,
    Conflict,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub records: usize,
    pub bytes: usize,
}

pub trait KvStore: Send + Sync {
    fn shard_map(&self) -> &ShardMap;

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError>;

    /// Writes `value` (or deletes, for `None`) iff the current version equals
    /// `expected` (`None` meaning absent). The new version is `expected + 1`.
    fn compare_and_set(
        &self,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> Result<CasOutcome, StoreError>;

    /// Visits every record, one shard at a time.
    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError>;

    fn stats(&self) -> StoreStats;
}

/// Contiguous ranges of the 64-bit key-hash space, one per shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardMap {
    /// Inclusive upper bound of each shard's range, ascending; the last is `u64::MAX`.
    bounds: Vec<u64>,
}

impl ShardMap {
    /// `count` equal-width ranges.
    pub fn uniform(count: usize) -> Self {
        assert!(count >= 1, "need at least one shard");
        let width = u64::MAX / count as u64;
        let mut bounds: Vec<u64> = (1..count as u64).map(|i| i * width - 1).collect();
        bounds.push(u64::MAX);
        ShardMap { bounds }
    }

    pub fn from_bounds(bounds: Vec<u64>) -> Option<Self> {
        let ascending = bounds.windows(2).all(|w| w[0] < w[1]);
        (ascending && bounds.last() == Some(&u64::MAX)).then_some(ShardMap { bounds })
    }

    pub fn shard_count(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[u64] {
        &self.bounds
    }
}

pub fn key_point(key: &[u8]) -> u64 {
    let h = sha256(&[key]);
    u64::from_be_bytes(h[..8].try_into().unwrap())
}

/// Shard owning `key`.
pub fn shard_route(key: &[u8], map: &ShardMap) -> usize {
    let point = key_point(key);
    map.bounds.partition_point(|&b| b < point)
}

/// Wraps a store and records which shards each caller touched.
pub struct InstrumentedStore<S> {
    inner: S,
    touched: Arc<Mutex<Vec<usize>>>,
}

impl<S: KvStore> InstrumentedStore<S> {
    pub fn new(inner: S) -> Self {
        InstrumentedStore {
            inner,
            touched: Arc::default(),
        }
    }

    /// Distinct shards touched since the last call; clears the log.
    pub fn take_touched(&self) -> BTreeSet<usize> {
        self.touched.lock().drain(..).collect()
    }

    fn note(&self, key: &[u8]) {
        self.touched
            .lock()
            .push(shard_route(key, self.inner.shard_map()));
    }
}

impl<S: KvStore> KvStore for InstrumentedStore<S> {
    fn shard_map(&self) -> &ShardMap {
        self.inner.shard_map()
    }

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError> {
        self.note(key);
        self.inner.get(key)
    }

    fn compare_and_set(
        &self,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> Result<CasOutcome, StoreError> {
        self.note(key);
        self.inner.compare_and_set(key, expected, value)
    }

    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError> {
        self.inner.scan(visit)
    }

    fn stats(&self) -> StoreStats {
        self.inner.stats()
    }
}

impl<S: KvStore + ?Sized> KvStore for Arc<S> {
    fn shard_map(&self) -> &ShardMap {
        (**self).shard_map()
    }

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError> {
        (**self).get(key)
    }

    fn compare_and_set(
        &self,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> Result<CasOutcome, StoreError> {
        (**self).compare_and_set(key, expected, value)
    }

    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError> {
        (**self).scan(visit)
    }

    fn stats(&self) -> StoreStats {
        (**self).stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn single_shard_routes_everything_to_zero() {
        let map = ShardMap::uniform(1);
        for i in 0..100u32 {
            assert_eq!(shard_route(&i.to_be_bytes(), &map), 0);
        }
    }

    #[test]
    fn uniform_map_balances_random_keys() {
        let map = ShardMap::uniform(4);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let mut key = [0u8; 64];
            rng.fill_bytes(&mut key);
            counts[shard_route(&key, &map)] += 1;
        }
        for c in counts {
            assert!((2300..=2700).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn bounds_partition_the_space() {
        let map = ShardMap::uniform(3);
        assert_eq!(map.bounds().last(), Some(&u64::MAX));
        assert!(ShardMap::from_bounds(vec![5, 3, u64::MAX]).is_none());
        assert!(ShardMap::from_bounds(vec![5, 7]).is_none());
        let custom = ShardMap::from_bounds(vec![10, u64::MAX]).unwrap();
        assert_eq!(custom.shard_count(), 2);
    }

    #[test]
    fn routing_is_independent_of_contents() {
        let store = MemoryStore::new(ShardMap::uniform(4));
        let key = b"coin".to_vec();
        let before = shard_route(&key, store.shard_map());
        for i in 0..200u32 {
            store
                .compare_and_set(&i.to_be_bytes(), None, Some(vec![1]))
                .unwrap();
        }
        assert_eq!(shard_route(&key, store.shard_map()), before);
    }
}
