use std::collections::HashMap;

use parking_lot::Mutex;

use super::{shard_route, CasOutcome, KvStore, ShardMap, StoreError, StoreStats, Versioned};

/// One mutex-guarded map per shard.
pub struct MemoryStore {
    map: ShardMap,
    shards: Vec<Mutex<HashMap<Vec<u8>, Versioned>>>,
}

impl MemoryStore {
    pub fn new(map: ShardMap) -> Self {
        let shards = (0..map.shard_count())
            .map(|_| Mutex::new(HashMap::new()))
            .collect();
        MemoryStore { map, shards }
    }

    pub(super) fn apply(
        shard: &mut HashMap<Vec<u8>, Versioned>,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> CasOutcome {
        let current = shard.get(key).map(|v| v.version);
        if current != expected {
            return CasOutcome::Conflict;
        }
        match value {
            Some(value) => {
                let version = expected.map_or(1, |v| v + 1);
                shard.insert(key.to_vec(), Versioned { version, value });
            }
            None => {
                shard.remove(key);
            }
        }
        CasOutcome::Applied
    }
}

impl KvStore for MemoryStore {
    fn shard_map(&self) -> &ShardMap {
        &self.map
    }

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError> {
        Ok(self.shards[shard_route(key, &self.map)]
            .lock()
            .get(key)
            .cloned())
    }

    fn compare_and_set(
        &self,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> Result<CasOutcome, StoreError> {
        let mut shard = self.shards[shard_route(key, &self.map)].lock();
        Ok(Self::apply(&mut shard, key, expected, value))
    }

    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError> {
        for shard in &self.shards {
            let shard = shard.lock();
            let mut keys: Vec<_> = shard.keys().collect();
            keys.sort();
            for k in keys {
                visit(k, &shard[k]);
            }
        }
        Ok(())
    }

    fn stats(&self) -> StoreStats {
        let mut stats = StoreStats::default();
        for shard in &self.shards {
            let shard = shard.lock();
            stats.records += shard.len();
            stats.bytes += shard
                .iter()
                .map(|(k, v)| k.len() + v.value.len() + 8)
                .sum::<usize>();
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cas_semantics() {
        let store = MemoryStore::new(ShardMap::uniform(2));
        assert_eq!(
            store.compare_and_set(b"k", Some(1), Some(vec![1])).unwrap(),
            CasOutcome::Conflict
        );
        assert_eq!(
            store.compare_and_set(b"k", None, Some(vec![1])).unwrap(),
            CasOutcome::Applied
        );
        assert_eq!(
            store.compare_and_set(b"k", None, Some(vec![2])).unwrap(),
            CasOutcome::Conflict
        );
        assert_eq!(
            store.get(b"k").unwrap(),
            Some(Versioned {
                version: 1,
                value: vec![1]
            })
        );
        assert_eq!(
            store.compare_and_set(b"k", Some(1), Some(vec![3])).unwrap(),
            CasOutcome::Applied
        );
        assert_eq!(store.get(b"k").unwrap().unwrap().version, 2);
        assert_eq!(
            store.compare_and_set(b"k", Some(2), None).unwrap(),
            CasOutcome::Applied
        );
        assert_eq!(store.get(b"k").unwrap(), None);
        assert_eq!(store.stats().records, 0);
    }
}
