use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use super::memory::MemoryStore;
use super::{shard_route, CasOutcome, KvStore, ShardMap, StoreError, StoreStats, Versioned};

const OP_PUT: u8 = 1;
const OP_DELETE: u8 = 0;

struct Shard {
    index: HashMap<Vec<u8>, Versioned>,
    log: File,
}

/// Single-node persistent store: an append-only log per shard, replayed into
/// memory on open. A torn record at the tail of a log is discarded.
pub struct FileStore {
    map: ShardMap,
    dir: PathBuf,
    sync: bool,
    shards: Vec<Mutex<Shard>>,
}

impl FileStore {
    /// Opens or creates a store in `dir`. An existing store must have been
    /// created with the same shard map.
    pub fn open(dir: impl AsRef<Path>, map: ShardMap, sync: bool) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let meta_path = dir.join("shards");
        let meta: String = map.bounds().iter().map(|b| format!("{b}\n")).collect();
        if meta_path.exists() {
            if fs::read_to_string(&meta_path)? != meta {
                return Err(StoreError::Corrupt(
                    "shard map differs from the one on disk".into(),
                ));
            }
        } else {
            fs::write(&meta_path, &meta)?;
        }
        let mut shards = Vec::with_capacity(map.shard_count());
        for i in 0..map.shard_count() {
            let path = dir.join(format!("shard-{i}.log"));
            let (index, valid_len) = replay(&path)?;
            let log = OpenOptions::new()
                .create(true)
                .append(true)
                .read(true)
                .open(&path)?;
            if log.metadata()?.len() != valid_len {
                log.set_len(valid_len)?;
            }
            shards.push(Mutex::new(Shard { index, log }));
        }
        Ok(FileStore {
            map,
            dir,
            sync,
            shards,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn replay(path: &Path) -> Result<(HashMap<Vec<u8>, Versioned>, u64), StoreError> {
    let mut index = HashMap::new();
    let mut data = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut data)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((index, 0)),
        Err(e) => return Err(e.into()),
    }
    let mut pos = 0usize;
    while let Some((op, version, key, value, next)) = parse_record(&data, pos) {
        match op {
            OP_PUT => {
                index.insert(key, Versioned { version, value });
            }
            OP_DELETE => {
                index.remove(&key);
            }
            other => return Err(StoreError::Corrupt(format!("unknown log op {other}"))),
        }
        pos = next;
    }
    Ok((index, pos as u64))
}

type Record = (u8, u64, Vec<u8>, Vec<u8>, usize);

fn parse_record(data: &[u8], mut pos: usize) -> Option<Record> {
    let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
        let out = data.get(*pos..pos.checked_add(n)?)?;
        *pos += n;
        Some(out)
    };
    let op = take(&mut pos, 1)?[0];
    let version = u64::from_be_bytes(take(&mut pos, 8)?.try_into().ok()?);
    let klen = u16::from_be_bytes(take(&mut pos, 2)?.try_into().ok()?) as usize;
    let key = take(&mut pos, klen)?.to_vec();
    let vlen = u32::from_be_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
    let value = take(&mut pos, vlen)?.to_vec();
    Some((op, version, key, value, pos))
}

fn encode_record(op: u8, version: u64, key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(15 + key.len() + value.len());
    out.push(op);
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(key.len() as u16).to_be_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&(value.len() as u32).to_be_bytes());
    out.extend_from_slice(value);
    out
}

impl KvStore for FileStore {
    fn shard_map(&self) -> &ShardMap {
        &self.map
    }

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError> {
        Ok(self.shards[shard_route(key, &self.map)]
            .lock()
            .index
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
        if shard.index.get(key).map(|v| v.version) != expected {
            return Ok(CasOutcome::Conflict);
        }
        let record = match &value {
            Some(v) => encode_record(OP_PUT, expected.map_or(1, |e| e + 1), key, v),
            None => encode_record(OP_DELETE, 0, key, &[]),
        };
        shard.log.write_all(&record)?;
        if self.sync {
            shard.log.sync_data()?;
        }
        Ok(MemoryStore::apply(&mut shard.index, key, expected, value))
    }

    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError> {
        for shard in &self.shards {
            let shard = shard.lock();
            let mut keys: Vec<_> = shard.index.keys().collect();
            keys.sort();
            for k in keys {
                visit(k, &shard.index[k]);
            }
        }
        Ok(())
    }

    fn stats(&self) -> StoreStats {
        let mut stats = StoreStats::default();
        for shard in &self.shards {
            let shard = shard.lock();
            stats.records += shard.index.len();
            stats.bytes += shard
                .index
                .iter()
                .map(|(k, v)| k.len() + v.value.len() + 8)
                .sum::<usize>();
        }
        stats
    }
}
