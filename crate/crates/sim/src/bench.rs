//! Throughput measurements: signing per core, deposits against shard count,
//! and mint store growth.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cbdc_core::crypto::{
    blind, blind_sign, coin_sig_verify, coin_sign, group_keygen, rsa_keygen, rsa_verify,
    sample_blinding, unblind, CryptoMode,
};
use cbdc_core::deploy::{open_schedule, Deployment, DeploymentSpec};
use cbdc_core::mint::{coin_digest, MintStores};
use cbdc_core::store::{
    shard_route, CasOutcome, KvStore, MemoryStore, ShardMap, StoreError, StoreStats, Versioned,
};
use cbdc_core::wallet::sign_payment;
use cbdc_core::wire::DepositRequest;
use cbdc_core::Amount;
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct SignBench {
    pub mode: String,
    pub rsa_bits: u32,
    pub blind_sign_per_sec: f64,
    pub rsa_verify_per_sec: f64,
    pub coin_sign_per_sec: f64,
    pub coin_verify_per_sec: f64,
}

/// Runs `op` repeatedly for `duration` and returns operations per second.
fn rate(duration: Duration, mut op: impl FnMut()) -> f64 {
    let start = Instant::now();
    let mut n = 0u64;
    while n == 0 || start.elapsed() < duration {
        op();
        n += 1;
    }
    n as f64 / start.elapsed().as_secs_f64()
}

/// Single-threaded signing and verification rates. Each measurement gets
/// `duration`.
pub fn bench_signing(mode: CryptoMode, duration: Duration, seed: u64) -> SignBench {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bits = mode.rsa_bits();
    let (public, private) =
        rsa_keygen(bits, &mode.public_exponent(), &mut rng).expect("key generation");
    let f = coin_digest(&public, b"benchmark coin").expect("digest");
    let b = sample_blinding(&public.n, &mut rng);
    let blinded = blind(&f, &b, &public);
    let s = unblind(&blind_sign(&private, &blinded), &b, &public.n).expect("unit");
    assert!(rsa_verify(&public, &f, &s));
    let group = mode.group();
    let key = group_keygen(&group, &mut rng);
    let sig = coin_sign(key.private(), b"msg", &group, &mut rng);
    SignBench {
        mode: format!("{mode:?}").to_lowercase(),
        rsa_bits: bits,
        blind_sign_per_sec: rate(duration, || {
            std::hint::black_box(blind_sign(&private, &blinded));
        }),
        rsa_verify_per_sec: rate(duration, || {
            std::hint::black_box(rsa_verify(&public, &f, &s));
        }),
        coin_sign_per_sec: rate(duration, || {
            std::hint::black_box(coin_sign(key.private(), b"msg", &group, &mut rng));
        }),
        coin_verify_per_sec: rate(duration, || {
            std::hint::black_box(coin_sig_verify(key.public(), b"msg", &sig, &group));
        }),
    }
}

/// A store whose shards each serve one request at a time and take a fixed
/// service time per request, modelling a partition bound by storage latency
/// rather than by this machine's cores.
pub struct LatencyStore<S> {
    inner: S,
    service: Duration,
    shards: Vec<Mutex<()>>,
}

impl<S: KvStore> LatencyStore<S> {
    pub fn new(inner: S, service: Duration) -> Self {
        let shards = (0..inner.shard_map().shard_count())
            .map(|_| Mutex::new(()))
            .collect();
        LatencyStore {
            inner,
            service,
            shards,
        }
    }

    fn serve<T>(&self, key: &[u8], op: impl FnOnce(&S) -> T) -> T {
        let _busy = self.shards[shard_route(key, self.inner.shard_map())].lock();
        std::thread::sleep(self.service);
        op(&self.inner)
    }
}

impl<S: KvStore> KvStore for LatencyStore<S> {
    fn shard_map(&self) -> &ShardMap {
        self.inner.shard_map()
    }

    fn get(&self, key: &[u8]) -> Result<Option<Versioned>, StoreError> {
        self.serve(key, |s| s.get(key))
    }

    fn compare_and_set(
        &self,
        key: &[u8],
        expected: Option<u64>,
        value: Option<Vec<u8>>,
    ) -> Result<CasOutcome, StoreError> {
        self.serve(key, |s| s.compare_and_set(key, expected, value))
    }

    fn scan(&self, visit: &mut dyn FnMut(&[u8], &Versioned)) -> Result<(), StoreError> {
        self.inner.scan(visit)
    }

    fn stats(&self) -> StoreStats {
        self.inner.stats()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DepositPoint {
    pub shards: usize,
    pub threads: usize,
    /// Per-request service time of the modelled store, if any.
    pub service_ms: Option<f64>,
    pub deposits: u64,
    pub rejected: u64,
    pub seconds: f64,
    pub per_sec: f64,
}

/// A deployment with one bank and a pool of signed deposits ready to submit.
struct DepositFixture {
    deployment: Deployment,
    requests: Vec<DepositRequest>,
}

fn deposit_fixture(
    shards: usize,
    mode: CryptoMode,
    service: Option<Duration>,
    count: usize,
    seed: u64,
) -> DepositFixture {
    let unit = Amount::units(1);
    let spec = DeploymentSpec {
        mode,
        rsa_bits: None,
        denominations: open_schedule(&[unit], Amount::ZERO, 1_000, 1_000_000),
        kappa: 3,
        shards,
        seed,
        start_time: 1_000,
    };
    let memory = MemoryStore::new(ShardMap::uniform(shards));
    let coins: Arc<dyn KvStore> = match service {
        Some(t) => Arc::new(LatencyStore::new(memory, t)),
        None => Arc::new(memory),
    };
    let stores = MintStores {
        coins,
        withdrawals: Arc::new(MemoryStore::new(ShardMap::uniform(shards))),
    };
    let mut d = Deployment::new(&spec, stores).expect("deployment");
    let funds = Amount::units(count as u64 + 1);
    let bank = d.add_bank("bank-bench", funds).expect("bank");
    let shop = d.merchant(&bank, "shop-bench");
    let mut wallet = d.customer(&bank, "bench", funds, seed);
    let denom = d.registry.iter().next().expect("one denomination").denom_id;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
    let requests = (0..count)
        .map(|_| {
            let coin = wallet.withdraw_denomination(&denom).expect("withdrawal");
            wallet.remove(&coin.coin_pub);
            let contract = shop
                .create_contract(unit, b"bench", &mut rng)
                .expect("positive");
            sign_payment(&coin, &contract, unit, &d.group, &mut rng)
        })
        .collect();
    DepositFixture {
        deployment: d,
        requests,
    }
}

/// Deposits throughput with `threads` workers against a mint whose coin
/// store has `shards` partitions. Prepares `pool` signed deposits first and
/// submits them until they run out or `duration` passes.
pub fn bench_deposits(
    shards: usize,
    threads: usize,
    mode: CryptoMode,
    service: Option<Duration>,
    pool: usize,
    duration: Duration,
    seed: u64,
) -> DepositPoint {
    let fx = deposit_fixture(shards, mode, service, pool, seed);
    let mint = fx.deployment.mint.clone();
    let next = AtomicUsize::new(0);
    let rejected = AtomicUsize::new(0);
    let start = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| {
                while start.elapsed() < duration {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = fx.requests.get(i) else { break };
                    if mint.deposit(req).is_err() {
                        rejected.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    let seconds = start.elapsed().as_secs_f64();
    let attempted = next.load(Ordering::Relaxed).min(fx.requests.len()) as u64;
    let rejected = rejected.load(Ordering::Relaxed) as u64;
    let deposits = attempted - rejected;
    DepositPoint {
        shards,
        threads: threads.max(1),
        service_ms: service.map(|t| t.as_secs_f64() * 1000.0),
        deposits,
        rejected,
        seconds,
        per_sec: deposits as f64 / seconds,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthPoint {
    pub deposits: usize,
    pub records: usize,
    pub bytes: usize,
}

/// Withdraws and deposits `total` toy-mode coins, sampling the coin store
/// size `samples` times.
pub fn bench_store_growth(total: usize, samples: usize, seed: u64) -> Vec<GrowthPoint> {
    let unit = Amount::units(1);
    let mut spec = DeploymentSpec::toy(&[unit], seed);
    spec.shards = 4;
    let mut d = Deployment::in_memory(&spec).expect("deployment");
    let funds = Amount::units(total as u64 + 1);
    let bank = d.add_bank("bank-bench", funds).expect("bank");
    let shop = d.merchant(&bank, "shop-bench");
    let mut wallet = d.customer(&bank, "bench", funds, seed);
    let denom = d.registry.iter().next().expect("one denomination").denom_id;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 2);
    let every = (total / samples.max(1)).max(1);
    let mut out = Vec::new();
    for i in 1..=total {
        let coin = wallet.withdraw_denomination(&denom).expect("withdrawal");
        wallet.remove(&coin.coin_pub);
        let contract = shop
            .create_contract(unit, b"growth", &mut rng)
            .expect("positive");
        let req = sign_payment(&coin, &contract, unit, &d.group, &mut rng);
        d.mint.deposit(&req).expect("fresh coin deposits");
        if i % every == 0 || i == total {
            let s = d.mint.coin_store().stats();
            out.push(GrowthPoint {
                deposits: i,
                records: s.records,
                bytes: s.bytes,
            });
        }
    }
    out
}
