//! In-process message bus with a virtual clock. Every call is a request
//! envelope delivered to a named endpoint and a reply carried back; the bus
//! draws loss, duplication and latency from its own seeded RNG, so the same
//! seed and call sequence always produce the same log.

use std::collections::BTreeMap;
use std::sync::{Arc, Weak};

use cbdc_core::clock::{ManualClock, Timestamp};
use cbdc_core::observe::{ProtocolStep, StepObserver};
use cbdc_core::rpc::Link;
use cbdc_core::wire::{sha256, MsgType};
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::config::{FaultModel, LatencyDist};

pub type Handler = Arc<dyn Fn(&[u8]) -> Vec<u8> + Send + Sync>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetworkStats {
    pub messages: u64,
    pub bytes: u64,
    pub largest_message: u64,
    pub lost_requests: u64,
    pub lost_replies: u64,
    pub duplicates: u64,
    /// Duplicated requests whose second reply differed from the first.
    pub divergent_duplicates: u64,
}

/// A message as seen on the wire, kept when tapping is enabled.
#[derive(Clone, Debug)]
pub struct Tapped {
    pub from: String,
    pub to: String,
    pub bytes: Vec<u8>,
}

struct State {
    now_us: u64,
    rng: ChaCha20Rng,
    faults: FaultModel,
    log: Vec<String>,
    stats: NetworkStats,
    clock: Option<(Arc<ManualClock>, Timestamp)>,
    tap: Option<Vec<Tapped>>,
}

impl State {
    fn advance(&mut self, us: u64) {
        self.now_us += us;
        if let Some((clock, epoch)) = &self.clock {
            clock.set(epoch + self.now_us / 1_000_000);
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.gen_bool(p)
    }

    fn latency_us(&mut self) -> u64 {
        let ms = match self.faults.latency {
            LatencyDist::Fixed { ms } => ms,
            LatencyDist::Uniform { min_ms, max_ms } if max_ms > min_ms => {
                self.rng.gen_range(min_ms..=max_ms)
            }
            LatencyDist::Uniform { min_ms, .. } => min_ms,
            LatencyDist::Exponential { mean_ms } => Exp::new(1.0 / mean_ms)
                .expect("positive mean")
                .sample(&mut self.rng),
        };
        (ms * 1000.0).round() as u64
    }

    fn timeout_us(&self) -> u64 {
        (self.faults.timeout_ms * 1000.0).round() as u64
    }

    fn line(&mut self, text: String) {
        self.log.push(format!("{:>12} {text}", self.now_us));
    }

    fn wire(&mut self, from: &str, to: &str, bytes: &[u8], fate: &str) {
        let ty = bytes
            .get(1)
            .and_then(|&c| MsgType::from_code(c))
            .map_or("?", MsgType::name);
        let digest = hex::encode(&sha256(&[bytes])[..4]);
        self.line(format!("{from}>{to} {ty} {}B {digest} {fate}", bytes.len()));
    }

    fn count(&mut self, from: &str, to: &str, bytes: &[u8]) {
        self.stats.messages += 1;
        self.stats.bytes += bytes.len() as u64;
        self.stats.largest_message = self.stats.largest_message.max(bytes.len() as u64);
        if let Some(tap) = &mut self.tap {
            tap.push(Tapped {
                from: from.into(),
                to: to.into(),
                bytes: bytes.to_vec(),
            });
        }
    }
}

pub struct Bus {
    state: Mutex<State>,
    endpoints: RwLock<BTreeMap<String, Handler>>,
}

impl Bus {
    pub fn new(faults: FaultModel, seed: u64) -> Arc<Self> {
        let state = State {
            now_us: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            faults,
            log: Vec::new(),
            stats: NetworkStats::default(),
            clock: None,
            tap: None,
        };
        Arc::new(Bus {
            state: Mutex::new(state),
            endpoints: RwLock::new(BTreeMap::new()),
        })
    }

    /// Keeps `clock` at `epoch` plus elapsed virtual seconds.
    pub fn drive_clock(&self, clock: Arc<ManualClock>, epoch: Timestamp) {
        clock.set(epoch);
        self.state.lock().clock = Some((clock, epoch));
    }

    pub fn register(&self, name: &str, handler: Handler) {
        self.endpoints.write().insert(name.to_string(), handler);
    }

    pub fn set_faults(&self, faults: FaultModel) {
        self.state.lock().faults = faults;
    }

    pub fn now_us(&self) -> u64 {
        self.state.lock().now_us
    }

    /// Moves virtual time forward to `us` if it lies ahead.
    pub fn advance_to(&self, us: u64) {
        let mut st = self.state.lock();
        if us > st.now_us {
            let d = us - st.now_us;
            st.advance(d);
        }
    }

    pub fn note(&self, text: impl Into<String>) {
        self.state.lock().line(text.into());
    }

    pub fn start_tap(&self) {
        self.state.lock().tap = Some(Vec::new());
    }

    pub fn take_tap(&self) -> Vec<Tapped> {
        self.state.lock().tap.take().unwrap_or_default()
    }

    pub fn stats(&self) -> NetworkStats {
        self.state.lock().stats.clone()
    }

    pub fn log(&self) -> Vec<String> {
        self.state.lock().log.clone()
    }

    /// Delivers `request` from `from` to the endpoint `to` and carries the
    /// reply back. `None` when either leg was lost; the caller's clock then
    /// advances by the timeout.
    pub fn exchange(&self, from: &str, to: &str, request: Vec<u8>) -> Option<Vec<u8>> {
        let handler = self.endpoints.read().get(to).cloned();
        let duplicate = {
            let mut st = self.state.lock();
            st.count(from, to, &request);
            let loss = st.faults.loss;
            if handler.is_none() || st.chance(loss) {
                let t = st.timeout_us();
                st.advance(t);
                st.stats.lost_requests += 1;
                st.wire(from, to, &request, "lost");
                return None;
            }
            let lat = st.latency_us();
            st.advance(lat);
            let dup = st.faults.duplication;
            let duplicate = st.chance(dup);
            st.wire(
                from,
                to,
                &request,
                if duplicate { "deliver+dup" } else { "deliver" },
            );
            duplicate
        };
        let handler = handler.expect("checked above");
        let reply = handler(&request);
        if duplicate {
            let again = handler(&request);
            let mut st = self.state.lock();
            st.stats.duplicates += 1;
            if again != reply {
                st.stats.divergent_duplicates += 1;
            }
            st.wire(to, from, &again, "dup-reply-dropped");
        }
        let mut st = self.state.lock();
        st.count(to, from, &reply);
        let loss = st.faults.loss;
        if st.chance(loss) {
            let t = st.timeout_us();
            st.advance(t);
            st.stats.lost_replies += 1;
            st.wire(to, from, &reply, "lost");
            return None;
        }
        let lat = st.latency_us();
        st.advance(lat);
        st.wire(to, from, &reply, "deliver");
        Some(reply)
    }

    pub fn link(self: &Arc<Self>, from: &str, to: &str) -> BusLink {
        BusLink {
            bus: self.clone(),
            from: from.into(),
            to: to.into(),
        }
    }

    /// Observer that writes protocol steps into the log.
    pub fn observer(self: &Arc<Self>) -> Arc<dyn StepObserver> {
        Arc::new(BusObserver(Arc::downgrade(self)))
    }
}

/// One caller's connection to one endpoint.
pub struct BusLink {
    bus: Arc<Bus>,
    from: String,
    to: String,
}

impl Link for BusLink {
    fn exchange(&self, request: Vec<u8>) -> Option<Vec<u8>> {
        self.bus.exchange(&self.from, &self.to, request)
    }
}

struct BusObserver(Weak<Bus>);

impl StepObserver for BusObserver {
    fn step(&self, actor: &str, step: ProtocolStep) {
        if let Some(bus) = self.0.upgrade() {
            bus.note(format!("step {} {actor}", step.label()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_bus(faults: FaultModel, seed: u64) -> Arc<Bus> {
        let bus = Bus::new(faults, seed);
        bus.register("echo", Arc::new(|req: &[u8]| req.to_vec()));
        bus
    }

    #[test]
    fn reliable_bus_delivers_and_advances_time() {
        let faults = FaultModel {
            latency: LatencyDist::Fixed { ms: 5.0 },
            ..FaultModel::default()
        };
        let bus = echo_bus(faults, 1);
        assert_eq!(
            bus.exchange("a", "echo", vec![1, 2, 3]),
            Some(vec![1, 2, 3])
        );
        assert_eq!(bus.now_us(), 10_000);
        assert_eq!(bus.stats().messages, 2);
        assert_eq!(bus.exchange("a", "nobody", vec![1]), None);
        assert_eq!(bus.now_us(), 210_000);
    }

    #[test]
    fn same_seed_same_log() {
        let faults = FaultModel {
            loss: 0.2,
            duplication: 0.3,
            ..FaultModel::default()
        };
        let run = |seed| {
            let bus = echo_bus(faults.clone(), seed);
            for i in 0..200u8 {
                bus.exchange("a", "echo", vec![1, i]);
            }
            bus.log()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn fault_rates_match_configuration() {
        let faults = FaultModel {
            loss: 0.1,
            duplication: 0.25,
            ..FaultModel::default()
        };
        let bus = echo_bus(faults, 3);
        let n = 20_000;
        let delivered = (0..n)
            .filter(|_| bus.exchange("a", "echo", vec![0]).is_some())
            .count();
        let s = bus.stats();
        let lost = s.lost_requests as f64 / n as f64;
        assert!((lost - 0.1).abs() < 0.01, "{lost}");
        let dup = s.duplicates as f64 / (n as f64 - s.lost_requests as f64);
        assert!((dup - 0.25).abs() < 0.015, "{dup}");
        assert_eq!(
            delivered as u64,
            n as u64 - s.lost_requests - s.lost_replies
        );
        assert_eq!(s.divergent_duplicates, 0);
    }
}
