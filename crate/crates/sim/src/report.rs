//! Metrics collected during a run and the machine-readable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::bus::NetworkStats;

/// Per-operation virtual latencies in microseconds.
#[derive(Debug, Default)]
pub struct Metrics {
    latencies: BTreeMap<String, Vec<u64>>,
    failures: BTreeMap<String, u64>,
}

impl Metrics {
    pub fn record(&mut self, op: &str, micros: u64, ok: bool) {
        if ok {
            self.latencies
                .entry(op.to_string())
                .or_default()
                .push(micros);
        } else {
            *self.failures.entry(op.to_string()).or_default() += 1;
        }
    }

    pub fn completed(&self) -> u64 {
        self.latencies.values().map(|v| v.len() as u64).sum()
    }

    pub fn summarize(&self) -> BTreeMap<String, OpStats> {
        let ops: std::collections::BTreeSet<&String> =
            self.latencies.keys().chain(self.failures.keys()).collect();
        ops.into_iter()
            .map(|op| {
                let mut v = self.latencies.get(op).cloned().unwrap_or_default();
                v.sort_unstable();
                let pct = |p: f64| {
                    if v.is_empty() {
                        return 0.0;
                    }
                    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
                    v[rank - 1] as f64 / 1000.0
                };
                let stats = OpStats {
                    count: v.len() as u64,
                    failures: self.failures.get(op).copied().unwrap_or(0),
                    p50_ms: pct(50.0),
                    p90_ms: pct(90.0),
                    p99_ms: pct(99.0),
                    max_ms: v.last().map_or(0.0, |&m| m as f64 / 1000.0),
                };
                (op.clone(), stats)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpStats {
    pub count: u64,
    pub failures: u64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreSize {
    pub coin_records: usize,
    pub coin_bytes: usize,
    pub withdrawal_records: usize,
    pub withdrawal_bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DoubleSpendStats {
    pub attempts: u64,
    pub rejections: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RefreshStats {
    pub sessions: u64,
    pub forfeited: u64,
    pub forfeited_value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditLine {
    pub value: String,
    pub issued: String,
    pub deposited: String,
    pub refunded: String,
    pub forfeited: String,
    pub violation: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Balances {
    pub customers_opening: String,
    pub customers: String,
    pub merchants: String,
    pub wallets: String,
    pub outstanding_coins: String,
    pub fees: String,
    pub forfeited: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub name: String,
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    /// True when every check passed.
    pub green: bool,
    pub checks: Vec<Check>,
    pub operations: BTreeMap<String, OpStats>,
    pub completed_ops: u64,
    pub virtual_seconds: f64,
    /// Completed operations per simulated second.
    pub throughput_ops_per_sec: f64,
    pub wall_seconds: f64,
    pub store: StoreSize,
    pub network: NetworkStats,
    pub double_spend: DoubleSpendStats,
    pub refresh: RefreshStats,
    pub audits: Vec<AuditLine>,
    pub balances: Balances,
    /// Scenario-specific results.
    pub outcomes: BTreeMap<String, serde_json::Value>,
    pub log_lines: usize,
    pub log_sha256: String,
}

impl MetricsReport {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let status = if self.green { "GREEN" } else { "RED" };
        let _ = writeln!(
            s,
            "{} ({}, seed {}, {} mode): {status}",
            self.name, self.scenario, self.seed, self.mode
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  [{}] {}: {}",
                if c.ok { "ok" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        for (op, st) in &self.operations {
            let _ = writeln!(
                s,
                "  {op:<12} n={:<6} fail={:<4} p50={:.1}ms p90={:.1}ms p99={:.1}ms",
                st.count, st.failures, st.p50_ms, st.p90_ms, st.p99_ms
            );
        }
        let _ = writeln!(
            s,
            "  {} ops in {:.2} simulated s ({:.1} ops/s), {:.2} s wall",
            self.completed_ops,
            self.virtual_seconds,
            self.throughput_ops_per_sec,
            self.wall_seconds
        );
        let n = &self.network;
        let _ = writeln!(
            s,
            "  network: {} messages, {} bytes, largest {} B, lost {}/{}, duplicated {}",
            n.messages, n.bytes, n.largest_message, n.lost_requests, n.lost_replies, n.duplicates
        );
        let _ = writeln!(
            s,
            "  store: {} coin records ({} B), {} withdrawal records ({} B)",
            self.store.coin_records,
            self.store.coin_bytes,
            self.store.withdrawal_records,
            self.store.withdrawal_bytes
        );
        let _ = writeln!(
            s,
            "  double spends rejected {}/{}; refresh sessions {} with {} forfeited",
            self.double_spend.rejections,
            self.double_spend.attempts,
            self.refresh.sessions,
            self.refresh.forfeited
        );
        let _ = writeln!(
            s,
            "  log: {} lines, sha256 {}",
            self.log_lines, self.log_sha256
        );
        s
    }
}
