use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use cbdc_core::crypto::CryptoMode;
use cbdc_sim::adversary::{adversary_cheating_refresher, run_named};
use cbdc_sim::bench::{bench_deposits, bench_signing, bench_store_growth};
use cbdc_sim::scenario::{simulate, RunOutput};
use cbdc_sim::ScenarioConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cbdc-sim",
    about = "Simulation harness for the blind-signature token currency"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a scenario file (TOML, or JSON by extension).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: u64,
        /// Writes the JSON metrics report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Writes the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Measures signing rates and deposit throughput.
    Bench {
        /// Largest shard count; deposits are measured at 1, 2, 4, ... up to it.
        #[arg(long, default_value_t = 4)]
        shards: usize,
        /// Seconds per measurement.
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value = "full")]
        mode: CryptoMode,
        /// Worker threads for the deposit runs.
        #[arg(long, default_value_t = 8)]
        threads: usize,
        /// Also measure against a store whose shards each take this many
        /// milliseconds per request.
        #[arg(long)]
        service_ms: Option<f64>,
        /// Toy-mode deposits for the store growth run; 0 skips it.
        #[arg(long, default_value_t = 100_000)]
        growth: usize,
    },
    /// Runs one adversary.
    Adversary {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 3000)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        kappa: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            report,
            log,
        } => run(config, seed, report, log),
        Command::Bench {
            shards,
            duration,
            mode,
            threads,
            service_ms,
            growth,
        } => {
            bench(shards, duration, mode, threads, service_ms, growth);
            ExitCode::SUCCESS
        }
        Command::Adversary {
            name,
            trials,
            kappa,
            seed,
        } => adversary(&name, trials, kappa, seed),
    }
}

fn finish(out: &RunOutput, report: Option<PathBuf>, log: Option<PathBuf>) -> ExitCode {
    print!("{}", out.report.summary());
    let mut ok = true;
    if let Some(path) = report {
        ok &= write(&path, out.report.to_json() + "\n");
    }
    if let Some(path) = log {
        ok &= write(&path, out.log_text());
    }
    match out.check() {
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        Ok(()) if ok => ExitCode::SUCCESS,
        Ok(()) => ExitCode::FAILURE,
    }
}

fn write(path: &PathBuf, text: String) -> bool {
    std::fs::write(path, text)
        .map_err(|e| eprintln!("error: {}: {e}", path.display()))
        .is_ok()
}

fn run(config: PathBuf, seed: u64, report: Option<PathBuf>, log: Option<PathBuf>) -> ExitCode {
    let result = ScenarioConfig::from_path(&config).and_then(|mut cfg| {
        cfg.seed = seed;
        simulate(&cfg)
    });
    match result {
        Ok(out) => finish(&out, report, log),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn bench(
    shards: usize,
    duration: f64,
    mode: CryptoMode,
    threads: usize,
    service_ms: Option<f64>,
    growth: usize,
) {
    let d = Duration::from_secs_f64(duration);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("machine: {cores} logical cores");
    let s = bench_signing(mode, d, 1);
    println!(
        "signing ({} mode, RSA-{}), single thread:",
        s.mode, s.rsa_bits
    );
    println!("  blind_sign   {:>10.0} ops/s", s.blind_sign_per_sec);
    println!("  rsa_verify   {:>10.0} ops/s", s.rsa_verify_per_sec);
    println!("  coin_sign    {:>10.0} ops/s", s.coin_sign_per_sec);
    println!("  coin_verify  {:>10.0} ops/s", s.coin_verify_per_sec);

    let counts: Vec<usize> =
        std::iter::successors(Some(1usize), |&n| (n * 2 <= shards).then_some(n * 2)).collect();
    let pool = match mode {
        CryptoMode::Toy => 20_000,
        CryptoMode::Full => 2_000,
    };
    let mut variants = vec![None];
    if let Some(ms) = service_ms {
        variants.push(Some(Duration::from_secs_f64(ms / 1000.0)));
    }
    for service in variants {
        match service {
            None => println!("deposits, in-memory store, {threads} threads:"),
            Some(t) => println!(
                "deposits, {:.1} ms per store request per shard, {threads} threads:",
                t.as_secs_f64() * 1000.0
            ),
        }
        let mut base = None;
        for &n in &counts {
            let p = bench_deposits(n, threads, mode, service, pool, d, 7);
            let base = *base.get_or_insert(p.per_sec);
            println!(
                "  shards {:>3}: {:>10.0} deposits/s ({:.2}x)",
                n,
                p.per_sec,
                p.per_sec / base
            );
        }
    }
    if growth > 0 {
        println!("store growth, toy mode:");
        for g in bench_store_growth(growth, 10, 3) {
            println!(
                "  {:>8} deposits: {:>8} records {:>12} bytes",
                g.deposits, g.records, g.bytes
            );
        }
    }
}

fn adversary(name: &str, trials: usize, kappa: usize, seed: u64) -> ExitCode {
    if name == "cheating-refresher" {
        return match adversary_cheating_refresher(trials, kappa, seed) {
            Ok(f) => {
                println!(
                    "caught fraction {f:.4} over {trials} trials (expected {:.4})",
                    1.0 - 1.0 / kappa as f64
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }
    match run_named(name, trials, kappa, seed) {
        Ok(out) => finish(&out, None, None),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
