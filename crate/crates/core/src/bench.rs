//! Insert and query micro-benchmarks.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig};
use crate::model::{EmbeddingSet, Kind, Namespace, NewRecord};
use crate::query::{QuerySpec, RankingConfig, TimeWindow};
use crate::Result;

/// Reference single-insert latency in milliseconds.
pub const REFERENCE_INSERT_MS: f64 = 2.1;
/// Reference batch insert throughput in records per second.
pub const REFERENCE_BATCH_RPS: f64 = 9_000.0;

pub const TARGET_INSERT_P50_MS: f64 = 10.0;
pub const TARGET_BATCH_RPS: f64 = 2_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub records: usize,
    pub dimension: usize,
    pub batch_size: usize,
    pub single_inserts: usize,
    pub queries: usize,
    pub sync: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            records: 100_000,
            dimension: 768,
            batch_size: 100,
            single_inserts: 200,
            queries: 20,
            sync: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub insert_p50_ms: f64,
    pub insert_p99_ms: f64,
    pub batch_records_per_sec: f64,
    pub query_p50_ms: f64,
}

impl BenchReport {
    pub fn insert_ok(&self) -> bool {
        self.insert_p50_ms <= TARGET_INSERT_P50_MS
    }

    pub fn batch_ok(&self) -> bool {
        self.batch_records_per_sec >= TARGET_BATCH_RPS
    }

    /// Operation / measured / target / reference table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "records={} dim={} batch={} sync={}",
            self.config.records, self.config.dimension, self.config.batch_size, self.config.sync
        );
        let _ = writeln!(
            s,
            "{:<28} {:>14} {:>14} {:>14}",
            "operation", "measured", "target", "reference"
        );
        let _ = writeln!(
            s,
            "{:<28} {:>11.3} ms {:>11} ms {:>11} ms",
            "single insert (p50)", self.insert_p50_ms, "<= 10", REFERENCE_INSERT_MS
        );
        let _ = writeln!(
            s,
            "{:<28} {:>9.0} rec/s {:>9} rec/s {:>8} rec/s",
            "batch-100 insert", self.batch_records_per_sec, ">= 2000", "~9000"
        );
        let _ = writeln!(
            s,
            "{:<28} {:>11.3} ms {:>14} {:>14}",
            "hybrid query k=10 (p50)", self.query_p50_ms, "-", "-"
        );
        s
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(u) = crate::vector::normalize(&v) {
            return u;
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

/// Loads `records` in batches, then times single inserts and queries
/// against the loaded store. `dir` must be empty or absent.
pub fn run(dir: &Path, cfg: &BenchConfig) -> Result<BenchReport> {
    let mut econf = EngineConfig::new(dir);
    econf.storage.sync = cfg.sync;
    let engine = Engine::open(econf)?;
    let ns = Namespace::new("bench").expect("valid");
    let kind = Kind::new("observation").expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let make =
        |rng: &mut ChaCha8Rng| NewRecord::new(kind.clone(), EmbeddingSet::with_high(random_unit(rng, cfg.dimension)));

    let batch = cfg.batch_size.max(1);
    let mut loaded = 0;
    let mut batch_time = 0.0;
    while loaded < cfg.records {
        let n = batch.min(cfg.records - loaded);
        let records: Vec<_> = (0..n).map(|_| make(&mut rng)).collect();
        let t0 = Instant::now();
        engine.append_batch(&ns, records)?;
        batch_time += t0.elapsed().as_secs_f64();
        loaded += n;
    }
    let batch_records_per_sec = if batch_time > 0.0 {
        loaded as f64 / batch_time
    } else {
        0.0
    };

    let mut lat = Vec::with_capacity(cfg.single_inserts);
    for _ in 0..cfg.single_inserts {
        let r = make(&mut rng);
        let t0 = Instant::now();
        engine.append(&ns, r)?;
        lat.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    lat.sort_by(f64::total_cmp);

    let all = engine.scan_window(&ns, 1, i64::MAX, None)?;
    let (lo, hi) = match (all.first(), all.last()) {
        (Some(a), Some(b)) => (a.id_time.micros(), b.id_time.micros()),
        _ => (1, 1),
    };
    drop(all);
    let mut qlat = Vec::with_capacity(cfg.queries);
    for _ in 0..cfg.queries {
        let spec = QuerySpec::new(TimeWindow::new(lo, hi), 10)
            .vector(random_unit(&mut rng, cfg.dimension))
            .ranking(RankingConfig::default());
        let t0 = Instant::now();
        engine.query(&ns, &spec)?;
        qlat.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    qlat.sort_by(f64::total_cmp);

    Ok(BenchReport {
        config: cfg.clone(),
        insert_p50_ms: percentile(&lat, 0.5),
        insert_p99_ms: percentile(&lat, 0.99),
        batch_records_per_sec,
        query_p50_ms: percentile(&qlat, 0.5),
    })
}
