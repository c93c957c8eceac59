#![allow(dead_code)]

pub mod oracle;

use std::path::Path;
use std::sync::Arc;

use memdb_core::{EmbeddingSet, Engine, EngineConfig, Kind, ManualClock, Namespace, NewRecord, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ns(name: &str) -> Namespace {
    Namespace::new(name).unwrap()
}

pub fn kind(k: &str) -> Kind {
    Kind::new(k).unwrap()
}

pub fn ts(v: i64) -> Timestamp {
    Timestamp::new(v).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (f64::from(*x) / n) as f32).collect();
        }
    }
}

pub fn basis(d: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

pub fn record(k: &str, v: Vec<f32>) -> NewRecord {
    NewRecord::new(kind(k), EmbeddingSet::with_high(v))
}

pub fn config(dir: &Path) -> EngineConfig {
    let mut c = EngineConfig::new(dir);
    c.storage.sync = false;
    c
}

pub fn open(dir: &Path, start: i64) -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start));
    let engine = Engine::open_with_clock(config(dir), clock.clone()).unwrap();
    (engine, clock)
}

pub fn open_with(cfg: EngineConfig, start: i64) -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start));
    let engine = Engine::open_with_clock(cfg, clock.clone()).unwrap();
    (engine, clock)
}
