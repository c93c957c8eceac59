#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use memdb_core::{Engine, EngineConfig, HashEmbedder, ManualClock};
use memdb_service::Dispatcher;

pub const DIM: usize = 8;

pub fn engine_config(dir: &Path) -> EngineConfig {
    let mut cfg = EngineConfig::new(dir);
    cfg.storage.sync = false;
    cfg
}

pub fn engine(dir: &Path, start: i64) -> (Arc<Engine>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start));
    let engine = Engine::open_with_clock(engine_config(dir), clock.clone()).unwrap();
    engine.embedders().set_default(Arc::new(HashEmbedder::new(DIM, 0)));
    (Arc::new(engine), clock)
}

pub fn dispatcher(dir: &Path, start: i64) -> (Dispatcher, Arc<ManualClock>) {
    let (engine, clock) = engine(dir, start);
    (Dispatcher::new(engine), clock)
}
