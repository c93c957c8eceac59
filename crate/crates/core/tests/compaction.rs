mod common;

use std::fs;

use common::*;
use memdb_core::storage::log::{segment_path, sparse_index_path};
use memdb_core::{Engine, Error};
use proptest::prelude::*;
use serde_json::json;

fn small_segments(dir: &std::path::Path) -> memdb_core::EngineConfig {
    let mut cfg = config(dir);
    cfg.storage.segment_max_bytes = 2_500;
    cfg
}

#[test]
fn five_patches_fold_into_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = open_with(small_segments(dir.path()), 10);
    let a = ns("c");
    let mut g = rng(1);
    let ids = engine
        .append_batch(&a, (0..8).map(|_| record("n", unit(&mut g, 8))).collect())
        .unwrap();
    let target = ids[3];
    for i in 0..5 {
        engine
            .update_meta(
                &a,
                target,
                [(format!("k{}", i % 3), json!(i)), ("last".to_string(), json!(i))].into(),
            )
            .unwrap();
    }
    let seg = engine.with_state(&a, |s| s.location(target).unwrap().segment).unwrap();
    let before = engine.get(&a, target).unwrap();
    let before_scan = engine.scan_window(&a, 1, i64::MAX, None).unwrap();
    engine.seal(&a).unwrap();
    assert!(engine.compaction_candidates(&a).contains(&seg));

    let size_before = fs::metadata(segment_path(&dir.path().join("c"), seg)).unwrap().len();
    let reclaimed = engine.compact(&a, seg).unwrap();
    let size_after = fs::metadata(segment_path(&dir.path().join("c"), seg)).unwrap().len();
    assert_eq!(reclaimed, size_before - size_after);
    assert!(reclaimed > 0);

    assert_eq!(engine.get(&a, target).unwrap(), before);
    assert_eq!(engine.scan_window(&a, 1, i64::MAX, None).unwrap(), before_scan);
    drop(engine);
    let (engine, _) = open_with(small_segments(dir.path()), 10);
    assert_eq!(engine.get(&a, target).unwrap(), before);
    assert_eq!(engine.get(&a, target).unwrap().meta.get("last"), Some(&json!(4)));
    assert!(sparse_index_path(&dir.path().join("c"), seg).exists());
}

#[test]
fn segment_without_patches_keeps_content() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_segments(dir.path());
    cfg.build_ivf_on_compact = false;
    let (engine, _) = open_with(cfg, 10);
    let a = ns("c");
    let mut g = rng(2);
    engine
        .append_batch(&a, (0..5).map(|_| record("n", unit(&mut g, 8))).collect())
        .unwrap();
    let seg = engine.seal(&a).unwrap();
    let before = engine.scan_window(&a, 1, i64::MAX, None).unwrap();
    let reclaimed = engine.compact(&a, seg).unwrap();
    assert_eq!(reclaimed, 0);
    assert_eq!(engine.scan_window(&a, 1, i64::MAX, None).unwrap(), before);
}

#[test]
fn active_and_unknown_segments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = open(dir.path(), 10);
    let a = ns("c");
    engine.append(&a, record("n", basis(2, 0))).unwrap();
    let active = engine.segments(&a).last().unwrap().segment_id;
    assert!(matches!(engine.compact(&a, active), Err(Error::SegmentActive(_))));
    assert!(matches!(engine.compact(&a, 999), Err(Error::SegmentNotFound(999))));
    assert!(matches!(engine.compact(&ns("none"), 1), Err(Error::SegmentNotFound(1))));
}

#[test]
fn leftover_temp_file_is_ignored_on_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let a = ns("c");
    let before;
    let seg;
    {
        let (engine, _) = open_with(small_segments(dir.path()), 10);
        let mut g = rng(3);
        let ids = engine
            .append_batch(&a, (0..6).map(|_| record("n", unit(&mut g, 8))).collect())
            .unwrap();
        engine
            .update_meta(&a, ids[0], [("x".to_string(), json!(1))].into())
            .unwrap();
        seg = engine.seal(&a).unwrap();
        before = engine.with_state(&a, |s| s.fingerprint()).unwrap();
    }
    // A compaction that died after writing part of its replacement.
    let path = segment_path(&dir.path().join("c"), seg);
    let original = fs::read(&path).unwrap();
    let tmp = path.with_extension("log.tmp");
    fs::write(&tmp, &original[..original.len() / 2]).unwrap();

    let (engine, _) = open_with(small_segments(dir.path()), 10);
    assert_eq!(engine.with_state(&a, |s| s.fingerprint()).unwrap(), before);
    assert!(!tmp.exists());
    assert_eq!(fs::read(&path).unwrap(), original);
    // The interrupted compaction can simply run again.
    let records = engine.scan_window(&a, 1, i64::MAX, None).unwrap();
    engine.compact(&a, seg).unwrap();
    assert_eq!(engine.scan_window(&a, 1, i64::MAX, None).unwrap(), records);
}

#[test]
fn appends_continue_during_and_after_compaction() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = open_with(small_segments(dir.path()), 10);
    let a = ns("c");
    let mut g = rng(4);
    let mut ids = Vec::new();
    for _ in 0..10 {
        ids.extend(
            engine
                .append_batch(&a, (0..4).map(|_| record("n", unit(&mut g, 8))).collect())
                .unwrap(),
        );
    }
    for id in ids.iter().step_by(3) {
        engine
            .update_meta(&a, *id, [("p".to_string(), json!(id.micros()))].into())
            .unwrap();
    }
    std::thread::scope(|s| {
        s.spawn(|| {
            for seg in engine.compaction_candidates(&a) {
                engine.compact(&a, seg).unwrap();
            }
        });
        s.spawn(|| {
            let mut g = rng(5);
            for _ in 0..20 {
                engine.append(&a, record("n", unit(&mut g, 8))).unwrap();
            }
            for id in ids.iter().step_by(5) {
                engine
                    .update_meta(&a, *id, [("q".to_string(), json!(1))].into())
                    .unwrap();
            }
        });
    });
    let live = engine.with_state(&a, |s| s.fingerprint()).unwrap();
    drop(engine);
    let engine = Engine::open(small_segments(dir.path())).unwrap();
    assert_eq!(engine.with_state(&a, |s| s.fingerprint()).unwrap(), live);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn compaction_preserves_every_window(
        patches in proptest::collection::vec((0usize..40, 0u8..4, 0i64..100), 0..60),
        windows in proptest::collection::vec((0usize..40, 0usize..40), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let (engine, _) = open_with(small_segments(dir.path()), 10);
        let a = ns("c");
        let mut g = rng(patches.len() as u64);
        let mut ids = Vec::new();
        for _ in 0..10 {
            ids.extend(engine.append_batch(&a, (0..4).map(|_| record("n", unit(&mut g, 8))).collect()).unwrap());
        }
        for (i, key, v) in &patches {
            engine.update_meta(&a, ids[*i], [(format!("k{key}"), json!(v))].into()).unwrap();
        }
        engine.seal(&a).unwrap();
        let windows: Vec<(i64, i64)> = windows
            .iter()
            .map(|(x, y)| (ids[*x.min(y)].micros(), ids[*x.max(y)].micros()))
            .collect();
        let scan = |e: &Engine| -> Vec<_> {
            windows.iter().map(|(lo, hi)| e.scan_window(&a, *lo, *hi, None).unwrap()).collect()
        };
        let before = scan(&engine);
        for seg in engine.compaction_candidates(&a) {
            engine.compact(&a, seg).unwrap();
        }
        prop_assert_eq!(&scan(&engine), &before);
        drop(engine);
        let engine = Engine::open(small_segments(dir.path())).unwrap();
        prop_assert_eq!(&scan(&engine), &before);
    }
}
