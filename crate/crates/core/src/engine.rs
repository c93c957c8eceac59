//! The embeddable engine: one data directory, many namespaces.
//!
//! Each namespace has a single writer (a mutex around its log) and a
//! reader-writer lock around its materialized state. A commit appends one
//! group to the log and then applies it to the state under the write lock,
//! so readers only ever observe complete groups.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::coherence::{self, CoherenceConfig, CoherenceSample, PlanePoint};
use crate::embedder::{Embedder, EmbedderRegistry};
use crate::maintenance::{self, MaintenancePlan, MaintenanceReport};
use crate::model::{
    mint_timestamp, validate_meta, validate_record, validate_shape, Edge, EdgeId, Kind, MemoryRecord, Meta, Namespace,
    NewEdge, NewRecord, Timestamp, ValidationError, Vector, HIGH_VIEW,
};
use crate::query::{self, QueryContext, QuerySpec, RankedHit};
use crate::state::{Location, NamespaceState};
use crate::storage::codec::{encode_group, LogEntry};
use crate::storage::log::{
    ivf_path, remove_temp_files, rewrite_segment, segment_path, sparse_index_path, write_atomic, LogWriter,
    SegmentInfo, SparseIndex, StorageConfig,
};
use crate::storage::recovery::recover;
use crate::vector::{IvfIndex, IvfParams, VectorView};
use crate::{Error, Result};

pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub ivf: IvfParams,
    /// Train an IVF sidecar for each segment that is compacted.
    #[serde(default = "yes")]
    pub build_ivf_on_compact: bool,
}

fn yes() -> bool {
    true
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            data_dir: data_dir.into(),
            storage: StorageConfig::default(),
            ivf: IvfParams::default(),
            build_ivf_on_compact: true,
        }
    }
}

struct WriterState {
    log: LogWriter,
    /// `(timestamp, entry offset)` of every record, per segment.
    offsets: BTreeMap<u64, Vec<(Timestamp, u64)>>,
}

struct Shard {
    ns: Namespace,
    dir: PathBuf,
    writer: Mutex<WriterState>,
    state: RwLock<NamespaceState>,
    ivf: RwLock<BTreeMap<u64, IvfIndex>>,
    maintenance: Mutex<()>,
}

/// Per-namespace counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamespaceStats {
    pub namespace: Namespace,
    pub records: usize,
    pub edges: usize,
    pub pruned_edges: usize,
    pub segments: usize,
    pub sealed_segments: usize,
    pub bytes: u64,
    pub ivf_indexes: usize,
    pub coherence_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_sample: Option<CoherenceSample>,
    pub maintenance_cycles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_report: Option<MaintenanceReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub records: usize,
    pub edges: usize,
    pub namespaces: Vec<NamespaceStats>,
}

pub struct Engine {
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    embedders: EmbedderRegistry,
    shards: RwLock<BTreeMap<Namespace, Arc<Shard>>>,
    _lock: File,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("data_dir", &self.config.data_dir)
            .field("namespaces", &self.shards.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Engine {
    pub fn open(config: EngineConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    /// Opens the data directory, taking its lock and recovering every
    /// namespace found in it.
    pub fn open_with_clock(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        fs::create_dir_all(&config.data_dir)?;
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(config.data_dir.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(Error::DataDirLocked(config.data_dir.clone())),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }

        let mut shards = BTreeMap::new();
        let mut dirs: Vec<_> = fs::read_dir(&config.data_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
            .filter_map(|e| Namespace::new(e.file_name().to_string_lossy().into_owned()).ok())
            .collect();
        dirs.sort();
        for ns in dirs {
            let shard = Self::open_shard(&config, ns.clone())?;
            shards.insert(ns, Arc::new(shard));
        }
        Ok(Engine {
            config,
            clock,
            embedders: EmbedderRegistry::new(),
            shards: RwLock::new(shards),
            _lock: lock,
        })
    }

    fn open_shard(config: &EngineConfig, ns: Namespace) -> Result<Shard> {
        let dir = config.data_dir.join(ns.as_str());
        fs::create_dir_all(&dir)?;
        let removed = remove_temp_files(&dir)?;
        if removed > 0 {
            tracing::info!(namespace = %ns, removed, "removed leftover temp files");
        }
        let rec = recover(&dir)?;
        let log = LogWriter::open(&dir, config.storage.clone(), rec.segments, rec.active_valid_len)?;
        tracing::debug!(namespace = %ns, records = rec.state.record_count(), "namespace recovered");
        Ok(Shard {
            ns,
            dir,
            writer: Mutex::new(WriterState {
                log,
                offsets: rec.record_offsets,
            }),
            state: RwLock::new(rec.state),
            ivf: RwLock::new(rec.ivf),
            maintenance: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::new(self.clock.now_micros().max(1)).expect("positive")
    }

    pub fn embedders(&self) -> &EmbedderRegistry {
        &self.embedders
    }

    pub fn namespaces(&self) -> Vec<Namespace> {
        self.shards.read().keys().cloned().collect()
    }

    fn shard(&self, ns: &Namespace) -> Option<Arc<Shard>> {
        self.shards.read().get(ns).cloned()
    }

    fn shard_or_create(&self, ns: &Namespace) -> Result<Arc<Shard>> {
        if let Some(s) = self.shard(ns) {
            return Ok(s);
        }
        let mut shards = self.shards.write();
        if let Some(s) = shards.get(ns) {
            return Ok(s.clone());
        }
        let shard = Arc::new(Self::open_shard(&self.config, ns.clone())?);
        shards.insert(ns.clone(), shard.clone());
        Ok(shard)
    }

    /// Appends `entries` as one commit group and applies it to the state.
    fn commit(&self, shard: &Shard, w: &mut WriterState, entries: Vec<LogEntry>) -> Result<()> {
        let (bytes, rel) = encode_group(&entries);
        let first_record = entries.iter().find_map(|e| match e {
            LogEntry::Record(r) => Some(r.id_time),
            _ => None,
        });
        if w.log.needs_roll(bytes.len() as u64, first_record) {
            let active = w.log.active().segment_id;
            let records = w.offsets.get(&active).cloned().unwrap_or_default();
            w.log.seal_active(&records)?;
            tracing::debug!(namespace = %shard.ns, segment = active, "segment sealed");
        }
        let written = w.log.append_encoded(&entries, &bytes, &rel)?;
        let mut state = shard.state.write();
        for (entry, offset) in entries.into_iter().zip(written.offsets) {
            if let LogEntry::Record(r) = &entry {
                w.offsets.entry(written.segment).or_default().push((r.id_time, offset));
            }
            let location = Location {
                segment: written.segment,
                offset,
            };
            state.apply(entry, location).map_err(|e| Error::CorruptInterior {
                segment: written.segment,
                offset,
                reason: e.0,
            })?;
        }
        Ok(())
    }

    // ----- writes -------------------------------------------------------

    pub fn append(&self, ns: &Namespace, record: NewRecord) -> Result<Timestamp> {
        Ok(self.append_batch(ns, vec![record])?[0])
    }

    /// Appends `records` atomically. Returned timestamps are ascending.
    pub fn append_batch(&self, ns: &Namespace, records: Vec<NewRecord>) -> Result<Vec<Timestamp>> {
        self.append_inner(ns, records, true)
    }

    /// Appends records from an older format without the unit-norm check.
    /// Shapes, kinds and metadata are still validated.
    pub fn import_legacy(&self, ns: &Namespace, records: Vec<NewRecord>) -> Result<Vec<Timestamp>> {
        self.append_inner(ns, records, false)
    }

    fn append_inner(&self, ns: &Namespace, records: Vec<NewRecord>, check_norm: bool) -> Result<Vec<Timestamp>> {
        if records.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let shard = self.shard_or_create(ns)?;
        let mut w = shard.writer.lock();
        let (mut last, mut dims) = {
            let state = shard.state.read();
            (state.last_minted(), state.dims())
        };
        let mut entries = Vec::with_capacity(records.len());
        let mut ids = Vec::with_capacity(records.len());
        for new in records {
            let wall = new.at.unwrap_or_else(|| self.clock.now_micros());
            let ts = mint_timestamp(wall, last);
            let record = new.into_record(ts);
            if check_norm {
                validate_record(&record, &dims)?;
            } else {
                validate_shape(&record.kind, &record.embeddings, &dims)?;
                validate_meta(&record.meta)?;
            }
            for (view, v) in record.embeddings.iter() {
                dims.entry(view.to_string()).or_insert(v.len());
            }
            last = Some(ts);
            ids.push(ts);
            entries.push(LogEntry::Record(record));
        }
        self.commit(&shard, &mut w, entries)?;
        Ok(ids)
    }

    /// Merges `patch` into the record's metadata; returns the new map.
    pub fn update_meta(&self, ns: &Namespace, id: Timestamp, patch: Meta) -> Result<Meta> {
        validate_meta(&patch)?;
        let shard = self.shard(ns).ok_or(Error::NotFound(id))?;
        let mut w = shard.writer.lock();
        if !shard.state.read().contains(id) {
            return Err(Error::NotFound(id));
        }
        self.commit(&shard, &mut w, vec![LogEntry::MetaPatch { id_time: id, patch }])?;
        let state = shard.state.read();
        Ok(state.get(id).expect("patched record exists").meta.clone())
    }

    pub fn add_edge(&self, ns: &Namespace, edge: NewEdge) -> Result<Edge> {
        Ok(self.add_edges(ns, vec![edge])?.remove(0))
    }

    /// Adds edges atomically, assigning ids and creation times.
    pub fn add_edges(&self, ns: &Namespace, edges: Vec<NewEdge>) -> Result<Vec<Edge>> {
        if edges.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let shard = self.shard(ns).ok_or(Error::SourceNotFound(edges[0].source))?;
        let mut w = shard.writer.lock();
        let (mut next_id, last_created) = {
            let state = shard.state.read();
            for e in &edges {
                if !state.contains(e.source) {
                    return Err(Error::SourceNotFound(e.source));
                }
            }
            (state.next_edge_id(), state.last_edge_created())
        };
        let created_at = mint_edge_time(self.clock.now_micros(), last_created);
        let mut out = Vec::with_capacity(edges.len());
        for e in edges {
            if e.relationship.is_empty() {
                return Err(ValidationError::EmptyRelationship.into());
            }
            validate_meta(&e.meta)?;
            out.push(Edge {
                edge_id: EdgeId(next_id),
                source: e.source,
                destination: e.destination,
                destination_namespace: e.destination_namespace.filter(|d| d != ns),
                relationship: e.relationship,
                weight: e.weight,
                meta: e.meta,
                created_at,
            });
            next_id += 1;
        }
        self.commit(&shard, &mut w, out.iter().cloned().map(LogEntry::Edge).collect())?;
        Ok(out)
    }

    /// Marks decayed edges as pruned at `now`. Returns how many were pruned.
    pub fn decay_and_prune(
        &self,
        ns: &Namespace,
        now: Timestamp,
        half_life: Duration,
        floor: f64,
        limit: Option<usize>,
    ) -> Result<usize> {
        if half_life.is_zero() {
            return Err(Error::InvalidConfig("half_life must be positive".into()));
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::InvalidConfig("floor must be in (0, 1)".into()));
        }
        let Some(shard) = self.shard(ns) else { return Ok(0) };
        let mut w = shard.writer.lock();
        let ids = shard
            .state
            .read()
            .graph()
            .prune_candidates(now, half_life, floor, limit);
        if ids.is_empty() {
            return Ok(0);
        }
        let n = ids.len();
        let entries = ids
            .into_iter()
            .map(|edge_id| LogEntry::Prune {
                edge_id,
                pruned_at: now,
            })
            .collect();
        self.commit(&shard, &mut w, entries)?;
        Ok(n)
    }

    /// Replaces or adds one view on existing records.
    pub(crate) fn write_view_patches(
        &self,
        ns: &Namespace,
        patches: Vec<(Timestamp, String, Vector)>,
    ) -> Result<usize> {
        if patches.is_empty() {
            return Ok(0);
        }
        let shard = self.shard(ns).ok_or(Error::NotFound(patches[0].0))?;
        let mut w = shard.writer.lock();
        {
            let state = shard.state.read();
            let dims = state.dims();
            for (id, view, v) in &patches {
                if !state.contains(*id) {
                    return Err(Error::NotFound(*id));
                }
                if let Some(&d) = dims.get(view) {
                    if d != v.len() {
                        return Err(ValidationError::DimensionMismatch {
                            view: view.clone(),
                            expected: d,
                            actual: v.len(),
                        }
                        .into());
                    }
                }
            }
        }
        let n = patches.len();
        let entries = patches
            .into_iter()
            .map(|(id_time, view, vector)| LogEntry::ViewPatch { id_time, view, vector })
            .collect();
        self.commit(&shard, &mut w, entries)?;
        Ok(n)
    }

    pub(crate) fn write_report(&self, ns: &Namespace, report: MaintenanceReport) -> Result<()> {
        let shard = self.shard_or_create(ns)?;
        let mut w = shard.writer.lock();
        self.commit(&shard, &mut w, vec![LogEntry::MaintenanceReport(report)])
    }

    /// Forces the active segment to stable storage.
    pub fn flush(&self) -> Result<()> {
        let shards: Vec<_> = self.shards.read().values().cloned().collect();
        for s in shards {
            s.writer.lock().log.sync()?;
        }
        Ok(())
    }

    /// Seals the active segment of `ns` so it can be compacted.
    pub fn seal(&self, ns: &Namespace) -> Result<u64> {
        let shard = self
            .shard(ns)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown namespace {ns}")))?;
        let mut w = shard.writer.lock();
        let active = w.log.active().segment_id;
        let records = w.offsets.get(&active).cloned().unwrap_or_default();
        w.log.seal_active(&records)?;
        Ok(active)
    }

    // ----- reads --------------------------------------------------------

    pub fn get(&self, ns: &Namespace, id: Timestamp) -> Result<Arc<MemoryRecord>> {
        self.shard(ns)
            .and_then(|s| s.state.read().get(id).cloned())
            .ok_or(Error::NotFound(id))
    }

    /// Records with `start ≤ id_time ≤ end`, ascending.
    pub fn scan_window(
        &self,
        ns: &Namespace,
        start: i64,
        end: i64,
        kind: Option<&Kind>,
    ) -> Result<Vec<Arc<MemoryRecord>>> {
        let Some((lo, hi)) = query::TimeWindow::new(start, end).bounds()? else {
            return Ok(Vec::new());
        };
        Ok(self
            .shard(ns)
            .map(|s| s.state.read().scan_window(lo, hi, kind))
            .unwrap_or_default())
    }

    pub fn edges_out(
        &self,
        ns: &Namespace,
        source: Timestamp,
        relationship: Option<&str>,
        as_of: Option<Timestamp>,
    ) -> Vec<Arc<Edge>> {
        self.shard(ns)
            .map(|s| s.state.read().graph().edges_out(source, relationship, as_of))
            .unwrap_or_default()
    }

    pub fn edges_in(&self, ns: &Namespace, destination: Timestamp, as_of: Option<Timestamp>) -> Vec<Arc<Edge>> {
        self.shard(ns)
            .map(|s| s.state.read().graph().edges_in(destination, as_of))
            .unwrap_or_default()
    }

    /// Runs `f` against a consistent snapshot of the namespace state.
    pub fn with_state<R>(&self, ns: &Namespace, f: impl FnOnce(&NamespaceState) -> R) -> Option<R> {
        self.shard(ns).map(|s| f(&s.state.read()))
    }

    fn resolve(&self, home: &Namespace, home_state: &NamespaceState, edge: &Edge) -> Option<Arc<MemoryRecord>> {
        match &edge.destination_namespace {
            Some(other) if other != home => self.get(other, edge.destination).ok(),
            _ => home_state.get(edge.destination).cloned(),
        }
    }

    /// Mean pair coherence over edges created in `[start, end]` whose
    /// endpoints both resolve.
    pub fn local_coherence(
        &self,
        ns: &Namespace,
        start: i64,
        end: i64,
        cfg: &CoherenceConfig,
    ) -> Result<CoherenceSample> {
        cfg.validate()?;
        if start > end {
            return Err(Error::InvalidWindow { start, end });
        }
        let now = self.now();
        let pairs = self.window_pairs(ns, start, end);
        let (lo, hi) = clamp_window(start, end);
        coherence::local_coherence(pairs.iter().map(|(a, b)| (a.as_ref(), b.as_ref())), lo, hi, cfg, now)
    }

    fn window_pairs(&self, ns: &Namespace, start: i64, end: i64) -> Vec<(Arc<MemoryRecord>, Arc<MemoryRecord>)> {
        let Some(shard) = self.shard(ns) else { return Vec::new() };
        if end < 1 {
            return Vec::new();
        }
        let (lo, hi) = clamp_window(start, end);
        let (edges, local) = {
            let state = shard.state.read();
            let edges = state.graph().created_between(lo, hi);
            let mut local = Vec::with_capacity(edges.len());
            for e in &edges {
                let src = state.get(e.source).cloned();
                let dst = match &e.destination_namespace {
                    Some(other) if other != ns => None,
                    _ => state.get(e.destination).cloned(),
                };
                local.push((src, dst));
            }
            (edges, local)
        };
        let mut pairs = Vec::with_capacity(edges.len());
        for (e, (src, dst)) in edges.iter().zip(local) {
            let dst = match (&e.destination_namespace, dst) {
                (_, Some(d)) => Some(d),
                (Some(other), None) if other != ns => self.get(other, e.destination).ok(),
                _ => None,
            };
            if let (Some(a), Some(b)) = (src, dst) {
                pairs.push((a, b));
            }
        }
        pairs
    }

    /// Computes local coherence over `[end - span, end]` and logs it.
    pub fn record_coherence_sample(
        &self,
        ns: &Namespace,
        end: Timestamp,
        span: Duration,
        cfg: &CoherenceConfig,
    ) -> Result<CoherenceSample> {
        let start = end.micros().saturating_sub(span.as_micros() as i64).max(1);
        let sample = self.local_coherence(ns, start, end.micros(), cfg)?;
        let shard = self.shard_or_create(ns)?;
        let mut w = shard.writer.lock();
        self.commit(&shard, &mut w, vec![LogEntry::CoherenceSample(sample.clone())])?;
        Ok(sample)
    }

    /// `(edge, Δt, s)` for each outgoing edge of `vertex` whose destination
    /// resolves.
    pub fn project_local_plane(
        &self,
        ns: &Namespace,
        vertex: Timestamp,
        as_of: Option<Timestamp>,
    ) -> Result<Vec<PlanePoint>> {
        let shard = self.shard(ns).ok_or(Error::VertexNotFound(vertex))?;
        let state = shard.state.read();
        let v = state.get(vertex).cloned().ok_or(Error::VertexNotFound(vertex))?;
        let edges = state.graph().edges_out(vertex, None, as_of);
        coherence::project_local_plane(&v, &edges, |e| self.resolve(ns, &state, e))
    }

    pub fn coherence_samples(&self, ns: &Namespace) -> Vec<CoherenceSample> {
        self.with_state(ns, |s| s.samples().to_vec()).unwrap_or_default()
    }

    /// Lifetime average of the recorded local-coherence series.
    pub fn average_coherence(&self, ns: &Namespace) -> Option<f64> {
        let samples = self.coherence_samples(ns);
        let values: Vec<f64> = samples.iter().filter_map(|s| s.c_local).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn phi(&self, ns: &Namespace, id: Timestamp, cfg: &query::RankingConfig) -> Result<f64> {
        let shard = self.shard(ns).ok_or(Error::NotFound(id))?;
        let state = shard.state.read();
        query::phi(&state, id, cfg, None)
    }

    /// Runs a hybrid query. An unknown namespace yields no hits.
    pub fn query(&self, ns: &Namespace, spec: &QuerySpec) -> Result<Vec<RankedHit>> {
        let embedder: Option<Arc<dyn Embedder>> = if spec.query_vector.is_none() && spec.query_text.is_some() {
            Some(self.embedders.get(ns)?)
        } else {
            None
        };
        let Some(shard) = self.shard(ns) else {
            spec.validate()?;
            return Ok(Vec::new());
        };
        let segments = shard.writer.lock().log.segments().to_vec();
        let ivf = shard.ivf.read();
        let state = shard.state.read();
        let ctx = QueryContext {
            state: &state,
            segments: &segments,
            ivf: &ivf,
            embedder: embedder.as_deref(),
        };
        query::execute(&ctx, spec)
    }

    // ----- maintenance --------------------------------------------------

    pub fn run_maintenance(&self, ns: &Namespace, plan: &MaintenancePlan) -> Result<MaintenanceReport> {
        let shard = self.shard_or_create(ns)?;
        let _guard = shard.maintenance.lock();
        maintenance::run_cycle(self, ns, plan)
    }

    pub fn segments(&self, ns: &Namespace) -> Vec<SegmentInfo> {
        self.shard(ns)
            .map(|s| s.writer.lock().log.segments().to_vec())
            .unwrap_or_default()
    }

    /// Sealed segments holding meta patches that compaction would fold, or
    /// lacking an IVF sidecar when one should be built.
    pub fn compaction_candidates(&self, ns: &Namespace) -> Vec<u64> {
        let Some(shard) = self.shard(ns) else { return Vec::new() };
        let sealed: Vec<SegmentInfo> = shard
            .writer
            .lock()
            .log
            .segments()
            .iter()
            .filter(|s| s.sealed)
            .cloned()
            .collect();
        let ivf: BTreeSet<u64> = shard.ivf.read().keys().copied().collect();
        let state = shard.state.read();
        sealed
            .into_iter()
            .filter(|s| {
                state.pending_folds(s.segment_id) > 0
                    || (self.config.build_ivf_on_compact && s.record_count > 0 && !ivf.contains(&s.segment_id))
            })
            .map(|s| s.segment_id)
            .collect()
    }

    /// Rewrites a sealed segment with meta patches folded into its records.
    /// Returns the number of bytes reclaimed.
    pub fn compact(&self, ns: &Namespace, segment: u64) -> Result<u64> {
        let shard = self.shard(ns).ok_or(Error::SegmentNotFound(segment))?;
        let _guard = shard.maintenance.lock();
        self.compact_locked(&shard, segment)
    }

    pub(crate) fn compact_in_cycle(&self, ns: &Namespace, segment: u64) -> Result<u64> {
        let shard = self.shard(ns).ok_or(Error::SegmentNotFound(segment))?;
        self.compact_locked(&shard, segment)
    }

    fn compact_locked(&self, shard: &Shard, segment: u64) -> Result<u64> {
        let info = {
            let w = shard.writer.lock();
            w.log
                .segments()
                .iter()
                .find(|s| s.segment_id == segment)
                .cloned()
                .ok_or(Error::SegmentNotFound(segment))?
        };
        if !info.sealed {
            return Err(Error::SegmentActive(segment));
        }
        let path = segment_path(&shard.dir, segment);
        let original = fs::read(&path)?;
        let rewrite = {
            let state = shard.state.read();
            rewrite_segment(segment, &original, |id| state.get(id).map(|r| r.meta.clone()))?
        };
        write_atomic(&path, &rewrite.bytes)?;
        write_atomic(
            &sparse_index_path(&shard.dir, segment),
            &SparseIndex::build(segment, &rewrite.relocations).encode(),
        )?;
        {
            let mut w = shard.writer.lock();
            w.log.replace_segment_info(rewrite.info.clone())?;
            w.offsets.insert(segment, rewrite.relocations.clone());
        }
        {
            let mut state = shard.state.write();
            for (id, offset) in &rewrite.relocations {
                state.relocate(
                    *id,
                    Location {
                        segment,
                        offset: *offset,
                    },
                );
            }
            state.clear_pending_folds(segment);
        }
        if self.config.build_ivf_on_compact {
            self.build_ivf(shard, segment, &rewrite.relocations)?;
        }
        let reclaimed = (original.len() as u64).saturating_sub(rewrite.bytes.len() as u64);
        tracing::info!(namespace = %shard.ns, segment, reclaimed, "segment compacted");
        Ok(reclaimed)
    }

    fn build_ivf(&self, shard: &Shard, segment: u64, records: &[(Timestamp, u64)]) -> Result<()> {
        let view = {
            let state = shard.state.read();
            let mut view = VectorView::new(HIGH_VIEW);
            for (id, _) in records {
                if let Some(v) = state.get(*id).and_then(|r| r.embeddings.high().cloned()) {
                    view.insert(*id, v)?;
                }
            }
            view
        };
        if view.is_empty() {
            return Ok(());
        }
        let mut params = self.config.ivf;
        params.n_lists = Some(
            params
                .n_lists
                .unwrap_or_else(|| crate::vector::default_n_lists(view.len()))
                .min(view.len()),
        );
        let index = IvfIndex::train(&view, params)?;
        write_atomic(&ivf_path(&shard.dir, segment), &index.encode())?;
        shard.ivf.write().insert(segment, index);
        Ok(())
    }

    // ----- admin --------------------------------------------------------

    pub fn namespace_stats(&self, ns: &Namespace) -> Option<NamespaceStats> {
        let shard = self.shard(ns)?;
        let segments = shard.writer.lock().log.segments().to_vec();
        let ivf_indexes = shard.ivf.read().len();
        let state = shard.state.read();
        Some(NamespaceStats {
            namespace: ns.clone(),
            records: state.record_count(),
            edges: state.graph().len(),
            pruned_edges: state.graph().pruned_count(),
            segments: segments.len(),
            sealed_segments: segments.iter().filter(|s| s.sealed).count(),
            bytes: segments.iter().map(|s| s.bytes).sum(),
            ivf_indexes,
            coherence_samples: state.samples().len(),
            last_sample: state.samples().last().cloned(),
            maintenance_cycles: state.reports().len(),
            last_report: state.reports().last().cloned(),
        })
    }

    pub fn stats(&self) -> EngineStats {
        let namespaces: Vec<_> = self
            .namespaces()
            .iter()
            .filter_map(|ns| self.namespace_stats(ns))
            .collect();
        EngineStats {
            records: namespaces.iter().map(|s| s.records).sum(),
            edges: namespaces.iter().map(|s| s.edges).sum(),
            namespaces,
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }
}

fn mint_edge_time(wall: i64, last: Option<Timestamp>) -> Timestamp {
    let t = wall.max(last.map_or(1, |l| l.micros())).max(1);
    Timestamp::new(t).expect("positive")
}

fn clamp_window(start: i64, end: i64) -> (Timestamp, Timestamp) {
    let hi = Timestamp::new(end.max(1)).expect("positive");
    let lo = Timestamp::new(start.max(1)).expect("positive").min(hi);
    (lo, hi)
}
