//! In-memory materialization of one namespace's log.
//!
//! The same [`NamespaceState::apply`] routine runs during live commits and
//! during replay, so a recovered state is exactly the state the writer had
//! after its last complete commit group.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::coherence::CoherenceSample;
use crate::graph::GraphStore;
use crate::maintenance::MaintenanceReport;
use crate::model::{Kind, MemoryRecord, Timestamp, Vector};
use crate::storage::codec::{encode_entry, ByteWriter, LogEntry};
use crate::vector::VectorView;

/// Position of an entry in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location {
    pub segment: u64,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct RecordSlot {
    pub record: Arc<MemoryRecord>,
    pub location: Location,
}

#[derive(Debug, Clone, Default)]
pub struct NamespaceState {
    pub(crate) records: BTreeMap<Timestamp, RecordSlot>,
    kinds: BTreeMap<Kind, BTreeSet<Timestamp>>,
    views: BTreeMap<String, VectorView>,
    pub(crate) graph: GraphStore,
    samples: Vec<CoherenceSample>,
    reports: Vec<MaintenanceReport>,
    last_minted: Option<Timestamp>,
    next_edge_id: u64,
    last_edge_created: Option<Timestamp>,
    /// Per segment, number of meta patches stored in it that target records
    /// stored in the same segment.
    pending_folds: BTreeMap<u64, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ApplyError(pub String);

impl NamespaceState {
    pub fn new() -> Self {
        NamespaceState {
            next_edge_id: 1,
            ..Default::default()
        }
    }

    pub(crate) fn apply(&mut self, entry: LogEntry, location: Location) -> Result<(), ApplyError> {
        match entry {
            LogEntry::Record(record) => {
                let id = record.id_time;
                if self.records.contains_key(&id) {
                    return Err(ApplyError(format!("duplicate record {id}")));
                }
                if self.last_minted.is_some_and(|last| id <= last) {
                    return Err(ApplyError(format!("record {id} breaks time order")));
                }
                for (name, v) in record.embeddings.iter() {
                    self.views
                        .entry(name.to_string())
                        .or_insert_with(|| VectorView::new(name))
                        .insert(id, v.clone())
                        .map_err(|e| ApplyError(e.to_string()))?;
                }
                self.kinds.entry(record.kind.clone()).or_default().insert(id);
                self.last_minted = Some(id);
                self.records.insert(
                    id,
                    RecordSlot {
                        record: Arc::new(record),
                        location,
                    },
                );
            }
            LogEntry::Edge(edge) => {
                if edge.edge_id.0 < self.next_edge_id {
                    return Err(ApplyError(format!("edge id {} reused", edge.edge_id)));
                }
                self.next_edge_id = edge.edge_id.0 + 1;
                self.last_edge_created = Some(
                    self.last_edge_created
                        .map_or(edge.created_at, |t| t.max(edge.created_at)),
                );
                self.graph.insert(edge);
            }
            LogEntry::MetaPatch { id_time, patch } => {
                let slot = self
                    .records
                    .get_mut(&id_time)
                    .ok_or_else(|| ApplyError(format!("meta patch for unknown record {id_time}")))?;
                let mut record = (*slot.record).clone();
                record.meta.extend(patch);
                slot.record = Arc::new(record);
                if slot.location.segment == location.segment {
                    *self.pending_folds.entry(location.segment).or_default() += 1;
                }
            }
            LogEntry::Prune { edge_id, pruned_at } => {
                if !self.graph.prune(edge_id, pruned_at) {
                    return Err(ApplyError(format!("prune of unknown edge {edge_id}")));
                }
            }
            LogEntry::ViewPatch { id_time, view, vector } => {
                let slot = self
                    .records
                    .get_mut(&id_time)
                    .ok_or_else(|| ApplyError(format!("view patch for unknown record {id_time}")))?;
                let mut record = (*slot.record).clone();
                record.embeddings.insert(view.clone(), vector.clone());
                slot.record = Arc::new(record);
                self.views
                    .entry(view.clone())
                    .or_insert_with(|| VectorView::new(view))
                    .insert(id_time, vector)
                    .map_err(|e| ApplyError(e.to_string()))?;
            }
            LogEntry::CoherenceSample(s) => self.samples.push(s),
            LogEntry::MaintenanceReport(r) => self.reports.push(r),
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn get(&self, id: Timestamp) -> Option<&Arc<MemoryRecord>> {
        self.records.get(&id).map(|s| &s.record)
    }

    pub fn location(&self, id: Timestamp) -> Option<Location> {
        self.records.get(&id).map(|s| s.location)
    }

    pub fn contains(&self, id: Timestamp) -> bool {
        self.records.contains_key(&id)
    }

    pub fn last_minted(&self) -> Option<Timestamp> {
        self.last_minted
    }

    pub fn next_edge_id(&self) -> u64 {
        self.next_edge_id
    }

    pub fn last_edge_created(&self) -> Option<Timestamp> {
        self.last_edge_created
    }

    pub fn graph(&self) -> &GraphStore {
        &self.graph
    }

    pub fn view(&self, name: &str) -> Option<&VectorView> {
        self.views.get(name)
    }

    /// Dimension established for each view name.
    pub fn dims(&self) -> BTreeMap<String, usize> {
        self.views
            .iter()
            .filter_map(|(k, v)| v.dimension().map(|d| (k.clone(), d)))
            .collect()
    }

    pub fn samples(&self) -> &[CoherenceSample] {
        &self.samples
    }

    pub fn reports(&self) -> &[MaintenanceReport] {
        &self.reports
    }

    pub(crate) fn pending_folds(&self, segment: u64) -> usize {
        self.pending_folds.get(&segment).copied().unwrap_or(0)
    }

    pub(crate) fn clear_pending_folds(&mut self, segment: u64) {
        self.pending_folds.remove(&segment);
    }

    pub(crate) fn relocate(&mut self, id: Timestamp, location: Location) {
        if let Some(slot) = self.records.get_mut(&id) {
            slot.location = location;
        }
    }

    /// Records with `start ≤ id_time ≤ end`, ascending. Uses the kind index
    /// when a kind is given.
    pub fn scan_window(&self, start: Timestamp, end: Timestamp, kind: Option<&Kind>) -> Vec<Arc<MemoryRecord>> {
        if start > end {
            return Vec::new();
        }
        match kind {
            Some(k) => self
                .kinds
                .get(k)
                .into_iter()
                .flat_map(|ids| ids.range(start..=end))
                .filter_map(|id| self.records.get(id))
                .map(|s| s.record.clone())
                .collect(),
            None => self.records.range(start..=end).map(|(_, s)| s.record.clone()).collect(),
        }
    }

    pub fn window_ids(&self, start: Timestamp, end: Timestamp) -> impl Iterator<Item = Timestamp> + '_ {
        let range = if start <= end {
            Some(self.records.range(start..=end))
        } else {
            None
        };
        range.into_iter().flatten().map(|(id, _)| *id)
    }

    /// Records lacking `view`, oldest first.
    pub fn missing_view(&self, view: &str, limit: usize) -> Vec<Arc<MemoryRecord>> {
        self.records
            .values()
            .filter(|s| !s.record.embeddings.contains(view))
            .take(limit)
            .map(|s| s.record.clone())
            .collect()
    }

    /// Vectors whose norm deviates from 1 beyond tolerance, oldest first.
    pub fn non_unit_vectors(&self, limit: usize) -> Vec<(Timestamp, String, Vector)> {
        let mut out = Vec::new();
        for slot in self.records.values() {
            for (name, v) in slot.record.embeddings.iter() {
                if out.len() >= limit {
                    return out;
                }
                if !crate::model::is_unit(v) {
                    out.push((slot.record.id_time, name.to_string(), v.clone()));
                }
            }
        }
        out
    }

    /// Canonical byte image of the state; equal states give equal bytes.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(self.records.len() as u64);
        for slot in self.records.values() {
            w.u64(slot.location.segment);
            w.u64(slot.location.offset);
            encode_entry(&LogEntry::Record((*slot.record).clone()), &mut w);
        }
        w.u64(self.graph.len() as u64);
        for slot in self.graph.slots() {
            encode_entry(&LogEntry::Edge((*slot.edge).clone()), &mut w);
            w.i64(slot.pruned_at.map_or(0, |t| t.micros()));
        }
        for s in &self.samples {
            encode_entry(&LogEntry::CoherenceSample(s.clone()), &mut w);
        }
        for r in &self.reports {
            encode_entry(&LogEntry::MaintenanceReport(r.clone()), &mut w);
        }
        w.i64(self.last_minted.map_or(0, |t| t.micros()));
        w.u64(self.next_edge_id);
        w.into_inner()
    }
}
