//! Labeled directed multigraph over memory timestamps.
//!
//! Edges are never removed. Pruning records the time at which an edge left
//! the live graph, so any past state of the graph can be rebuilt by
//! filtering on `created_at` and `pruned_at`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{Edge, EdgeId, MemoryRecord, Timestamp};
use crate::vector::{similarity, VectorError};

/// Per-edge temporal and semantic offset from source to destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    /// `t_destination - t_source` in microseconds.
    pub dt: i64,
    /// `1 - cos(high_source, high_destination)`, in [0, 2].
    pub s: f64,
}

/// Semantic displacement between two high vectors.
pub fn semantic_displacement(a: &[f32], b: &[f32]) -> Result<f64, VectorError> {
    if a == b {
        return Ok(0.0);
    }
    Ok((1.0 - similarity(a, b)?).clamp(0.0, 2.0))
}

/// Temporal and semantic displacement of `edge` given its resolved endpoints.
pub fn displacement(
    edge: &Edge,
    source: &MemoryRecord,
    destination: &MemoryRecord,
) -> Result<Displacement, crate::Error> {
    let (Some(a), Some(b)) = (source.embeddings.high(), destination.embeddings.high()) else {
        return Err(crate::Error::EndpointMissing(edge.destination));
    };
    Ok(Displacement {
        dt: destination.id_time.delta_from(source.id_time),
        s: semantic_displacement(a, b)?,
    })
}

/// `2^(−age / half_life)`; edges from the future count as age 0.
pub fn decay_factor(edge: &Edge, now: Timestamp, half_life: Duration) -> f64 {
    let age = now.delta_from(edge.created_at).max(0) as f64;
    let half = half_life.as_micros() as f64;
    (-age / half).exp2()
}

/// `strength · 2^(−age / half_life)`.
pub fn effective_strength(edge: &Edge, now: Timestamp, half_life: Duration) -> f64 {
    edge.weight.strength() * decay_factor(edge, now, half_life)
}

/// `confidence · 2^(−age / half_life)`.
pub fn effective_confidence(edge: &Edge, now: Timestamp, half_life: Duration) -> f64 {
    edge.weight.confidence() * decay_factor(edge, now, half_life)
}

#[derive(Debug, Clone)]
pub(crate) struct EdgeSlot {
    pub edge: Arc<Edge>,
    pub pruned_at: Option<Timestamp>,
}

impl EdgeSlot {
    /// Visible at `as_of`: created no later than it and not yet pruned.
    /// `None` means the latest state.
    pub fn visible(&self, as_of: Option<Timestamp>) -> bool {
        match as_of {
            None => self.pruned_at.is_none(),
            Some(t) => self.edge.created_at <= t && self.pruned_at.is_none_or(|p| t < p),
        }
    }
}

/// Edge storage with out, in and (source, relationship) adjacency.
#[derive(Debug, Clone, Default)]
pub struct GraphStore {
    edges: BTreeMap<EdgeId, EdgeSlot>,
    out: HashMap<Timestamp, Vec<EdgeId>>,
    inbound: HashMap<Timestamp, Vec<EdgeId>>,
    by_relationship: HashMap<(Timestamp, String), Vec<EdgeId>>,
    by_created: BTreeSet<(Timestamp, EdgeId)>,
    pruned: usize,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned
    }

    pub fn get(&self, id: EdgeId) -> Option<&Arc<Edge>> {
        self.edges.get(&id).map(|s| &s.edge)
    }

    pub fn pruned_at(&self, id: EdgeId) -> Option<Timestamp> {
        self.edges.get(&id).and_then(|s| s.pruned_at)
    }

    pub(crate) fn slots(&self) -> impl Iterator<Item = &EdgeSlot> {
        self.edges.values()
    }

    /// Edge ids are assigned in increasing order, so pushing keeps every
    /// adjacency list sorted.
    pub(crate) fn insert(&mut self, edge: Edge) {
        let id = edge.edge_id;
        self.out.entry(edge.source).or_default().push(id);
        self.inbound.entry(edge.destination).or_default().push(id);
        self.by_relationship
            .entry((edge.source, edge.relationship.clone()))
            .or_default()
            .push(id);
        self.by_created.insert((edge.created_at, id));
        self.edges.insert(
            id,
            EdgeSlot {
                edge: Arc::new(edge),
                pruned_at: None,
            },
        );
    }

    /// Marks an edge pruned. The earliest prune time wins. Returns false
    /// when the edge is unknown.
    pub(crate) fn prune(&mut self, id: EdgeId, at: Timestamp) -> bool {
        match self.edges.get_mut(&id) {
            Some(slot) => {
                if slot.pruned_at.is_none() {
                    slot.pruned_at = Some(at);
                    self.pruned += 1;
                }
                true
            }
            None => false,
        }
    }

    fn collect(&self, ids: Option<&Vec<EdgeId>>, as_of: Option<Timestamp>) -> Vec<Arc<Edge>> {
        ids.into_iter()
            .flatten()
            .filter_map(|id| self.edges.get(id))
            .filter(|slot| slot.visible(as_of))
            .map(|slot| slot.edge.clone())
            .collect()
    }

    /// Outgoing edges of `source`, optionally restricted to one label,
    /// as visible at `as_of`. Ordered by edge id.
    pub fn edges_out(&self, source: Timestamp, relationship: Option<&str>, as_of: Option<Timestamp>) -> Vec<Arc<Edge>> {
        match relationship {
            Some(rel) => self.collect(self.by_relationship.get(&(source, rel.to_string())), as_of),
            None => self.collect(self.out.get(&source), as_of),
        }
    }

    pub fn edges_in(&self, destination: Timestamp, as_of: Option<Timestamp>) -> Vec<Arc<Edge>> {
        self.collect(self.inbound.get(&destination), as_of)
    }

    pub fn out_degree(&self, source: Timestamp, as_of: Option<Timestamp>) -> usize {
        self.out.get(&source).map_or(0, |ids| {
            ids.iter()
                .filter(|id| self.edges.get(id).is_some_and(|s| s.visible(as_of)))
                .count()
        })
    }

    /// Edges created within `[start, end]` that are still live at `end`.
    pub fn created_between(&self, start: Timestamp, end: Timestamp) -> Vec<Arc<Edge>> {
        self.by_created
            .range((start, EdgeId(0))..=(end, EdgeId(u64::MAX)))
            .filter_map(|(_, id)| self.edges.get(id))
            .filter(|slot| slot.visible(Some(end)))
            .map(|slot| slot.edge.clone())
            .collect()
    }

    /// Live edges that decay below `floor`: both `|effective strength|` and
    /// effective confidence must be under it. At most `limit` ids, in edge-id order.
    pub fn prune_candidates(
        &self,
        now: Timestamp,
        half_life: Duration,
        floor: f64,
        limit: Option<usize>,
    ) -> Vec<EdgeId> {
        self.edges
            .values()
            .filter(|slot| slot.pruned_at.is_none())
            .filter(|slot| {
                let decay = decay_factor(&slot.edge, now, half_life);
                (slot.edge.weight.strength() * decay).abs() < floor && slot.edge.weight.confidence() * decay < floor
            })
            .map(|slot| slot.edge.edge_id)
            .take(limit.unwrap_or(usize::MAX))
            .collect()
    }
}
