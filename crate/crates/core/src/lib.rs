//! Temporal, semantic and relational memory engine.
//!
//! Memories are immutable records keyed by unique microsecond timestamps,
//! carrying unit-normalized embedding views and a mutable metadata map.
//! They are stored in an append-only segmented log per namespace and linked
//! by a labeled, weighted multigraph. Queries combine a time window, vector
//! similarity, coherence-bounded graph expansion and a combined ranking
//! score.

pub mod bench;
pub mod clock;
pub mod coherence;
pub mod embedder;
pub mod engine;
mod error;
pub mod graph;
pub mod maintenance;
pub mod model;
pub mod query;
pub mod state;
pub mod storage;
mod util;
pub mod vector;

pub use clock::{Clock, ManualClock, SystemClock};
pub use coherence::{CoherenceConfig, CoherenceMode, CoherenceSample, PlanePoint, VectorFusion};
pub use embedder::{Embedder, EmbedderRegistry, HashEmbedder};
pub use engine::{Engine, EngineConfig, EngineStats, NamespaceStats};
pub use error::{Error, Result};
pub use maintenance::{MaintenancePlan, MaintenanceReport, MaintenanceTask};
pub use model::{
    Edge, EdgeId, EmbeddingSet, Kind, MemoryRecord, Meta, Namespace, NewEdge, NewRecord, Timestamp, ValidationError,
    Weight, HIGH_VIEW, LOW_VIEW,
};
pub use query::{
    ExpansionConfig, Fusion, MetaFilter, Provenance, QuerySpec, RankedHit, RankingConfig, ScoreComponents, SearchMode,
    TimeWindow,
};
pub use vector::{IvfIndex, IvfParams, Neighbor, VectorError};
