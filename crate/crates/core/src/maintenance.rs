//! Background housekeeping cycles.
//!
//! A cycle runs its enabled tasks in a fixed order, each over at most
//! `batch_size` items, and finishes by logging a [`MaintenanceReport`].
//! Every task writes its changes as ordinary commit groups, so a crash
//! leaves the namespace at a task boundary.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coherence::CoherenceConfig;
use crate::engine::Engine;
use crate::model::{Namespace, Timestamp, Vector, DEFAULT_LOW_DIM, HIGH_VIEW, LOW_VIEW};
use crate::vector::{matryoshka_truncate, normalize};
use crate::{Error, Result};

/// Declaration order is execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenanceTask {
    RegenLowViews,
    Renormalize,
    PruneEdges,
    SampleCoherence,
    Compact,
}

impl MaintenanceTask {
    pub const ALL: [MaintenanceTask; 5] = [
        MaintenanceTask::RegenLowViews,
        MaintenanceTask::Renormalize,
        MaintenanceTask::PruneEdges,
        MaintenanceTask::SampleCoherence,
        MaintenanceTask::Compact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaintenanceTask::RegenLowViews => "regen_low_views",
            MaintenanceTask::Renormalize => "renormalize",
            MaintenanceTask::PruneEdges => "prune_edges",
            MaintenanceTask::SampleCoherence => "sample_coherence",
            MaintenanceTask::Compact => "compact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaintenancePlan {
    pub tasks: BTreeSet<MaintenanceTask>,
    pub batch_size: usize,
    /// Pause between scheduled cycles.
    #[serde(with = "crate::util::duration_micros")]
    pub interval: Duration,
    #[serde(with = "crate::util::duration_micros")]
    pub half_life: Duration,
    pub floor: f64,
    /// Trailing span of edge creations covered by each coherence sample.
    #[serde(with = "crate::util::duration_micros")]
    pub coherence_window: Duration,
    #[serde(default)]
    pub coherence: CoherenceConfig,
    /// Dimension of regenerated low views when the namespace has none yet.
    #[serde(default = "default_low_dim")]
    pub low_dim: usize,
}

fn default_low_dim() -> usize {
    DEFAULT_LOW_DIM
}

impl Default for MaintenancePlan {
    fn default() -> Self {
        MaintenancePlan {
            tasks: MaintenanceTask::ALL.into_iter().collect(),
            batch_size: 1024,
            interval: Duration::from_secs(60),
            half_life: Duration::from_secs(30 * 24 * 3600),
            floor: 0.02,
            coherence_window: Duration::from_secs(3600),
            coherence: CoherenceConfig::default(),
            low_dim: DEFAULT_LOW_DIM,
        }
    }
}

impl MaintenancePlan {
    pub fn only(tasks: &[MaintenanceTask]) -> Self {
        MaintenancePlan {
            tasks: tasks.iter().copied().collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.half_life.is_zero() {
            return Err(Error::InvalidConfig("half_life must be positive".into()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::InvalidConfig("floor must be in (0, 1)".into()));
        }
        if self.low_dim == 0 {
            return Err(Error::InvalidConfig("low_dim must be positive".into()));
        }
        self.coherence.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub task: MaintenanceTask,
    pub code: String,
    pub message: String,
}

/// Outcome of one cycle; persisted in the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub cycle_id: u64,
    pub started_at: Option<Timestamp>,
    pub finished_at: Option<Timestamp>,
    pub low_views_regenerated: u64,
    pub vectors_renormalized: u64,
    pub edges_pruned: u64,
    pub samples_written: u64,
    pub segments_compacted: u64,
    pub bytes_compacted: u64,
    #[serde(default)]
    pub errors: Vec<TaskError>,
}

/// Runs one cycle. Task failures are recorded in the report and do not
/// stop later tasks.
pub fn run_cycle(engine: &Engine, ns: &Namespace, plan: &MaintenancePlan) -> Result<MaintenanceReport> {
    plan.validate()?;
    let mut report = MaintenanceReport {
        cycle_id: engine.with_state(ns, |s| s.reports().len() as u64).unwrap_or(0) + 1,
        started_at: Some(engine.now()),
        ..Default::default()
    };
    for &task in &plan.tasks {
        let result = match task {
            MaintenanceTask::RegenLowViews => {
                regen_low_views(engine, ns, plan).map(|n| report.low_views_regenerated = n)
            }
            MaintenanceTask::Renormalize => renormalize(engine, ns, plan).map(|n| report.vectors_renormalized = n),
            MaintenanceTask::PruneEdges => engine
                .decay_and_prune(ns, engine.now(), plan.half_life, plan.floor, Some(plan.batch_size))
                .map(|n| report.edges_pruned = n as u64),
            MaintenanceTask::SampleCoherence => engine
                .record_coherence_sample(ns, engine.now(), plan.coherence_window, &plan.coherence)
                .map(|_| report.samples_written = 1),
            MaintenanceTask::Compact => compact(engine, ns, plan).map(|(segments, bytes)| {
                report.segments_compacted = segments;
                report.bytes_compacted = bytes;
            }),
        };
        if let Err(e) = result {
            tracing::warn!(namespace = %ns, task = task.name(), error = %e, "maintenance task failed");
            report.errors.push(TaskError {
                task,
                code: e.code().to_string(),
                message: e.to_string(),
            });
        }
    }
    report.finished_at = Some(engine.now());
    engine.write_report(ns, report.clone())?;
    Ok(report)
}

fn regen_low_views(engine: &Engine, ns: &Namespace, plan: &MaintenancePlan) -> Result<u64> {
    let Some((missing, low_dim)) = engine.with_state(ns, |s| {
        let dim = s.view(LOW_VIEW).and_then(|v| v.dimension()).unwrap_or(plan.low_dim);
        (s.missing_view(LOW_VIEW, plan.batch_size), dim)
    }) else {
        return Ok(0);
    };
    let mut patches: Vec<(Timestamp, String, Vector)> = Vec::with_capacity(missing.len());
    let mut first_err = None;
    for record in missing {
        let Some(high) = record.embeddings.get(HIGH_VIEW) else {
            continue;
        };
        match matryoshka_truncate(high, low_dim.min(high.len())) {
            Ok(low) => patches.push((record.id_time, LOW_VIEW.to_string(), low.into())),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let n = engine.write_view_patches(ns, patches)? as u64;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(n),
    }
}

fn renormalize(engine: &Engine, ns: &Namespace, plan: &MaintenancePlan) -> Result<u64> {
    let Some(bad) = engine.with_state(ns, |s| s.non_unit_vectors(plan.batch_size)) else {
        return Ok(0);
    };
    let mut patches = Vec::with_capacity(bad.len());
    let mut first_err = None;
    for (id, view, v) in bad {
        match normalize(&v) {
            Ok(u) => patches.push((id, view, Vector::from(u))),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let n = engine.write_view_patches(ns, patches)? as u64;
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(n),
    }
}

fn compact(engine: &Engine, ns: &Namespace, plan: &MaintenancePlan) -> Result<(u64, u64)> {
    let mut segments = 0;
    let mut bytes = 0;
    for id in engine.compaction_candidates(ns).into_iter().take(plan.batch_size) {
        bytes += engine.compact_in_cycle(ns, id)?;
        segments += 1;
    }
    Ok((segments, bytes))
}
