//! Temporal–semantic distance and coherence.
//!
//! Pairwise coherence is `exp(-d)` for a distance `d ≥ 0`, so it lies in
//! (0, 1] and equals 1 only for coincident memories. Local coherence over a
//! window is the mean pairwise coherence across the edges created in it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::semantic_displacement;
use crate::model::{Edge, EdgeId, MemoryRecord, Timestamp, HIGH_VIEW};
use crate::vector::VectorError;
use crate::Error;

/// Distances at or below this are treated as zero.
pub const ZERO_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceMode {
    /// Euclidean distance between fused high vectors.
    #[default]
    Practical,
    /// `sqrt((λt·Δt)² + (λs·s)²)`.
    Idealized,
}

/// How per-view vectors are combined before measuring distance.
///
/// `Weighted` concatenates each view scaled by `sqrt(w / Σw)`, so the
/// squared distance is the weight-averaged squared per-view distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorFusion {
    #[default]
    Identity,
    Weighted(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceConfig {
    /// Weight per microsecond of temporal separation.
    #[serde(default)]
    pub lambda_t: f64,
    #[serde(default = "one")]
    pub lambda_s: f64,
    #[serde(default)]
    pub mode: CoherenceMode,
    #[serde(default)]
    pub fusion: VectorFusion,
}

fn one() -> f64 {
    1.0
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            lambda_t: 0.0,
            lambda_s: 1.0,
            mode: CoherenceMode::Practical,
            fusion: VectorFusion::Identity,
        }
    }
}

impl CoherenceConfig {
    pub fn practical() -> Self {
        Self::default()
    }

    pub fn idealized(lambda_t: f64, lambda_s: f64) -> Self {
        CoherenceConfig {
            lambda_t,
            lambda_s,
            mode: CoherenceMode::Idealized,
            fusion: VectorFusion::Identity,
        }
    }

    /// Idealized config where a temporal gap of `span_micros` contributes
    /// distance 1.
    pub fn idealized_for_span(span_micros: i64, lambda_s: f64) -> Self {
        Self::idealized(1.0 / span_micros.max(1) as f64, lambda_s)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.lambda_t) || !ok(self.lambda_s) {
            return Err(Error::InvalidConfig("lambdas must be finite and non-negative".into()));
        }
        if self.mode == CoherenceMode::Idealized && self.lambda_t == 0.0 && self.lambda_s == 0.0 {
            return Err(Error::InvalidConfig("idealized mode needs a non-zero lambda".into()));
        }
        if let VectorFusion::Weighted(w) = &self.fusion {
            if w.is_empty() || w.values().any(|x| !ok(*x)) || w.values().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidConfig(
                    "fusion weights must be non-negative with a positive sum".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Windowed local coherence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSample {
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    pub edge_count: usize,
    /// Absent when the window holds no edges.
    pub c_local: Option<f64>,
    pub computed_at: Timestamp,
}

fn view<'a>(r: &'a MemoryRecord, name: &str) -> Result<&'a [f32], Error> {
    r.embeddings
        .get(name)
        .map(|v| &v[..])
        .ok_or(Error::EndpointMissing(r.id_time))
}

fn squared_distance(a: &[f32], b: &[f32]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum())
}

/// Euclidean distance between the fused representations of two records.
/// With identity fusion this is `‖high_a − high_b‖₂`.
pub fn practical_distance(a: &MemoryRecord, b: &MemoryRecord, fusion: &VectorFusion) -> Result<f64, Error> {
    match fusion {
        VectorFusion::Identity => Ok(squared_distance(view(a, HIGH_VIEW)?, view(b, HIGH_VIEW)?)?.sqrt()),
        VectorFusion::Weighted(weights) => {
            let total: f64 = weights.values().sum();
            if total <= 0.0 {
                return Err(Error::NoViews);
            }
            let mut acc = 0.0;
            for (name, w) in weights {
                if *w == 0.0 {
                    continue;
                }
                acc += w / total * squared_distance(view(a, name)?, view(b, name)?)?;
            }
            Ok(acc.sqrt())
        }
    }
}

/// `sqrt((λt·Δt)² + (λs·s)²)` with `Δt` in microseconds.
pub fn idealized_distance(a: &MemoryRecord, b: &MemoryRecord, cfg: &CoherenceConfig) -> Result<f64, Error> {
    let dt = b.id_time.delta_from(a.id_time) as f64;
    let s = semantic_displacement(view(a, HIGH_VIEW)?, view(b, HIGH_VIEW)?)?;
    Ok(((cfg.lambda_t * dt).powi(2) + (cfg.lambda_s * s).powi(2)).sqrt())
}

pub fn distance(a: &MemoryRecord, b: &MemoryRecord, cfg: &CoherenceConfig) -> Result<f64, Error> {
    match cfg.mode {
        CoherenceMode::Practical => practical_distance(a, b, &cfg.fusion),
        CoherenceMode::Idealized => idealized_distance(a, b, cfg),
    }
}

/// `exp(-d)`, exactly 1 when `d` is within [`ZERO_DISTANCE`] of zero.
pub fn coherence_from_distance(d: f64) -> f64 {
    if d <= ZERO_DISTANCE {
        1.0
    } else {
        (-d).exp()
    }
}

pub fn pair_coherence(a: &MemoryRecord, b: &MemoryRecord, cfg: &CoherenceConfig) -> Result<f64, Error> {
    Ok(coherence_from_distance(distance(a, b, cfg)?))
}

/// Mean pairwise coherence over resolved edge endpoints.
pub fn local_coherence<'a, I>(
    pairs: I,
    window_start: Timestamp,
    window_end: Timestamp,
    cfg: &CoherenceConfig,
    computed_at: Timestamp,
) -> Result<CoherenceSample, Error>
where
    I: IntoIterator<Item = (&'a MemoryRecord, &'a MemoryRecord)>,
{
    if window_start > window_end {
        return Err(Error::InvalidWindow {
            start: window_start.micros(),
            end: window_end.micros(),
        });
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += pair_coherence(a, b, cfg)?;
        n += 1;
    }
    Ok(CoherenceSample {
        window_start,
        window_end,
        edge_count: n,
        c_local: (n > 0).then(|| sum / n as f64),
        computed_at,
    })
}

/// One outgoing edge projected onto its source's (Δt, s) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub edge_id: EdgeId,
    pub dt: i64,
    pub s: f64,
}

/// Projects each edge whose destination resolves. Edges with an unresolved
/// destination are skipped.
pub fn project_local_plane<F>(
    vertex: &MemoryRecord,
    edges: &[std::sync::Arc<Edge>],
    mut resolve: F,
) -> Result<Vec<PlanePoint>, Error>
where
    F: FnMut(&Edge) -> Option<std::sync::Arc<MemoryRecord>>,
{
    let mut out = Vec::with_capacity(edges.len());
    for e in edges {
        let Some(dest) = resolve(e) else { continue };
        let d = crate::graph::displacement(e, vertex, &dest)?;
        out.push(PlanePoint {
            edge_id: e.edge_id,
            dt: d.dt,
            s: d.s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingSet, Kind, Meta};

    fn rec(at: i64, v: Vec<f32>) -> MemoryRecord {
        MemoryRecord {
            id_time: Timestamp::new(at).unwrap(),
            kind: Kind::new("message").unwrap(),
            content: None,
            embeddings: EmbeddingSet::with_high(v),
            meta: Meta::new(),
        }
    }

    #[test]
    fn practical_anchors() {
        let a = rec(1, vec![1.0, 0.0]);
        let b = rec(2, vec![0.0, 1.0]);
        let c = rec(3, vec![-1.0, 0.0]);
        let f = VectorFusion::Identity;
        assert_eq!(practical_distance(&a, &a, &f).unwrap(), 0.0);
        assert!((practical_distance(&a, &b, &f).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((practical_distance(&a, &c, &f).unwrap() - 2.0).abs() < 1e-12);
        let cfg = CoherenceConfig::practical();
        assert_eq!(pair_coherence(&a, &a, &cfg).unwrap(), 1.0);
        assert!((pair_coherence(&a, &b, &cfg).unwrap() - 0.24312).abs() < 1e-5);
        assert!((pair_coherence(&a, &c, &cfg).unwrap() - 0.13534).abs() < 1e-5);
    }

    #[test]
    fn idealized_examples() {
        let a = rec(1_000, vec![1.0, 0.0]);
        let b = rec(2_000, vec![0.0, 1.0]);
        // λt = 0 reduces to λs·s.
        let d = idealized_distance(&a, &b, &CoherenceConfig::idealized(0.0, 0.7)).unwrap();
        assert!((d - 0.7).abs() < 1e-12);
        // λs = 0, Δt = 1000, λt = 0.001.
        let d = idealized_distance(&a, &b, &CoherenceConfig::idealized(0.001, 0.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let far = rec(1_001_000, vec![0.0, 1.0]);
        let d = idealized_distance(&a, &far, &CoherenceConfig::idealized(1e-6, 1.0)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        // Symmetric because Δt enters squared.
        let d2 = idealized_distance(&far, &a, &CoherenceConfig::idealized(1e-6, 1.0)).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn weighted_fusion_distance() {
        let mut ea = EmbeddingSet::with_high(vec![1.0f32, 0.0]);
        ea.insert("low", vec![1.0f32]);
        let mut eb = EmbeddingSet::with_high(vec![0.0f32, 1.0]);
        eb.insert("low", vec![1.0f32]);
        let mut a = rec(1, vec![]);
        a.embeddings = ea;
        let mut b = rec(2, vec![]);
        b.embeddings = eb;
        let w = VectorFusion::Weighted(BTreeMap::from([("high".into(), 1.0), ("low".into(), 1.0)]));
        // Half of the squared high distance (2) plus half of zero.
        assert!((practical_distance(&a, &b, &w).unwrap() - 1.0).abs() < 1e-12);
        let missing = VectorFusion::Weighted(BTreeMap::from([("aux".into(), 1.0)]));
        assert!(matches!(
            practical_distance(&a, &b, &missing),
            Err(Error::EndpointMissing(_))
        ));
    }

    #[test]
    fn local_coherence_examples() {
        let a = rec(1, vec![1.0, 0.0]);
        let b = rec(2, vec![0.0, 1.0]);
        let cfg = CoherenceConfig::practical();
        let t = |v| Timestamp::new(v).unwrap();
        let s = local_coherence([(&a, &a)], t(1), t(10), &cfg, t(11)).unwrap();
        assert_eq!(s.c_local, Some(1.0));
        assert_eq!(s.edge_count, 1);
        let s = local_coherence([(&a, &a), (&a, &b)], t(1), t(10), &cfg, t(11)).unwrap();
        let want = (1.0 + (-(2f64.sqrt())).exp()) / 2.0;
        assert!((s.c_local.unwrap() - want).abs() < 1e-12);
        assert!((s.c_local.unwrap() - 0.62156).abs() < 1e-5);
        let s = local_coherence(std::iter::empty(), t(1), t(10), &cfg, t(11)).unwrap();
        assert_eq!((s.edge_count, s.c_local), (0, None));
        assert!(matches!(
            local_coherence(std::iter::empty(), t(10), t(1), &cfg, t(11)),
            Err(Error::InvalidWindow { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(CoherenceConfig::idealized(0.0, 0.0).validate().is_err());
        assert!(CoherenceConfig::idealized(-1.0, 1.0).validate().is_err());
        assert!(CoherenceConfig::idealized(1.0, 0.0).validate().is_ok());
        let mut zero_practical = CoherenceConfig::practical();
        zero_practical.lambda_s = 0.0;
        assert!(zero_practical.validate().is_ok());
        let cfg = CoherenceConfig::idealized_for_span(1_000, 1.0);
        assert_eq!(cfg.lambda_t, 0.001);
    }

    #[test]
    fn tiny_distance_snaps_to_full_coherence() {
        assert_eq!(coherence_from_distance(0.0), 1.0);
        assert_eq!(coherence_from_distance(1e-10), 1.0);
        assert!(coherence_from_distance(1e-8) < 1.0);
    }
}
