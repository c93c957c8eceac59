//! Domain types shared by every part of the engine.
//!
//! A memory is an immutable record keyed by a unique microsecond timestamp.
//! It carries a kind label, optional text, one or more unit-normalized
//! embedding views and a mutable metadata map. Edges connect two memories
//! with a labeled, weighted, directed relation; parallel edges are allowed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the required fine-grained view.
pub const HIGH_VIEW: &str = "high";
/// Name of the optional coarse view.
pub const LOW_VIEW: &str = "low";

pub const DEFAULT_HIGH_DIM: usize = 768;
pub const DEFAULT_LOW_DIM: usize = 64;

/// Maximum allowed deviation of a stored vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub const MAX_NAMESPACE_LEN: usize = 128;
pub const MAX_KIND_LEN: usize = 64;

pub const MIN_STRENGTH: f64 = -1.1;
pub const MAX_STRENGTH: f64 = 1.1;

/// Shared, immutable embedding vector.
pub type Vector = Arc<[f32]>;

/// Free-form annotations. Values are limited to scalars, strings, flat lists
/// and one level of nested objects, see [`validate_meta`].
pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("timestamp must be strictly positive, got {0}")]
    InvalidTimestamp(i64),
    #[error("invalid namespace {0:?}: expected 1-128 bytes of [a-z0-9_-]")]
    InvalidNamespace(String),
    #[error("kind label is empty")]
    EmptyKind,
    #[error("kind label exceeds {MAX_KIND_LEN} bytes")]
    KindTooLong,
    #[error("record has no \"high\" view")]
    MissingHighView,
    #[error("view {view:?} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        view: String,
        expected: usize,
        actual: usize,
    },
    #[error("view {view:?} has L2 norm {norm}, not within 1e-6 of 1")]
    NotUnitNorm { view: String, norm: f64 },
    #[error("weight out of range: strength {strength} must be in [-1.1, 1.1], confidence {confidence} in [0, 1]")]
    InvalidWeight { strength: f64, confidence: f64 },
    #[error("relationship label is empty")]
    EmptyRelationship,
    #[error("metadata key {0:?} nests deeper than one level")]
    MetaTooDeep(String),
}

/// Microseconds since the Unix epoch. Primary key of a memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Timestamp(i64);

impl Timestamp {
    pub const MIN: Timestamp = Timestamp(1);
    pub const MAX: Timestamp = Timestamp(i64::MAX);

    pub fn new(micros: i64) -> Result<Self, ValidationError> {
        if micros > 0 {
            Ok(Timestamp(micros))
        } else {
            Err(ValidationError::InvalidTimestamp(micros))
        }
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    /// Signed difference `self - earlier` in microseconds.
    pub fn delta_from(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

impl TryFrom<i64> for Timestamp {
    type Error = ValidationError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Timestamp::new(v)
    }
}

impl From<Timestamp> for i64 {
    fn from(t: Timestamp) -> i64 {
        t.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Returns the timestamp to assign to the next memory.
///
/// The result is `max(wall_clock, last + 1)`, so minted values are strictly
/// increasing even when the clock stalls or steps backwards.
pub fn mint_timestamp(wall_clock_micros: i64, last_minted: Option<Timestamp>) -> Timestamp {
    let floor = last_minted.map_or(1, |t| t.0.saturating_add(1));
    Timestamp(wall_clock_micros.max(floor))
}

/// Isolated timeline, typically one per agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Namespace(String);

impl Namespace {
    pub fn new(name: impl Into<String>) -> Result<Self, ValidationError> {
        let name = name.into();
        let valid = !name.is_empty()
            && name.len() <= MAX_NAMESPACE_LEN
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
        if valid {
            Ok(Namespace(name))
        } else {
            Err(ValidationError::InvalidNamespace(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Namespace {
    type Error = ValidationError;
    fn try_from(v: String) -> Result<Self, Self::Error> {
        Namespace::new(v)
    }
}

impl From<Namespace> for String {
    fn from(n: Namespace) -> String {
        n.0
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Record category. Open vocabulary; `message`, `observation`, `summary`
/// and `state` are the usual ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Kind(String);

impl Kind {
    pub fn new(label: impl Into<String>) -> Result<Self, ValidationError> {
        let label = label.into();
        if label.is_empty() {
            Err(ValidationError::EmptyKind)
        } else if label.len() > MAX_KIND_LEN {
            Err(ValidationError::KindTooLong)
        } else {
            Ok(Kind(label))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Kind {
    type Error = ValidationError;
    fn try_from(v: String) -> Result<Self, Self::Error> {
        Kind::new(v)
    }
}

impl From<Kind> for String {
    fn from(k: Kind) -> String {
        k.0
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Named embedding views of one memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingSet {
    views: BTreeMap<String, Vector>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set with only the required high view.
    pub fn with_high(v: impl Into<Vector>) -> Self {
        let mut set = Self::new();
        set.insert(HIGH_VIEW, v);
        set
    }

    pub fn insert(&mut self, view: impl Into<String>, v: impl Into<Vector>) -> Option<Vector> {
        self.views.insert(view.into(), v.into())
    }

    pub fn get(&self, view: &str) -> Option<&Vector> {
        self.views.get(view)
    }

    pub fn high(&self) -> Option<&Vector> {
        self.get(HIGH_VIEW)
    }

    pub fn low(&self) -> Option<&Vector> {
        self.get(LOW_VIEW)
    }

    pub fn contains(&self, view: &str) -> bool {
        self.views.contains_key(view)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.views.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// One committed memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id_time: Timestamp,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    pub embeddings: EmbeddingSet,
    #[serde(default)]
    pub meta: Meta,
}

/// A memory that has not been committed yet.
///
/// `at` is the requested wall-clock time in microseconds; when absent the
/// engine clock is used. The committed timestamp may be bumped forward to
/// keep the timeline strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<i64>,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    pub embeddings: EmbeddingSet,
    #[serde(default)]
    pub meta: Meta,
}

impl NewRecord {
    pub fn new(kind: Kind, embeddings: EmbeddingSet) -> Self {
        NewRecord {
            at: None,
            kind,
            content: None,
            embeddings,
            meta: Meta::new(),
        }
    }

    pub fn at(mut self, micros: i64) -> Self {
        self.at = Some(micros);
        self
    }

    pub fn content(mut self, text: impl Into<String>) -> Self {
        self.content = Some(text.into());
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: serde_json::Value) -> Self {
        self.meta.insert(key.into(), value);
        self
    }

    pub(crate) fn into_record(self, id_time: Timestamp) -> MemoryRecord {
        MemoryRecord {
            id_time,
            kind: self.kind,
            content: self.content,
            embeddings: self.embeddings,
            meta: self.meta,
        }
    }
}

/// L2 norm accumulated in f64.
pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn is_unit(v: &[f32]) -> bool {
    let n = l2_norm(v);
    n.is_finite() && (n - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

/// Checks a record against the embedding, kind and dimension rules.
///
/// `namespace_dims` holds the dimension already established for each view
/// name in the namespace; views not present there are accepted at any
/// dimension. Returns the first violation found.
pub fn validate_record(record: &MemoryRecord, namespace_dims: &BTreeMap<String, usize>) -> Result<(), ValidationError> {
    validate_shape(&record.kind, &record.embeddings, namespace_dims)?;
    for (view, v) in record.embeddings.iter() {
        let norm = l2_norm(v);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(ValidationError::NotUnitNorm {
                view: view.to_string(),
                norm,
            });
        }
    }
    validate_meta(&record.meta)
}

/// Kind, view presence and dimension checks, without the norm check.
pub(crate) fn validate_shape(
    kind: &Kind,
    embeddings: &EmbeddingSet,
    namespace_dims: &BTreeMap<String, usize>,
) -> Result<(), ValidationError> {
    if kind.as_str().is_empty() {
        return Err(ValidationError::EmptyKind);
    }
    let high = embeddings.high().ok_or(ValidationError::MissingHighView)?;
    for (view, v) in embeddings.iter() {
        if let Some(&expected) = namespace_dims.get(view) {
            if expected != v.len() {
                return Err(ValidationError::DimensionMismatch {
                    view: view.to_string(),
                    expected,
                    actual: v.len(),
                });
            }
        }
    }
    if let Some(low) = embeddings.low() {
        if low.len() > high.len() {
            return Err(ValidationError::DimensionMismatch {
                view: LOW_VIEW.to_string(),
                expected: high.len(),
                actual: low.len(),
            });
        }
    }
    Ok(())
}

/// Metadata values may be scalars, flat lists, or objects whose values are
/// themselves scalars or flat lists.
pub fn validate_meta(meta: &Meta) -> Result<(), ValidationError> {
    use serde_json::Value;

    fn flat(v: &Value) -> bool {
        match v {
            Value::Array(items) => items.iter().all(|i| !i.is_array() && !i.is_object()),
            Value::Object(_) => false,
            _ => true,
        }
    }

    for (key, value) in meta {
        let ok = match value {
            Value::Object(map) => map.values().all(flat),
            other => flat(other),
        };
        if !ok {
            return Err(ValidationError::MetaTooDeep(key.clone()));
        }
    }
    Ok(())
}

/// Edge weight split into strength and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeight")]
pub struct Weight {
    strength: f64,
    confidence: f64,
}

#[derive(Deserialize)]
struct RawWeight {
    #[serde(default = "one")]
    strength: f64,
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawWeight> for Weight {
    type Error = ValidationError;
    fn try_from(raw: RawWeight) -> Result<Self, Self::Error> {
        Weight::new(raw.strength, raw.confidence)
    }
}

impl Weight {
    pub fn new(strength: f64, confidence: f64) -> Result<Self, ValidationError> {
        if (MIN_STRENGTH..=MAX_STRENGTH).contains(&strength) && (0.0..=1.0).contains(&confidence) {
            Ok(Weight { strength, confidence })
        } else {
            Err(ValidationError::InvalidWeight { strength, confidence })
        }
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

impl Default for Weight {
    fn default() -> Self {
        Weight {
            strength: 1.0,
            confidence: 1.0,
        }
    }
}

/// Engine-assigned edge identifier, strictly increasing per namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Directed labeled relation between two memories.
///
/// When `destination_namespace` is set the destination lives in another
/// namespace and is resolved lazily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub edge_id: EdgeId,
    pub source: Timestamp,
    pub destination: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_namespace: Option<Namespace>,
    pub relationship: String,
    pub weight: Weight,
    #[serde(default)]
    pub meta: Meta,
    pub created_at: Timestamp,
}

/// An edge that has not been committed yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEdge {
    pub source: Timestamp,
    pub destination: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_namespace: Option<Namespace>,
    pub relationship: String,
    #[serde(default)]
    pub weight: Weight,
    #[serde(default)]
    pub meta: Meta,
}

impl NewEdge {
    pub fn new(source: Timestamp, destination: Timestamp, relationship: impl Into<String>) -> Self {
        NewEdge {
            source,
            destination,
            destination_namespace: None,
            relationship: relationship.into(),
            weight: Weight::default(),
            meta: Meta::new(),
        }
    }

    pub fn weight(mut self, weight: Weight) -> Self {
        self.weight = weight;
        self
    }

    pub fn to_namespace(mut self, ns: Namespace) -> Self {
        self.destination_namespace = Some(ns);
        self
    }
}
