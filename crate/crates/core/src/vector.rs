//! Similarity search over embedding views.
//!
//! All stored vectors are unit length, so similarity is a plain inner
//! product. Search is exact ([`knn_flat`]), inverted-file approximate
//! ([`IvfIndex`]), or two-stage coarse/fine over Matryoshka prefixes
//! ([`coarse_then_refine`]). Every ranking breaks similarity ties by
//! ascending timestamp so results are canonical.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{l2_norm, Timestamp, Vector, DEFAULT_LOW_DIM};
use crate::storage::codec::{crc32c, ByteReader, ByteWriter, CodecError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1 (and k <= k_coarse for two-stage search)")]
    InvalidK,
    #[error("n_probe must be in 1..={n_lists}, got {n_probe}")]
    InvalidProbe { n_probe: usize, n_lists: usize },
    #[error("index has not been trained")]
    Untrained,
    #[error("leading {0} components are all zero")]
    ZeroPrefix(usize),
    #[error("cannot truncate a {available}-dim vector to {requested} dims")]
    InvalidTruncation { requested: usize, available: usize },
    #[error("corrupt index sidecar: {0}")]
    Corrupt(String),
}

impl From<CodecError> for VectorError {
    fn from(e: CodecError) -> Self {
        VectorError::Corrupt(e.to_string())
    }
}

/// A search result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: Timestamp,
    pub similarity: f64,
}

/// Returns `v / ‖v‖₂`.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>, VectorError> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(VectorError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

/// Inner product, equal to cosine similarity for unit inputs.
pub fn similarity(u: &[f32], v: &[f32]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(dot(u, v))
}

/// Inner product without the length check.
#[inline]
pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        acc += f64::from(*a) * f64::from(*b);
    }
    acc
}

/// Euclidean distance between unit vectors, from their similarity.
pub fn distance_from_similarity(sim: f64) -> f64 {
    (2.0 - 2.0 * sim).max(0.0).sqrt()
}

/// First `dim` components of `v`, re-normalized.
pub fn matryoshka_truncate(v: &[f32], dim: usize) -> Result<Vec<f32>, VectorError> {
    if dim == 0 || dim > v.len() {
        return Err(VectorError::InvalidTruncation {
            requested: dim,
            available: v.len(),
        });
    }
    normalize(&v[..dim]).map_err(|_| VectorError::ZeroPrefix(dim))
}

/// All vectors stored under one view name.
#[derive(Debug, Clone, Default)]
pub struct VectorView {
    name: String,
    dimension: Option<usize>,
    entries: BTreeMap<Timestamp, Vector>,
}

impl VectorView {
    pub fn new(name: impl Into<String>) -> Self {
        VectorView {
            name: name.into(),
            dimension: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: Timestamp) -> Option<&Vector> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, &Vector)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Inserts or replaces the vector for `id`. The first vector fixes the
    /// view dimension.
    pub fn insert(&mut self, id: Timestamp, v: Vector) -> Result<(), VectorError> {
        match self.dimension {
            Some(d) if d != v.len() => {
                return Err(VectorError::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                })
            }
            None => self.dimension = Some(v.len()),
            _ => {}
        }
        self.entries.insert(id, v);
        Ok(())
    }

    fn check_query(&self, q: &[f32]) -> Result<(), VectorError> {
        match self.dimension {
            Some(d) if d != q.len() => Err(VectorError::DimensionMismatch {
                expected: d,
                actual: q.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Ranking key: larger is better. Higher similarity first, then earlier
/// timestamp.
#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .similarity
            .total_cmp(&other.0.similarity)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

/// Bounded collector keeping the best `k` neighbors.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<std::cmp::Reverse<Ranked>>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k.min(4096) + 1),
        }
    }

    pub(crate) fn push(&mut self, id: Timestamp, similarity: f64) {
        let item = Ranked(Neighbor { id, similarity });
        if self.heap.len() < self.k {
            self.heap.push(std::cmp::Reverse(item));
        } else if let Some(worst) = self.heap.peek() {
            if item > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(item));
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<Neighbor> {
        let mut out: Vec<Ranked> = self.heap.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out.into_iter().map(|r| r.0).collect()
    }
}

/// Sorts neighbors best-first with the canonical tie rule.
pub fn sort_neighbors(hits: &mut [Neighbor]) {
    hits.sort_by_key(|h| std::cmp::Reverse(Ranked(*h)));
}

/// Exact k nearest neighbors by inner product.
///
/// When `candidates` is given only those timestamps are considered;
/// candidates without a vector in this view are skipped.
pub fn knn_flat(
    view: &VectorView,
    q: &[f32],
    k: usize,
    candidates: Option<&BTreeSet<Timestamp>>,
) -> Result<Vec<Neighbor>, VectorError> {
    if k == 0 {
        return Err(VectorError::InvalidK);
    }
    view.check_query(q)?;
    let mut top = TopK::new(k);
    match candidates {
        Some(set) => {
            for id in set {
                if let Some(v) = view.get(*id) {
                    top.push(*id, dot(v, q));
                }
            }
        }
        None => {
            for (id, v) in view.iter() {
                top.push(id, dot(v, q));
            }
        }
    }
    Ok(top.into_sorted())
}

/// Two-stage search: rank by the low view against the truncated query,
/// then re-rank the best `k_coarse` by the full high view.
///
/// Records lacking a low vector are scored with an on-the-fly truncation of
/// their high vector, which is exactly what maintenance would store.
pub fn coarse_then_refine(
    view_low: &VectorView,
    view_high: &VectorView,
    q_high: &[f32],
    k: usize,
    k_coarse: usize,
    candidates: Option<&BTreeSet<Timestamp>>,
) -> Result<Vec<Neighbor>, VectorError> {
    if k == 0 || k > k_coarse {
        return Err(VectorError::InvalidK);
    }
    view_high.check_query(q_high)?;
    let low_dim = view_low
        .dimension()
        .unwrap_or_else(|| DEFAULT_LOW_DIM.min(q_high.len()));
    let q_low = match matryoshka_truncate(q_high, low_dim) {
        Ok(v) => v,
        Err(VectorError::ZeroPrefix(_)) => vec![0.0; low_dim],
        Err(e) => return Err(e),
    };

    let mut coarse = TopK::new(k_coarse);
    let mut score = |id: Timestamp, high: &Vector| -> Result<(), VectorError> {
        let sim = match view_low.get(id) {
            Some(low) => dot(low, &q_low),
            None => match matryoshka_truncate(high, low_dim) {
                Ok(low) => dot(&low, &q_low),
                // An all-zero prefix carries no coarse signal.
                Err(VectorError::ZeroPrefix(_)) => 0.0,
                Err(e) => return Err(e),
            },
        };
        coarse.push(id, sim);
        Ok(())
    };
    match candidates {
        Some(set) => {
            for id in set {
                if let Some(h) = view_high.get(*id) {
                    score(*id, h)?;
                }
            }
        }
        None => {
            for (id, h) in view_high.iter() {
                score(id, h)?;
            }
        }
    }

    let mut fine = TopK::new(k);
    for n in coarse.into_sorted() {
        if let Some(h) = view_high.get(n.id) {
            fine.push(n.id, dot(h, q_high));
        }
    }
    Ok(fine.into_sorted())
}

/// Training parameters for [`IvfIndex::train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfParams {
    /// Number of lists; `None` picks ⌈√N⌉ clamped to [16, 4096].
    pub n_lists: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams {
            n_lists: None,
            iterations: 20,
            seed: 0x6d656d6462,
        }
    }
}

pub fn default_n_lists(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(16, 4096)
}

/// Inverted-file index: spherical k-means centroids and one posting list of
/// timestamps per centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    view_name: String,
    dimension: usize,
    centroids: Vec<Vec<f32>>,
    postings: Vec<Vec<Timestamp>>,
    trained_on: usize,
}

const IVF_MAGIC: &[u8; 4] = b"MIVF";
const IVF_VERSION: u32 = 1;

impl IvfIndex {
    /// Trains centroids with k-means++ seeding and Lloyd iterations, then
    /// assigns every vector of `view` to its nearest centroid.
    pub fn train(view: &VectorView, params: IvfParams) -> Result<IvfIndex, VectorError> {
        let points: Vec<(Timestamp, &Vector)> = view.iter().collect();
        let dimension = view.dimension().unwrap_or(0);
        let n = points.len();
        let n_lists = params.n_lists.unwrap_or_else(|| default_n_lists(n)).min(n);
        if n_lists == 0 {
            return Ok(IvfIndex {
                view_name: view.name().to_string(),
                dimension,
                centroids: Vec::new(),
                postings: Vec::new(),
                trained_on: 0,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut centroids = kmeans_pp_init(&points, n_lists, &mut rng);
        let mut assignment = vec![0usize; n];
        for _ in 0..params.iterations {
            let mut changed = false;
            for (i, (_, v)) in points.iter().enumerate() {
                let a = nearest_centroid(&centroids, v);
                if a != assignment[i] {
                    assignment[i] = a;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0f64; dimension]; n_lists];
            for (i, (_, v)) in points.iter().enumerate() {
                for (s, x) in sums[assignment[i]].iter_mut().zip(v.iter()) {
                    *s += f64::from(*x);
                }
            }
            for (c, sum) in centroids.iter_mut().zip(sums) {
                let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
                // Empty clusters keep their previous centroid.
                if norm > 0.0 {
                    *c = sum.iter().map(|x| (x / norm) as f32).collect();
                }
            }
            if !changed {
                break;
            }
        }

        let mut index = IvfIndex {
            view_name: view.name().to_string(),
            dimension,
            centroids,
            postings: vec![Vec::new(); n_lists],
            trained_on: n,
        };
        for (id, v) in points {
            let list = nearest_centroid(&index.centroids, v);
            index.postings[list].push(id);
        }
        Ok(index)
    }

    pub fn view_name(&self) -> &str {
        &self.view_name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn n_lists(&self) -> usize {
        self.centroids.len()
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    pub fn postings(&self) -> &[Vec<Timestamp>] {
        &self.postings
    }

    pub fn is_trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a vector to the posting list of its nearest centroid.
    pub fn insert(&mut self, id: Timestamp, v: &[f32]) -> Result<(), VectorError> {
        if !self.is_trained() {
            return Err(VectorError::Untrained);
        }
        if v.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                expected: self.dimension,
                actual: v.len(),
            });
        }
        let list = nearest_centroid(&self.centroids, v);
        self.postings[list].push(id);
        Ok(())
    }

    /// Ids of the `n_probe` lists whose centroids are most similar to `q`.
    pub fn probe_lists(&self, q: &[f32], n_probe: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = self.centroids.iter().enumerate().map(|(i, c)| (i, dot(c, q))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n_probe);
        scored.into_iter().map(|(i, _)| i).collect()
    }

    /// Exact scan over the union of the `n_probe` nearest posting lists.
    pub fn knn_ivf(
        &self,
        view: &VectorView,
        q: &[f32],
        k: usize,
        n_probe: usize,
        filter: Option<&dyn Fn(Timestamp) -> bool>,
    ) -> Result<Vec<Neighbor>, VectorError> {
        if k == 0 {
            return Err(VectorError::InvalidK);
        }
        if !self.is_trained() {
            return Err(VectorError::Untrained);
        }
        if q.len() != self.dimension {
            return Err(VectorError::DimensionMismatch {
                expected: self.dimension,
                actual: q.len(),
            });
        }
        if n_probe == 0 || n_probe > self.n_lists() {
            return Err(VectorError::InvalidProbe {
                n_probe,
                n_lists: self.n_lists(),
            });
        }
        let mut top = TopK::new(k);
        for list in self.probe_lists(q, n_probe) {
            for &id in &self.postings[list] {
                if filter.is_some_and(|f| !f(id)) {
                    continue;
                }
                if let Some(v) = view.get(id) {
                    top.push(id, dot(v, q));
                }
            }
        }
        Ok(top.into_sorted())
    }

    /// Sidecar encoding: little-endian fields, CRC-32C trailer.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(IVF_MAGIC);
        w.u32(IVF_VERSION);
        w.str(&self.view_name);
        w.u32(self.dimension as u32);
        w.u32(self.centroids.len() as u32);
        w.u64(self.trained_on as u64);
        for c in &self.centroids {
            w.f32s(c);
        }
        for list in &self.postings {
            w.u32(list.len() as u32);
            for id in list {
                w.i64(id.micros());
            }
        }
        let crc = crc32c(w.as_slice());
        w.u32(crc);
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<IvfIndex, VectorError> {
        if bytes.len() < 8 {
            return Err(VectorError::Corrupt("sidecar too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32c(body) != stored {
            return Err(VectorError::Corrupt("checksum mismatch".into()));
        }
        let mut r = ByteReader::new(body);
        if r.take(4)? != IVF_MAGIC {
            return Err(VectorError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != IVF_VERSION {
            return Err(VectorError::Corrupt(format!("unsupported version {version}")));
        }
        let view_name = r.str()?;
        let dimension = r.u32()? as usize;
        let n_lists = r.u32()? as usize;
        let trained_on = r.u64()? as usize;
        let mut centroids = Vec::with_capacity(n_lists);
        for _ in 0..n_lists {
            centroids.push(r.f32s(dimension)?);
        }
        let mut postings = Vec::with_capacity(n_lists);
        for _ in 0..n_lists {
            let len = r.u32()? as usize;
            let mut list = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                let t = Timestamp::new(r.i64()?).map_err(|e| VectorError::Corrupt(e.to_string()))?;
                list.push(t);
            }
            postings.push(list);
        }
        if !r.is_empty() {
            return Err(VectorError::Corrupt("trailing bytes".into()));
        }
        Ok(IvfIndex {
            view_name,
            dimension,
            centroids,
            postings,
            trained_on,
        })
    }
}

fn nearest_centroid(centroids: &[Vec<f32>], v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let s = dot(c, v);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    best
}

fn kmeans_pp_init(points: &[(Timestamp, &Vector)], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push(points[first].1.to_vec());
    // Squared chord distance to the nearest chosen centroid: 2 - 2·sim.
    let mut d2: Vec<f64> = points
        .iter()
        .map(|(_, v)| (2.0 - 2.0 * dot(v, &centroids[0])).max(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = points[next].1.to_vec();
        for (d, (_, v)) in d2.iter_mut().zip(points) {
            *d = d.min((2.0 - 2.0 * dot(v, &c)).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}
