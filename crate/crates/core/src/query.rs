//! Hybrid query pipeline.
//!
//! A query runs in four stages over one committed snapshot:
//!
//! 1. restrict to the time window, kind and metadata predicates;
//! 2. score the survivors against the query vector (exact, two-stage
//!    coarse/fine, or IVF) and fuse per-view similarities;
//! 3. optionally follow outgoing edges from the best `k` candidates,
//!    admitting targets whose pair coherence with the edge source clears a
//!    threshold;
//! 4. rank everything by `α·sim + β·exp(-Δt/rank_tau) + γ·Φ`.
//!
//! Ties are always broken by ascending timestamp.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coherence::{pair_coherence, CoherenceConfig};
use crate::embedder::{Embedder, HashEmbedder};
use crate::model::{EdgeId, MemoryRecord, Timestamp, DEFAULT_LOW_DIM, HIGH_VIEW, LOW_VIEW};
use crate::state::NamespaceState;
use crate::storage::log::SegmentInfo;
use crate::vector::{coarse_then_refine, dot, matryoshka_truncate, normalize, IvfIndex, VectorError};
use crate::{Error, Result};

/// Inclusive time range in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Self {
        TimeWindow { start, end }
    }

    pub fn span(&self) -> i64 {
        self.end.saturating_sub(self.start)
    }

    /// Clamps to the valid timestamp range. `None` when nothing can match.
    pub(crate) fn bounds(&self) -> Result<Option<(Timestamp, Timestamp)>> {
        if self.start > self.end {
            return Err(Error::InvalidWindow {
                start: self.start,
                end: self.end,
            });
        }
        if self.end < 1 {
            return Ok(None);
        }
        Ok(Some((
            Timestamp::new(self.start.max(1)).expect("positive"),
            Timestamp::new(self.end).expect("positive"),
        )))
    }
}

/// Metadata predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum MetaFilter {
    Eq { key: String, value: serde_json::Value },
    Exists { key: String },
}

impl MetaFilter {
    pub fn matches(&self, record: &MemoryRecord) -> bool {
        match self {
            MetaFilter::Eq { key, value } => record.meta.get(key) == Some(value),
            MetaFilter::Exists { key } => record.meta.contains_key(key),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Minimum pair coherence for an edge target to be admitted.
    pub threshold: f64,
    #[serde(default = "one_hop")]
    pub max_hops: usize,
    #[serde(default)]
    pub coherence: CoherenceConfig,
}

fn one_hop() -> usize {
    1
}

impl ExpansionConfig {
    pub fn new(threshold: f64) -> Self {
        ExpansionConfig {
            threshold,
            max_hops: 1,
            coherence: CoherenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Decay constant for recency; defaults to a quarter of the window span.
    #[serde(default, with = "crate::util::opt_duration_micros", rename = "rank_tau_us")]
    pub rank_tau: Option<Duration>,
    #[serde(default)]
    pub phi_relation_boost: BTreeMap<String, f64>,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            alpha: 0.55,
            beta: 0.35,
            gamma: 0.10,
            rank_tau: None,
            phi_relation_boost: BTreeMap::new(),
        }
    }
}

impl RankingConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        RankingConfig {
            alpha,
            beta,
            gamma,
            ..Default::default()
        }
    }

    pub fn with_tau(mut self, tau: Duration) -> Self {
        self.rank_tau = Some(tau);
        self
    }

    /// The decay constant in microseconds for `window`.
    pub fn tau_micros(&self, window: &TimeWindow) -> f64 {
        match self.rank_tau {
            Some(t) => t.as_micros() as f64,
            None => (window.span() as f64 / 4.0).max(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) || !ok(self.gamma) {
            return Err(Error::InvalidSpec(
                "alpha, beta and gamma must be finite and non-negative".into(),
            ));
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::InvalidSpec("alpha + beta + gamma must be positive".into()));
        }
        if self.rank_tau.is_some_and(|t| t.is_zero()) {
            return Err(Error::InvalidSpec("rank_tau must be positive".into()));
        }
        Ok(())
    }
}

pub const DEFAULT_K_RRF: usize = 60;

/// How per-view similarities become one `sim` value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Fusion {
    /// High-view inner product.
    #[default]
    Identity,
    /// Weighted mean of per-view similarities.
    Weighted { weights: BTreeMap<String, f64> },
    /// Reciprocal rank fusion of per-view rankings, optionally with a
    /// token-overlap ranking of record content.
    Rrf {
        #[serde(default = "default_k_rrf")]
        k_rrf: usize,
        #[serde(default = "default_rrf_views")]
        views: Vec<String>,
        #[serde(default)]
        lexical: bool,
    },
}

fn default_k_rrf() -> usize {
    DEFAULT_K_RRF
}

fn default_rrf_views() -> Vec<String> {
    vec![HIGH_VIEW.to_string()]
}

/// Candidate generation for stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SearchMode {
    /// Score every window candidate.
    #[default]
    Exact,
    /// Rank by the low view, keep `k_coarse`, then rank those by the high view.
    CoarseRefine { k_coarse: usize },
    /// Probe `n_probe` lists of each sealed segment's IVF index; segments
    /// without an index are scanned exactly.
    Ivf { n_probe: usize },
}

/// A hybrid query against one namespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind_filter: Option<crate::model::Kind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub meta_filter: Vec<MetaFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relational_filter: Option<BTreeSet<String>>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ExpansionConfig>,
    #[serde(default)]
    pub ranking: RankingConfig,
    #[serde(default)]
    pub fusion: Fusion,
    #[serde(default)]
    pub search: SearchMode,
    /// Evaluate against the store as it was at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<Timestamp>,
    /// Number of best stage-2 candidates carried into ranking. All of them
    /// when absent in exact mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_depth: Option<usize>,
}

impl QuerySpec {
    pub fn new(window: TimeWindow, k: usize) -> Self {
        QuerySpec {
            window,
            query_vector: None,
            query_text: None,
            kind_filter: None,
            meta_filter: Vec::new(),
            relational_filter: None,
            k,
            expansion: None,
            ranking: RankingConfig::default(),
            fusion: Fusion::Identity,
            search: SearchMode::Exact,
            as_of: None,
            rerank_depth: None,
        }
    }

    pub fn vector(mut self, v: Vec<f32>) -> Self {
        self.query_vector = Some(v);
        self
    }

    pub fn text(mut self, t: impl Into<String>) -> Self {
        self.query_text = Some(t.into());
        self
    }

    pub fn ranking(mut self, r: RankingConfig) -> Self {
        self.ranking = r;
        self
    }

    pub fn expand(mut self, e: ExpansionConfig) -> Self {
        self.expansion = Some(e);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Vector(VectorError::InvalidK));
        }
        self.window.bounds()?;
        self.ranking.validate()?;
        if let Some(e) = &self.expansion {
            if !(e.threshold > 0.0 && e.threshold <= 1.0) {
                return Err(Error::InvalidSpec("expansion threshold must be in (0, 1]".into()));
            }
            if e.max_hops == 0 {
                return Err(Error::InvalidSpec("max_hops must be at least 1".into()));
            }
            e.coherence.validate()?;
        }
        match &self.fusion {
            Fusion::Rrf { k_rrf, views, .. } => {
                if *k_rrf == 0 {
                    return Err(Error::InvalidSpec("k_rrf must be at least 1".into()));
                }
                if views.is_empty() {
                    return Err(Error::NoViews);
                }
            }
            Fusion::Weighted { weights } => {
                if weights.is_empty() {
                    return Err(Error::NoViews);
                }
                if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidSpec("fusion weights must be non-negative".into()));
                }
                if weights.values().sum::<f64>() <= 0.0 {
                    return Err(Error::NoViews);
                }
            }
            Fusion::Identity => {}
        }
        match self.search {
            SearchMode::CoarseRefine { k_coarse } if k_coarse < self.k => Err(Error::Vector(VectorError::InvalidK)),
            SearchMode::Ivf { n_probe: 0 } => Err(Error::InvalidSpec("n_probe must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub sim: f64,
    pub temporal_decay: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Provenance {
    Direct,
    Expanded { from_edge: EdgeId, hop: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub id_time: Timestamp,
    pub score: f64,
    pub components: ScoreComponents,
    pub provenance: Provenance,
}

/// `α·sim + β·decay + γ·phi`, evaluated in that order.
pub fn combined_score(r: &RankingConfig, c: &ScoreComponents) -> f64 {
    r.alpha * c.sim + r.beta * c.temporal_decay + r.gamma * c.phi
}

/// Reciprocal rank fusion. Each item scores `Σ 1/(k_rrf + rank)` over the
/// lists containing it, with 1-based ranks.
pub fn fuse_rrf(lists: &[Vec<Timestamp>], k_rrf: usize) -> Result<Vec<(Timestamp, f64)>> {
    if k_rrf == 0 {
        return Err(Error::InvalidSpec("k_rrf must be at least 1".into()));
    }
    if lists.is_empty() {
        return Err(Error::NoViews);
    }
    let mut scores: BTreeMap<Timestamp, f64> = BTreeMap::new();
    for list in lists {
        for (i, id) in list.iter().enumerate() {
            *scores.entry(*id).or_default() += rrf_term(k_rrf, i + 1);
        }
    }
    let mut out: Vec<_> = scores.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

fn rrf_term(k_rrf: usize, rank: usize) -> f64 {
    1.0 / (k_rrf + rank) as f64
}

/// Weighted mean `Σ w·sim / Σ w` over the views in `view_sims`.
pub fn fuse_weighted(view_sims: &BTreeMap<String, f64>, weights: &BTreeMap<String, f64>) -> Result<f64> {
    if view_sims.is_empty() {
        return Err(Error::NoViews);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (view, sim) in view_sims {
        let w = *weights
            .get(view)
            .ok_or_else(|| Error::InvalidSpec(format!("no fusion weight for view {view:?}")))?;
        num += w * sim;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::NoViews);
    }
    Ok(num / den)
}

/// Structural score from out-degree and relation labels, in [0, 1].
pub fn phi(state: &NamespaceState, id: Timestamp, cfg: &RankingConfig, as_of: Option<Timestamp>) -> Result<f64> {
    if !state.contains(id) {
        return Err(Error::NotFound(id));
    }
    Ok(phi_unchecked(state, id, cfg, as_of))
}

fn phi_unchecked(state: &NamespaceState, id: Timestamp, cfg: &RankingConfig, as_of: Option<Timestamp>) -> f64 {
    let edges = state.graph().edges_out(id, None, as_of);
    let degree = (((1 + edges.len()) as f64).log2() / 8.0).min(1.0);
    let boost = edges
        .iter()
        .filter_map(|e| cfg.phi_relation_boost.get(&e.relationship).copied())
        .fold(None, |m: Option<f64>, b| Some(m.map_or(b, |m| m.max(b))))
        .unwrap_or(0.0);
    (degree + boost).clamp(0.0, 1.0)
}

/// Fraction of query tokens present in `content`.
pub fn lexical_overlap(query_tokens: &BTreeSet<String>, content: Option<&str>) -> f64 {
    if query_tokens.is_empty() {
        return 0.0;
    }
    let Some(content) = content else { return 0.0 };
    let doc: BTreeSet<String> = HashEmbedder::tokens(content).collect();
    query_tokens.intersection(&doc).count() as f64 / query_tokens.len() as f64
}

/// Candidates with their scores under one ranking source.
type ScoredList = Vec<(Timestamp, f64)>;

/// What a query reads.
pub struct QueryContext<'a> {
    pub state: &'a NamespaceState,
    pub segments: &'a [SegmentInfo],
    pub ivf: &'a BTreeMap<u64, IvfIndex>,
    pub embedder: Option<&'a dyn Embedder>,
}

impl<'a> QueryContext<'a> {
    /// A context with no IVF indexes and no embedder.
    pub fn bare(state: &'a NamespaceState, ivf: &'a BTreeMap<u64, IvfIndex>) -> Self {
        QueryContext {
            state,
            segments: &[],
            ivf,
            embedder: None,
        }
    }
}

/// Per-view query vectors derived from the high query vector.
struct QueryViews {
    views: BTreeMap<String, Vec<f32>>,
}

impl QueryViews {
    fn build(state: &NamespaceState, q: Vec<f32>, fusion: &Fusion) -> Result<Self> {
        let mut wanted: BTreeSet<String> = BTreeSet::new();
        match fusion {
            Fusion::Identity => {}
            Fusion::Weighted { weights } => {
                wanted.extend(weights.iter().filter(|(_, w)| **w > 0.0).map(|(k, _)| k.clone()))
            }
            Fusion::Rrf { views, .. } => wanted.extend(views.iter().cloned()),
        }
        let mut views = BTreeMap::new();
        for name in wanted {
            if name == HIGH_VIEW {
                continue;
            }
            let dim = match state.view(&name).and_then(|v| v.dimension()) {
                Some(d) => d,
                None if name == LOW_VIEW => DEFAULT_LOW_DIM.min(q.len()),
                None => continue,
            };
            if dim > q.len() {
                return Err(Error::Vector(VectorError::InvalidTruncation {
                    requested: dim,
                    available: q.len(),
                }));
            }
            views.insert(name, matryoshka_truncate(&q, dim)?);
        }
        views.insert(HIGH_VIEW.to_string(), q);
        Ok(QueryViews { views })
    }

    fn high(&self) -> &[f32] {
        &self.views[HIGH_VIEW]
    }

    /// Similarity of `record` to the query in `view`. A missing low view is
    /// derived from the record's high view.
    fn sim(&self, record: &MemoryRecord, view: &str) -> Option<f64> {
        let q = self.views.get(view)?;
        match record.embeddings.get(view) {
            Some(v) if v.len() == q.len() => Some(dot(v, q)),
            Some(_) => None,
            None if view == LOW_VIEW => {
                let high = record.embeddings.high()?;
                match matryoshka_truncate(high, q.len()) {
                    Ok(low) => Some(dot(&low, q)),
                    Err(_) => Some(0.0),
                }
            }
            None => None,
        }
    }
}

/// Ranking of scored items best-first, ties by ascending timestamp.
fn sort_desc(items: &mut [(Timestamp, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// 1-based rank an item with `score` and `id` would take in a sorted list.
fn virtual_rank(sorted: &[(Timestamp, f64)], id: Timestamp, score: f64) -> usize {
    1 + sorted.partition_point(|(t, s)| *s > score || (*s == score && *t < id))
}

/// Per-record fused similarity, fixed by the stage-2 candidate set.
struct Fuser<'a> {
    fusion: &'a Fusion,
    q: &'a QueryViews,
    query_tokens: BTreeSet<String>,
    /// For RRF: each view's (and the lexical) ranking over the candidates.
    rrf_lists: Vec<(Option<String>, ScoredList)>,
}

impl<'a> Fuser<'a> {
    fn new(fusion: &'a Fusion, q: &'a QueryViews, query_text: Option<&str>) -> Self {
        Fuser {
            fusion,
            q,
            query_tokens: query_text
                .map(|t| HashEmbedder::tokens(t).collect())
                .unwrap_or_default(),
            rrf_lists: Vec::new(),
        }
    }

    fn base_sim(&self, record: &MemoryRecord, view: Option<&str>) -> Option<f64> {
        match view {
            Some(v) => self.q.sim(record, v),
            None => {
                let s = lexical_overlap(&self.query_tokens, record.content.as_deref());
                (s > 0.0).then_some(s)
            }
        }
    }

    fn prepare(&mut self, candidates: &[&MemoryRecord]) {
        let Fusion::Rrf { views, lexical, .. } = self.fusion else {
            return;
        };
        let mut sources: Vec<Option<String>> = views.iter().cloned().map(Some).collect();
        if *lexical && !self.query_tokens.is_empty() {
            sources.push(None);
        }
        self.rrf_lists = sources
            .into_iter()
            .map(|src| {
                let mut list: Vec<(Timestamp, f64)> = candidates
                    .iter()
                    .filter_map(|r| self.base_sim(r, src.as_deref()).map(|s| (r.id_time, s)))
                    .collect();
                sort_desc(&mut list);
                (src, list)
            })
            .collect();
    }

    fn sim(&self, record: &MemoryRecord) -> Result<f64> {
        match self.fusion {
            Fusion::Identity => Ok(self.q.sim(record, HIGH_VIEW).unwrap_or(0.0)),
            Fusion::Weighted { weights } => {
                let sims: BTreeMap<String, f64> = weights
                    .iter()
                    .filter(|(_, w)| **w > 0.0)
                    .filter_map(|(v, _)| self.q.sim(record, v).map(|s| (v.clone(), s)))
                    .collect();
                if sims.is_empty() {
                    return Ok(0.0);
                }
                fuse_weighted(&sims, weights)
            }
            Fusion::Rrf { k_rrf, .. } => {
                let mut total = 0.0;
                for (src, list) in &self.rrf_lists {
                    if let Some(s) = self.base_sim(record, src.as_deref()) {
                        total += rrf_term(*k_rrf, virtual_rank(list, record.id_time, s));
                    }
                }
                Ok(total)
            }
        }
    }
}

/// Runs `spec` against a snapshot. Returns at most `k` hits, best first.
pub fn execute(ctx: &QueryContext<'_>, spec: &QuerySpec) -> Result<Vec<RankedHit>> {
    spec.validate()?;
    let q = match (&spec.query_vector, &spec.query_text) {
        (Some(v), _) => normalize(v).map_err(|_| Error::InvalidSpec("query vector is zero".into()))?,
        (None, Some(text)) => {
            let embedder = ctx
                .embedder
                .ok_or_else(|| Error::InvalidSpec("query text given but no embedder is available".into()))?;
            embedder.embed(text)
        }
        (None, None) => return Err(Error::InvalidSpec("query needs a vector or text".into())),
    };
    let Some((start, mut end)) = spec.window.bounds()? else {
        return Ok(Vec::new());
    };
    let state = ctx.state;
    let Some(high_view) = state.view(HIGH_VIEW) else {
        return Ok(Vec::new());
    };
    if let Some(d) = high_view.dimension() {
        if d != q.len() {
            return Err(Error::Vector(VectorError::DimensionMismatch {
                expected: d,
                actual: q.len(),
            }));
        }
    }
    if let Some(as_of) = spec.as_of {
        end = end.min(as_of);
    }

    // Stage 1: temporal, kind and metadata restriction.
    let window: Vec<_> = if start <= end {
        state
            .scan_window(start, end, spec.kind_filter.as_ref())
            .into_iter()
            .filter(|r| spec.meta_filter.iter().all(|f| f.matches(r)))
            .collect()
    } else {
        Vec::new()
    };
    if window.is_empty() {
        return Ok(Vec::new());
    }

    // Stage 2: semantic candidates.
    let qv = QueryViews::build(state, q, &spec.fusion)?;
    let candidates: Vec<&MemoryRecord> = match spec.search {
        SearchMode::Exact => window.iter().map(|r| r.as_ref()).collect(),
        SearchMode::CoarseRefine { k_coarse } => {
            let ids: BTreeSet<Timestamp> = window.iter().map(|r| r.id_time).collect();
            let empty = crate::vector::VectorView::new(LOW_VIEW);
            let low = state.view(LOW_VIEW).unwrap_or(&empty);
            let depth = spec.rerank_depth.unwrap_or(k_coarse).clamp(spec.k, k_coarse);
            let hits = coarse_then_refine(low, high_view, qv.high(), depth, k_coarse, Some(&ids))?;
            hits.iter()
                .filter_map(|n| state.get(n.id).map(|r| r.as_ref()))
                .collect()
        }
        SearchMode::Ivf { n_probe } => {
            let depth = spec.rerank_depth.unwrap_or((4 * spec.k).max(100)).max(spec.k);
            ivf_candidates(ctx, &window, qv.high(), depth, n_probe)?
        }
    };

    let mut fuser = Fuser::new(&spec.fusion, &qv, spec.query_text.as_deref());
    fuser.prepare(&candidates);
    let mut scored: Vec<(Timestamp, f64)> = candidates
        .iter()
        .map(|r| Ok((r.id_time, fuser.sim(r)?)))
        .collect::<Result<_>>()?;
    sort_desc(&mut scored);
    if let (SearchMode::Exact, Some(depth)) = (spec.search, spec.rerank_depth) {
        scored.truncate(depth.max(spec.k));
    }

    let mut hits: BTreeMap<Timestamp, (f64, Provenance)> =
        scored.iter().map(|(id, s)| (*id, (*s, Provenance::Direct))).collect();

    // Stage 3: coherence-bounded graph expansion.
    if let Some(exp) = &spec.expansion {
        let seeds: Vec<Timestamp> = scored.iter().take(spec.k).map(|(id, _)| *id).collect();
        for (id, (from_edge, hop)) in expand(state, &seeds, exp, spec, &hits)? {
            let record = state.get(id).expect("expansion only admits resident records");
            hits.insert(id, (fuser.sim(record)?, Provenance::Expanded { from_edge, hop }));
        }
    }

    // Stage 4: combined score.
    let t_max = spec.window.end;
    let tau = spec.ranking.tau_micros(&spec.window);
    let mut ranked: Vec<RankedHit> = hits
        .into_iter()
        .map(|(id, (sim, provenance))| {
            let dt = (t_max as i128 - id.micros() as i128).unsigned_abs() as f64;
            let components = ScoreComponents {
                sim,
                temporal_decay: (-dt / tau).exp(),
                phi: phi_unchecked(state, id, &spec.ranking, spec.as_of),
            };
            RankedHit {
                id_time: id,
                score: combined_score(&spec.ranking, &components),
                components,
                provenance,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id_time.cmp(&b.id_time)));
    ranked.truncate(spec.k);
    Ok(ranked)
}

/// Breadth-first expansion from `seeds`. Each admitted target records the
/// first edge that reached it and its hop number.
fn expand(
    state: &NamespaceState,
    seeds: &[Timestamp],
    exp: &ExpansionConfig,
    spec: &QuerySpec,
    direct: &BTreeMap<Timestamp, (f64, Provenance)>,
) -> Result<Vec<(Timestamp, (EdgeId, usize))>> {
    let mut admitted: Vec<(Timestamp, (EdgeId, usize))> = Vec::new();
    let mut seen: BTreeSet<Timestamp> = direct.keys().copied().collect();
    let mut frontier: Vec<Timestamp> = seeds.to_vec();
    for hop in 1..=exp.max_hops {
        let mut next = Vec::new();
        for &src in &frontier {
            let Some(src_rec) = state.get(src) else { continue };
            for edge in state.graph().edges_out(src, None, spec.as_of) {
                if edge.destination_namespace.is_some() {
                    continue;
                }
                if spec
                    .relational_filter
                    .as_ref()
                    .is_some_and(|f| !f.contains(&edge.relationship))
                {
                    continue;
                }
                let dst = edge.destination;
                if seen.contains(&dst) || spec.as_of.is_some_and(|a| dst > a) {
                    continue;
                }
                let Some(dst_rec) = state.get(dst) else { continue };
                if pair_coherence(src_rec, dst_rec, &exp.coherence)? >= exp.threshold {
                    seen.insert(dst);
                    admitted.push((dst, (edge.edge_id, hop)));
                    next.push(dst);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(admitted)
}

fn ivf_candidates<'s>(
    ctx: &QueryContext<'s>,
    window: &'s [std::sync::Arc<MemoryRecord>],
    q: &[f32],
    depth: usize,
    n_probe: usize,
) -> Result<Vec<&'s MemoryRecord>> {
    let state = ctx.state;
    let high = state.view(HIGH_VIEW).expect("checked by caller");
    let ids: BTreeSet<Timestamp> = window.iter().map(|r| r.id_time).collect();
    let (lo, hi) = (*ids.first().expect("non-empty"), *ids.last().expect("non-empty"));
    let mut covered: BTreeSet<Timestamp> = BTreeSet::new();
    let mut top = crate::vector::TopK::new(depth);
    for info in ctx.segments.iter().filter(|s| s.sealed && s.overlaps(lo, hi)) {
        let Some(index) = ctx.ivf.get(&info.segment_id) else {
            continue;
        };
        if index.dimension() != q.len() || !index.is_trained() {
            continue;
        }
        covered.extend(index.postings().iter().flatten().copied());
        let filter = |t: Timestamp| ids.contains(&t);
        let probe = n_probe.min(index.n_lists());
        for n in index.knn_ivf(high, q, depth, probe, Some(&filter))? {
            top.push(n.id, n.similarity);
        }
    }
    for id in ids.difference(&covered) {
        if let Some(v) = high.get(*id) {
            top.push(*id, dot(v, q));
        }
    }
    Ok(top
        .into_sorted()
        .iter()
        .filter_map(|n| state.get(n.id).map(|r| r.as_ref()))
        .collect())
}
