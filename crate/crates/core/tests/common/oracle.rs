//! Straight-line reference model of a namespace and of query execution.
//!
//! Everything here is written from the definitions, without calling into
//! the engine's query, vector or coherence code. The only shared piece is
//! the hash embedder used to turn text into vectors.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use memdb_core::{
    Clock, CoherenceConfig, CoherenceMode, Embedder, EmbeddingSet, Engine, ExpansionConfig, Fusion, HashEmbedder,
    ManualClock, Meta, MetaFilter, Namespace, NewEdge, NewRecord, QuerySpec, RankingConfig, TimeWindow, Weight,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{kind, ts};

pub const VOCAB: [&str; 24] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey", "xray",
];
pub const KINDS: [&str; 3] = ["note", "summary", "event"];
pub const RELATIONS: [&str; 4] = ["related", "reply", "summary-of", "cites"];

#[derive(Debug, Clone)]
pub struct ORec {
    pub id: i64,
    pub kind: String,
    pub content: String,
    pub meta: Meta,
    pub high: Vec<f32>,
    pub low: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct OEdge {
    pub id: u64,
    pub src: i64,
    pub dst: i64,
    pub rel: String,
    pub strength: f64,
    pub confidence: f64,
    pub created: i64,
    pub pruned: Option<i64>,
}

impl OEdge {
    fn visible(&self, as_of: Option<i64>) -> bool {
        match as_of {
            None => self.pruned.is_none(),
            Some(t) => self.created <= t && self.pruned.is_none_or(|p| t < p),
        }
    }
}

/// Reference copy of one namespace.
#[derive(Debug, Clone, Default)]
pub struct OStore {
    pub records: Vec<ORec>,
    pub edges: Vec<OEdge>,
    pub dim: usize,
}

type ScoredIds = Vec<(i64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct OHit {
    pub id: i64,
    pub score: f64,
    pub sim: f64,
    pub decay: f64,
    pub phi: f64,
    pub expanded: Option<(u64, usize)>,
}

pub fn norm(v: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for x in v {
        s += f64::from(*x) * f64::from(*x);
    }
    s.sqrt()
}

pub fn unitize(v: &[f32]) -> Option<Vec<f32>> {
    let n = norm(v);
    if n == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| (f64::from(*x) / n) as f32).collect())
}

pub fn inner(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        s += f64::from(*x) * f64::from(*y);
    }
    s
}

pub fn euclid(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        s += d * d;
    }
    s.sqrt()
}

pub fn coherence_of(d: f64) -> f64 {
    if d <= 1e-9 {
        1.0
    } else {
        (-d).exp()
    }
}

pub fn pair_c(a: &ORec, b: &ORec, cfg: &CoherenceConfig) -> f64 {
    let d = match cfg.mode {
        CoherenceMode::Practical => euclid(&a.high, &b.high),
        CoherenceMode::Idealized => {
            let dt = (b.id - a.id) as f64;
            let s = if a.high == b.high {
                0.0
            } else {
                (1.0 - inner(&a.high, &b.high)).clamp(0.0, 2.0)
            };
            ((cfg.lambda_t * dt).powi(2) + (cfg.lambda_s * s).powi(2)).sqrt()
        }
    };
    coherence_of(d)
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn phi_of(edges: &[&OEdge], cfg: &RankingConfig) -> f64 {
    let base = (((1 + edges.len()) as f64).log2() / 8.0).min(1.0);
    let mut boost: Option<f64> = None;
    for e in edges {
        if let Some(b) = cfg.phi_relation_boost.get(&e.rel) {
            boost = Some(boost.map_or(*b, |m: f64| m.max(*b)));
        }
    }
    (base + boost.unwrap_or(0.0)).clamp(0.0, 1.0)
}

impl OStore {
    pub fn get(&self, id: i64) -> Option<&ORec> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn low_dim(&self) -> Option<usize> {
        self.records.iter().find_map(|r| r.low.as_ref().map(|l| l.len()))
    }

    fn out_edges(&self, src: i64, as_of: Option<i64>) -> impl Iterator<Item = &OEdge> {
        self.edges.iter().filter(move |e| e.src == src && e.visible(as_of))
    }

    pub fn phi(&self, id: i64, cfg: &RankingConfig, as_of: Option<i64>) -> f64 {
        let edges: Vec<&OEdge> = self.out_edges(id, as_of).collect();
        phi_of(&edges, cfg)
    }

    fn adjacency(&self, as_of: Option<i64>) -> BTreeMap<i64, Vec<&OEdge>> {
        let mut adj: BTreeMap<i64, Vec<&OEdge>> = BTreeMap::new();
        for e in self.edges.iter().filter(|e| e.visible(as_of)) {
            adj.entry(e.src).or_default().push(e);
        }
        adj
    }

    /// Applies the decay rule to every live edge; returns the ids pruned.
    pub fn prune(&mut self, now: i64, half_life: Duration, floor: f64) -> Vec<u64> {
        let hl = half_life.as_micros() as f64;
        let mut out = Vec::new();
        for e in &mut self.edges {
            if e.pruned.is_some() {
                continue;
            }
            let age = (now - e.created).max(0) as f64;
            let f = 2f64.powf(-age / hl);
            if (e.strength * f).abs() < floor && e.confidence * f < floor {
                e.pruned = Some(now);
                out.push(e.id);
            }
        }
        out
    }

    /// Reference query pipeline. `Err(())` when the engine must reject the
    /// query (a needed query prefix is all zero).
    pub fn query(&self, spec: &QuerySpec, embedder: &HashEmbedder) -> Result<Vec<OHit>, ()> {
        let q: Vec<f32> = match (&spec.query_vector, &spec.query_text) {
            (Some(v), _) => unitize(v).ok_or(())?,
            (None, Some(t)) => embedder.embed(t),
            (None, None) => return Err(()),
        };
        if spec.window.end < 1 || self.records.is_empty() {
            return Ok(Vec::new());
        }
        let start = spec.window.start.max(1);
        let end = match spec.as_of {
            Some(a) => spec.window.end.min(a.micros()),
            None => spec.window.end,
        };
        let as_of = spec.as_of.map(|a| a.micros());
        let adj = self.adjacency(as_of);
        let no_edges: Vec<&OEdge> = Vec::new();
        let out = |id: i64| adj.get(&id).unwrap_or(&no_edges);

        let window: Vec<&ORec> = self
            .records
            .iter()
            .filter(|r| r.id >= start && r.id <= end)
            .filter(|r| spec.kind_filter.as_ref().is_none_or(|k| k.as_str() == r.kind))
            .filter(|r| {
                spec.meta_filter.iter().all(|f| match f {
                    MetaFilter::Eq { key, value } => r.meta.get(key) == Some(value),
                    MetaFilter::Exists { key } => r.meta.contains_key(key),
                })
            })
            .collect();
        if window.is_empty() {
            return Ok(Vec::new());
        }

        // Per-view query vectors.
        let mut wanted: Vec<&str> = Vec::new();
        match &spec.fusion {
            Fusion::Identity => {}
            Fusion::Weighted { weights } => {
                wanted.extend(weights.iter().filter(|(_, w)| **w > 0.0).map(|(k, _)| k.as_str()))
            }
            Fusion::Rrf { views, .. } => wanted.extend(views.iter().map(String::as_str)),
        }
        let low_dim = self.low_dim().unwrap_or(64.min(q.len()));
        let q_low = if wanted.contains(&"low") {
            Some(unitize(&q[..low_dim]).ok_or(())?)
        } else {
            None
        };
        let view_sim = |r: &ORec, view: &str| -> Option<f64> {
            match view {
                "high" => Some(inner(&r.high, &q)),
                "low" => {
                    let ql = q_low.as_ref()?;
                    match &r.low {
                        Some(l) => Some(inner(l, ql)),
                        None => Some(unitize(&r.high[..low_dim]).map_or(0.0, |l| inner(&l, ql))),
                    }
                }
                _ => None,
            }
        };
        let q_tokens = spec.query_text.as_deref().map(tokens).unwrap_or_default();
        let overlap = |r: &ORec| -> Option<f64> {
            if q_tokens.is_empty() {
                return None;
            }
            let doc = tokens(&r.content);
            let n = q_tokens.intersection(&doc).count();
            (n > 0).then(|| n as f64 / q_tokens.len() as f64)
        };

        // RRF source lists over the window candidates.
        let mut sources: Vec<(Option<&str>, ScoredIds)> = Vec::new();
        if let Fusion::Rrf { views, lexical, .. } = &spec.fusion {
            let mut names: Vec<Option<&str>> = views.iter().map(|v| Some(v.as_str())).collect();
            if *lexical && !q_tokens.is_empty() {
                names.push(None);
            }
            for name in names {
                let mut list: Vec<(i64, f64)> = window
                    .iter()
                    .filter_map(|r| {
                        let s = match name {
                            Some(v) => view_sim(r, v),
                            None => overlap(r),
                        };
                        s.map(|s| (r.id, s))
                    })
                    .collect();
                list.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                sources.push((name, list));
            }
        }

        let fused = |r: &ORec| -> f64 {
            match &spec.fusion {
                Fusion::Identity => inner(&r.high, &q),
                Fusion::Weighted { weights } => {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (v, w) in weights {
                        if *w <= 0.0 {
                            continue;
                        }
                        if let Some(s) = view_sim(r, v) {
                            num += w * s;
                            den += w;
                        }
                    }
                    if den == 0.0 {
                        0.0
                    } else {
                        num / den
                    }
                }
                Fusion::Rrf { k_rrf, .. } => {
                    let mut total = 0.0;
                    for (name, list) in &sources {
                        let s = match name {
                            Some(v) => view_sim(r, v),
                            None => overlap(r),
                        };
                        if let Some(s) = s {
                            let better = list.partition_point(|(id, o)| *o > s || (*o == s && *id < r.id));
                            total += 1.0 / (k_rrf + better + 1) as f64;
                        }
                    }
                    total
                }
            }
        };

        let mut scored: Vec<(i64, f64)> = window.iter().map(|r| (r.id, fused(r))).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if let Some(depth) = spec.rerank_depth {
            scored.truncate(depth.max(spec.k));
        }
        let mut hits: BTreeMap<i64, (f64, Option<(u64, usize)>)> =
            scored.iter().map(|(id, s)| (*id, (*s, None))).collect();

        if let Some(exp) = &spec.expansion {
            let mut seen: BTreeSet<i64> = hits.keys().copied().collect();
            let mut frontier: Vec<i64> = scored.iter().take(spec.k).map(|(id, _)| *id).collect();
            for hop in 1..=exp.max_hops {
                let mut next = Vec::new();
                for src in &frontier {
                    let Some(a) = self.get(*src) else { continue };
                    for e in out(*src) {
                        if spec.relational_filter.as_ref().is_some_and(|f| !f.contains(&e.rel)) {
                            continue;
                        }
                        if seen.contains(&e.dst) || as_of.is_some_and(|t| e.dst > t) {
                            continue;
                        }
                        let Some(b) = self.get(e.dst) else { continue };
                        if pair_c(a, b, &exp.coherence) >= exp.threshold {
                            seen.insert(e.dst);
                            hits.insert(e.dst, (fused(b), Some((e.id, hop))));
                            next.push(e.dst);
                        }
                    }
                }
                if next.is_empty() {
                    break;
                }
                frontier = next;
            }
        }

        let tau = match spec.ranking.rank_tau {
            Some(t) => t.as_micros() as f64,
            None => ((spec.window.end - spec.window.start) as f64 / 4.0).max(1.0),
        };
        let r = &spec.ranking;
        let mut out: Vec<OHit> = hits
            .into_iter()
            .map(|(id, (sim, expanded))| {
                let decay = (-((spec.window.end - id).abs() as f64) / tau).exp();
                let phi = phi_of(out(id), r);
                OHit {
                    id,
                    score: r.alpha * sim + r.beta * decay + r.gamma * phi,
                    sim,
                    decay,
                    phi,
                    expanded,
                }
            })
            .collect();
        out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.id.cmp(&b.id)));
        out.truncate(spec.k);
        Ok(out)
    }
}

fn words(g: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = g.random_range(lo..=hi);
    (0..n)
        .map(|_| VOCAB[g.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fills `ns` with random records, edges, meta patches and prunes, keeping a
/// reference copy in step.
#[allow(clippy::too_many_arguments)]
pub fn build_store(
    engine: &Engine,
    clock: &Arc<ManualClock>,
    ns: &Namespace,
    g: &mut ChaCha8Rng,
    n_records: usize,
    n_edges: usize,
    dim: usize,
    low_dim: usize,
) -> OStore {
    let mut store = OStore {
        dim,
        ..Default::default()
    };
    extend_store(engine, clock, ns, g, &mut store, n_records, n_edges, low_dim);
    store
}

/// Like [`build_store`], appending to an existing namespace and its copy.
#[allow(clippy::too_many_arguments)]
pub fn extend_store(
    engine: &Engine,
    clock: &Arc<ManualClock>,
    ns: &Namespace,
    g: &mut ChaCha8Rng,
    store: &mut OStore,
    n_records: usize,
    n_edges: usize,
    low_dim: usize,
) {
    let dim = store.dim;
    let emb = HashEmbedder::new(dim, 0);
    let mut t = store
        .records
        .last()
        .map_or(1_000_000i64, |r| r.id)
        .max(clock.now_micros());
    let mut batch = Vec::with_capacity(n_records);
    let mut shadow = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        t += g.random_range(1..2_000);
        let content = words(g, 1, 5);
        let high = emb.embed(&content);
        let mut embeddings = EmbeddingSet::with_high(high.clone());
        let mut low = None;
        if g.random_bool(0.3) {
            if let Some(l) = unitize(&high[..low_dim]) {
                embeddings.insert("low", l.clone());
                low = Some(l);
            }
        }
        let k = KINDS[g.random_range(0..KINDS.len())];
        let mut rec = NewRecord::new(kind(k), embeddings).at(t).content(content.clone());
        let mut meta = Meta::new();
        if g.random_bool(0.7) {
            let v = json!(["a", "b", "c"][g.random_range(0..3)]);
            rec = rec.meta("topic", v.clone());
            meta.insert("topic".into(), v);
        }
        if g.random_bool(0.3) {
            rec = rec.meta("flag", json!(true));
            meta.insert("flag".into(), json!(true));
        }
        batch.push(rec);
        shadow.push(ORec {
            id: 0,
            kind: k.into(),
            content,
            meta,
            high,
            low,
        });
    }
    if n_records > 0 {
        let ids = engine.append_batch(ns, batch).unwrap();
        for (r, id) in shadow.iter_mut().zip(ids) {
            r.id = id.micros();
        }
    }
    store.records.extend(shadow);
    if store.records.is_empty() {
        return;
    }

    // A few meta patches.
    for _ in 0..(n_records / 20) {
        let i = g.random_range(0..store.records.len());
        let v = json!(["a", "b", "c", "d"][g.random_range(0..4)]);
        let id = store.records[i].id;
        engine
            .update_meta(ns, ts(id), [("topic".to_string(), v.clone())].into())
            .unwrap();
        store.records[i].meta.insert("topic".into(), v);
    }

    let last = store.records.last().unwrap().id;
    clock.set((last + 10).max(clock.now_micros()));
    let mut remaining = n_edges;
    while remaining > 0 {
        let n = remaining.min(g.random_range(1..=n_edges.max(1)));
        remaining -= n;
        clock.advance(g.random_range(1..5_000));
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let src = store.records[g.random_range(0..store.records.len())].id;
            let dst = if g.random_bool(0.03) {
                last + 1_000_000
            } else if g.random_bool(0.3) {
                // Nearby records share more vocabulary than random pairs.
                let i = store.records.partition_point(|r| r.id < src);
                let j = (i + g.random_range(0..6)).min(store.records.len() - 1);
                store.records[j].id
            } else {
                store.records[g.random_range(0..store.records.len())].id
            };
            let w = Weight::new(g.random_range(-1.0..1.0), g.random_range(0.0..1.0)).unwrap();
            batch.push(NewEdge::new(ts(src), ts(dst), RELATIONS[g.random_range(0..RELATIONS.len())]).weight(w));
        }
        for e in engine.add_edges(ns, batch).unwrap() {
            store.edges.push(OEdge {
                id: e.edge_id.0,
                src: e.source.micros(),
                dst: e.destination.micros(),
                rel: e.relationship.clone(),
                strength: e.weight.strength(),
                confidence: e.weight.confidence(),
                created: e.created_at.micros(),
                pruned: None,
            });
        }
        if g.random_bool(0.3) {
            clock.advance(g.random_range(1..20_000));
            let now = engine.now();
            let hl = Duration::from_micros(g.random_range(1_000..50_000));
            let floor = g.random_range(0.05..0.5);
            let expected = store.prune(now.micros(), hl, floor);
            let n = engine.decay_and_prune(ns, now, hl, floor, None).unwrap();
            assert_eq!(n, expected.len());
        }
    }
}

/// A random valid exact-mode spec over `store`.
pub fn random_spec(g: &mut ChaCha8Rng, store: &OStore) -> QuerySpec {
    let first = store.records.first().map_or(1, |r| r.id);
    let last = store.records.last().map_or(1, |r| r.id);
    let a = g.random_range(first - 1_000..=last + 1_000).max(1);
    let b = g.random_range(first - 1_000..=last + 1_000).max(1);
    let (lo, hi) = if g.random_bool(0.2) {
        (first, last)
    } else {
        (a.min(b), a.max(b))
    };
    let mut spec = QuerySpec::new(TimeWindow::new(lo, hi), g.random_range(1..=20));
    if g.random_bool(0.3) {
        spec.query_text = Some(words(g, 1, 4));
    } else {
        let v: Vec<f32> = (0..store.dim).map(|_| g.random_range(-2.0f32..2.0)).collect();
        spec.query_vector = Some(v);
        if g.random_bool(0.2) {
            spec.query_text = Some(words(g, 1, 3));
        }
    }
    if g.random_bool(0.2) {
        spec.kind_filter = Some(kind(KINDS[g.random_range(0..KINDS.len())]));
    }
    if g.random_bool(0.2) {
        spec.meta_filter.push(MetaFilter::Eq {
            key: "topic".into(),
            value: json!(["a", "b", "c", "d"][g.random_range(0..4)]),
        });
    }
    if g.random_bool(0.1) {
        spec.meta_filter.push(MetaFilter::Exists { key: "flag".into() });
    }
    if g.random_bool(0.5) {
        let threshold = match g.random_range(0..4) {
            0 => 1.0,
            1 => 0.3,
            _ => g.random_range(0.05..1.0),
        };
        let mut e = ExpansionConfig::new(threshold);
        e.max_hops = g.random_range(1..=3);
        if g.random_bool(0.2) {
            e.coherence = CoherenceConfig::idealized_for_span((last - first).max(1), 1.0);
        }
        spec.expansion = Some(e);
        if g.random_bool(0.3) {
            let n = g.random_range(1..=2);
            spec.relational_filter = Some(
                (0..n)
                    .map(|_| RELATIONS[g.random_range(0..RELATIONS.len())].to_string())
                    .collect(),
            );
        }
    }
    let mut r = RankingConfig::new(
        g.random_range(0.0..1.0),
        g.random_range(0.0..1.0),
        g.random_range(0.0..1.0),
    );
    if r.alpha + r.beta + r.gamma == 0.0 {
        r.alpha = 1.0;
    }
    if g.random_bool(0.5) {
        r.rank_tau = Some(Duration::from_micros(g.random_range(1..200_000)));
    }
    if g.random_bool(0.3) {
        r.phi_relation_boost.insert("summary-of".into(), 0.5);
        r.phi_relation_boost.insert("cites".into(), g.random_range(0.0..0.3));
    }
    spec.ranking = r;
    spec.fusion = match g.random_range(0..4) {
        0 | 1 => Fusion::Identity,
        2 => Fusion::Weighted {
            weights: [
                ("high".to_string(), g.random_range(0.0..1.0)),
                ("low".to_string(), g.random_range(0.01..1.0)),
            ]
            .into(),
        },
        _ => Fusion::Rrf {
            k_rrf: g.random_range(1..100),
            views: if g.random_bool(0.5) {
                vec!["high".into()]
            } else {
                vec!["high".into(), "low".into()]
            },
            lexical: g.random_bool(0.5),
        },
    };
    if g.random_bool(0.3) {
        let last_edge = store
            .edges
            .iter()
            .map(|e| e.pruned.unwrap_or(e.created))
            .max()
            .unwrap_or(last);
        spec.as_of = Some(ts(g.random_range(first..=last_edge + 10)));
    }
    if g.random_bool(0.1) {
        spec.rerank_depth = Some(g.random_range(spec.k..=spec.k * 3));
    }
    spec
}
