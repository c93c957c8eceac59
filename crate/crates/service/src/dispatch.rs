//! Maps wire requests onto engine calls. Shared by the TCP server and the
//! CLI so both paths produce identical payloads.

use std::sync::Arc;
use std::time::Duration;

use memdb_core::{
    CoherenceConfig, EmbeddingSet, Engine, EngineStats, Kind, MaintenancePlan, Meta, Namespace, NewEdge, NewRecord,
    QuerySpec, Timestamp,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::protocol::{is_blank, parse_request, WireRequest, WireResponse, BAD_REQUEST, UNKNOWN_OP};

/// Operations understood by [`Dispatcher::handle`].
pub const OPS: &[&str] = &[
    "append",
    "batch",
    "edge",
    "query",
    "coherence",
    "stats",
    "get",
    "scan",
    "update_meta",
    "edges_out",
    "edges_in",
    "prune",
    "compact",
    "maintenance",
    "ping",
];

#[derive(Debug)]
struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn bad_request(message: impl Into<String>) -> Self {
        Failure {
            code: BAD_REQUEST.into(),
            message: message.into(),
        }
    }
}

impl From<memdb_core::Error> for Failure {
    fn from(e: memdb_core::Error) -> Self {
        Failure {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::bad_request(format!("invalid payload: {e}"))
    }
}

/// A record as accepted on the wire. `embeddings` may be omitted when
/// `content` is present; the namespace embedder then supplies the high view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<i64>,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingSet>,
    #[serde(default)]
    pub meta: Meta,
}

#[derive(Deserialize)]
struct BatchArgs {
    records: Vec<RecordArgs>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EdgeArgs {
    Many { edges: Vec<NewEdge> },
    One(NewEdge),
}

#[derive(Deserialize)]
struct CoherenceArgs {
    start: i64,
    end: i64,
    #[serde(default)]
    config: CoherenceConfig,
}

#[derive(Deserialize)]
struct IdArgs {
    id: Timestamp,
}

#[derive(Deserialize)]
struct ScanArgs {
    start: i64,
    end: i64,
    #[serde(default)]
    kind: Option<Kind>,
}

#[derive(Deserialize)]
struct MetaArgs {
    id: Timestamp,
    patch: Meta,
}

#[derive(Deserialize)]
struct EdgesOutArgs {
    source: Timestamp,
    #[serde(default)]
    relationship: Option<String>,
    #[serde(default)]
    as_of: Option<Timestamp>,
}

#[derive(Deserialize)]
struct EdgesInArgs {
    destination: Timestamp,
    #[serde(default)]
    as_of: Option<Timestamp>,
}

#[derive(Deserialize)]
struct PruneArgs {
    half_life_us: u64,
    floor: f64,
    #[serde(default)]
    now: Option<Timestamp>,
    #[serde(default)]
    limit: Option<usize>,
}

#[derive(Deserialize)]
struct CompactArgs {
    #[serde(default)]
    segment: Option<u64>,
}

fn args<T: DeserializeOwned>(payload: &Value) -> Result<T, Failure> {
    match payload {
        Value::Null => Ok(serde_json::from_value(json!({}))?),
        other => Ok(T::deserialize(other)?),
    }
}

#[derive(Debug, Clone)]
pub struct Dispatcher {
    engine: Arc<Engine>,
}

impl Dispatcher {
    pub fn new(engine: Arc<Engine>) -> Self {
        Dispatcher { engine }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// Handles one raw line. Blank lines produce no response.
    pub fn handle_line(&self, line: &[u8]) -> Option<WireResponse> {
        if is_blank(line) {
            return None;
        }
        Some(match parse_request(line) {
            Ok(req) => self.handle(&req),
            Err(resp) => resp,
        })
    }

    pub fn handle(&self, req: &WireRequest) -> WireResponse {
        tracing::debug!(op = %req.op, request_id = %req.request_id, "request");
        match self.execute(req) {
            Ok(payload) => WireResponse::ok(&req.request_id, payload),
            Err(f) => {
                tracing::debug!(op = %req.op, code = %f.code, "request failed");
                WireResponse::error(&req.request_id, f.code, f.message)
            }
        }
    }

    fn namespace(&self, req: &WireRequest) -> Result<Namespace, Failure> {
        let raw = req
            .namespace
            .as_deref()
            .ok_or_else(|| Failure::bad_request(format!("op {} requires a namespace", req.op)))?;
        Namespace::new(raw).map_err(|e| Failure::bad_request(e.to_string()))
    }

    fn to_new_record(&self, ns: &Namespace, r: RecordArgs) -> Result<NewRecord, Failure> {
        let embeddings = match (r.embeddings, &r.content) {
            (Some(e), _) => e,
            (None, Some(text)) => EmbeddingSet::with_high(self.engine.embedders().get(ns)?.embed(text)),
            (None, None) => {
                return Err(Failure {
                    code: "MissingHighView".into(),
                    message: "record needs embeddings or content to embed".into(),
                })
            }
        };
        Ok(NewRecord {
            at: r.at,
            kind: r.kind,
            content: r.content,
            embeddings,
            meta: r.meta,
        })
    }

    fn execute(&self, req: &WireRequest) -> Result<Value, Failure> {
        let engine = &self.engine;
        let p = &req.payload;
        match req.op.as_str() {
            "ping" => Ok(json!({})),
            "stats" => {
                let stats = match &req.namespace {
                    None => engine.stats(),
                    Some(_) => {
                        let ns = self.namespace(req)?;
                        let namespaces: Vec<_> = engine.namespace_stats(&ns).into_iter().collect();
                        EngineStats {
                            records: namespaces.iter().map(|s| s.records).sum(),
                            edges: namespaces.iter().map(|s| s.edges).sum(),
                            namespaces,
                        }
                    }
                };
                Ok(serde_json::to_value(stats)?)
            }
            "append" => {
                let ns = self.namespace(req)?;
                let record = self.to_new_record(&ns, args(p)?)?;
                Ok(json!({ "id_time": engine.append(&ns, record)? }))
            }
            "batch" => {
                let ns = self.namespace(req)?;
                let BatchArgs { records } = args(p)?;
                let records = records
                    .into_iter()
                    .map(|r| self.to_new_record(&ns, r))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(json!({ "ids": engine.append_batch(&ns, records)? }))
            }
            "edge" => {
                let ns = self.namespace(req)?;
                match args(p)? {
                    EdgeArgs::One(edge) => Ok(json!({ "edge": engine.add_edge(&ns, edge)? })),
                    EdgeArgs::Many { edges } => Ok(json!({ "edges": engine.add_edges(&ns, edges)? })),
                }
            }
            "query" => {
                let ns = self.namespace(req)?;
                let spec: QuerySpec = args(p)?;
                Ok(json!({ "hits": engine.query(&ns, &spec)? }))
            }
            "coherence" => {
                let ns = self.namespace(req)?;
                let a: CoherenceArgs = args(p)?;
                Ok(serde_json::to_value(
                    engine.local_coherence(&ns, a.start, a.end, &a.config)?,
                )?)
            }
            "get" => {
                let ns = self.namespace(req)?;
                let IdArgs { id } = args(p)?;
                Ok(json!({ "record": &*engine.get(&ns, id)? }))
            }
            "scan" => {
                let ns = self.namespace(req)?;
                let a: ScanArgs = args(p)?;
                let records = engine.scan_window(&ns, a.start, a.end, a.kind.as_ref())?;
                let records: Vec<&memdb_core::MemoryRecord> = records.iter().map(|r| &**r).collect();
                Ok(json!({ "records": records }))
            }
            "update_meta" => {
                let ns = self.namespace(req)?;
                let a: MetaArgs = args(p)?;
                Ok(json!({ "meta": engine.update_meta(&ns, a.id, a.patch)? }))
            }
            "edges_out" => {
                let ns = self.namespace(req)?;
                let a: EdgesOutArgs = args(p)?;
                let edges = engine.edges_out(&ns, a.source, a.relationship.as_deref(), a.as_of);
                let edges: Vec<&memdb_core::Edge> = edges.iter().map(|e| &**e).collect();
                Ok(json!({ "edges": edges }))
            }
            "edges_in" => {
                let ns = self.namespace(req)?;
                let a: EdgesInArgs = args(p)?;
                let edges = engine.edges_in(&ns, a.destination, a.as_of);
                let edges: Vec<&memdb_core::Edge> = edges.iter().map(|e| &**e).collect();
                Ok(json!({ "edges": edges }))
            }
            "prune" => {
                let ns = self.namespace(req)?;
                let a: PruneArgs = args(p)?;
                let now = a.now.unwrap_or_else(|| engine.now());
                let pruned =
                    engine.decay_and_prune(&ns, now, Duration::from_micros(a.half_life_us), a.floor, a.limit)?;
                Ok(json!({ "pruned": pruned }))
            }
            "compact" => {
                let ns = self.namespace(req)?;
                let CompactArgs { segment } = args(p)?;
                let targets = match segment {
                    Some(s) => vec![s],
                    None => engine.compaction_candidates(&ns),
                };
                let mut reclaimed = 0;
                for s in &targets {
                    reclaimed += engine.compact(&ns, *s)?;
                }
                Ok(json!({ "compacted": targets, "bytes_reclaimed": reclaimed }))
            }
            "maintenance" => {
                let ns = self.namespace(req)?;
                let plan: MaintenancePlan = args(p)?;
                Ok(serde_json::to_value(engine.run_maintenance(&ns, &plan)?)?)
            }
            other => Err(Failure {
                code: UNKNOWN_OP.into(),
                message: format!("unknown op {other:?}"),
            }),
        }
    }
}
