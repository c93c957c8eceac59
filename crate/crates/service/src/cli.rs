//! `memdb` command line. Each data subcommand becomes one wire request,
//! executed against a local data directory or a running server.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use memdb_core::bench::{self, BenchConfig};
use memdb_core::{
    EngineStats, ExpansionConfig, Kind, Meta, Provenance, QuerySpec, RankedHit, TimeWindow, Timestamp, Weight,
};
use serde_json::{json, Value};

use crate::dispatch::{Dispatcher, RecordArgs};
use crate::protocol::{WireRequest, WireResponse};
use crate::scheduler::MaintenanceScheduler;
use crate::{server, Client, ServiceConfig, ServiceError};

#[derive(Debug, Parser)]
#[command(name = "memdb", version, about = "Temporal, semantic and relational memory store")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "MEMDB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Data directory; overrides the configuration file and MEMDB_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Send requests to a running server instead of opening the data directory.
    #[arg(long, global = true)]
    pub remote: Option<SocketAddr>,
    /// Print response payloads as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the network service.
    Serve {
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Do not run the background maintenance scheduler.
        #[arg(long)]
        no_maintenance: bool,
    },
    /// Append one record.
    Append {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(long, default_value = "note")]
        kind: String,
        #[arg(long)]
        text: Option<String>,
        /// High view as a JSON array; embedded from --text when absent.
        #[arg(long)]
        vector: Option<String>,
        /// Metadata as a JSON object.
        #[arg(long)]
        meta: Option<String>,
        /// Requested timestamp in microseconds.
        #[arg(long)]
        at: Option<i64>,
    },
    /// Append records read as JSON lines from a file, or stdin for `-`.
    Batch {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        file: PathBuf,
    },
    /// Add an edge.
    Edge {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(long)]
        source: i64,
        #[arg(long)]
        destination: i64,
        #[arg(long)]
        relationship: String,
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        #[arg(long, default_value_t = 1.0)]
        confidence: f64,
        #[arg(long)]
        meta: Option<String>,
    },
    /// Run a hybrid query over a time window.
    Query {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(long)]
        from: i64,
        #[arg(long)]
        to: i64,
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        vector: Option<String>,
        #[arg(short, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        kind: Option<String>,
        /// Expand along edges whose targets reach this pair coherence.
        #[arg(long)]
        expand: Option<f64>,
        #[arg(long, default_value_t = 1)]
        hops: usize,
        #[arg(long)]
        as_of: Option<i64>,
        /// Full query spec as JSON; other query flags are ignored.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Local coherence of edges created in a window.
    Coherence {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(long)]
        from: i64,
        #[arg(long)]
        to: i64,
    },
    /// Record, edge and segment counts.
    Stats {
        #[arg(short, long)]
        namespace: Option<String>,
    },
    /// Insert and query micro-benchmarks in a scratch directory.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        records: usize,
        #[arg(long, default_value_t = 768)]
        dimension: usize,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long)]
        no_sync: bool,
        /// Scratch directory; a temporary one is used and removed when absent.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Compact sealed segments.
    Compact {
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(long)]
        segment: Option<u64>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

fn parse_json(flag: &str, raw: &str) -> Result<Value, CliError> {
    serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn parse_as<T: serde::de::DeserializeOwned>(flag: &str, raw: &str) -> Result<T, CliError> {
    serde_json::from_value(parse_json(flag, raw)?).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn timestamp(flag: &str, v: i64) -> Result<Timestamp, CliError> {
    Timestamp::new(v).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn kind(raw: &str) -> Result<Kind, CliError> {
    Kind::new(raw).map_err(|e| CliError::Usage(format!("--kind: {e}")))
}

/// Builds the wire request for a data subcommand.
fn request(command: &Command) -> Result<WireRequest, CliError> {
    let req = match command {
        Command::Serve { .. } | Command::Bench { .. } => unreachable!("not a data subcommand"),
        Command::Append {
            namespace,
            kind: k,
            text,
            vector,
            meta,
            at,
        } => {
            let embeddings = vector
                .as_deref()
                .map(|v| parse_as::<Vec<f32>>("vector", v))
                .transpose()?
                .map(memdb_core::EmbeddingSet::with_high);
            let record = RecordArgs {
                at: *at,
                kind: kind(k)?,
                content: text.clone(),
                embeddings,
                meta: meta
                    .as_deref()
                    .map(|m| parse_as::<Meta>("meta", m))
                    .transpose()?
                    .unwrap_or_default(),
            };
            WireRequest::new("append", "cli")
                .namespace(namespace)
                .payload(json!(record))
        }
        Command::Batch { namespace, file } => {
            let reader: Box<dyn BufRead> = if file.as_os_str() == "-" {
                Box::new(std::io::stdin().lock())
            } else {
                let f = std::fs::File::open(file)
                    .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", file.display())))?;
                Box::new(std::io::BufReader::new(f))
            };
            let mut records = Vec::new();
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(ServiceError::Io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: RecordArgs = serde_json::from_str(&line)
                    .map_err(|e| CliError::Usage(format!("{}:{}: {e}", file.display(), n + 1)))?;
                records.push(r);
            }
            WireRequest::new("batch", "cli")
                .namespace(namespace)
                .payload(json!({ "records": records }))
        }
        Command::Edge {
            namespace,
            source,
            destination,
            relationship,
            strength,
            confidence,
            meta,
        } => {
            let weight = Weight::new(*strength, *confidence).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut edge = memdb_core::NewEdge::new(
                timestamp("source", *source)?,
                timestamp("destination", *destination)?,
                relationship.as_str(),
            )
            .weight(weight);
            if let Some(m) = meta {
                edge.meta = parse_as("meta", m)?;
            }
            WireRequest::new("edge", "cli")
                .namespace(namespace)
                .payload(json!(edge))
        }
        Command::Query {
            namespace,
            from,
            to,
            text,
            vector,
            k,
            kind: kind_filter,
            expand,
            hops,
            as_of,
            spec,
        } => {
            let spec: QuerySpec = match spec {
                Some(raw) => parse_as("spec", raw)?,
                None => {
                    let mut s = QuerySpec::new(TimeWindow::new(*from, *to), *k);
                    s.query_text = text.clone();
                    s.query_vector = vector.as_deref().map(|v| parse_as("vector", v)).transpose()?;
                    s.kind_filter = kind_filter.as_deref().map(kind).transpose()?;
                    s.expansion = expand.map(|t| ExpansionConfig {
                        max_hops: *hops,
                        ..ExpansionConfig::new(t)
                    });
                    s.as_of = as_of.map(|t| timestamp("as-of", t)).transpose()?;
                    s
                }
            };
            WireRequest::new("query", "cli")
                .namespace(namespace)
                .payload(json!(spec))
        }
        Command::Coherence { namespace, from, to } => WireRequest::new("coherence", "cli")
            .namespace(namespace)
            .payload(json!({ "start": from, "end": to })),
        Command::Stats { namespace } => {
            let req = WireRequest::new("stats", "cli");
            match namespace {
                Some(ns) => req.namespace(ns),
                None => req,
            }
        }
        Command::Compact { namespace, segment } => WireRequest::new("compact", "cli")
            .namespace(namespace)
            .payload(json!({ "segment": segment })),
    };
    Ok(req)
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli, req: WireRequest) -> Result<WireResponse, CliError> {
    match cli.remote {
        Some(addr) => Ok(Client::connect(addr)?.call(req)?),
        None => {
            let engine = load_config(cli)?.open_engine()?;
            Ok(Dispatcher::new(Arc::new(engine)).handle(&req))
        }
    }
}

fn provenance(p: &Provenance) -> String {
    match p {
        Provenance::Direct => "direct".into(),
        Provenance::Expanded { from_edge, hop } => format!("edge {} hop {hop}", from_edge.0),
    }
}

fn render(out: &mut impl Write, op: &str, payload: &Value) -> std::io::Result<()> {
    match op {
        "append" => writeln!(out, "{}", payload["id_time"]),
        "batch" => {
            for id in payload["ids"].as_array().into_iter().flatten() {
                writeln!(out, "{id}")?;
            }
            Ok(())
        }
        "edge" => {
            let e = &payload["edge"];
            writeln!(
                out,
                "edge {} {} -> {} {} created {}",
                e["edge_id"], e["source"], e["destination"], e["relationship"], e["created_at"]
            )
        }
        "query" => {
            let hits: Vec<RankedHit> = serde_json::from_value(payload["hits"].clone()).unwrap_or_default();
            writeln!(
                out,
                "{:>4}  {:>18}  {:>9}  {:>9}  {:>9}  {:>9}  via",
                "rank", "id_time", "score", "sim", "decay", "phi"
            )?;
            for (i, h) in hits.iter().enumerate() {
                writeln!(
                    out,
                    "{:>4}  {:>18}  {:>9.6}  {:>9.6}  {:>9.6}  {:>9.6}  {}",
                    i + 1,
                    h.id_time,
                    h.score,
                    h.components.sim,
                    h.components.temporal_decay,
                    h.components.phi,
                    provenance(&h.provenance)
                )?;
            }
            Ok(())
        }
        "coherence" => {
            writeln!(out, "edges    {}", payload["edge_count"])?;
            match payload["c_local"].as_f64() {
                Some(c) => writeln!(out, "c_local  {c:.6}"),
                None => writeln!(out, "c_local  -"),
            }
        }
        "stats" => {
            let stats: EngineStats = serde_json::from_value(payload.clone()).unwrap_or_default();
            writeln!(out, "records  {}", stats.records)?;
            writeln!(out, "edges    {}", stats.edges)?;
            for ns in &stats.namespaces {
                writeln!(
                    out,
                    "{}: {} records, {} edges ({} pruned), {} segments ({} sealed), {} bytes",
                    ns.namespace, ns.records, ns.edges, ns.pruned_edges, ns.segments, ns.sealed_segments, ns.bytes
                )?;
            }
            Ok(())
        }
        "compact" => writeln!(
            out,
            "compacted {} segment(s), reclaimed {} bytes",
            payload["compacted"].as_array().map_or(0, Vec::len),
            payload["bytes_reclaimed"]
        ),
        _ => writeln!(out, "{payload}"),
    }
}

fn serve(cli: &Cli, listen: Option<SocketAddr>, no_maintenance: bool) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    if let Some(addr) = listen {
        cfg.listen = addr;
    }
    let engine = Arc::new(cfg.open_engine()?);
    let handle = server::start(Dispatcher::new(Arc::clone(&engine)), cfg.listen)?;
    let scheduler = (cfg.maintenance.enabled && !no_maintenance)
        .then(|| MaintenanceScheduler::start(Arc::clone(&engine), cfg.maintenance.plan.clone()));
    let (tx, rx) = std::sync::mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| ServiceError::Config(format!("cannot install signal handler: {e}")))?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush().map_err(ServiceError::Io)?;
    let _ = rx.recv();
    if let Some(s) = scheduler {
        s.stop();
    }
    handle.shutdown()?;
    Ok(())
}

fn run_bench(
    records: usize,
    dimension: usize,
    batch_size: usize,
    no_sync: bool,
    dir: Option<PathBuf>,
    json_out: bool,
) -> Result<(), CliError> {
    if records == 0 || dimension == 0 || batch_size == 0 {
        return Err(CliError::Usage(
            "records, dimension and batch size must be positive".into(),
        ));
    }
    let cfg = BenchConfig {
        records,
        dimension,
        batch_size,
        sync: !no_sync,
        ..Default::default()
    };
    let (dir, scratch) = match dir {
        Some(d) => (d, false),
        None => (
            std::env::temp_dir().join(format!("memdb-bench-{}", std::process::id())),
            true,
        ),
    };
    let report = bench::run(&dir, &cfg).map_err(ServiceError::Engine);
    if scratch {
        let _ = std::fs::remove_dir_all(&dir);
    }
    let report = report?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn run_inner(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Serve { listen, no_maintenance } => serve(cli, *listen, *no_maintenance),
        Command::Bench {
            records,
            dimension,
            batch_size,
            no_sync,
            dir,
        } => run_bench(*records, *dimension, *batch_size, *no_sync, dir.clone(), cli.json),
        command => {
            let req = request(command)?;
            let op = req.op.clone();
            let resp = execute(cli, req)?;
            match (resp.payload, resp.error) {
                (Some(payload), None) => {
                    let mut out = std::io::stdout().lock();
                    if cli.json {
                        writeln!(out, "{}", serde_json::to_string_pretty(&payload).expect("json value"))
                    } else {
                        render(&mut out, &op, &payload)
                    }
                    .map_err(ServiceError::Io)?;
                    Ok(())
                }
                (_, Some(e)) => Err(ServiceError::Remote {
                    code: e.code,
                    message: e.message,
                }
                .into()),
                (None, None) => Err(ServiceError::Protocol("response carries neither payload nor error".into()).into()),
            }
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Service(e)) => {
            eprintln!("error: {}: {e}", e.code());
            1
        }
    }
}
