use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use memdb_core::{Embedder, HashEmbedder};
use serde_json::{json, Value};

const DIM: usize = 16;

struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    root: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("memdb.toml");
    std::fs::write(
        &config,
        format!(
            "data_dir = {:?}\n[storage]\nsync = false\n[maintenance]\nenabled = false\n[embedders.default]\nkind = \"hash\"\ndimension = {DIM}\n",
            root.join("data")
        ),
    )
    .unwrap();
    Fixture {
        _dir: dir,
        config,
        root,
    }
}

fn memdb(f: &Fixture, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memdb"))
        .arg("--config")
        .arg(&f.config)
        .args(args)
        .env_remove("MEMDB_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

const TEXTS: &[&str] = &[
    "red apple pie",
    "green apple",
    "apple orchard in autumn",
    "red car",
    "the sea is blue",
    "red red wine",
    "apple",
    "autumn leaves are red",
    "a blue car",
    "pie recipe",
];

fn seed(f: &Fixture) -> Vec<i64> {
    let lines: Vec<String> = TEXTS
        .iter()
        .enumerate()
        .map(|(i, t)| json!({ "kind": "note", "content": t, "meta": { "i": i } }).to_string())
        .collect();
    let path = f.root.join("seed.ndjson");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = memdb(f, &["batch", "-n", "agent", path.to_str().unwrap(), "--json"]);
    serde_json::from_value(json_out(&out)["ids"].clone()).unwrap()
}

#[test]
fn stats_on_empty_store() {
    let f = fixture();
    let v = json_out(&memdb(&f, &["stats", "--json"]));
    assert_eq!(v, json!({ "records": 0, "edges": 0, "namespaces": [] }));
    let text = stdout(&memdb(&f, &["stats"]));
    assert_eq!(text, "records  0\nedges    0\n");
}

#[test]
fn usage_errors_exit_2() {
    let f = fixture();
    for args in [
        &["frobnicate"][..],
        &[],
        &["query", "--from", "1"],
        &["query", "--from", "x", "--to", "2"],
        &["append", "--vector", "[1,"],
        &["append", "--meta", "[]"],
        &["edge", "--source", "0", "--destination", "1", "--relationship", "r"],
    ] {
        let out = memdb(&f, args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn operational_errors_exit_1() {
    let f = fixture();
    let out = memdb(
        &f,
        &["edge", "--source", "5", "--destination", "6", "--relationship", "r"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SourceNotFound"));
    let out = memdb(&f, &["query", "--from", "9", "--to", "1", "--text", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let out = memdb(&f, &["append", "--vector", "[3, 4]"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NotUnitNorm"));
}

#[test]
fn query_on_seeded_fixture() {
    let f = fixture();
    let ids = seed(&f);
    assert_eq!(ids.len(), TEXTS.len());
    let (from, to) = (ids[0].to_string(), ids[ids.len() - 1].to_string());
    let out = memdb(
        &f,
        &[
            "query",
            "-n",
            "agent",
            "--from",
            &from,
            "--to",
            &to,
            "--text",
            "red apple",
            "-k",
            "5",
            "--json",
        ],
    );
    let ranked = json_out(&out)["hits"].as_array().unwrap().clone();
    assert_eq!(ranked.len(), 5);
    let scores: Vec<f64> = ranked.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");

    // Similarity-only ranking against a brute-force ordering.
    let emb = HashEmbedder::new(DIM, 0);
    let q = emb.embed("red apple");
    let mut expected: Vec<(f64, i64)> = TEXTS
        .iter()
        .zip(&ids)
        .map(|(t, id)| {
            (
                emb.embed(t)
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| f64::from(*a) * f64::from(*b))
                    .sum(),
                *id,
            )
        })
        .collect();
    expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let spec = json!({
        "window": { "start": ids[0], "end": ids[ids.len() - 1] },
        "query_text": "red apple",
        "k": 5,
        "ranking": { "alpha": 1.0, "beta": 0.0, "gamma": 0.0 }
    });
    let out = memdb(
        &f,
        &[
            "query",
            "-n",
            "agent",
            "--from",
            "0",
            "--to",
            "0",
            "--spec",
            &spec.to_string(),
            "--json",
        ],
    );
    let hits = json_out(&out)["hits"].as_array().unwrap().clone();
    let got: Vec<i64> = hits.iter().map(|h| h["id_time"].as_i64().unwrap()).collect();
    let want: Vec<i64> = expected.iter().take(5).map(|e| e.1).collect();
    assert_eq!(got, want);
    for (h, e) in hits.iter().zip(&expected) {
        assert!((h["components"]["sim"].as_f64().unwrap() - e.0).abs() < 1e-6);
    }

    // The table form lists the same hits.
    let text = stdout(&memdb(
        &f,
        &[
            "query",
            "-n",
            "agent",
            "--from",
            &from,
            "--to",
            &to,
            "--text",
            "red apple",
            "-k",
            "5",
        ],
    ));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].contains("score") && lines[0].contains("phi"));
    for (line, hit) in lines[1..].iter().zip(&ranked) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[1], hit["id_time"].to_string());
        assert_eq!(cols[2], format!("{:.6}", hit["score"].as_f64().unwrap()));
    }
}

#[test]
fn append_edge_coherence_compact() {
    let f = fixture();
    let a = stdout(&memdb(&f, &["append", "--text", "first memory"]))
        .trim()
        .to_string();
    let b = stdout(&memdb(
        &f,
        &["append", "--text", "second memory", "--meta", "{\"x\": 1}"],
    ))
    .trim()
    .to_string();
    let edge = stdout(&memdb(
        &f,
        &[
            "edge",
            "--source",
            &a,
            "--destination",
            &b,
            "--relationship",
            "next",
            "--strength",
            "0.5",
        ],
    ));
    assert!(edge.starts_with("edge 1 "), "{edge}");
    let c = stdout(&memdb(&f, &["coherence", "--from", "0", "--to", "9000000000000000"]));
    assert!(c.starts_with("edges    1\nc_local  0."), "{c}");
    let stats = json_out(&memdb(&f, &["stats", "-n", "default", "--json"]));
    assert_eq!((stats["records"].as_u64(), stats["edges"].as_u64()), (Some(2), Some(1)));
    let out = stdout(&memdb(&f, &["compact"]));
    assert_eq!(out, "compacted 0 segment(s), reclaimed 0 bytes\n");
}

#[test]
fn data_dir_flag_and_env_override() {
    let f = fixture();
    let other = f.root.join("other");
    stdout(&memdb(
        &f,
        &["--data-dir", other.to_str().unwrap(), "append", "--text", "x"],
    ));
    assert!(other.join("default").is_dir());
    let env_dir = f.root.join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_memdb"))
        .args(["append", "--text", "y"])
        .env("MEMDB_DATA_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("default").is_dir());
}

#[test]
fn bench_prints_table() {
    let f = fixture();
    let dir = f.root.join("bench");
    let out = stdout(&memdb(
        &f,
        &[
            "bench",
            "--records",
            "300",
            "--dimension",
            "32",
            "--no-sync",
            "--dir",
            dir.to_str().unwrap(),
        ],
    ));
    assert!(out.contains("single insert"), "{out}");
    assert!(out.contains("batch-100 insert"), "{out}");
}

fn wait_listening(child: &mut std::process::Child) -> String {
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    line.trim()
        .strip_prefix("listening on ")
        .expect("listening line")
        .to_string()
}

fn interrupt(pid: u32) {
    let ok = Command::new("kill").args(["-INT", &pid.to_string()]).status().unwrap();
    assert!(ok.success());
}

fn remote(f: &Fixture, addr: &str, args: &[&str]) -> Output {
    let mut all = vec!["--remote", addr];
    all.extend_from_slice(args);
    memdb(f, &all)
}

#[test]
fn serve_remote_and_graceful_shutdown() {
    let f = fixture();
    let ids = seed(&f);
    let local = stdout(&memdb(
        &f,
        &[
            "query",
            "-n",
            "agent",
            "--from",
            "0",
            "--to",
            "9000000000000000",
            "--text",
            "apple pie",
            "-k",
            "4",
            "--json",
        ],
    ));
    let mut child = Command::new(env!("CARGO_BIN_EXE_memdb"))
        .arg("--config")
        .arg(&f.config)
        .args(["serve", "--listen", "127.0.0.1:0"])
        .env_remove("MEMDB_DATA_DIR")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let addr = wait_listening(&mut child);

    // Same query through the server gives the same output.
    let wire = stdout(&remote(
        &f,
        &addr,
        &[
            "query",
            "-n",
            "agent",
            "--from",
            "0",
            "--to",
            "9000000000000000",
            "--text",
            "apple pie",
            "-k",
            "4",
            "--json",
        ],
    ));
    assert_eq!(wire, local);
    // The data directory is held by the server.
    let locked = memdb(&f, &["stats"]);
    assert_eq!(locked.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&locked.stderr).contains("DataDirLocked"));
    let new_id = stdout(&remote(
        &f,
        &addr,
        &["append", "-n", "agent", "--text", "added remotely"],
    ));
    assert!(new_id.trim().parse::<i64>().unwrap() > ids[ids.len() - 1]);
    // A second server on the same address fails.
    let clash = memdb(
        &f,
        &[
            "--data-dir",
            f.root.join("d2").to_str().unwrap(),
            "serve",
            "--listen",
            &addr,
        ],
    );
    assert_eq!(clash.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&clash.stderr).contains("AddressInUse"));

    interrupt(child.id());
    assert!(child.wait().unwrap().success());
    let stats = json_out(&memdb(&f, &["stats", "--json"]));
    assert_eq!(stats["records"], TEXTS.len() + 1);
}
