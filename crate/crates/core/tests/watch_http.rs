//! The watcher against a real HTTP JSON-RPC endpoint and webhook, served by a
//! small in-process server that answers from a recording.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use avscan::watcher::{run_watch, HttpRpc, Recording, ReplayRpc, Sink, StartBlock, Transport, WatchOptions};
use serde_json::{json, Value};

struct Server {
    url: String,
    hooks: Arc<Mutex<Vec<Value>>>,
    requests: Arc<AtomicUsize>,
}

/// Serves JSON-RPC from `rec` on `/` and collects webhook posts on `/hook`.
/// The first `unavailable` RPC requests get HTTP 503.
fn serve(rec: &Recording, unavailable: usize) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let replay = Arc::new(ReplayRpc::new(rec));
    let hooks = Arc::new(Mutex::new(Vec::new()));
    let requests = Arc::new(AtomicUsize::new(0));
    let (h, r) = (hooks.clone(), requests.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (replay, hooks, requests) = (replay.clone(), h.clone(), r.clone());
            std::thread::spawn(move || handle(stream, &replay, &hooks, &requests, unavailable));
        }
    });
    Server { url, hooks, requests }
}

fn handle(stream: TcpStream, replay: &ReplayRpc, hooks: &Mutex<Vec<Value>>, requests: &AtomicUsize, unavailable: usize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
        let mut len = 0;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let req: Value = serde_json::from_slice(&body).unwrap();
        let (status, reply) = if path == "/hook" {
            hooks.lock().unwrap().push(req);
            ("200 OK", json!({}))
        } else if requests.fetch_add(1, Ordering::SeqCst) < unavailable {
            ("503 Service Unavailable", json!({}))
        } else {
            let id = req["id"].clone();
            let reply = match replay.call(req["method"].as_str().unwrap(), req["params"].clone()) {
                Ok(result) => json!({"jsonrpc": "2.0", "id": id, "result": result}),
                Err(e) => json!({"jsonrpc": "2.0", "id": id, "error": {"code": -32000, "message": e.to_string()}}),
            };
            ("200 OK", reply)
        };
        let text = reply.to_string();
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if out.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

fn small_recording() -> Recording {
    let fx = common::fixture("p1_visor");
    let mut b = avscan::watcher::RecordingBuilder::new(5, 700, 1_000, 2);
    b.block();
    b.create([1; 20], &fx.runtime_bytes());
    b.block();
    b.call([2; 20]);
    b.build()
}

#[test]
fn http_transport_decodes_results_and_errors() {
    let server = serve(&small_recording(), 0);
    let rpc = HttpRpc::new(&server.url);
    assert_eq!(rpc.call("eth_chainId", json!([])).unwrap(), json!("0x5"));
    assert!(rpc.call("eth_unknown", json!([])).is_err());
}

#[test]
fn unavailable_node_is_transient() {
    let server = serve(&small_recording(), 1);
    let err = HttpRpc::new(&server.url).call("eth_chainId", json!([])).unwrap_err();
    assert!(err.is_transient(), "{err}");
}

#[test]
fn refused_connection_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpRpc::new(&format!("http://127.0.0.1:{port}")).call("eth_chainId", json!([])).unwrap_err();
    assert!(err.is_transient(), "{err}");
}

#[test]
fn watch_over_http_posts_alerts_to_webhook() {
    let server = serve(&small_recording(), 3);
    let dir = tempfile::tempdir().unwrap();
    let opts = WatchOptions {
        start: StartBlock::Number(700),
        workers: 2,
        sink: Sink::Webhook(format!("{}/hook", server.url)),
        state_dir: dir.path().join("state"),
        retry_base: std::time::Duration::from_millis(1),
        retry_max: std::time::Duration::from_millis(4),
        stop_at_head: true,
        ..WatchOptions::default()
    };
    let stats = run_watch(HttpRpc::new(&server.url), &opts).unwrap();
    assert_eq!((stats.blocks, stats.alerts, stats.rpc_retries), (2, 1, 3));
    let hooks = server.hooks.lock().unwrap();
    assert_eq!(hooks.len(), 1);
    assert_eq!(hooks[0]["key"]["chain_id"], 5);
    assert_eq!(hooks[0]["report"]["verdict"], "vulnerable");
}

#[test]
fn cli_watch_replays_the_checked_in_trace() {
    let rec = Recording::load(&common::replay_trace_path()).unwrap();
    let server = serve(&rec, 0);
    let dir = tempfile::tempdir().unwrap();
    let alerts = dir.path().join("alerts.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_avscan"))
        .args(["watch", "--rpc", &server.url, "--from-block", "18000000", "--max-blocks", "100"])
        .arg("--sink")
        .arg(format!("file:{}", alerts.display()))
        .arg("--state-dir")
        .arg(dir.path().join("state"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(&alerts).unwrap().lines().count();
    assert!(String::from_utf8_lossy(&out.stderr).contains("processed 100 blocks"));
    assert!(lines > 0);
    assert!(server.requests.load(Ordering::SeqCst) > 100);
}
