//! Recorded JSON-RPC sessions: playback for tests and offline runs, and a
//! recorder that captures a live session.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::rpc::{RpcError, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub method: String,
    pub params: Json,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Json>,
    /// JSON-RPC error object, when the call failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Json>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub calls: Vec<RecordedCall>,
}

impl Recording {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("recording serialises");
        std::fs::write(path, text + "\n")
    }
}

fn key(method: &str, params: &Json) -> String {
    format!("{method} {params}")
}

/// Injected failure on a range of call indices (counted from zero across the
/// whole replay).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Calls `from..from + len` fail as if the node were down.
    Outage { from: usize, len: usize },
    /// Call `at` fails with a non-retryable error, which stops the watcher.
    Crash { at: usize },
}

/// Answers calls from a recording. Block requests past the recorded range
/// return `null`, like a node that has not produced them yet.
pub struct ReplayRpc {
    answers: HashMap<String, Result<Json, Json>>,
    faults: Vec<Fault>,
    counter: AtomicUsize,
}

impl ReplayRpc {
    pub fn new(rec: &Recording) -> Self {
        let answers = rec
            .calls
            .iter()
            .map(|c| {
                let ans = match &c.error {
                    Some(e) => Err(e.clone()),
                    None => Ok(c.result.clone().unwrap_or(Json::Null)),
                };
                (key(&c.method, &c.params), ans)
            })
            .collect();
        ReplayRpc { answers, faults: Vec::new(), counter: AtomicUsize::new(0) }
    }

    pub fn with_fault(mut self, f: Fault) -> Self {
        self.faults.push(f);
        self
    }

    /// Calls answered or refused so far.
    pub fn calls_made(&self) -> usize {
        self.counter.load(Ordering::SeqCst)
    }
}

impl Transport for ReplayRpc {
    fn call(&self, method: &str, params: Json) -> Result<Json, RpcError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        for f in &self.faults {
            match *f {
                Fault::Outage { from, len } if (from..from + len).contains(&n) => {
                    return Err(RpcError::Unavailable(format!("injected outage at call {n}")))
                }
                Fault::Crash { at } if at == n => {
                    return Err(RpcError::Rpc { code: -1, message: format!("injected crash at call {n}") })
                }
                _ => {}
            }
        }
        match self.answers.get(&key(method, &params)) {
            Some(Ok(v)) => Ok(v.clone()),
            Some(Err(e)) => {
                let body = serde_json::json!({ "error": e });
                super::rpc::decode_envelope(method, body)
            }
            None if method == "eth_getBlockByNumber" => Ok(Json::Null),
            None => Err(RpcError::Protocol {
                method: method.to_string(),
                message: format!("no recorded answer for {params}"),
            }),
        }
    }
}

/// Wraps a transport and keeps every successful or JSON-RPC-failed call.
pub struct RecordingRpc<T> {
    inner: T,
    log: Mutex<Recording>,
}

impl<T: Transport> RecordingRpc<T> {
    pub fn new(inner: T) -> Self {
        RecordingRpc { inner, log: Mutex::new(Recording::default()) }
    }

    pub fn into_recording(self) -> Recording {
        self.log.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<T: Transport> Transport for RecordingRpc<T> {
    fn call(&self, method: &str, params: Json) -> Result<Json, RpcError> {
        let out = self.inner.call(method, params.clone());
        let (result, error) = match &out {
            Ok(v) => (Some(v.clone()), None),
            Err(RpcError::MethodNotFound(_)) => {
                (None, Some(serde_json::json!({"code": -32601, "message": "method not found"})))
            }
            Err(RpcError::Rpc { code, message }) => (None, Some(serde_json::json!({"code": code, "message": message}))),
            Err(_) => return out,
        };
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        log.calls.push(RecordedCall { method: method.to_string(), params, result, error });
        out
    }
}

#[derive(Debug, Clone)]
enum TxSpec {
    Call { from: [u8; 20] },
    Create { from: [u8; 20], nonce: u64, code: Option<Vec<u8>> },
    Factory { from: [u8; 20], factory: [u8; 20], code: Vec<u8>, created: [u8; 20] },
}

/// Builds a recording of a synthetic chain: blocks of plain calls, creation
/// transactions and creations made by a factory contract.
#[derive(Debug, Clone)]
pub struct RecordingBuilder {
    chain_id: u64,
    first: u64,
    first_timestamp: u64,
    block_time: u64,
    traces: bool,
    nonces: HashMap<[u8; 20], u64>,
    blocks: Vec<Vec<TxSpec>>,
}

impl RecordingBuilder {
    pub fn new(chain_id: u64, first_block: u64, first_timestamp: u64, block_time: u64) -> Self {
        RecordingBuilder {
            chain_id,
            first: first_block,
            first_timestamp,
            block_time,
            traces: true,
            nonces: HashMap::new(),
            blocks: Vec::new(),
        }
    }

    /// Whether the recorded node answers `trace_block`.
    pub fn traces(mut self, on: bool) -> Self {
        self.traces = on;
        self
    }

    fn nonce(&mut self, who: [u8; 20]) -> u64 {
        let n = self.nonces.entry(who).or_insert(0);
        *n += 1;
        *n - 1
    }

    fn current(&mut self) -> &mut Vec<TxSpec> {
        if self.blocks.is_empty() {
            self.blocks.push(Vec::new());
        }
        self.blocks.last_mut().unwrap()
    }

    /// Starts a new, initially empty block.
    pub fn block(&mut self) -> &mut Self {
        self.blocks.push(Vec::new());
        self
    }

    pub fn call(&mut self, from: [u8; 20]) -> &mut Self {
        self.nonce(from);
        self.current().push(TxSpec::Call { from });
        self
    }

    /// A creation transaction deploying `code` as runtime. Returns the address.
    pub fn create(&mut self, from: [u8; 20], code: &[u8]) -> String {
        let nonce = self.nonce(from);
        self.current().push(TxSpec::Create { from, nonce, code: Some(code.to_vec()) });
        super::format_address(&super::create_address(&from, nonce))
    }

    /// A creation transaction that reverts.
    pub fn failed_create(&mut self, from: [u8; 20]) -> &mut Self {
        let nonce = self.nonce(from);
        self.current().push(TxSpec::Create { from, nonce, code: None });
        self
    }

    /// A call into `factory` that deploys `code`. Returns the new address.
    pub fn factory_create(&mut self, from: [u8; 20], factory: [u8; 20], code: &[u8]) -> String {
        self.nonce(from);
        let fnonce = self.nonce(factory) + 1;
        let created = super::create_address(&factory, fnonce);
        self.current().push(TxSpec::Factory { from, factory, code: code.to_vec(), created });
        super::format_address(&created)
    }

    pub fn build(&self) -> Recording {
        use serde_json::json;
        use super::{format_address, to_quantity};
        let mut calls = Vec::new();
        let ok = |method: &str, params: Json, result: Json| RecordedCall {
            method: method.into(),
            params,
            result: Some(result),
            error: None,
        };
        calls.push(ok("eth_chainId", json!([]), json!(to_quantity(self.chain_id))));
        calls.push(ok("eth_blockNumber", json!([]), json!(to_quantity(self.first))));
        let mut code_calls = Vec::new();
        for (i, txs) in self.blocks.iter().enumerate() {
            let number = self.first + i as u64;
            let q = to_quantity(number);
            let mut tx_json = Vec::new();
            let mut traces = Vec::new();
            for (j, tx) in txs.iter().enumerate() {
                let hash = format!("0x{}", hex::encode(crate::word::keccak256(format!("{}/{number}/{j}", self.chain_id).as_bytes())));
                let trace = |addr: &[u8; 20], from: &[u8; 20], path: Vec<u64>| {
                    json!({
                        "type": "create",
                        "action": {"from": format_address(from)},
                        "result": {"address": format_address(addr)},
                        "traceAddress": path,
                        "transactionHash": hash,
                    })
                };
                match tx {
                    TxSpec::Call { from } => {
                        tx_json.push(json!({"hash": hash, "from": format_address(from), "to": format_address(&[0x11; 20]), "nonce": "0x0"}));
                    }
                    TxSpec::Create { from, nonce, code } => {
                        let addr = super::create_address(from, *nonce);
                        tx_json.push(json!({"hash": hash, "from": format_address(from), "to": null, "nonce": to_quantity(*nonce)}));
                        let receipt = match code {
                            Some(_) => json!({"contractAddress": format_address(&addr), "status": "0x1"}),
                            None => json!({"contractAddress": format_address(&addr), "status": "0x0"}),
                        };
                        calls.push(ok("eth_getTransactionReceipt", json!([hash]), receipt));
                        if let Some(c) = code {
                            traces.push(trace(&addr, from, vec![]));
                            code_calls.push((format_address(&addr), q.clone(), format!("0x{}", hex::encode(c))));
                        }
                    }
                    TxSpec::Factory { from, factory, code, created } => {
                        tx_json.push(json!({"hash": hash, "from": format_address(from), "to": format_address(factory), "nonce": "0x0"}));
                        traces.push(trace(created, factory, vec![0]));
                        code_calls.push((format_address(created), q.clone(), format!("0x{}", hex::encode(code))));
                    }
                }
            }
            let block = json!({
                "number": q,
                "timestamp": to_quantity(self.first_timestamp + i as u64 * self.block_time),
                "transactions": tx_json,
            });
            calls.push(ok("eth_getBlockByNumber", json!([q, true]), block));
            if self.traces {
                calls.push(ok("trace_block", json!([q]), Json::Array(traces)));
            } else {
                calls.push(RecordedCall {
                    method: "trace_block".into(),
                    params: json!([q]),
                    result: None,
                    error: Some(json!({"code": -32601, "message": "method not found"})),
                });
            }
        }
        for (addr, q, code) in code_calls {
            calls.push(ok("eth_getCode", json!([addr, q]), Json::String(code)));
        }
        Recording { calls }
    }
}
