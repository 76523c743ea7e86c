//! JSON-RPC transports and the handful of node methods the watcher needs.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::word::keccak256;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RpcError {
    /// Node unreachable or overloaded. Worth retrying.
    #[error("node unavailable: {0}")]
    Unavailable(String),
    #[error("method {0} not supported by the node")]
    MethodNotFound(String),
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("malformed response to {method}: {message}")]
    Protocol { method: String, message: String },
}

impl RpcError {
    pub fn is_transient(&self) -> bool {
        matches!(self, RpcError::Unavailable(_))
    }

    fn protocol(method: &str, message: impl Into<String>) -> Self {
        RpcError::Protocol { method: method.to_string(), message: message.into() }
    }
}

/// Something that answers raw JSON-RPC calls.
pub trait Transport: Sync {
    fn call(&self, method: &str, params: Json) -> Result<Json, RpcError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn call(&self, method: &str, params: Json) -> Result<Json, RpcError> {
        (**self).call(method, params)
    }
}

/// Converts a JSON-RPC response envelope into a result.
pub fn decode_envelope(method: &str, body: Json) -> Result<Json, RpcError> {
    if let Some(err) = body.get("error").filter(|e| !e.is_null()) {
        let code = err.get("code").and_then(Json::as_i64).unwrap_or(0);
        let message = err.get("message").and_then(Json::as_str).unwrap_or_default().to_string();
        return Err(if code == -32601 {
            RpcError::MethodNotFound(method.to_string())
        } else {
            RpcError::Rpc { code, message }
        });
    }
    match body {
        Json::Object(mut m) => m.remove("result").ok_or_else(|| RpcError::protocol(method, "no result field")),
        _ => Err(RpcError::protocol(method, "response is not an object")),
    }
}

/// Plain HTTP POST transport.
pub struct HttpRpc {
    url: String,
    agent: ureq::Agent,
}

impl HttpRpc {
    pub fn new(url: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build();
        HttpRpc { url: url.to_string(), agent }
    }
}

impl Transport for HttpRpc {
    fn call(&self, method: &str, params: Json) -> Result<Json, RpcError> {
        let req = json!({"jsonrpc": "2.0", "id": 1, "method": method, "params": params});
        let body: Json = match self.agent.post(&self.url).send_json(req) {
            Ok(resp) => resp.into_json().map_err(|e| RpcError::protocol(method, e.to_string()))?,
            Err(ureq::Error::Status(code, resp)) if code == 429 || code >= 500 => {
                return Err(RpcError::Unavailable(format!("HTTP {code} {}", resp.status_text())))
            }
            Err(ureq::Error::Status(code, resp)) => {
                // Some nodes report JSON-RPC errors with a 4xx status.
                match resp.into_json::<Json>() {
                    Ok(b) if b.get("error").is_some() => b,
                    _ => return Err(RpcError::protocol(method, format!("HTTP {code}"))),
                }
            }
            Err(e) => return Err(RpcError::Unavailable(e.to_string())),
        };
        decode_envelope(method, body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Tx {
    pub hash: String,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
    #[serde(default)]
    pub nonce: Option<String>,
}

impl Tx {
    pub fn is_creation(&self) -> bool {
        self.to.as_deref().is_none_or(|t| t.is_empty() || t == "0x")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Block {
    pub number: String,
    pub timestamp: String,
    #[serde(default)]
    pub transactions: Vec<Tx>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Receipt {
    #[serde(default)]
    pub contract_address: Option<String>,
    #[serde(default)]
    pub status: Option<String>,
}

impl Receipt {
    pub fn succeeded(&self) -> bool {
        self.status.as_deref().is_none_or(|s| quantity(s) != Some(0))
    }
}

/// Parses a `0x`-prefixed hex quantity.
pub fn quantity(s: &str) -> Option<u64> {
    let h = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    if h.is_empty() {
        return Some(0);
    }
    u64::from_str_radix(h, 16).ok()
}

pub fn to_quantity(n: u64) -> String {
    format!("0x{n:x}")
}

/// Address of a contract created by `sender` at `nonce`.
pub fn create_address(sender: &[u8; 20], nonce: u64) -> [u8; 20] {
    let mut payload = Vec::with_capacity(30);
    payload.push(0x80 + 20);
    payload.extend_from_slice(sender);
    if nonce == 0 {
        payload.push(0x80);
    } else if nonce < 0x80 {
        payload.push(nonce as u8);
    } else {
        let be = nonce.to_be_bytes();
        let skip = be.iter().take_while(|b| **b == 0).count();
        payload.push(0x80 + (8 - skip) as u8);
        payload.extend_from_slice(&be[skip..]);
    }
    let mut rlp = vec![0xc0 + payload.len() as u8];
    rlp.extend(payload);
    let h = keccak256(&rlp);
    let mut out = [0u8; 20];
    out.copy_from_slice(&h[12..]);
    out
}

fn parse_address(s: &str) -> Option<[u8; 20]> {
    let raw = hex::decode(s.strip_prefix("0x").unwrap_or(s)).ok()?;
    raw.try_into().ok()
}

pub fn format_address(a: &[u8; 20]) -> String {
    format!("0x{}", hex::encode(a))
}

/// Typed wrapper over a transport.
pub struct Node<T> {
    transport: T,
}

impl<T: Transport> Node<T> {
    pub fn new(transport: T) -> Self {
        Node { transport }
    }

    fn typed<R: for<'de> Deserialize<'de>>(&self, method: &str, params: Json) -> Result<R, RpcError> {
        let v = self.transport.call(method, params)?;
        serde_json::from_value(v).map_err(|e| RpcError::protocol(method, e.to_string()))
    }

    fn number(&self, method: &str) -> Result<u64, RpcError> {
        let s: String = self.typed(method, json!([]))?;
        quantity(&s).ok_or_else(|| RpcError::protocol(method, format!("bad quantity {s:?}")))
    }

    pub fn chain_id(&self) -> Result<u64, RpcError> {
        self.number("eth_chainId")
    }

    pub fn block_number(&self) -> Result<u64, RpcError> {
        self.number("eth_blockNumber")
    }

    /// `None` when the block does not exist yet.
    pub fn block(&self, n: u64) -> Result<Option<Block>, RpcError> {
        self.typed("eth_getBlockByNumber", json!([to_quantity(n), true]))
    }

    pub fn receipt(&self, tx: &str) -> Result<Option<Receipt>, RpcError> {
        self.typed("eth_getTransactionReceipt", json!([tx]))
    }

    pub fn code_at(&self, address: &str, block: u64) -> Result<Vec<u8>, RpcError> {
        let method = "eth_getCode";
        let s: String = self.typed(method, json!([address, to_quantity(block)]))?;
        hex::decode(s.strip_prefix("0x").unwrap_or(&s)).map_err(|e| RpcError::protocol(method, e.to_string()))
    }

    /// Addresses created anywhere in the block, including inside calls.
    pub fn created_in_block(&self, n: u64) -> Result<Vec<(String, String)>, RpcError> {
        let traces: Vec<Json> = self.typed("trace_block", json!([to_quantity(n)]))?;
        let mut out = Vec::new();
        for t in traces {
            let is_create = t.get("type").and_then(Json::as_str) == Some("create");
            let failed = t.get("error").is_some_and(|e| !e.is_null());
            let addr = t.pointer("/result/address").and_then(Json::as_str);
            let tx = t.get("transactionHash").and_then(Json::as_str).unwrap_or_default();
            if let (true, false, Some(a)) = (is_create, failed, addr) {
                out.push((tx.to_string(), a.to_ascii_lowercase()));
            }
        }
        Ok(out)
    }

    /// Address of a top-level creation: the receipt when the node has it,
    /// otherwise derived from the sender and nonce.
    pub fn creation_address(&self, tx: &Tx) -> Result<Option<String>, RpcError> {
        match self.receipt(&tx.hash)? {
            Some(r) if !r.succeeded() => return Ok(None),
            Some(Receipt { contract_address: Some(a), .. }) => return Ok(Some(a.to_ascii_lowercase())),
            _ => {}
        }
        let sender = tx.from.as_deref().and_then(parse_address);
        let nonce = tx.nonce.as_deref().and_then(quantity);
        Ok(sender.zip(nonce).map(|(s, n)| format_address(&create_address(&s, n))))
    }
}
