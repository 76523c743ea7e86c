//! Follows a chain over JSON-RPC, analyses every newly deployed contract and
//! emits an alert for each vulnerable one.
//!
//! One thread ingests blocks in order, a pool of workers analyses code, and a
//! single emitter delivers alerts and persists progress. The block cursor only
//! moves once every deployment in the block (and all earlier blocks) has been
//! analysed and its alert handled.

mod replay;
mod rpc;
mod sink;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::{CodeOrigin, RawCode};
use crate::report::{analyze, AnalyzeOptions, Report, Verdict};
use crate::word::keccak256;

pub use replay::{Fault, RecordedCall, Recording, RecordingBuilder, RecordingRpc, ReplayRpc};
pub use rpc::{create_address, format_address, quantity, to_quantity, Block, HttpRpc, Node, Receipt, RpcError, Transport, Tx};
pub use sink::{Sink, SinkError, SinkParseError};
pub use store::{Store, STATE_FILE};

#[derive(Debug, Error)]
pub enum WatchError {
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: RpcError },
    #[error("state store {path}: {source}")]
    Store { path: PathBuf, source: std::io::Error },
    #[error("state directory belongs to chain {stored}, node reports chain {node}")]
    ChainMismatch { stored: u64, node: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartBlock {
    #[default]
    Latest,
    Number(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad start block {0:?}: expected a number or \"latest\"")]
pub struct StartBlockError(String);

impl FromStr for StartBlock {
    type Err = StartBlockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("latest") {
            return Ok(StartBlock::Latest);
        }
        let n = if s.starts_with("0x") { quantity(s) } else { s.parse().ok() };
        n.map(StartBlock::Number).ok_or_else(|| StartBlockError(s.to_string()))
    }
}

/// A contract found in a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub chain_id: u64,
    pub block_number: u64,
    pub block_timestamp: u64,
    pub tx_hash: String,
    pub address: String,
    /// Keccak-256 of the runtime code as returned by the node.
    pub code_hash: String,
    /// Created inside another call rather than by a creation transaction.
    pub factory: bool,
    pub first_seen_ms: u64,
    #[serde(skip)]
    pub code: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlertKey {
    pub chain_id: u64,
    pub address: String,
    pub code_hash: String,
}

impl fmt::Display for AlertKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.chain_id, self.address, self.code_hash)
    }
}

/// A vulnerable deployment. Deployments of identical code share one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub key: AlertKey,
    pub deployment: Deployment,
    /// Seconds from the block timestamp to emission.
    pub latency_secs: f64,
    pub report: Report,
}

#[derive(Debug, Clone)]
pub struct WatchOptions {
    pub start: StartBlock,
    pub workers: usize,
    pub sink: Sink,
    pub state_dir: PathBuf,
    /// Blocks to process in this run; unbounded when `None`.
    pub max_blocks: Option<u64>,
    pub poll_interval: Duration,
    pub analyze: AnalyzeOptions,
    /// Capacity of the ingestion-to-worker queue.
    pub queue_depth: usize,
    pub retry_base: Duration,
    pub retry_max: Duration,
    /// Consecutive failed attempts tolerated per request; unlimited when `None`.
    pub max_retries: Option<u32>,
    /// Return once the node has no next block instead of polling.
    pub stop_at_head: bool,
}

impl Default for WatchOptions {
    fn default() -> Self {
        WatchOptions {
            start: StartBlock::Latest,
            workers: 4,
            sink: Sink::Stdout,
            state_dir: PathBuf::from(".avscan-watch"),
            max_blocks: None,
            poll_interval: Duration::from_secs(4),
            analyze: AnalyzeOptions::default(),
            queue_depth: 64,
            retry_base: Duration::from_millis(500),
            retry_max: Duration::from_secs(30),
            max_retries: None,
            stop_at_head: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WatchStats {
    pub blocks: u64,
    pub contracts: u64,
    pub factory_contracts: u64,
    /// Distinct code analysed in this run.
    pub analyses: u64,
    pub alerts: u64,
    /// Alerts skipped because their key was already delivered.
    pub duplicates: u64,
    /// Alerts still waiting for the sink at exit.
    pub pending: u64,
    pub rpc_retries: u64,
    /// Blocks whose internal creations could not be listed.
    pub untraced_blocks: u64,
    pub cursor: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn code_hash(code: &[u8]) -> String {
    format!("0x{}", hex::encode(keccak256(code)))
}

struct Retry<'o> {
    opts: &'o WatchOptions,
    retries: u64,
}

impl Retry<'_> {
    fn run<R>(&mut self, mut f: impl FnMut() -> Result<R, RpcError>) -> Result<R, WatchError> {
        let mut delay = self.opts.retry_base;
        let mut attempts = 0u32;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    attempts += 1;
                    if self.opts.max_retries.is_some_and(|m| attempts > m) {
                        return Err(WatchError::RetriesExhausted { attempts, last: e });
                    }
                    self.retries += 1;
                    log::warn!("{e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(self.opts.retry_max);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Deployments in one block. `traced` is `None` until the node has been asked
/// for call traces once.
fn block_deployments<T: Transport>(
    node: &Node<T>,
    chain_id: u64,
    block: &Block,
    traced: &mut Option<bool>,
) -> Result<(Vec<Deployment>, bool), RpcError> {
    let number = quantity(&block.number).unwrap_or_default();
    let timestamp = quantity(&block.timestamp).unwrap_or_default();
    let mut found: Vec<(String, String, bool)> = Vec::new();
    for tx in block.transactions.iter().filter(|t| t.is_creation()) {
        if let Some(addr) = node.creation_address(tx)? {
            found.push((tx.hash.clone(), addr, false));
        }
    }
    let mut covered = true;
    if *traced != Some(false) {
        match node.created_in_block(number) {
            Ok(list) => {
                *traced = Some(true);
                for (tx, addr) in list {
                    if !found.iter().any(|(_, a, _)| *a == addr) {
                        found.push((tx, addr, true));
                    }
                }
            }
            Err(RpcError::MethodNotFound(_)) => {
                log::warn!("node has no trace_block; contracts created inside calls will be missed");
                *traced = Some(false);
                covered = false;
            }
            Err(e) => return Err(e),
        }
    } else {
        covered = false;
    }
    if !covered && block.transactions.iter().any(|t| !t.is_creation()) {
        log::debug!("block {number}: internal creations not covered");
    }

    let mut out = Vec::new();
    for (tx_hash, address, factory) in found {
        let code = node.code_at(&address, number)?;
        if code.is_empty() {
            log::debug!("block {number}: {address} has no code");
            continue;
        }
        out.push(Deployment {
            chain_id,
            block_number: number,
            block_timestamp: timestamp,
            tx_hash,
            address,
            code_hash: code_hash(&code),
            factory,
            first_seen_ms: now_ms(),
            code,
        });
    }
    Ok((out, covered))
}

enum Msg {
    Block { number: u64, expected: usize },
    Done { deployment: Deployment, report: Arc<Report> },
}

type ReportCache = Mutex<HashMap<String, Arc<OnceLock<Arc<Report>>>>>;

fn worker(jobs: Receiver<Deployment>, results: Sender<Msg>, cache: &ReportCache, analyses: &AtomicUsize, opts: &AnalyzeOptions) {
    for d in jobs {
        let cell = {
            let mut c = cache.lock().unwrap_or_else(|e| e.into_inner());
            c.entry(d.code_hash.clone()).or_default().clone()
        };
        let report = cell
            .get_or_init(|| {
                analyses.fetch_add(1, Ordering::Relaxed);
                let code = RawCode::new(d.code.clone(), CodeOrigin::RpcFetch).expect("deployments have code");
                Arc::new(analyze(&code, &d.address, opts).report)
            })
            .clone();
        if results.send(Msg::Done { deployment: d, report }).is_err() {
            return;
        }
    }
}

struct Emitter {
    store: Store,
    sink: Sink,
    outstanding: BTreeMap<u64, usize>,
    stats: WatchStats,
}

impl Emitter {
    fn emit(&mut self, d: Deployment, report: &Report) -> Result<(), WatchError> {
        if report.verdict != Verdict::Vulnerable {
            return Ok(());
        }
        let key = AlertKey { chain_id: d.chain_id, address: d.address.clone(), code_hash: d.code_hash.clone() };
        let k = key.to_string();
        if self.store.is_delivered(&k) || self.store.is_pending(&k) {
            self.stats.duplicates += 1;
            return Ok(());
        }
        let latency_secs = (now_ms() as f64 / 1e3 - d.block_timestamp as f64).max(0.0);
        let alert = Alert { key, deployment: d, latency_secs, report: report.clone() };
        self.store.add_pending(&alert)?;
        self.deliver(&alert)?;
        Ok(())
    }

    fn deliver(&mut self, alert: &Alert) -> Result<bool, WatchError> {
        match self.sink.deliver(alert) {
            Ok(()) => {
                self.store.mark_delivered(&alert.key.to_string())?;
                self.stats.alerts += 1;
                Ok(true)
            }
            Err(e) => {
                log::warn!("{e}; alert {} kept for retry", alert.key);
                Ok(false)
            }
        }
    }

    fn flush_pending(&mut self) -> Result<(), WatchError> {
        for a in self.store.pending() {
            if !self.deliver(&a)? {
                break;
            }
        }
        Ok(())
    }

    /// Advances the cursor over the finished prefix of blocks.
    fn settle(&mut self) -> Result<(), WatchError> {
        while let Some((&n, &left)) = self.outstanding.first_key_value() {
            if left > 0 {
                break;
            }
            self.outstanding.remove(&n);
            self.store.advance(n)?;
            self.flush_pending()?;
        }
        Ok(())
    }

    fn run(mut self, results: Receiver<Msg>) -> Result<WatchStats, WatchError> {
        self.flush_pending()?;
        for msg in results {
            match msg {
                Msg::Block { number, expected } => {
                    self.outstanding.insert(number, expected);
                }
                Msg::Done { deployment, report } => {
                    let n = deployment.block_number;
                    self.emit(deployment, &report)?;
                    if let Some(left) = self.outstanding.get_mut(&n) {
                        *left -= 1;
                    }
                }
            }
            self.settle()?;
        }
        self.flush_pending()?;
        self.stats.pending = self.store.pending().len() as u64;
        self.stats.cursor = self.store.cursor();
        Ok(self.stats)
    }
}

/// Runs the watcher until `max_blocks` blocks are processed, the head is
/// reached with `stop_at_head`, or a non-retryable error occurs. Work already
/// queued is finished before returning either way.
pub fn run_watch<T: Transport>(transport: T, opts: &WatchOptions) -> Result<WatchStats, WatchError> {
    let node = Node::new(transport);
    let mut store = Store::open(&opts.state_dir)?;
    let mut retry = Retry { opts, retries: 0 };

    let chain_id = retry.run(|| node.chain_id())?;
    if let Some(stored) = store.chain().filter(|c| *c != chain_id) {
        return Err(WatchError::ChainMismatch { stored, node: chain_id });
    }
    store.set_chain(chain_id)?;
    let mut next = match (store.cursor(), opts.start) {
        (Some(c), _) => c + 1,
        (None, StartBlock::Number(n)) => n,
        (None, StartBlock::Latest) => retry.run(|| node.block_number())?,
    };
    log::info!("watching chain {chain_id} from block {next}");

    let (job_tx, job_rx) = bounded::<Deployment>(opts.queue_depth.max(1));
    let (res_tx, res_rx) = unbounded::<Msg>();
    let cache: ReportCache = Mutex::new(HashMap::new());
    let analyses = AtomicUsize::new(0);
    let emitter = Emitter { store, sink: opts.sink.clone(), outstanding: BTreeMap::new(), stats: WatchStats::default() };

    let mut blocks = 0u64;
    let mut contracts = 0u64;
    let mut factory = 0u64;
    let mut untraced = 0u64;
    let mut traced = None;
    let (ingest, emitted) = std::thread::scope(|s| {
        for _ in 0..opts.workers.max(1) {
            let (jobs, results) = (job_rx.clone(), res_tx.clone());
            let (cache, analyses) = (&cache, &analyses);
            s.spawn(move || worker(jobs, results, cache, analyses, &opts.analyze));
        }
        drop(job_rx);
        let emitter = s.spawn(move || emitter.run(res_rx));

        let ingest = loop {
            if opts.max_blocks.is_some_and(|m| blocks >= m) {
                break Ok(());
            }
            let block = match retry.run(|| node.block(next)) {
                Ok(b) => b,
                Err(e) => break Err(e),
            };
            let Some(block) = block else {
                if opts.stop_at_head {
                    break Ok(());
                }
                std::thread::sleep(opts.poll_interval);
                continue;
            };
            let (deps, covered) = match retry.run(|| block_deployments(&node, chain_id, &block, &mut traced)) {
                Ok(x) => x,
                Err(e) => break Err(e),
            };
            untraced += u64::from(!covered);
            contracts += deps.len() as u64;
            factory += deps.iter().filter(|d| d.factory).count() as u64;
            if res_tx.send(Msg::Block { number: next, expected: deps.len() }).is_err() {
                break Ok(());
            }
            for d in deps {
                let d = match job_tx.try_send(d) {
                    Ok(()) => continue,
                    Err(TrySendError::Full(d)) => {
                        log::warn!("analysis queue full ({} waiting); ingestion paused", opts.queue_depth);
                        d
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                };
                if job_tx.send(d).is_err() {
                    break;
                }
            }
            next += 1;
            blocks += 1;
        };
        drop(job_tx);
        drop(res_tx);
        let emitted = emitter.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
        (ingest, emitted)
    });

    let mut stats = emitted?;
    ingest?;
    stats.blocks = blocks;
    stats.contracts = contracts;
    stats.factory_contracts = factory;
    stats.analyses = analyses.load(Ordering::Relaxed) as u64;
    stats.rpc_retries = retry.retries;
    stats.untraced_blocks = untraced;
    Ok(stats)
}

#[cfg(test)]
pub(crate) mod tests;
