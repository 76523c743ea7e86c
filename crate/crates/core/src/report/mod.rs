//! End-to-end analysis of one contract and the JSON report format.

mod corpus;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bytecode::{extract_runtime, BytecodeError, CodeOrigin, RawCode, RuntimeDecision};
use crate::cfg::{build_cfg, extract_functions, filter_candidates};
use crate::detector::{analyze_function, DetectorConfig, Finding, FunctionReport, FunctionStatus, VerificationMode};
use crate::sim::{dump_terminal, SimConfig};

pub use corpus::{analyze_corpus, load_labels, CorpusEntry, CorpusError, CorpusOptions, CorpusSummary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub timeout: Duration,
    pub max_paths: usize,
    pub mode: VerificationMode,
    pub dump_cfg: bool,
    pub dump_trace: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            timeout: Duration::from_secs(600),
            max_paths: SimConfig::default().max_paths,
            mode: VerificationMode::default(),
            dump_cfg: false,
            dump_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Vulnerable,
    Clean,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractInfo {
    /// Keccak-256 of the analysed runtime code.
    pub id: String,
    pub source: String,
    pub origin: CodeOrigin,
    pub input_size: usize,
    pub runtime_size: usize,
    pub runtime: RuntimeDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub total_ms: f64,
    pub cfg_ms: f64,
    pub filter_ms: f64,
    pub search_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub contract: ContractInfo,
    pub verdict: Verdict,
    pub mode: VerificationMode,
    pub findings: Vec<Finding>,
    pub functions: Vec<FunctionReport>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub timings: Timings,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// JSON with the timing block zeroed, for comparisons across runs.
    pub fn to_json_without_timings(&self) -> String {
        let mut r = self.clone();
        r.timings = Timings::default();
        r.to_json()
    }
}

/// A report plus optional debugging dumps.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: Report,
    pub cfg_dump: Option<String>,
    pub trace_dump: Option<String>,
}

fn ms(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

/// Runs the whole pipeline. Failures are reported in the result, not returned.
pub fn analyze(code: &RawCode, source: &str, opts: &AnalyzeOptions) -> Analysis {
    let start = Instant::now();
    let deadline = start.checked_add(opts.timeout);
    let mut warnings = Vec::new();

    let extraction = match extract_runtime(code) {
        Ok(x) => x,
        Err(e) => return error_analysis(code, source, &e, start),
    };
    if let Some(w) = &extraction.warning {
        warnings.push(w.clone());
    }
    let runtime = extraction.runtime.bytes();
    let cfg = build_cfg(runtime);
    let funcs = extract_functions(&cfg);
    if funcs.len() == 1 && funcs[0].selector.is_none() {
        warnings.push("no selector dispatcher recognised; analysing the whole contract as one function".into());
    }
    let cfg_done = Instant::now();

    let filtered = filter_candidates(&cfg, runtime, &funcs, deadline);
    for miss in &filtered.shift_misses {
        let sel = miss.selector.map_or("none".to_string(), |s| format!("0x{s:08x}"));
        warnings.push(format!(
            "function {sel} parameter {} is narrowed with shifts instead of a mask and was not treated as an address",
            miss.param_index
        ));
    }
    let filter_done = Instant::now();

    let config = DetectorConfig {
        mode: opts.mode,
        sim: SimConfig { max_paths: opts.max_paths, deadline, record_trace: opts.dump_trace, ..SimConfig::default() },
    };
    let mut functions = Vec::new();
    let mut findings = Vec::new();
    let mut trace_dump = opts.dump_trace.then(String::new);
    for f in &funcs {
        let Some(af) = filtered.kept.iter().find(|k| k.func == *f) else {
            functions.push(FunctionReport {
                selector: f.selector_hex(),
                entry: f.entry_offset,
                params: Vec::new(),
                status: FunctionStatus::NoAddressParams,
                stopped_at: Vec::new(),
                paths: 0,
                truncated_paths: 0,
                budget_exhausted: false,
            });
            continue;
        };
        let (report, finding) = match trace_dump.as_mut() {
            Some(buf) => {
                buf.push_str(&format!("== function {} ==\n", f.selector_hex().unwrap_or_else(|| "none".into())));
                let mut cb = |id: usize, t: &crate::sim::Terminal| buf.push_str(&dump_terminal(id, t));
                analyze_function(&cfg, runtime, af, &config, Some(&mut cb))
            }
            None => analyze_function(&cfg, runtime, af, &config, None),
        };
        functions.push(report);
        findings.extend(finding);
    }
    let search_done = Instant::now();

    let verdict = if !findings.is_empty() {
        Verdict::Vulnerable
    } else if functions.iter().any(|f| f.status == FunctionStatus::Timeout) {
        Verdict::Timeout
    } else {
        Verdict::Clean
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        contract: ContractInfo {
            id: extraction.runtime.code_hash(),
            source: source.to_string(),
            origin: code.origin(),
            input_size: code.len(),
            runtime_size: runtime.len(),
            runtime: extraction.decision,
        },
        verdict,
        mode: opts.mode,
        findings,
        functions,
        warnings,
        error: None,
        timings: Timings {
            total_ms: ms(search_done - start),
            cfg_ms: ms(cfg_done - start),
            filter_ms: ms(filter_done - cfg_done),
            search_ms: ms(search_done - filter_done),
        },
    };
    Analysis { report, cfg_dump: opts.dump_cfg.then(|| cfg.dump_text()), trace_dump }
}

fn error_analysis(code: &RawCode, source: &str, err: &BytecodeError, start: Instant) -> Analysis {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        contract: ContractInfo {
            id: code.code_hash(),
            source: source.to_string(),
            origin: code.origin(),
            input_size: code.len(),
            runtime_size: 0,
            runtime: RuntimeDecision::AsIs,
        },
        verdict: Verdict::Error,
        mode: VerificationMode::default(),
        findings: Vec::new(),
        functions: Vec::new(),
        warnings: Vec::new(),
        error: Some(err.to_string()),
        timings: Timings { total_ms: ms(start.elapsed()), ..Timings::default() },
    };
    Analysis { report, cfg_dump: None, trace_dump: None }
}

/// Report for input that could not be decoded at all.
pub fn input_error_report(source: &str, err: &BytecodeError) -> Report {
    Report {
        schema_version: SCHEMA_VERSION,
        contract: ContractInfo {
            id: String::new(),
            source: source.to_string(),
            origin: CodeOrigin::HexString,
            input_size: 0,
            runtime_size: 0,
            runtime: RuntimeDecision::AsIs,
        },
        verdict: Verdict::Error,
        mode: VerificationMode::default(),
        findings: Vec::new(),
        functions: Vec::new(),
        warnings: Vec::new(),
        error: Some(err.to_string()),
        timings: Timings::default(),
    }
}
