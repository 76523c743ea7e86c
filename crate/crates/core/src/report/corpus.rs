//! Batch analysis of a directory of bytecode files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{analyze, AnalyzeOptions, Report, Verdict, SCHEMA_VERSION};
use crate::bytecode::RawCode;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad labels file {path}: {message}")]
    Labels { path: PathBuf, message: String },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub jobs: usize,
    pub labels: Option<PathBuf>,
    /// Directory for per-contract reports and the summary.
    pub out: Option<PathBuf>,
    pub analyze: AnalyzeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    pub contract_id: String,
    pub verdict: Verdict,
    pub findings: usize,
    /// Ground truth, when a label was given.
    pub label: Option<bool>,
    /// Same bytecode as an earlier file.
    pub duplicate_of: Option<String>,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub schema_version: u32,
    pub files: usize,
    pub unique: usize,
    pub vulnerable: usize,
    pub clean: usize,
    pub errors: usize,
    pub timeouts: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub avg_time_ms: f64,
    pub median_time_ms: f64,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Flag(bool),
    Word(String),
}

/// Reads `{"<code hash or file stem>": true | false | "vulnerable" | "clean"}`.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, bool>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let raw: BTreeMap<String, LabelValue> = serde_json::from_str(&text)
        .map_err(|e| CorpusError::Labels { path: path.into(), message: e.to_string() })?;
    raw.into_iter()
        .map(|(k, v)| {
            let flag = match v {
                LabelValue::Flag(b) => b,
                LabelValue::Word(w) => match w.to_ascii_lowercase().as_str() {
                    "vulnerable" | "true" | "1" => true,
                    "clean" | "false" | "0" => false,
                    other => {
                        return Err(CorpusError::Labels {
                            path: path.into(),
                            message: format!("unknown label {other:?} for {k}"),
                        })
                    }
                },
            };
            Ok((k.to_ascii_lowercase(), flag))
        })
        .collect()
}

fn lookup_label(labels: &BTreeMap<String, bool>, report: &Report, input_hash: &str, file: &Path) -> Option<bool> {
    let stem = file.file_stem().map(|s| s.to_string_lossy().to_ascii_lowercase());
    let name = file.file_name().map(|s| s.to_string_lossy().to_ascii_lowercase());
    [Some(report.contract.id.to_ascii_lowercase()), Some(input_hash.to_ascii_lowercase()), stem, name]
        .into_iter()
        .flatten()
        .find_map(|k| labels.get(&k).or_else(|| labels.get(k.trim_start_matches("0x"))).copied())
}

/// Bytecode files directly inside `dir`, sorted by name. JSON files and
/// subdirectories are skipped.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let rd = std::fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.into(), source })?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| CorpusError::Io { path: dir.into(), source })?;
        let path = entry.path();
        if !path.is_file() || path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            continue;
        }
        files.push(path);
    }
    files.sort();
    Ok(files)
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Analyses every file in `dir` on a pool of `jobs` threads. Reports are
/// returned in file order whatever the thread count.
pub fn analyze_corpus(dir: &Path, opts: &CorpusOptions) -> Result<(CorpusSummary, Vec<Report>), CorpusError> {
    let files = corpus_files(dir)?;
    let labels = match &opts.labels {
        Some(p) => load_labels(p)?,
        None => BTreeMap::new(),
    };

    let loaded: Vec<(PathBuf, Result<RawCode, String>)> = files
        .into_iter()
        .map(|p| {
            let code = RawCode::from_file(&p).map_err(|e| e.to_string());
            (p, code)
        })
        .collect();
    let mut first_seen: BTreeMap<String, String> = BTreeMap::new();
    let mut work = Vec::new();
    for (i, (path, code)) in loaded.iter().enumerate() {
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        let dup = match code {
            Ok(c) => {
                let h = c.code_hash();
                match first_seen.get(&h) {
                    Some(orig) => Some(orig.clone()),
                    None => {
                        first_seen.insert(h, file.clone());
                        None
                    }
                }
            }
            Err(_) => None,
        };
        work.push((i, file, dup));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CorpusError::Pool(e.to_string()))?;
    let unique: Vec<usize> = work.iter().filter(|(_, _, d)| d.is_none()).map(|(i, _, _)| *i).collect();
    let reports: Vec<(usize, Report)> = pool.install(|| {
        unique
            .par_iter()
            .map(|&i| {
                let (path, code) = &loaded[i];
                let file = path.file_name().unwrap().to_string_lossy().into_owned();
                let report = match code {
                    Ok(c) => analyze(c, &file, &opts.analyze).report,
                    Err(msg) => error_report(&file, msg),
                };
                (i, report)
            })
            .collect()
    });
    let by_index: BTreeMap<usize, &Report> = reports.iter().map(|(i, r)| (*i, r)).collect();
    let by_file: BTreeMap<&str, &Report> = reports.iter().map(|(_, r)| (r.contract.source.as_str(), r)).collect();

    let mut entries = Vec::new();
    let mut seen_ids = HashSet::new();
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    let (mut vulnerable, mut clean, mut errors, mut timeouts) = (0, 0, 0, 0);
    let mut times = Vec::new();
    for (i, file, dup) in &work {
        let report = match dup {
            Some(orig) => by_file[orig.as_str()],
            None => by_index[i],
        };
        let input_hash = loaded[*i].1.as_ref().map(|c| c.code_hash()).unwrap_or_default();
        let label = lookup_label(&labels, report, &input_hash, &loaded[*i].0);
        let flagged = report.verdict == Verdict::Vulnerable;
        if dup.is_none() {
            seen_ids.insert(report.contract.id.clone());
            times.push(report.timings.total_ms);
            match report.verdict {
                Verdict::Vulnerable => vulnerable += 1,
                Verdict::Clean => clean += 1,
                Verdict::Error => errors += 1,
                Verdict::Timeout => timeouts += 1,
            }
            match (label, flagged) {
                (Some(true), true) => tp += 1,
                (Some(false), true) => fp += 1,
                (Some(true), false) => fneg += 1,
                (Some(false), false) => tn += 1,
                (None, _) => {}
            }
        }
        entries.push(CorpusEntry {
            file: file.clone(),
            contract_id: report.contract.id.clone(),
            verdict: report.verdict,
            findings: report.findings.len(),
            label,
            duplicate_of: dup.clone(),
            time_ms: if dup.is_some() { 0.0 } else { report.timings.total_ms },
        });
    }

    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let summary = CorpusSummary {
        schema_version: SCHEMA_VERSION,
        files: entries.len(),
        unique: reports.len(),
        vulnerable,
        clean,
        errors,
        timeouts,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        avg_time_ms: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        median_time_ms: median(times),
        entries,
    };

    let mut ordered: Vec<Report> = reports.into_iter().map(|(_, r)| r).collect();
    ordered.sort_by(|a, b| a.contract.source.cmp(&b.contract.source));
    if let Some(out) = &opts.out {
        write_outputs(out, &summary, &ordered)?;
    }
    Ok((summary, ordered))
}

fn error_report(file: &str, msg: &str) -> Report {
    let mut r = super::input_error_report(file, &crate::bytecode::BytecodeError::Empty);
    r.error = Some(msg.to_string());
    r
}

fn write_outputs(out: &Path, summary: &CorpusSummary, reports: &[Report]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { path: out.into(), source };
    std::fs::create_dir_all(out).map_err(io)?;
    for r in reports {
        let name = if r.contract.id.is_empty() {
            format!("{}.report.json", r.contract.source)
        } else {
            format!("{}.json", r.contract.id.trim_start_matches("0x"))
        };
        std::fs::write(out.join(name), r.to_json() + "\n").map_err(io)?;
    }
    let text = serde_json::to_string_pretty(summary).expect("summary serialises");
    std::fs::write(out.join("summary.json"), text + "\n").map_err(io)?;
    Ok(())
}
