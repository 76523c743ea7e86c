//! The acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any of them does.
//!
//! Run with `cargo test -p avscan --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use avscan::asm::assemble_text;
use avscan::bytecode::{CodeOrigin, RawCode};
use avscan::cfg::{build_cfg, AddressFunction, FunctionCandidate, ParamInfo, ParamKind};
use avscan::detector::{analyze_function, verdict_over, DetectorConfig, Phase, VerificationMode};
use avscan::report::{analyze, analyze_corpus, AnalyzeOptions, CorpusOptions, Verdict};
use avscan::sim::{enumerate_all, initial_state, explore, Machine, SimConfig, TerminalKind, Value};
use avscan::watcher::{run_watch, Alert, Fault, Recording, ReplayRpc, Sink, StartBlock, Store, WatchOptions};
use avscan::word::Word;
use rand::rngs::StdRng;
use rand::SeedableRng;

use common::gen::{random_contract, MAX_BLOCKS};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const PER_FIXTURE_LIMIT: Duration = Duration::from_secs(10);

fn benchmark() -> Outcome {
    let m = common::manifest();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    let mut problems = Vec::new();
    let mut slowest = Duration::ZERO;
    for entry in &m.benchmark {
        let fx = common::fixture(&entry.name);
        let start = Instant::now();
        let report = analyze(&fx.deploy_code(), &entry.name, &AnalyzeOptions::default()).report;
        let took = start.elapsed();
        slowest = slowest.max(took);
        if took >= PER_FIXTURE_LIMIT {
            problems.push(format!("{} took {took:?}", entry.name));
        }
        let flagged = report.verdict == Verdict::Vulnerable;
        match (flagged, entry.vulnerable) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
        let got: BTreeSet<(String, usize)> =
            report.findings.iter().map(|f| (f.selector.clone().unwrap_or_default(), f.param_index)).collect();
        let want: BTreeSet<(String, usize)> =
            entry.findings.iter().map(|(sig, p)| (fx.selector(sig), *p)).collect();
        if got != want {
            problems.push(format!("{}: findings {got:?}, expected {want:?}", entry.name));
        }
    }
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fn_).max(1) as f64;
    let detail = format!(
        "{} fixtures, TP={tp} FP={fp} FN={fn_} TN={tn}, precision={:.0}% recall={:.0}%, slowest {slowest:?}",
        m.benchmark.len(),
        precision * 100.0,
        recall * 100.0
    );
    if problems.is_empty() && fp == 0 && fn_ == 0 && m.benchmark.len() == 20 {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn phase_from(tag: &str) -> Phase {
    match tag {
        "V" => Phase::Verification,
        "EC" => Phase::ExternalCall,
        "SM" => Phase::StateModification,
        other => panic!("unknown phase tag {other}"),
    }
}

fn phase_terminations() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for probe in common::manifest().phase_probes {
        let fx = common::fixture(&probe.name);
        let report = analyze(&fx.deploy_code(), &probe.name, &AnalyzeOptions::default()).report;
        let sel = fx.selector(&probe.function);
        let want = phase_from(&probe.stops_at);
        let got = report
            .functions
            .iter()
            .find(|f| f.selector.as_deref() == Some(sel.as_str()))
            .and_then(|f| f.stopped_at.iter().find(|p| p.param_index == probe.param))
            .and_then(|p| p.phase);
        let clean = report.verdict == Verdict::Clean;
        ok &= clean && got == Some(want);
        lines.push(format!("{}::{} p{} {:?}", probe.name, probe.function, probe.param, got));
    }
    check(ok, lines.join(", "))
}

fn whole_contract() -> FunctionCandidate {
    FunctionCandidate {
        selector: None,
        entry: 0,
        entry_offset: 0,
        entry_depth: 0,
        entry_stack: Vec::new(),
        entry_memory: Vec::new(),
    }
}

fn top_after(src: &str) -> Value {
    let code = assemble_text(&format!("{src} STOP")).unwrap();
    let cfg = build_cfg(&code);
    let mut m = Machine::new(&cfg, &code, SimConfig::default());
    let mut out = Vec::new();
    explore(&mut m, initial_state(&whole_contract()), |t| {
        out.push(t.clone());
        std::ops::ControlFlow::Continue(())
    });
    assert!(!out.is_empty() && out.iter().all(|t| t.kind == TerminalKind::Stop), "{src}");
    out[0].state.stack.last().cloned().expect("snippet leaves a value")
}

mod taint {
    use super::*;
    use avscan::sim::{CallId, GuardKind, SourceKind};
    use GuardKind::{Compare, Mapping};
    use SourceKind::*;

    include!("../src/sim/taint_table.rs");

    pub fn run() -> (usize, Vec<String>) {
        (table().len(), taint_rule_failures(top_after))
    }
}

fn taint_rules() -> Outcome {
    let (rows, failures) = taint::run();
    check(failures.is_empty(), format!("{rows} rows, {} mismatches {}", failures.len(), failures.join("; ")))
}

const RANDOM_CONTRACTS: usize = 250;
const RANDOM_SEED: u64 = 0x00a1_1ce5;

fn address_param() -> AddressFunction {
    AddressFunction {
        func: whole_contract(),
        params: vec![ParamInfo { index: 0, calldata_offset: 4, kind: ParamKind::Address }],
    }
}

fn random_sources() -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(RANDOM_SEED);
    (0..RANDOM_CONTRACTS).map(|_| random_contract(&mut rng)).collect()
}

fn search_matches_enumeration() -> Outcome {
    let modes = [VerificationMode::Whitelist, VerificationMode::Strict, VerificationMode::Literal];
    let func = address_param();
    let (mut mismatches, mut vulnerable, mut max_blocks) = (Vec::new(), 0, 0);
    for (i, src) in random_sources().iter().enumerate() {
        let mode = modes[i % modes.len()];
        let code = assemble_text(src).unwrap();
        let cfg = build_cfg(&code);
        max_blocks = max_blocks.max(cfg.blocks().len());
        let config = DetectorConfig { mode, ..DetectorConfig::default() };
        let (report, finding) = analyze_function(&cfg, &code, &func, &config, None);
        let mut m = Machine::new(&cfg, &code, SimConfig::default());
        let all = enumerate_all(&mut m, initial_state(&func.func), 100_000);
        let oracle = verdict_over(&all, &func, mode);
        let searched = finding.is_some();
        vulnerable += usize::from(oracle);
        if searched != oracle || report.budget_exhausted || cfg.blocks().len() > MAX_BLOCKS {
            mismatches.push(format!("#{i} ({mode:?}) search={searched} enumeration={oracle}"));
        }
    }
    check(
        mismatches.is_empty() && RANDOM_CONTRACTS >= 200,
        format!(
            "{RANDOM_CONTRACTS} contracts (<= {max_blocks} blocks, {vulnerable} vulnerable), {} mismatches {}",
            mismatches.len(),
            mismatches.join("; ")
        ),
    )
}

fn timing_budget() -> Outcome {
    let opts = AnalyzeOptions { timeout: Duration::from_secs(600), ..AnalyzeOptions::default() };
    let mut inputs: Vec<(String, RawCode)> =
        common::all_fixtures().into_iter().map(|f| (f.name.clone(), f.deploy_code())).collect();
    for (i, src) in random_sources().iter().enumerate() {
        let code = RawCode::new(assemble_text(src).unwrap(), CodeOrigin::HexString).unwrap();
        inputs.push((format!("random-{i}"), code));
    }
    let mut times = Vec::new();
    let mut timeouts = Vec::new();
    for (name, code) in &inputs {
        let start = Instant::now();
        let r = analyze(code, name, &opts).report;
        times.push(start.elapsed());
        if r.verdict == Verdict::Timeout {
            timeouts.push(name.clone());
        }
    }
    times.sort();
    let median = times[times.len() / 2];
    let max = *times.last().unwrap();
    check(
        median <= Duration::from_secs(10) && timeouts.is_empty(),
        format!("{} contracts, median {median:?}, max {max:?}, {} timeouts {timeouts:?}", inputs.len(), timeouts.len()),
    )
}

fn watch_opts(dir: &Path) -> WatchOptions {
    WatchOptions {
        start: StartBlock::Number(18_000_000),
        workers: 4,
        sink: Sink::File(dir.join("alerts.jsonl")),
        state_dir: dir.join("state"),
        retry_base: Duration::from_millis(1),
        retry_max: Duration::from_millis(4),
        stop_at_head: true,
        ..WatchOptions::default()
    }
}

fn read_alerts(dir: &Path) -> Vec<Alert> {
    std::fs::read_to_string(dir.join("alerts.jsonl"))
        .map(|t| t.lines().map(|l| serde_json::from_str(l).unwrap()).collect())
        .unwrap_or_default()
}

/// Contract code the recording serves per address, analysed the batch way.
fn batch_alerts(rec: &Recording, dir: &Path) -> BTreeMap<String, (String, usize)> {
    let codes = dir.join("codes");
    std::fs::create_dir_all(&codes).unwrap();
    for call in rec.calls.iter().filter(|c| c.method == "eth_getCode") {
        let addr = call.params[0].as_str().unwrap();
        let code = call.result.as_ref().and_then(|r| r.as_str()).unwrap();
        std::fs::write(codes.join(format!("{addr}.hex")), code).unwrap();
    }
    let copts = CorpusOptions { jobs: 4, labels: None, out: None, analyze: AnalyzeOptions::default() };
    let (summary, _) = analyze_corpus(&codes, &copts).unwrap();
    summary
        .entries
        .into_iter()
        .filter(|e| e.verdict == Verdict::Vulnerable)
        .map(|e| {
            let addr = Path::new(&e.file).file_stem().unwrap().to_string_lossy().to_string();
            (addr, (e.contract_id, e.findings))
        })
        .collect()
}

fn watcher_replay() -> Outcome {
    let text = std::fs::read_to_string(common::replay_trace_path()).unwrap();
    let rec: Recording = serde_json::from_str(&text).unwrap();
    let blocks = rec.calls.iter().filter(|c| c.method == "eth_getBlockByNumber" && !c.result.as_ref().is_some_and(|r| r.is_null())).count();
    let dir = tempfile::tempdir().unwrap();
    let batch = batch_alerts(&rec, dir.path());

    let opts = watch_opts(dir.path());
    let crash_at = rec.calls.len() / 2;
    let first = run_watch(ReplayRpc::new(&rec).with_fault(Fault::Crash { at: crash_at }), &opts);
    let crashed = first.is_err();
    let cursor_at_crash = Store::open(&opts.state_dir).unwrap().cursor();
    let second = run_watch(ReplayRpc::new(&rec), &opts).map_err(|e| e.to_string())?;

    let alerts = read_alerts(dir.path());
    let keys: Vec<String> = alerts.iter().map(|a| a.key.to_string()).collect();
    let distinct: HashSet<&String> = keys.iter().collect();
    let streamed: BTreeMap<String, (String, usize)> = alerts
        .iter()
        .map(|a| {
            let id = format!("0x{}", a.key.code_hash.trim_start_matches("0x"));
            (a.key.address.clone(), (id, a.report.findings.len()))
        })
        .collect();
    let batch_norm: BTreeMap<String, (String, usize)> = batch
        .iter()
        .map(|(a, (id, n))| (a.clone(), (format!("0x{}", id.trim_start_matches("0x")), *n)))
        .collect();
    let ok = blocks == 100
        && crashed
        && cursor_at_crash.is_some_and(|c| c < 18_000_099)
        && second.cursor == Some(18_000_099)
        && distinct.len() == keys.len()
        && streamed == batch_norm;
    check(
        ok,
        format!(
            "{blocks} blocks, crash after call {crash_at} (cursor {cursor_at_crash:?}), {} alerts vs {} batch, {} duplicate keys",
            alerts.len(),
            batch_norm.len(),
            keys.len() - distinct.len()
        ),
    )
}

fn run_corpus_cli(dir: &Path, out: &Path, jobs: usize) -> BTreeMap<String, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_avscan"))
        .arg("corpus")
        .arg(dir)
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    let mut files = BTreeMap::new();
    let normalise = |text: &[u8]| {
        let mut v: serde_json::Value = serde_json::from_slice(text).unwrap();
        common::strip_timings(&mut v);
        serde_json::to_string_pretty(&v).unwrap()
    };
    files.insert("<stdout>".to_string(), normalise(&output.stdout));
    files.insert("<exit>".to_string(), format!("{:?}", output.status.code()));
    for e in std::fs::read_dir(out).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        files.insert(name, normalise(&std::fs::read(&p).unwrap()));
    }
    files
}

fn corpus_is_deterministic() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let fixtures = common::all_fixtures();
    common::write_corpus(&corpus, &fixtures);
    std::fs::write(corpus.join("zz_copy_of_p1.hex"), format!("0x{}", fixtures[0].deploy)).unwrap();
    std::fs::write(corpus.join("zz_broken.hex"), "0xnothex").unwrap();
    for (i, src) in random_sources().iter().take(40).enumerate() {
        std::fs::write(corpus.join(format!("random_{i:03}.hex")), hex::encode(assemble_text(src).unwrap())).unwrap();
    }
    let runs: Vec<BTreeMap<String, String>> =
        [1, 2, 8].iter().map(|&j| run_corpus_cli(&corpus, &dir.path().join(format!("out{j}")), j)).collect();
    let files = runs[0].len();
    let differing: Vec<&String> =
        runs[0].keys().filter(|k| runs.iter().any(|r| r.get(*k) != runs[0].get(*k))).collect();
    let same_names = runs.iter().all(|r| r.keys().eq(runs[0].keys()));
    check(
        same_names && differing.is_empty() && files > fixtures.len(),
        format!("--jobs 1/2/8 over {} inputs, {files} outputs compared, differing: {differing:?}", fixtures.len() + 42),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("1 benchmark precision/recall", benchmark),
        ("2 phase terminations", phase_terminations),
        ("3 taint rule table", taint_rules),
        ("4 search vs exhaustive enumeration", search_matches_enumeration),
        ("5 median time and no timeouts", timing_budget),
        ("6 watcher replay equals batch", watcher_replay),
        ("7 corpus output independent of --jobs", corpus_is_deterministic),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn random_contracts_stay_loop_free_and_small() {
    for src in random_sources() {
        let code = assemble_text(&src).unwrap();
        let cfg = build_cfg(&code);
        assert!(cfg.blocks().len() <= MAX_BLOCKS, "{src}");
        let mut m = Machine::new(&cfg, &code, SimConfig::default());
        let all = enumerate_all(&mut m, initial_state(&whole_contract()), 100_000);
        let cut = [TerminalKind::LoopBound, TerminalKind::StepLimit, TerminalKind::PathBudget, TerminalKind::SymbolicJump];
        assert!(all.iter().all(|t| !cut.contains(&t.kind)), "{src}");
    }
}
