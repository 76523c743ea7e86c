use super::*;
use crate::asm::assemble_text;
use crate::report::{analyze, AnalyzeOptions};

pub(crate) fn vulnerable_code() -> Vec<u8> {
    assemble_text(
        "PUSH 0 CALLDATALOAD PUSH 0xe0 SHR
         PUSH4 0x47e7ef24 EQ @f JUMPI STOP
         f: PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0
            PUSH 4 CALLDATALOAD PUSH20 0xffffffffffffffffffffffffffffffffffffffff AND
            GAS CALL @ok JUMPI PUSH 0 DUP1 REVERT
         ok: PUSH 1 PUSH 0 SSTORE STOP",
    )
    .unwrap()
}

pub(crate) fn clean_code() -> Vec<u8> {
    assemble_text("PUSH 1 PUSH 0 SSTORE STOP").unwrap()
}

pub(crate) fn sample_alert(address: &str) -> Alert {
    let code = vulnerable_code();
    let raw = RawCode::new(code.clone(), CodeOrigin::RpcFetch).unwrap();
    let report = analyze(&raw, address, &AnalyzeOptions::default()).report;
    let d = Deployment {
        chain_id: 1,
        block_number: 7,
        block_timestamp: 100,
        tx_hash: "0x01".into(),
        address: address.into(),
        code_hash: code_hash(&code),
        factory: false,
        first_seen_ms: 5,
        code: Vec::new(),
    };
    Alert {
        key: AlertKey { chain_id: 1, address: address.into(), code_hash: d.code_hash.clone() },
        deployment: d,
        latency_secs: 1.5,
        report,
    }
}

const A: [u8; 20] = [0xa1; 20];
const B: [u8; 20] = [0xb2; 20];
const FACTORY: [u8; 20] = [0xfa; 20];

fn opts(dir: &std::path::Path) -> WatchOptions {
    WatchOptions {
        start: StartBlock::Number(100),
        workers: 2,
        sink: Sink::File(dir.join("alerts.jsonl")),
        state_dir: dir.join("state"),
        retry_base: Duration::from_millis(1),
        retry_max: Duration::from_millis(4),
        stop_at_head: true,
        ..WatchOptions::default()
    }
}

fn alerts(dir: &std::path::Path) -> Vec<Alert> {
    match std::fs::read_to_string(dir.join("alerts.jsonl")) {
        Ok(t) => t.lines().map(|l| serde_json::from_str(l).unwrap()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn start_block_parsing() {
    assert_eq!("latest".parse(), Ok(StartBlock::Latest));
    assert_eq!("123".parse(), Ok(StartBlock::Number(123)));
    assert_eq!("0x10".parse(), Ok(StartBlock::Number(16)));
    assert!("soon".parse::<StartBlock>().is_err());
}

#[test]
fn vulnerable_fixture_is_flagged() {
    assert_eq!(sample_alert("0x01").report.verdict, Verdict::Vulnerable);
}

#[test]
fn empty_blocks_yield_nothing_and_cursor_moves() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block().call(A).call(B);
    b.block();
    let rpc = ReplayRpc::new(&b.build());
    let stats = run_watch(&rpc, &opts(dir.path())).unwrap();
    assert_eq!((stats.blocks, stats.contracts, stats.alerts), (2, 0, 0));
    assert_eq!(stats.cursor, Some(101));
}

#[test]
fn creations_are_fetched_and_duplicates_share_one_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    let first = b.create(A, &vulnerable_code());
    b.create(B, &clean_code());
    b.failed_create(A);
    b.block();
    let second = b.create(B, &vulnerable_code());
    let rpc = ReplayRpc::new(&b.build());
    let stats = run_watch(&rpc, &opts(dir.path())).unwrap();
    assert_eq!(stats.contracts, 3);
    assert_eq!(stats.analyses, 2);
    assert_eq!(stats.alerts, 2);
    let got = alerts(dir.path());
    let addrs: Vec<&str> = got.iter().map(|a| a.deployment.address.as_str()).collect();
    assert_eq!(addrs.len(), 2);
    assert!(addrs.contains(&first.as_str()) && addrs.contains(&second.as_str()));
    assert_eq!(got[0].report, got[1].report);
    assert_eq!(got[0].deployment.code_hash, got[1].deployment.code_hash);
}

#[test]
fn factory_creations_come_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    let child = b.factory_create(A, FACTORY, &vulnerable_code());
    let rpc = ReplayRpc::new(&b.build());
    let stats = run_watch(&rpc, &opts(dir.path())).unwrap();
    assert_eq!((stats.contracts, stats.factory_contracts, stats.untraced_blocks), (1, 1, 0));
    let got = alerts(dir.path());
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].deployment.address, child);
    assert!(got[0].deployment.factory);
}

#[test]
fn without_traces_factory_creations_are_reported_missing() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12).traces(false);
    b.block();
    b.factory_create(A, FACTORY, &vulnerable_code());
    b.create(B, &vulnerable_code());
    b.block().call(A);
    let rpc = ReplayRpc::new(&b.build());
    let stats = run_watch(&rpc, &opts(dir.path())).unwrap();
    assert_eq!(stats.contracts, 1);
    assert_eq!(stats.untraced_blocks, 2);
    assert_eq!(alerts(dir.path()).len(), 1);
}

#[test]
fn outage_is_retried_without_losing_or_repeating_alerts() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    for i in 0..4 {
        b.block();
        b.create(if i % 2 == 0 { A } else { B }, &vulnerable_code());
    }
    let rec = b.build();
    let rpc = ReplayRpc::new(&rec).with_fault(Fault::Outage { from: 6, len: 5 });
    let stats = run_watch(&rpc, &opts(dir.path())).unwrap();
    assert_eq!(stats.rpc_retries, 5);
    assert_eq!(stats.alerts, 4);
    let keys: std::collections::HashSet<_> = alerts(dir.path()).iter().map(|a| a.key.clone()).collect();
    assert_eq!(keys.len(), 4);
}

#[test]
fn retries_are_bounded_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    let rpc = ReplayRpc::new(&b.build()).with_fault(Fault::Outage { from: 1, len: 100 });
    let o = WatchOptions { max_retries: Some(3), ..opts(dir.path()) };
    let err = run_watch(&rpc, &o).unwrap_err();
    assert!(matches!(err, WatchError::RetriesExhausted { attempts: 4, .. }));
    assert_eq!(Store::open(&o.state_dir).unwrap().cursor(), None);
}

#[test]
fn restart_resumes_from_cursor_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    for _ in 0..6 {
        b.block();
        b.create(A, &vulnerable_code());
    }
    let rec = b.build();
    let o = opts(dir.path());
    let crashed = ReplayRpc::new(&rec).with_fault(Fault::Crash { at: 12 });
    assert!(run_watch(&crashed, &o).is_err());
    let cursor = Store::open(&o.state_dir).unwrap().cursor().unwrap();
    assert!(cursor < 105);
    let before = alerts(dir.path()).len();
    let stats = run_watch(ReplayRpc::new(&rec), &o).unwrap();
    assert_eq!(stats.cursor, Some(105));
    let got = alerts(dir.path());
    assert_eq!(got.len(), 6);
    assert_eq!(before as u64 + stats.alerts, 6);
    let keys: std::collections::HashSet<_> = got.iter().map(|a| a.key.to_string()).collect();
    assert_eq!(keys.len(), 6);

    // A third run from an older start block changes nothing.
    let again = run_watch(ReplayRpc::new(&rec), &WatchOptions { start: StartBlock::Number(100), ..o }).unwrap();
    assert_eq!((again.blocks, again.alerts), (0, 0));
}

#[test]
fn reprocessing_a_block_suppresses_repeat_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    b.create(A, &vulnerable_code());
    let rec = b.build();
    let o = opts(dir.path());
    run_watch(ReplayRpc::new(&rec), &o).unwrap();
    // Forget the cursor but keep delivery records, as after a lost cursor write.
    let state = o.state_dir.join(STATE_FILE);
    let kept: Vec<String> = std::fs::read_to_string(&state)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"cursor\""))
        .map(String::from)
        .collect();
    std::fs::write(&state, kept.join("\n") + "\n").unwrap();
    let stats = run_watch(ReplayRpc::new(&rec), &o).unwrap();
    assert_eq!((stats.alerts, stats.duplicates), (0, 1));
    assert_eq!(alerts(dir.path()).len(), 1);
}

#[test]
fn failed_sink_keeps_alert_until_delivery() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    b.create(A, &vulnerable_code());
    let rec = b.build();
    let broken = WatchOptions { sink: Sink::File(dir.path().join("later/alerts.jsonl")), ..opts(dir.path()) };
    let stats = run_watch(ReplayRpc::new(&rec), &broken).unwrap();
    assert_eq!((stats.alerts, stats.pending), (0, 1));
    assert_eq!(stats.cursor, Some(100));

    std::fs::create_dir(dir.path().join("later")).unwrap();
    let stats = run_watch(ReplayRpc::new(&rec), &broken).unwrap();
    assert_eq!((stats.blocks, stats.alerts, stats.pending), (0, 1, 0));
    let text = std::fs::read_to_string(dir.path().join("later/alerts.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn chain_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    run_watch(ReplayRpc::new(&b.build()), &opts(dir.path())).unwrap();
    let mut other = RecordingBuilder::new(56, 100, 1_000, 3);
    other.block();
    let err = run_watch(ReplayRpc::new(&other.build()), &opts(dir.path())).unwrap_err();
    assert!(matches!(err, WatchError::ChainMismatch { stored: 1, node: 56 }));
}

#[test]
fn latest_starts_at_the_node_head() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    b.block();
    let o = WatchOptions { start: StartBlock::Latest, ..opts(dir.path()) };
    let stats = run_watch(ReplayRpc::new(&b.build()), &o).unwrap();
    assert_eq!(stats.cursor, Some(101));
}

#[test]
fn max_blocks_limits_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    for _ in 0..5 {
        b.block();
    }
    let o = WatchOptions { max_blocks: Some(2), ..opts(dir.path()) };
    let rec = b.build();
    assert_eq!(run_watch(ReplayRpc::new(&rec), &o).unwrap().cursor, Some(101));
    assert_eq!(run_watch(ReplayRpc::new(&rec), &o).unwrap().cursor, Some(103));
}

#[test]
fn small_queue_still_delivers_everything() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = RecordingBuilder::new(1, 100, 1_000, 12);
    b.block();
    for _ in 0..10 {
        b.create(A, &vulnerable_code());
    }
    let o = WatchOptions { queue_depth: 1, workers: 1, ..opts(dir.path()) };
    let stats = run_watch(ReplayRpc::new(&b.build()), &o).unwrap();
    assert_eq!((stats.contracts, stats.alerts, stats.analyses), (10, 10, 1));
}
