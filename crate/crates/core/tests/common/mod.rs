//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod gen;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use avscan::bytecode::{decode_hex, RawCode};
use avscan::watcher::{Recording, RecordingBuilder};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn replay_trace_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/replay_100.json")
}

#[derive(Debug, Clone, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub deploy: String,
    pub runtime: String,
    pub selectors: BTreeMap<String, String>,
}

impl Fixture {
    pub fn deploy_code(&self) -> RawCode {
        decode_hex(&self.deploy).unwrap()
    }

    pub fn runtime_bytes(&self) -> Vec<u8> {
        hex::decode(&self.runtime).unwrap()
    }

    /// Selector of a signature as the reports print it.
    pub fn selector(&self, signature: &str) -> String {
        format!("0x{}", self.selectors[signature])
    }
}

pub fn fixture(name: &str) -> Fixture {
    let p = fixtures_dir().join("compiled").join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn all_fixtures() -> Vec<Fixture> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(fixtures_dir().join("compiled"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    names.iter().map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()).collect()
}

#[derive(Debug, Clone, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub quadrant: String,
    pub vulnerable: bool,
    /// (function signature, parameter index)
    pub findings: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PhaseProbe {
    pub name: String,
    pub function: String,
    pub param: usize,
    /// "V", "EC" or "SM".
    pub stops_at: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Manifest {
    pub benchmark: Vec<BenchEntry>,
    pub phase_probes: Vec<PhaseProbe>,
}

pub fn manifest() -> Manifest {
    let p = fixtures_dir().join("manifest.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes each fixture's creation code as `<name>.hex` into `dir`.
pub fn write_corpus(dir: &Path, fixtures: &[Fixture]) {
    std::fs::create_dir_all(dir).unwrap();
    for f in fixtures {
        std::fs::write(dir.join(format!("{}.hex", f.name)), format!("0x{}\n", f.deploy)).unwrap();
    }
}

const TIMING_KEYS: [&str; 7] = ["total_ms", "cfg_ms", "filter_ms", "search_ms", "avg_time_ms", "median_time_ms", "time_ms"];

/// Zeroes every timing field in a report or summary.
pub fn strip_timings(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m.iter_mut() {
                if TIMING_KEYS.contains(&k.as_str()) {
                    *x = serde_json::Value::from(0);
                } else {
                    strip_timings(x);
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

/// The 100-block synthetic chain segment used for replay tests. Deployments
/// arrive at roughly the mainnet rate and reuse the compiled fixtures; a few
/// blocks hold a repeated deployment, factory creations and a failed creation.
pub fn replay_recording() -> Recording {
    let fixtures = all_fixtures();
    let mut rng = StdRng::seed_from_u64(0x5eed_0100);
    let senders: Vec<[u8; 20]> = (0..8u8).map(|i| [0x10 + i; 20]).collect();
    let factory = [0xfa; 20];
    let by_name = |n: &str| fixtures.iter().find(|f| f.name == n).unwrap().runtime_bytes();
    let mut b = RecordingBuilder::new(1, 18_000_000, 1_700_000_000, 12);
    for i in 0..100u32 {
        b.block();
        for _ in 0..rng.gen_range(0..4) {
            let s = senders[rng.gen_range(0..senders.len())];
            b.call(s);
        }
        let roll: f64 = rng.gen();
        let count = if roll < 0.05 { 2 } else if roll < 0.40 { 1 } else { 0 };
        for _ in 0..count {
            let s = senders[rng.gen_range(0..senders.len())];
            let f = &fixtures[rng.gen_range(0..fixtures.len())];
            b.create(s, &f.runtime_bytes());
        }
        match i {
            10 | 11 => {
                b.create(senders[i as usize % 8], &by_name("p4_vault"));
            }
            20 => {
                b.factory_create(senders[0], factory, &by_name("p2_slip"));
            }
            30 => {
                b.failed_create(senders[1]);
            }
            55 => {
                b.factory_create(senders[2], factory, &by_name("n2_lending"));
            }
            _ => {}
        }
    }
    b.build()
}
