mod common;

use avscan::asm::assemble_text;
use avscan::bytecode::{CodeOrigin, RawCode};
use avscan::cfg::{build_cfg, AddressFunction, FunctionCandidate, ParamInfo, ParamKind};
use avscan::detector::{analyze_function, verdict_over, DetectorConfig, VerificationMode};
use avscan::report::{analyze, AnalyzeOptions, Report};
use avscan::sim::{enumerate_all, initial_state, Machine, SimConfig};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use common::gen::random_contract;

fn address_param() -> AddressFunction {
    AddressFunction {
        func: FunctionCandidate {
            selector: None,
            entry: 0,
            entry_offset: 0,
            entry_depth: 0,
            entry_stack: Vec::new(),
            entry_memory: Vec::new(),
        },
        params: vec![ParamInfo { index: 0, calldata_offset: 4, kind: ParamKind::Address }],
    }
}

fn flagged(code: &[u8], mode: VerificationMode) -> bool {
    let cfg = build_cfg(code);
    let config = DetectorConfig { mode, ..DetectorConfig::default() };
    analyze_function(&cfg, code, &address_param(), &config, None).1.is_some()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn search_agrees_with_enumeration(seed in any::<u64>(), strict in any::<bool>()) {
        let src = random_contract(&mut StdRng::seed_from_u64(seed));
        let code = assemble_text(&src).unwrap();
        let mode = if strict { VerificationMode::Strict } else { VerificationMode::Whitelist };
        let cfg = build_cfg(&code);
        let mut m = Machine::new(&cfg, &code, SimConfig::default());
        let all = enumerate_all(&mut m, initial_state(&address_param().func), 100_000);
        prop_assert_eq!(flagged(&code, mode), verdict_over(&all, &address_param(), mode), "{}", src);
    }

    /// Counting more checks as verification can only remove findings.
    #[test]
    fn looser_verification_flags_a_subset(seed in any::<u64>()) {
        let src = random_contract(&mut StdRng::seed_from_u64(seed));
        let code = assemble_text(&src).unwrap();
        let literal = flagged(&code, VerificationMode::Literal);
        let whitelist = flagged(&code, VerificationMode::Whitelist);
        let strict = flagged(&code, VerificationMode::Strict);
        prop_assert!(!literal || whitelist, "{}", src);
        prop_assert!(!whitelist || strict, "{}", src);
    }

    #[test]
    fn arbitrary_bytes_give_a_report_that_round_trips(code in proptest::collection::vec(any::<u8>(), 1..600)) {
        let raw = RawCode::new(code, CodeOrigin::BinaryFile).unwrap();
        let opts = AnalyzeOptions { timeout: std::time::Duration::from_secs(10), ..AnalyzeOptions::default() };
        let report = analyze(&raw, "fuzz", &opts).report;
        let back: Report = serde_json::from_str(&report.to_json()).unwrap();
        prop_assert_eq!(back, report);
    }

    #[test]
    fn analysis_is_deterministic(seed in any::<u64>()) {
        let src = random_contract(&mut StdRng::seed_from_u64(seed));
        let raw = RawCode::new(assemble_text(&src).unwrap(), CodeOrigin::HexString).unwrap();
        let a = analyze(&raw, "x", &AnalyzeOptions::default()).report;
        let b = analyze(&raw, "x", &AnalyzeOptions::default()).report;
        prop_assert_eq!(a.to_json_without_timings(), b.to_json_without_timings());
    }
}
