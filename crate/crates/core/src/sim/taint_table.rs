// Table of taint propagation rules, shared textually by the unit tests and
// the acceptance suite. The includer brings the sim types and `Word` into scope.

const CALL_PARAM: &str = "PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 4 CALLDATALOAD GAS CALL";
const MASK: &str = "PUSH20 0xffffffffffffffffffffffffffffffffffffffff";
const USDT: &str = "PUSH20 0xdac17f958d2ee523a2206206994597c13d831ec7";

#[derive(Clone, Copy)]
struct Expect {
    tainted: bool,
    kinds: &'static [SourceKind],
    cd_any: &'static [u32],
    /// `None` means the same as `cd_any`.
    cd_clean: Option<&'static [u32]>,
    calls: &'static [CallId],
    guards: &'static [(u32, GuardKind)],
    storage: bool,
    concrete: Option<u64>,
}

const CLEAN: Expect = Expect {
    tainted: false,
    kinds: &[],
    cd_any: &[],
    cd_clean: None,
    calls: &[],
    guards: &[],
    storage: false,
    concrete: None,
};

const PARAM: Expect = Expect { tainted: true, kinds: &[CallDataLoad], cd_any: &[4], ..CLEAN };

fn table() -> Vec<(&'static str, String, Expect)> {
    let s = |x: &str| x.to_string();
    vec![
        ("calldataload at a constant offset", s("PUSH 4 CALLDATALOAD"), PARAM),
        ("calldataload at a derived offset", s("PUSH 4 CALLDATALOAD PUSH 4 ADD CALLDATALOAD"), PARAM),
        ("unary and binary ops keep taint", s("PUSH 4 CALLDATALOAD PUSH 7 MUL NOT"), PARAM),
        (
            "binary op unions both operands",
            s("PUSH 4 CALLDATALOAD PUSH 0x24 CALLDATALOAD ADD"),
            Expect { cd_any: &[4, 0x24], ..PARAM },
        ),
        ("constants fold untainted", s("PUSH 2 PUSH 3 ADD"), Expect { concrete: Some(5), ..CLEAN }),
        ("stack shuffles move taint", s("PUSH 4 CALLDATALOAD PUSH 1 SWAP1"), PARAM),
        ("dup copies taint", s("PUSH 4 CALLDATALOAD PUSH 1 POP DUP1"), PARAM),
        ("caller is a source", s("CALLER"), Expect { tainted: true, kinds: &[Caller], ..CLEAN }),
        ("origin is a source", s("ORIGIN"), Expect { tainted: true, kinds: &[Origin], ..CLEAN }),
        ("callvalue is a source", s("CALLVALUE"), Expect { tainted: true, kinds: &[CallValue], ..CLEAN }),
        ("balance is a source", s("ADDRESS BALANCE"), Expect { tainted: true, kinds: &[Balance], ..CLEAN }),
        ("selfbalance is not a source", s("SELFBALANCE"), CLEAN),
        ("memory word round trip", s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE PUSH 0x80 MLOAD"), PARAM),
        (
            "disjoint memory word reads zero",
            s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE PUSH 0xa0 MLOAD"),
            Expect { concrete: Some(0), ..CLEAN },
        ),
        ("misaligned read sees overlap", s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE PUSH 0x90 MLOAD"), PARAM),
        ("single byte store", s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE8 PUSH 0x61 MLOAD"), PARAM),
        (
            "overwrite clears taint",
            s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE PUSH 1 PUSH 0x80 MSTORE PUSH 0x80 MLOAD"),
            Expect { concrete: Some(1), ..CLEAN },
        ),
        ("store through a tainted pointer", s("PUSH 1 PUSH 4 CALLDATALOAD MSTORE PUSH 4 CALLDATALOAD MLOAD"), PARAM),
        ("storage round trip", s("PUSH 4 CALLDATALOAD PUSH 9 SSTORE PUSH 9 SLOAD"), PARAM),
        ("untouched slot is clean", s("PUSH 9 SLOAD"), Expect { storage: true, ..CLEAN }),
        (
            "slot keyed by a parameter",
            s("PUSH 4 CALLDATALOAD SLOAD"),
            Expect { guards: &[(4, Mapping)], ..PARAM },
        ),
        (
            "mapping lookup",
            s("PUSH 4 CALLDATALOAD PUSH 0 MSTORE PUSH 1 PUSH 0x20 MSTORE PUSH 0x40 PUSH 0 KECCAK256 SLOAD"),
            Expect { guards: &[(4, Mapping)], ..PARAM },
        ),
        ("transient storage round trip", s("PUSH 4 CALLDATALOAD PUSH 9 TSTORE PUSH 9 TLOAD"), PARAM),
        (
            "calldatacopy",
            s("PUSH 0x20 PUSH 4 PUSH 0x80 CALLDATACOPY PUSH 0x80 MLOAD"),
            Expect { kinds: &[CallDataCopy], ..PARAM },
        ),
        ("hash of tainted memory", s("PUSH 4 CALLDATALOAD PUSH 0 MSTORE PUSH 0x20 PUSH 0 KECCAK256"), PARAM),
        (
            "hash of constant memory folds",
            s("PUSH 0x20 PUSH 0 KECCAK256"),
            Expect { concrete: None, ..CLEAN },
        ),
        (
            "mcopy",
            s("PUSH 4 CALLDATALOAD PUSH 0x80 MSTORE PUSH 0x20 PUSH 0x80 PUSH 0x100 MCOPY PUSH 0x100 MLOAD"),
            PARAM,
        ),
        (
            "call to a parameter taints the status",
            s(CALL_PARAM),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
        ("call to a constant is clean", s("PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0xbeef GAS CALL"), CLEAN),
        (
            "staticcall to a parameter",
            s("PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 4 CALLDATALOAD GAS STATICCALL"),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
        (
            "return data of a parameter call",
            format!("{CALL_PARAM} POP PUSH 0x20 PUSH 0 PUSH 0x80 RETURNDATACOPY PUSH 0x80 MLOAD"),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
        (
            "return data size of a parameter call",
            format!("{CALL_PARAM} POP RETURNDATASIZE"),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
        (
            "output region of a parameter call",
            s("PUSH 0x20 PUSH 0x80 PUSH 0 PUSH 0 PUSH 0 PUSH 4 CALLDATALOAD GAS CALL POP PUSH 0x80 MLOAD"),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
        (
            "return data of a constant call is clean",
            s("PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0xbeef GAS CALL POP RETURNDATASIZE"),
            CLEAN,
        ),
        ("masking keeps taint", format!("PUSH 4 CALLDATALOAD {MASK} AND"), PARAM),
        (
            "equality with an address constant guards",
            format!("PUSH 4 CALLDATALOAD {USDT} EQ"),
            Expect { guards: &[(4, Compare)], ..PARAM },
        ),
        ("equality with a small constant does not guard", s("PUSH 4 CALLDATALOAD PUSH 1 EQ"), PARAM),
        (
            "equality with a stored value guards",
            s("PUSH 4 CALLDATALOAD PUSH 0 SLOAD EQ"),
            Expect { guards: &[(4, Compare)], ..PARAM },
        ),
        (
            "negation keeps the guard",
            format!("PUSH 4 CALLDATALOAD {MASK} AND {USDT} EQ ISZERO"),
            Expect { guards: &[(4, Compare)], ..PARAM },
        ),
        (
            "subtraction as an equality test guards",
            s("PUSH 0 SLOAD PUSH 4 CALLDATALOAD SUB"),
            Expect { guards: &[(4, Compare)], ..PARAM },
        ),
        (
            "equality between two parameters does not guard",
            s("PUSH 4 CALLDATALOAD PUSH 0x24 CALLDATALOAD EQ"),
            Expect { cd_any: &[4, 0x24], ..PARAM },
        ),
        ("branch condition does not taint later values", s("PUSH 4 CALLDATALOAD @x JUMPI x: PUSH 1"), Expect { concrete: Some(1), ..CLEAN }),
        (
            "branch leaves other operands untouched",
            s("CALLER PUSH 4 CALLDATALOAD @x JUMPI x:"),
            Expect { tainted: true, kinds: &[Caller], ..CLEAN },
        ),
        (
            "call result compared to storage does not guard the parameter",
            format!("{CALL_PARAM} PUSH 0 SLOAD EQ"),
            Expect { kinds: &[CallDataLoad, ExtCallResult], cd_clean: Some(&[]), calls: &[0], ..PARAM },
        ),
    ]
}

/// Runs every row through `top_after` and returns one line per mismatch.
fn taint_rule_failures(top_after: impl Fn(&str) -> Value) -> Vec<String> {
    let mut failures = Vec::new();
    for (name, src, want) in table() {
        let v = top_after(&src);
        let summary = v.summary().cloned().unwrap_or_default();
        let kinds: Vec<SourceKind> = summary.kinds().collect();
        let guards: Vec<(u32, GuardKind)> = v.tags.guards.iter().map(|g| (g.calldata_offset, g.kind)).collect();
        let checks = [
            (v.is_tainted() == want.tainted, format!("tainted={}", v.is_tainted())),
            (kinds == want.kinds, format!("kinds={kinds:?}")),
            (v.cd_any() == want.cd_any, format!("cd_any={:?}", v.cd_any())),
            (v.cd_clean() == want.cd_clean.unwrap_or(want.cd_any), format!("cd_clean={:?}", v.cd_clean())),
            (v.calls() == want.calls, format!("calls={:?}", v.calls())),
            (guards == want.guards, format!("guards={guards:?}")),
            (v.tags.storage == want.storage, format!("storage={}", v.tags.storage)),
            (
                want.concrete.is_none_or(|c| v.concrete() == Some(Word::from(c))),
                format!("word={:?}", v.word),
            ),
        ];
        for (ok, got) in checks {
            if !ok {
                failures.push(format!("{name}: {got}"));
            }
        }
    }
    failures
}
