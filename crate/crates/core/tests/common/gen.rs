//! Random loop-free single-function contracts for cross-checking the
//! prioritized search against exhaustive enumeration.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

const MASK: &str = "PUSH20 0xffffffffffffffffffffffffffffffffffffffff";
const TRUSTED: &str = "PUSH20 0xdac17f958d2ee523a2206206994597c13d831ec7";
/// Memory slot holding the most recent call status.
const STATUS: &str = "PUSH2 0x0100";

pub const MAX_BLOCKS: usize = 12;
pub const MAX_BRANCHES: usize = 8;

fn param(off: u32) -> String {
    format!("PUSH {off} CALLDATALOAD {MASK} AND")
}

fn statement(rng: &mut StdRng) -> String {
    let p = param(if rng.gen_bool(0.8) { 4 } else { 0x24 });
    let slot = rng.gen_range(0..4);
    match rng.gen_range(0..12) {
        0..=2 => format!("PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 {p} GAS CALL {STATUS} MSTORE"),
        3 => format!("PUSH 0 PUSH 0 PUSH 0 PUSH 0 {p} GAS STATICCALL {STATUS} MSTORE"),
        4 => format!("PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 {TRUSTED} GAS CALL {STATUS} MSTORE"),
        5 | 6 => format!("{STATUS} MLOAD PUSH {slot} SSTORE"),
        7 => format!("PUSH 1 PUSH {slot} SSTORE"),
        8 => format!("PUSH 0x20 PUSH 0 PUSH 0x200 RETURNDATACOPY PUSH 0x200 MLOAD PUSH {slot} SSTORE"),
        9 => "PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 0 CALLER GAS CALL POP".to_string(),
        10 => "PUSH 0 PUSH 0 PUSH 0 PUSH 0 PUSH 1 CALLER GAS CALL POP".to_string(),
        _ => "PUSH 0 PUSH 0 LOG0".to_string(),
    }
}

fn condition(rng: &mut StdRng) -> String {
    let p = param(4);
    match rng.gen_range(0..8) {
        0 => format!("{p} {TRUSTED} EQ"),
        1 => format!("{p} PUSH 0x10 SLOAD EQ ISZERO"),
        2 => format!("{p} PUSH 0 MSTORE PUSH 5 PUSH 0x20 MSTORE PUSH 0x40 PUSH 0 KECCAK256 SLOAD"),
        3 => p,
        4 => "PUSH 0x44 CALLDATALOAD".to_string(),
        5 => format!("{STATUS} MLOAD"),
        6 => format!("{STATUS} MLOAD ISZERO"),
        _ => "PUSH 0x10 SLOAD".to_string(),
    }
}

fn halt(rng: &mut StdRng) -> &'static str {
    ["STOP", "STOP", "PUSH 0 PUSH 0 RETURN", "PUSH 0 DUP1 REVERT", "INVALID"].choose(rng).unwrap()
}

/// Assembly text for a contract of at most [`MAX_BLOCKS`] blocks whose jumps
/// all go forward.
pub fn random_contract(rng: &mut StdRng) -> String {
    let n = rng.gen_range(2..=MAX_BLOCKS);
    let mut branches = 0;
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(&format!("b{i}: "));
        }
        for _ in 0..rng.gen_range(0..4) {
            out.push_str(&statement(rng));
            out.push(' ');
        }
        let last = i + 1 == n;
        let choice = if last { 0 } else { rng.gen_range(0..6) };
        match choice {
            0 => out.push_str(halt(rng)),
            1..=3 if branches < MAX_BRANCHES => {
                branches += 1;
                let to = rng.gen_range(i + 1..n);
                // A JUMPI to the very next block adds no path, so skip one ahead when possible.
                let to = if to == i + 1 && i + 2 < n { i + 2 } else { to };
                out.push_str(&format!("{} @b{to} JUMPI", condition(rng)));
            }
            4 => {
                let to = rng.gen_range(i + 1..n);
                out.push_str(&format!("@b{to} JUMP"));
            }
            _ => {}
        }
        out.push('\n');
    }
    out
}
