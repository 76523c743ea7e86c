use std::fmt;

use serde::{Deserialize, Serialize};

/// Coarse opcode categories used by the simulator to pick a transfer rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpcodeClass {
    StackOnly,
    LoadStore,
    Call,
    ControlFlow,
    Environment,
    Halt,
    Invalid,
}

/// A single EVM opcode byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Opcode(pub u8);

#[derive(Debug, Clone, Copy)]
struct OpInfo {
    name: &'static str,
    pops: u8,
    pushes: u8,
    class: OpcodeClass,
}

const fn op(name: &'static str, pops: u8, pushes: u8, class: OpcodeClass) -> Option<OpInfo> {
    Some(OpInfo { name, pops, pushes, class })
}

#[rustfmt::skip]
const PUSH_NAMES: [&str; 33] = [
    "PUSH0", "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9",
    "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18",
    "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27",
    "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
#[rustfmt::skip]
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
#[rustfmt::skip]
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

const TABLE: [Option<OpInfo>; 256] = build_table();

const fn build_table() -> [Option<OpInfo>; 256] {
    use OpcodeClass::*;
    let mut t: [Option<OpInfo>; 256] = [None; 256];
    t[0x00] = op("STOP", 0, 0, Halt);
    t[0x01] = op("ADD", 2, 1, StackOnly);
    t[0x02] = op("MUL", 2, 1, StackOnly);
    t[0x03] = op("SUB", 2, 1, StackOnly);
    t[0x04] = op("DIV", 2, 1, StackOnly);
    t[0x05] = op("SDIV", 2, 1, StackOnly);
    t[0x06] = op("MOD", 2, 1, StackOnly);
    t[0x07] = op("SMOD", 2, 1, StackOnly);
    t[0x08] = op("ADDMOD", 3, 1, StackOnly);
    t[0x09] = op("MULMOD", 3, 1, StackOnly);
    t[0x0a] = op("EXP", 2, 1, StackOnly);
    t[0x0b] = op("SIGNEXTEND", 2, 1, StackOnly);
    t[0x10] = op("LT", 2, 1, StackOnly);
    t[0x11] = op("GT", 2, 1, StackOnly);
    t[0x12] = op("SLT", 2, 1, StackOnly);
    t[0x13] = op("SGT", 2, 1, StackOnly);
    t[0x14] = op("EQ", 2, 1, StackOnly);
    t[0x15] = op("ISZERO", 1, 1, StackOnly);
    t[0x16] = op("AND", 2, 1, StackOnly);
    t[0x17] = op("OR", 2, 1, StackOnly);
    t[0x18] = op("XOR", 2, 1, StackOnly);
    t[0x19] = op("NOT", 1, 1, StackOnly);
    t[0x1a] = op("BYTE", 2, 1, StackOnly);
    t[0x1b] = op("SHL", 2, 1, StackOnly);
    t[0x1c] = op("SHR", 2, 1, StackOnly);
    t[0x1d] = op("SAR", 2, 1, StackOnly);
    t[0x20] = op("KECCAK256", 2, 1, LoadStore);
    t[0x30] = op("ADDRESS", 0, 1, Environment);
    t[0x31] = op("BALANCE", 1, 1, Environment);
    t[0x32] = op("ORIGIN", 0, 1, Environment);
    t[0x33] = op("CALLER", 0, 1, Environment);
    t[0x34] = op("CALLVALUE", 0, 1, Environment);
    t[0x35] = op("CALLDATALOAD", 1, 1, LoadStore);
    t[0x36] = op("CALLDATASIZE", 0, 1, Environment);
    t[0x37] = op("CALLDATACOPY", 3, 0, LoadStore);
    t[0x38] = op("CODESIZE", 0, 1, Environment);
    t[0x39] = op("CODECOPY", 3, 0, LoadStore);
    t[0x3a] = op("GASPRICE", 0, 1, Environment);
    t[0x3b] = op("EXTCODESIZE", 1, 1, Environment);
    t[0x3c] = op("EXTCODECOPY", 4, 0, LoadStore);
    t[0x3d] = op("RETURNDATASIZE", 0, 1, Environment);
    t[0x3e] = op("RETURNDATACOPY", 3, 0, LoadStore);
    t[0x3f] = op("EXTCODEHASH", 1, 1, Environment);
    t[0x40] = op("BLOCKHASH", 1, 1, Environment);
    t[0x41] = op("COINBASE", 0, 1, Environment);
    t[0x42] = op("TIMESTAMP", 0, 1, Environment);
    t[0x43] = op("NUMBER", 0, 1, Environment);
    t[0x44] = op("PREVRANDAO", 0, 1, Environment);
    t[0x45] = op("GASLIMIT", 0, 1, Environment);
    t[0x46] = op("CHAINID", 0, 1, Environment);
    t[0x47] = op("SELFBALANCE", 0, 1, Environment);
    t[0x48] = op("BASEFEE", 0, 1, Environment);
    t[0x49] = op("BLOBHASH", 1, 1, Environment);
    t[0x4a] = op("BLOBBASEFEE", 0, 1, Environment);
    t[0x50] = op("POP", 1, 0, StackOnly);
    t[0x51] = op("MLOAD", 1, 1, LoadStore);
    t[0x52] = op("MSTORE", 2, 0, LoadStore);
    t[0x53] = op("MSTORE8", 2, 0, LoadStore);
    t[0x54] = op("SLOAD", 1, 1, LoadStore);
    t[0x55] = op("SSTORE", 2, 0, LoadStore);
    t[0x56] = op("JUMP", 1, 0, ControlFlow);
    t[0x57] = op("JUMPI", 2, 0, ControlFlow);
    t[0x58] = op("PC", 0, 1, Environment);
    t[0x59] = op("MSIZE", 0, 1, Environment);
    t[0x5a] = op("GAS", 0, 1, Environment);
    t[0x5b] = op("JUMPDEST", 0, 0, ControlFlow);
    t[0x5c] = op("TLOAD", 1, 1, LoadStore);
    t[0x5d] = op("TSTORE", 2, 0, LoadStore);
    t[0x5e] = op("MCOPY", 3, 0, LoadStore);
    let mut i = 0;
    while i < 33 {
        t[0x5f + i] = op(PUSH_NAMES[i], 0, 1, StackOnly);
        i += 1;
    }
    let mut i = 0;
    while i < 16 {
        t[0x80 + i] = op(DUP_NAMES[i], i as u8 + 1, i as u8 + 2, StackOnly);
        t[0x90 + i] = op(SWAP_NAMES[i], i as u8 + 2, i as u8 + 2, StackOnly);
        i += 1;
    }
    let mut i = 0;
    while i < 5 {
        t[0xa0 + i] = op(LOG_NAMES[i], i as u8 + 2, 0, Environment);
        i += 1;
    }
    t[0xf0] = op("CREATE", 3, 1, Call);
    t[0xf1] = op("CALL", 7, 1, Call);
    t[0xf2] = op("CALLCODE", 7, 1, Call);
    t[0xf3] = op("RETURN", 2, 0, Halt);
    t[0xf4] = op("DELEGATECALL", 6, 1, Call);
    t[0xf5] = op("CREATE2", 4, 1, Call);
    t[0xfa] = op("STATICCALL", 6, 1, Call);
    t[0xfd] = op("REVERT", 2, 0, Halt);
    t[0xfe] = op("INVALID", 0, 0, Halt);
    t[0xff] = op("SELFDESTRUCT", 1, 0, Call);
    t
}

#[allow(missing_docs)]
impl Opcode {
    pub const STOP: Opcode = Opcode(0x00);
    pub const ADD: Opcode = Opcode(0x01);
    pub const MUL: Opcode = Opcode(0x02);
    pub const SUB: Opcode = Opcode(0x03);
    pub const DIV: Opcode = Opcode(0x04);
    pub const SDIV: Opcode = Opcode(0x05);
    pub const MOD: Opcode = Opcode(0x06);
    pub const SMOD: Opcode = Opcode(0x07);
    pub const ADDMOD: Opcode = Opcode(0x08);
    pub const MULMOD: Opcode = Opcode(0x09);
    pub const EXP: Opcode = Opcode(0x0a);
    pub const SIGNEXTEND: Opcode = Opcode(0x0b);
    pub const LT: Opcode = Opcode(0x10);
    pub const GT: Opcode = Opcode(0x11);
    pub const SLT: Opcode = Opcode(0x12);
    pub const SGT: Opcode = Opcode(0x13);
    pub const EQ: Opcode = Opcode(0x14);
    pub const ISZERO: Opcode = Opcode(0x15);
    pub const AND: Opcode = Opcode(0x16);
    pub const OR: Opcode = Opcode(0x17);
    pub const XOR: Opcode = Opcode(0x18);
    pub const NOT: Opcode = Opcode(0x19);
    pub const BYTE: Opcode = Opcode(0x1a);
    pub const SHL: Opcode = Opcode(0x1b);
    pub const SHR: Opcode = Opcode(0x1c);
    pub const SAR: Opcode = Opcode(0x1d);
    pub const KECCAK256: Opcode = Opcode(0x20);
    pub const ADDRESS: Opcode = Opcode(0x30);
    pub const BALANCE: Opcode = Opcode(0x31);
    pub const ORIGIN: Opcode = Opcode(0x32);
    pub const CALLER: Opcode = Opcode(0x33);
    pub const CALLVALUE: Opcode = Opcode(0x34);
    pub const CALLDATALOAD: Opcode = Opcode(0x35);
    pub const CALLDATASIZE: Opcode = Opcode(0x36);
    pub const CALLDATACOPY: Opcode = Opcode(0x37);
    pub const CODESIZE: Opcode = Opcode(0x38);
    pub const CODECOPY: Opcode = Opcode(0x39);
    pub const GASPRICE: Opcode = Opcode(0x3a);
    pub const EXTCODESIZE: Opcode = Opcode(0x3b);
    pub const EXTCODECOPY: Opcode = Opcode(0x3c);
    pub const RETURNDATASIZE: Opcode = Opcode(0x3d);
    pub const RETURNDATACOPY: Opcode = Opcode(0x3e);
    pub const EXTCODEHASH: Opcode = Opcode(0x3f);
    pub const BLOCKHASH: Opcode = Opcode(0x40);
    pub const COINBASE: Opcode = Opcode(0x41);
    pub const TIMESTAMP: Opcode = Opcode(0x42);
    pub const NUMBER: Opcode = Opcode(0x43);
    pub const PREVRANDAO: Opcode = Opcode(0x44);
    pub const GASLIMIT: Opcode = Opcode(0x45);
    pub const CHAINID: Opcode = Opcode(0x46);
    pub const SELFBALANCE: Opcode = Opcode(0x47);
    pub const BASEFEE: Opcode = Opcode(0x48);
    pub const BLOBHASH: Opcode = Opcode(0x49);
    pub const BLOBBASEFEE: Opcode = Opcode(0x4a);
    pub const POP: Opcode = Opcode(0x50);
    pub const MLOAD: Opcode = Opcode(0x51);
    pub const MSTORE: Opcode = Opcode(0x52);
    pub const MSTORE8: Opcode = Opcode(0x53);
    pub const SLOAD: Opcode = Opcode(0x54);
    pub const SSTORE: Opcode = Opcode(0x55);
    pub const JUMP: Opcode = Opcode(0x56);
    pub const JUMPI: Opcode = Opcode(0x57);
    pub const PC: Opcode = Opcode(0x58);
    pub const MSIZE: Opcode = Opcode(0x59);
    pub const GAS: Opcode = Opcode(0x5a);
    pub const JUMPDEST: Opcode = Opcode(0x5b);
    pub const TLOAD: Opcode = Opcode(0x5c);
    pub const TSTORE: Opcode = Opcode(0x5d);
    pub const MCOPY: Opcode = Opcode(0x5e);
    pub const PUSH0: Opcode = Opcode(0x5f);
    pub const PUSH1: Opcode = Opcode(0x60);
    pub const PUSH2: Opcode = Opcode(0x61);
    pub const PUSH4: Opcode = Opcode(0x63);
    pub const PUSH20: Opcode = Opcode(0x73);
    pub const PUSH32: Opcode = Opcode(0x7f);
    pub const DUP1: Opcode = Opcode(0x80);
    pub const DUP2: Opcode = Opcode(0x81);
    pub const DUP3: Opcode = Opcode(0x82);
    pub const SWAP1: Opcode = Opcode(0x90);
    pub const SWAP2: Opcode = Opcode(0x91);
    pub const LOG0: Opcode = Opcode(0xa0);
    pub const CREATE: Opcode = Opcode(0xf0);
    pub const CALL: Opcode = Opcode(0xf1);
    pub const CALLCODE: Opcode = Opcode(0xf2);
    pub const RETURN: Opcode = Opcode(0xf3);
    pub const DELEGATECALL: Opcode = Opcode(0xf4);
    pub const CREATE2: Opcode = Opcode(0xf5);
    pub const STATICCALL: Opcode = Opcode(0xfa);
    pub const REVERT: Opcode = Opcode(0xfd);
    pub const INVALID: Opcode = Opcode(0xfe);
    pub const SELFDESTRUCT: Opcode = Opcode(0xff);

    /// `PUSHn` for `n` in `0..=32`.
    pub const fn push(n: u8) -> Opcode {
        assert!(n <= 32);
        Opcode(0x5f + n)
    }

    /// `DUPn` for `n` in `1..=16`.
    pub const fn dup(n: u8) -> Opcode {
        assert!(n >= 1 && n <= 16);
        Opcode(0x7f + n)
    }

    /// `SWAPn` for `n` in `1..=16`.
    pub const fn swap(n: u8) -> Opcode {
        assert!(n >= 1 && n <= 16);
        Opcode(0x8f + n)
    }

    fn info(self) -> Option<&'static OpInfo> {
        TABLE[self.0 as usize].as_ref()
    }

    pub fn is_defined(self) -> bool {
        self.info().is_some()
    }

    pub fn name(self) -> &'static str {
        self.info().map_or("UNKNOWN", |i| i.name)
    }

    /// Looks up a defined opcode by mnemonic (case-insensitive). `SHA3` is
    /// accepted for KECCAK256.
    pub fn from_name(name: &str) -> Option<Opcode> {
        let upper = name.to_ascii_uppercase();
        let upper = if upper == "SHA3" { "KECCAK256".to_string() } else { upper };
        (0..=255u8).map(Opcode).find(|op| op.is_defined() && op.name() == upper)
    }

    pub fn class(self) -> OpcodeClass {
        self.info().map_or(OpcodeClass::Invalid, |i| i.class)
    }

    /// `(pops, pushes)`; undefined bytes behave like INVALID.
    pub fn stack_io(self) -> (usize, usize) {
        self.info().map_or((0, 0), |i| (i.pops as usize, i.pushes as usize))
    }

    /// Number of immediate bytes following the opcode (PUSH1..PUSH32).
    pub fn immediate_len(self) -> usize {
        match self.0 {
            0x60..=0x7f => (self.0 - 0x5f) as usize,
            _ => 0,
        }
    }

    pub fn is_push(self) -> bool {
        (0x5f..=0x7f).contains(&self.0)
    }

    pub fn dup_depth(self) -> Option<usize> {
        matches!(self.0, 0x80..=0x8f).then(|| (self.0 - 0x7f) as usize)
    }

    pub fn swap_depth(self) -> Option<usize> {
        matches!(self.0, 0x90..=0x9f).then(|| (self.0 - 0x8f) as usize)
    }

    /// Ends a basic block: jumps, halts, SELFDESTRUCT and undefined bytes.
    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::JUMP | Opcode::JUMPI | Opcode::SELFDESTRUCT)
            || matches!(self.class(), OpcodeClass::Halt | OpcodeClass::Invalid)
    }

    pub fn is_external_call(self) -> bool {
        matches!(
            self,
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_defined() {
            f.write_str(self.name())
        } else {
            write!(f, "UNKNOWN(0x{:02x})", self.0)
        }
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
