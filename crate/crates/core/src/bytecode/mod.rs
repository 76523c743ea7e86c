//! Hex decoding, linear-sweep disassembly and constructor/runtime splitting.

mod opcode;
mod runtime;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub use opcode::{Opcode, OpcodeClass};
pub use runtime::{extract_runtime, RuntimeDecision, RuntimeExtraction};

use crate::word::{self, Word};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BytecodeError {
    #[error("odd number of hex digits; dangling digit at index {position}")]
    OddLength { position: usize },
    #[error("non-hex character {ch:?} at index {index}")]
    NonHexCharacter { index: usize, ch: char },
    #[error("bytecode is empty")]
    Empty,
    #[error("constructor returns zero-length runtime code")]
    EmptyRuntime,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Where a piece of bytecode came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeOrigin {
    HexFile,
    HexString,
    BinaryFile,
    RpcFetch,
}

/// Decoded bytecode. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCode {
    bytes: Vec<u8>,
    origin: CodeOrigin,
}

impl RawCode {
    pub fn new(bytes: Vec<u8>, origin: CodeOrigin) -> Result<Self, BytecodeError> {
        if bytes.is_empty() {
            return Err(BytecodeError::Empty);
        }
        Ok(RawCode { bytes, origin })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn origin(&self) -> CodeOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Keccak-256 of the bytes, the identity used for dedup.
    pub fn code_hash(&self) -> String {
        format!("0x{}", hex::encode(word::keccak256(&self.bytes)))
    }

    /// Reads a file holding either hex text or raw bytes.
    pub fn from_file(path: &Path) -> Result<Self, BytecodeError> {
        let data = std::fs::read(path).map_err(|e| BytecodeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if data.is_empty() {
            return Err(BytecodeError::Empty);
        }
        if looks_like_hex_text(&data) {
            let text = String::from_utf8_lossy(&data);
            let mut code = decode_hex(&text)?;
            code.origin = CodeOrigin::HexFile;
            Ok(code)
        } else {
            RawCode::new(data, CodeOrigin::BinaryFile)
        }
    }
}

fn looks_like_hex_text(data: &[u8]) -> bool {
    let text = match std::str::from_utf8(data) {
        Ok(t) => t.trim(),
        Err(_) => return false,
    };
    let body = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    !body.is_empty() && body.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Strictly decodes a hex string. Surrounding whitespace and a `0x` prefix are
/// accepted; anything else that is not a hex digit is rejected.
pub fn decode_hex(text: &str) -> Result<RawCode, BytecodeError> {
    let trimmed = text.trim();
    let (prefix, body) = match trimmed.get(..2) {
        Some("0x") | Some("0X") => (2, &trimmed[2..]),
        _ => (0, trimmed),
    };
    if let Some((i, ch)) = body.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
        return Err(BytecodeError::NonHexCharacter { index: prefix + i, ch });
    }
    if body.len() % 2 == 1 {
        return Err(BytecodeError::OddLength { position: prefix + body.len() - 1 });
    }
    let bytes = hex::decode(body).map_err(|e| match e {
        hex::FromHexError::InvalidHexCharacter { c, index } => {
            BytecodeError::NonHexCharacter { index: prefix + index, ch: c }
        }
        _ => BytecodeError::OddLength { position: prefix + body.len() - 1 },
    })?;
    RawCode::new(bytes, CodeOrigin::HexString)
}

/// One disassembled instruction.
#[derive(Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: Opcode,
    immediate: SmallVec<[u8; 32]>,
    /// Zero bytes appended because the push ran past the end of the code.
    padding: u8,
}

impl Instruction {
    pub fn new(offset: usize, opcode: Opcode, immediate: &[u8]) -> Self {
        Instruction { offset, opcode, immediate: SmallVec::from_slice(immediate), padding: 0 }
    }

    /// PUSH payload, if any. Truncated pushes are zero-padded on the right.
    pub fn immediate(&self) -> Option<&[u8]> {
        (self.opcode.immediate_len() > 0).then_some(&self.immediate[..])
    }

    pub fn is_truncated(&self) -> bool {
        self.padding > 0
    }

    /// Value pushed by PUSH0..PUSH32.
    pub fn push_value(&self) -> Option<Word> {
        self.opcode.is_push().then(|| word::from_be_slice(&self.immediate))
    }

    /// Offset of the following instruction.
    pub fn next_offset(&self) -> usize {
        self.offset + 1 + self.immediate.len()
    }

    /// Bytes this instruction occupied in the original code.
    pub fn encoded_len(&self) -> usize {
        1 + self.immediate.len() - self.padding as usize
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode.0);
        out.extend_from_slice(&self.immediate[..self.immediate.len() - self.padding as usize]);
    }
}

impl fmt::Debug for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x} {}", self.offset, self.opcode)?;
        if let Some(imm) = self.immediate() {
            write!(f, " 0x{}", hex::encode(imm))?;
        }
        if self.is_truncated() {
            f.write_str(" (truncated)")?;
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Linear sweep over the whole byte string. Unknown bytes are kept as
/// single-byte instructions of the `Invalid` class.
pub fn disassemble(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::with_capacity(code.len());
    let mut pc = 0;
    while pc < code.len() {
        let opcode = Opcode(code[pc]);
        let width = opcode.immediate_len();
        let start = pc + 1;
        let end = (start + width).min(code.len());
        let mut immediate = SmallVec::from_slice(&code[start..end]);
        let padding = width - (end - start);
        immediate.resize(width, 0);
        out.push(Instruction { offset: pc, opcode, immediate, padding: padding as u8 });
        pc = start + width;
    }
    out
}

/// Re-emits instruction bytes; the inverse of [`disassemble`].
pub fn assemble(instrs: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for i in instrs {
        i.encode_into(&mut out);
    }
    out
}

/// Stack of optional constants for block-local evaluation. Reads below the
/// block's entry height produce unknowns.
#[derive(Debug, Clone, Default)]
pub(crate) struct ConstStack {
    items: Vec<Option<Word>>,
    borrowed: usize,
}

impl ConstStack {
    fn ensure(&mut self, n: usize) {
        if self.items.len() < n {
            let missing = n - self.items.len();
            self.items.splice(0..0, std::iter::repeat_n(None, missing));
            self.borrowed += missing;
        }
    }

    /// `n`-th item from the top (0 = top).
    pub(crate) fn peek(&mut self, n: usize) -> Option<Word> {
        self.ensure(n + 1);
        self.items[self.items.len() - 1 - n]
    }

    pub(crate) fn exec(&mut self, ins: &Instruction) {
        let op = ins.opcode;
        if let Some(v) = ins.push_value() {
            self.items.push(Some(v));
        } else if let Some(d) = op.dup_depth() {
            self.ensure(d);
            let v = self.items[self.items.len() - d];
            self.items.push(v);
        } else if let Some(d) = op.swap_depth() {
            self.ensure(d + 1);
            let len = self.items.len();
            self.items.swap(len - 1, len - 1 - d);
        } else {
            let (pops, pushes) = op.stack_io();
            self.ensure(pops);
            let args: SmallVec<[Option<Word>; 8]> =
                (0..pops).map(|_| self.items.pop().flatten()).collect();
            if pushes == 1 {
                let out = if op == Opcode::PC {
                    Some(Word::from(ins.offset))
                } else if args.iter().all(Option::is_some) && pops > 0 {
                    let concrete: SmallVec<[Word; 8]> = args.iter().map(|a| a.unwrap()).collect();
                    word::fold(op, &concrete)
                } else {
                    None
                };
                self.items.push(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_hex_accepts_prefix() {
        let code = decode_hex("0x6001").unwrap();
        assert_eq!(code.bytes(), &[0x60, 0x01]);
        assert_eq!(code.origin(), CodeOrigin::HexString);
        assert_eq!(decode_hex("  6001\n").unwrap().bytes(), &[0x60, 0x01]);
    }

    #[test]
    fn decode_hex_rejects_inner_whitespace() {
        assert_eq!(
            decode_hex("60 01"),
            Err(BytecodeError::NonHexCharacter { index: 2, ch: ' ' })
        );
    }

    #[test]
    fn decode_hex_rejects_odd_length() {
        assert!(matches!(decode_hex("0xABC"), Err(BytecodeError::OddLength { .. })));
    }

    #[test]
    fn decode_hex_rejects_empty() {
        assert_eq!(decode_hex("0x"), Err(BytecodeError::Empty));
        assert_eq!(decode_hex(""), Err(BytecodeError::Empty));
    }

    #[test]
    fn disassembles_solidity_prologue() {
        let instrs = disassemble(&[0x60, 0x80, 0x60, 0x40, 0x52]);
        assert_eq!(instrs.len(), 3);
        assert_eq!(instrs[0].opcode, Opcode::PUSH1);
        assert_eq!(instrs[0].immediate(), Some(&[0x80u8][..]));
        assert_eq!(instrs[1].offset, 2);
        assert_eq!(instrs[1].immediate(), Some(&[0x40u8][..]));
        assert_eq!(instrs[2].opcode, Opcode::MSTORE);
        assert_eq!(instrs[2].immediate(), None);
    }

    #[test]
    fn truncated_push_is_padded_and_flagged() {
        let instrs = disassemble(&[0x60]);
        assert_eq!(instrs.len(), 1);
        assert!(instrs[0].is_truncated());
        assert_eq!(instrs[0].immediate(), Some(&[0u8][..]));
        assert_eq!(assemble(&instrs), vec![0x60]);

        let instrs = disassemble(&[0x61, 0xab]);
        assert_eq!(instrs[0].push_value(), Some(Word::from(0xab00u64)));
    }

    #[test]
    fn invalid_byte_is_represented() {
        let instrs = disassemble(&[0xfe]);
        assert_eq!(instrs.len(), 1);
        assert_eq!(instrs[0].opcode, Opcode::INVALID);
        let instrs = disassemble(&[0x0c, 0x00]);
        assert_eq!(instrs[0].opcode.class(), OpcodeClass::Invalid);
        assert_eq!(instrs[1].offset, 1);
    }

    #[test]
    fn push0_pushes_zero() {
        let instrs = disassemble(&[0x5f]);
        assert_eq!(instrs[0].push_value(), Some(Word::ZERO));
        assert_eq!(instrs[0].immediate(), None);
    }

    proptest! {
        #[test]
        fn sweep_round_trips_and_covers(code in proptest::collection::vec(any::<u8>(), 1..512)) {
            let instrs = disassemble(&code);
            prop_assert_eq!(assemble(&instrs), code.clone());
            let covered: usize = instrs.iter().map(|i| i.encoded_len()).sum();
            prop_assert_eq!(covered, code.len());
            for pair in instrs.windows(2) {
                prop_assert!(pair[0].offset < pair[1].offset);
                prop_assert_eq!(pair[0].next_offset(), pair[1].offset);
            }
            for i in &instrs {
                prop_assert_eq!(i.immediate().is_some(), (0x60..=0x7f).contains(&i.opcode.0));
            }
        }
    }
}
