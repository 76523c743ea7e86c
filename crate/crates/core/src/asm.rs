//! Tiny EVM assembler with labels, used to build synthetic contracts.
//!
//! Text syntax is whitespace-separated tokens: mnemonics (`ADD`, `PUSH1 0x40`),
//! bare `PUSH <value>` choosing the narrowest width, `name:` to place a
//! JUMPDEST and `@name` to push its address as PUSH2.

use std::collections::HashMap;

use thiserror::Error;

use crate::bytecode::Opcode;
use crate::word::Word;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("unknown mnemonic {0:?}")]
    UnknownMnemonic(String),
    #[error("{op} expects an immediate")]
    MissingImmediate { op: String },
    #[error("bad immediate {0:?}")]
    BadImmediate(String),
    #[error("immediate {value} does not fit in {op}")]
    ImmediateTooWide { op: String, value: String },
    #[error("label {0:?} defined twice")]
    DuplicateLabel(String),
    #[error("label {0:?} is never defined")]
    UndefinedLabel(String),
}

#[derive(Debug, Default, Clone)]
pub struct Asm {
    code: Vec<u8>,
    labels: HashMap<String, usize>,
    fixups: Vec<(usize, String)>,
    error: Option<AsmError>,
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn op(&mut self, op: Opcode) -> &mut Self {
        self.code.push(op.0);
        self
    }

    pub fn ops(&mut self, ops: &[Opcode]) -> &mut Self {
        for op in ops {
            self.op(*op);
        }
        self
    }

    /// Pushes with the narrowest PUSH; zero becomes PUSH0.
    pub fn push(&mut self, value: impl Into<Word>) -> &mut Self {
        let value: Word = value.into();
        let bytes = value.to_be_bytes::<32>();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        self.push_bytes(&bytes[skip..])
    }

    /// Emits `PUSH<len>` followed by `bytes` verbatim.
    pub fn push_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        assert!(bytes.len() <= 32, "push of more than 32 bytes");
        self.code.push(Opcode::push(bytes.len() as u8).0);
        self.code.extend_from_slice(bytes);
        self
    }

    /// Pushes the address of `name` (resolved in [`Asm::finish`]).
    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.code.push(Opcode::PUSH2.0);
        self.fixups.push((self.code.len(), name.to_string()));
        self.code.extend_from_slice(&[0, 0]);
        self
    }

    /// Places a JUMPDEST named `name`.
    pub fn label(&mut self, name: &str) -> &mut Self {
        if self.labels.insert(name.to_string(), self.code.len()).is_some() {
            self.error.get_or_insert(AsmError::DuplicateLabel(name.to_string()));
        }
        self.op(Opcode::JUMPDEST)
    }

    pub fn jump(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(Opcode::JUMP)
    }

    pub fn jumpi(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(Opcode::JUMPI)
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.code.extend_from_slice(bytes);
        self
    }

    pub fn finish(&self) -> Result<Vec<u8>, AsmError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let mut code = self.code.clone();
        for (at, name) in &self.fixups {
            let target = *self
                .labels
                .get(name)
                .ok_or_else(|| AsmError::UndefinedLabel(name.clone()))?;
            code[*at..*at + 2].copy_from_slice(&(target as u16).to_be_bytes());
        }
        Ok(code)
    }
}

fn parse_word(tok: &str) -> Result<Word, AsmError> {
    let bad = || AsmError::BadImmediate(tok.to_string());
    if let Some(h) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Word::from_str_radix(h, 16).map_err(|_| bad())
    } else {
        Word::from_str_radix(tok, 10).map_err(|_| bad())
    }
}

/// Assembles the text syntax described in the module docs.
pub fn assemble_text(src: &str) -> Result<Vec<u8>, AsmError> {
    let mut asm = Asm::new();
    let mut tokens = src.split_whitespace();
    while let Some(tok) = tokens.next() {
        if let Some(name) = tok.strip_suffix(':') {
            asm.label(name);
        } else if let Some(name) = tok.strip_prefix('@') {
            asm.push_label(name);
        } else if tok.eq_ignore_ascii_case("PUSH") {
            let imm = tokens.next().ok_or(AsmError::MissingImmediate { op: "PUSH".into() })?;
            asm.push(parse_word(imm)?);
        } else {
            let op = Opcode::from_name(tok).ok_or_else(|| AsmError::UnknownMnemonic(tok.to_string()))?;
            let width = op.immediate_len();
            if width == 0 {
                asm.op(op);
                continue;
            }
            let imm = tokens.next().ok_or(AsmError::MissingImmediate { op: op.to_string() })?;
            let value = parse_word(imm)?;
            if value.bit_len() > width * 8 {
                return Err(AsmError::ImmediateTooWide { op: op.to_string(), value: imm.to_string() });
            }
            let bytes = value.to_be_bytes::<32>();
            asm.push_bytes(&bytes[32 - width..]);
        }
    }
    asm.finish()
}
