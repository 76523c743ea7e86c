//! Recovers public functions from the selector dispatcher.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::{BlockId, Cfg, Terminator};
use crate::bytecode::Opcode;
use crate::word::{self, Word};

const MAX_BLOCK_VISITS: usize = 4096;

/// A public function entry found in the dispatcher, or the whole contract when
/// no dispatcher could be recognised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionCandidate {
    /// `None` in degraded mode.
    pub selector: Option<u32>,
    pub entry: BlockId,
    pub entry_offset: usize,
    /// Stack height when control reaches the entry block.
    pub entry_depth: usize,
    /// Known constants on the entry stack, bottom first.
    #[serde(skip)]
    pub entry_stack: Vec<Option<Word>>,
    /// Memory words written with constants before the entry.
    #[serde(skip)]
    pub entry_memory: Vec<(usize, Word)>,
}

impl FunctionCandidate {
    pub fn selector_hex(&self) -> Option<String> {
        self.selector.map(|s| format!("0x{s:08x}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DVal {
    Unknown,
    Const(Word),
    /// `CALLDATALOAD(0)`
    Cd0,
    Selector,
    SelEq(u32),
    SelNe(u32),
    SelCmp,
}

impl DVal {
    fn konst(self) -> Option<Word> {
        match self {
            DVal::Const(w) => Some(w),
            _ => None,
        }
    }
}

fn as_selector(w: Word) -> Option<u32> {
    word::to_usize(w).and_then(|v| u32::try_from(v).ok())
}

#[derive(Clone)]
struct Walk {
    block: BlockId,
    stack: Vec<DVal>,
    memory: BTreeMap<usize, Word>,
}

/// Walks dispatcher code from block 0, collecting `(selector, entry)` pairs.
/// Comparison branches of a binary-search dispatcher are both followed.
pub fn extract_functions(cfg: &Cfg) -> Vec<FunctionCandidate> {
    let mut found: Vec<FunctionCandidate> = Vec::new();
    let mut seen_selectors = HashSet::new();
    let mut visited = HashSet::new();
    let mut work = vec![Walk { block: 0, stack: Vec::new(), memory: BTreeMap::new() }];
    let mut visits = 0;

    while let Some(mut w) = work.pop() {
        if cfg.blocks().is_empty() || !visited.insert((w.block, w.stack.len())) {
            continue;
        }
        visits += 1;
        if visits > MAX_BLOCK_VISITS {
            break;
        }
        let block = cfg.block(w.block).clone();
        let instrs = cfg.block_instrs(w.block);
        let body = if matches!(block.terminator, Terminator::Jump | Terminator::JumpI) {
            &instrs[..instrs.len() - 1]
        } else {
            instrs
        };
        if !body.iter().all(|ins| step(&mut w, ins)) {
            continue;
        }
        let next = (w.block + 1 < cfg.blocks().len()).then_some(w.block + 1);
        match block.terminator {
            Terminator::Jump => {
                let Some(dest) = w.stack.pop() else { continue };
                if let Some(t) = dest.konst().and_then(word::to_usize).and_then(|t| cfg.jump_target(t)) {
                    work.push(Walk { block: t, ..w });
                }
            }
            Terminator::JumpI => {
                if w.stack.len() < 2 {
                    continue;
                }
                let dest = w.stack.pop().unwrap();
                let cond = w.stack.pop().unwrap();
                let target = dest.konst().and_then(word::to_usize).and_then(|t| cfg.jump_target(t));
                let mut record = |sel: u32, entry: BlockId, w: &Walk| {
                    if seen_selectors.insert(sel) {
                        found.push(candidate(cfg, Some(sel), entry, w));
                    }
                };
                match cond {
                    DVal::SelEq(sel) => {
                        if let Some(t) = target {
                            record(sel, t, &w);
                        }
                        if let Some(n) = next {
                            work.push(Walk { block: n, ..w });
                        }
                    }
                    DVal::SelNe(sel) => {
                        if let Some(n) = next {
                            record(sel, n, &w);
                        }
                        if let Some(t) = target {
                            work.push(Walk { block: t, ..w });
                        }
                    }
                    DVal::Const(c) => {
                        let succ = if c.is_zero() { next } else { target };
                        if let Some(s) = succ {
                            work.push(Walk { block: s, ..w });
                        }
                    }
                    _ => {
                        // Push the fallthrough last so it is walked first; the
                        // jump side of a range check usually leads elsewhere.
                        if let Some(t) = target {
                            work.push(Walk { block: t, ..w.clone() });
                        }
                        if let Some(n) = next {
                            work.push(Walk { block: n, ..w });
                        }
                    }
                }
            }
            Terminator::Fallthrough => {
                if let Some(n) = next {
                    work.push(Walk { block: n, ..w });
                }
            }
            Terminator::Halt | Terminator::Invalid => {}
        }
    }

    if found.is_empty() {
        let w = Walk {
            block: 0,
            stack: Vec::new(),
            memory: BTreeMap::new(),
        };
        if !cfg.blocks().is_empty() {
            found.push(candidate(cfg, None, 0, &w));
        }
    }
    found
}

fn candidate(cfg: &Cfg, selector: Option<u32>, entry: BlockId, w: &Walk) -> FunctionCandidate {
    FunctionCandidate {
        selector,
        entry,
        entry_offset: cfg.block(entry).start,
        entry_depth: w.stack.len(),
        entry_stack: w.stack.iter().map(|v| v.konst()).collect(),
        entry_memory: w.memory.iter().map(|(k, v)| (*k, *v)).collect(),
    }
}

/// Abstract step; returns false if the walk must stop.
fn step(w: &mut Walk, ins: &crate::bytecode::Instruction) -> bool {
    let op = ins.opcode;
    let stack = &mut w.stack;
    if let Some(v) = ins.push_value() {
        stack.push(DVal::Const(v));
        return true;
    }
    if let Some(d) = op.dup_depth() {
        if stack.len() < d {
            return false;
        }
        stack.push(stack[stack.len() - d]);
        return true;
    }
    if let Some(d) = op.swap_depth() {
        if stack.len() <= d {
            return false;
        }
        let len = stack.len();
        stack.swap(len - 1, len - 1 - d);
        return true;
    }
    let (pops, pushes) = op.stack_io();
    if stack.len() < pops {
        return false;
    }
    let args: Vec<DVal> = (0..pops).map(|_| stack.pop().unwrap()).collect();
    let selector_shift = Word::from(1u8) << 224;
    let out = match (op, args.as_slice()) {
        (Opcode::CALLDATALOAD, [DVal::Const(z)]) if z.is_zero() => DVal::Cd0,
        (Opcode::SHR, [DVal::Const(s), DVal::Cd0]) if *s == Word::from(224u16) => DVal::Selector,
        (Opcode::DIV, [DVal::Cd0, DVal::Const(d)]) if *d == selector_shift => DVal::Selector,
        (Opcode::AND, [DVal::Selector, DVal::Const(m)]) | (Opcode::AND, [DVal::Const(m), DVal::Selector])
            if *m == Word::from(0xffff_ffffu32) =>
        {
            DVal::Selector
        }
        (Opcode::EQ, [DVal::Selector, DVal::Const(c)]) | (Opcode::EQ, [DVal::Const(c), DVal::Selector]) => {
            as_selector(*c).map_or(DVal::Unknown, DVal::SelEq)
        }
        (Opcode::XOR | Opcode::SUB, [DVal::Selector, DVal::Const(c)])
        | (Opcode::XOR | Opcode::SUB, [DVal::Const(c), DVal::Selector]) => {
            as_selector(*c).map_or(DVal::Unknown, DVal::SelNe)
        }
        (Opcode::ISZERO, [DVal::SelEq(c)]) => DVal::SelNe(*c),
        (Opcode::ISZERO, [DVal::SelNe(c)]) => DVal::SelEq(*c),
        (Opcode::GT | Opcode::LT | Opcode::SGT | Opcode::SLT, [a, b])
            if *a == DVal::Selector || *b == DVal::Selector =>
        {
            DVal::SelCmp
        }
        (Opcode::MSTORE, [off, val]) => {
            if let Some(off) = off.konst().and_then(word::to_usize) {
                match val.konst() {
                    Some(v) => {
                        w.memory.insert(off, v);
                    }
                    None => {
                        w.memory.remove(&off);
                    }
                }
            } else {
                w.memory.clear();
            }
            DVal::Unknown
        }
        (Opcode::PC, []) => DVal::Const(Word::from(ins.offset)),
        _ => {
            let konsts: Option<Vec<Word>> = args.iter().map(|a| a.konst()).collect();
            match konsts {
                Some(k) if !k.is_empty() => word::fold(op, &k).map_or(DVal::Unknown, DVal::Const),
                _ => DVal::Unknown,
            }
        }
    };
    if pushes == 1 {
        stack.push(out);
    }
    true
}
