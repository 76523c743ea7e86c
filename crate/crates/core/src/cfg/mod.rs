//! Basic blocks, static jump edges and public-function recovery.

mod dispatch;
mod filter;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use smallvec::SmallVec;

use crate::bytecode::{disassemble, ConstStack, Instruction, Opcode, OpcodeClass};
use crate::word::{self, Word};

pub use dispatch::{extract_functions, FunctionCandidate};
pub use filter::{filter_candidates, AddressFunction, FilterOutcome, ParamInfo, ParamKind, ShiftIdiomMiss};

pub type BlockId = usize;

/// How a block hands control on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminator {
    Jump,
    JumpI,
    Halt,
    /// No terminator; execution runs into the next block (or off the end).
    Fallthrough,
    /// Undefined opcode.
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    /// JUMPI condition false.
    Fallthrough,
    /// JUMP or JUMPI to a resolved JUMPDEST.
    JumpTaken,
    /// Block without terminator continuing into the next leader.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub id: BlockId,
    /// Byte offset of the first instruction.
    pub start: usize,
    /// Byte offset one past the last instruction.
    pub end: usize,
    /// Indices into [`Cfg::instructions`].
    pub first: usize,
    pub last: usize,
    pub terminator: Terminator,
    /// Resolved jump destination (byte offset of a JUMPDEST).
    pub static_target: Option<usize>,
    /// Jump target depends on values from outside the block.
    pub dynamic_exit: bool,
    /// Constant jump target that is not a JUMPDEST.
    pub bad_target: Option<Word>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct Cfg {
    instrs: Vec<Instruction>,
    blocks: Vec<Block>,
    by_start: HashMap<usize, BlockId>,
    jumpdests: BTreeSet<usize>,
    edges: Vec<Edge>,
    succs: Vec<SmallVec<[(BlockId, EdgeKind); 2]>>,
}

pub fn build_cfg(code: &[u8]) -> Cfg {
    let instrs = disassemble(code);
    let jumpdests: BTreeSet<usize> = instrs
        .iter()
        .filter(|i| i.opcode == Opcode::JUMPDEST)
        .map(|i| i.offset)
        .collect();

    let mut blocks = Vec::new();
    let mut first = 0;
    for idx in 0..instrs.len() {
        let ins = &instrs[idx];
        let next_is_leader = instrs
            .get(idx + 1)
            .is_none_or(|n| n.opcode == Opcode::JUMPDEST);
        if ins.opcode.is_terminator() || next_is_leader {
            blocks.push(make_block(blocks.len(), &instrs, first, idx, &jumpdests));
            first = idx + 1;
        }
    }

    let by_start: HashMap<usize, BlockId> = blocks.iter().map(|b| (b.start, b.id)).collect();
    let mut edges = Vec::new();
    let mut succs = vec![SmallVec::new(); blocks.len()];
    let nblocks = blocks.len();
    for b in &blocks {
        let mut add = |to: BlockId, kind: EdgeKind| {
            edges.push(Edge { from: b.id, to, kind });
            succs[b.id].push((to, kind));
        };
        let next = (b.id + 1 < nblocks).then_some(b.id + 1);
        match b.terminator {
            Terminator::Jump | Terminator::JumpI => {
                if let Some(t) = b.static_target {
                    add(by_start[&t], EdgeKind::JumpTaken);
                }
                if b.terminator == Terminator::JumpI {
                    if let Some(n) = next {
                        add(n, EdgeKind::Fallthrough);
                    }
                }
            }
            Terminator::Fallthrough => {
                if let Some(n) = next {
                    add(n, EdgeKind::Sequential);
                }
            }
            Terminator::Halt | Terminator::Invalid => {}
        }
    }

    Cfg { instrs, blocks, by_start, jumpdests, edges, succs }
}

fn make_block(
    id: BlockId,
    instrs: &[Instruction],
    first: usize,
    last: usize,
    jumpdests: &BTreeSet<usize>,
) -> Block {
    let term = &instrs[last];
    let terminator = match term.opcode {
        Opcode::JUMP => Terminator::Jump,
        Opcode::JUMPI => Terminator::JumpI,
        Opcode::SELFDESTRUCT => Terminator::Halt,
        op => match op.class() {
            OpcodeClass::Halt => Terminator::Halt,
            OpcodeClass::Invalid => Terminator::Invalid,
            _ => Terminator::Fallthrough,
        },
    };
    let mut static_target = None;
    let mut dynamic_exit = false;
    let mut bad_target = None;
    if matches!(terminator, Terminator::Jump | Terminator::JumpI) {
        let mut stack = ConstStack::default();
        for ins in &instrs[first..last] {
            stack.exec(ins);
        }
        match stack.peek(0) {
            Some(t) => match word::to_usize(t).filter(|t| jumpdests.contains(t)) {
                Some(t) => static_target = Some(t),
                None => bad_target = Some(t),
            },
            None => dynamic_exit = true,
        }
    }
    Block {
        id,
        start: instrs[first].offset,
        end: term.next_offset(),
        first,
        last,
        terminator,
        static_target,
        dynamic_exit,
        bad_target,
    }
}

impl Cfg {
    pub fn instructions(&self) -> &[Instruction] {
        &self.instrs
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id]
    }

    pub fn block_instrs(&self, id: BlockId) -> &[Instruction] {
        let b = &self.blocks[id];
        &self.instrs[b.first..=b.last]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn successors(&self, id: BlockId) -> &[(BlockId, EdgeKind)] {
        &self.succs[id]
    }

    /// Block starting at a byte offset.
    pub fn block_at(&self, offset: usize) -> Option<BlockId> {
        self.by_start.get(&offset).copied()
    }

    /// Block reachable by jumping to `offset`, which must be a JUMPDEST.
    pub fn jump_target(&self, offset: usize) -> Option<BlockId> {
        if self.jumpdests.contains(&offset) {
            self.block_at(offset)
        } else {
            None
        }
    }

    pub fn is_jumpdest(&self, offset: usize) -> bool {
        self.jumpdests.contains(&offset)
    }

    pub fn jumpdests(&self) -> &BTreeSet<usize> {
        &self.jumpdests
    }

    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let _ = write!(out, "block {} [{:#06x}..{:#06x}) {:?}", b.id, b.start, b.end, b.terminator);
            if b.dynamic_exit {
                out.push_str(" dynamic-exit");
            }
            if let Some(t) = b.bad_target {
                let _ = write!(out, " bad-target={t:#x}");
            }
            out.push('\n');
            for ins in self.block_instrs(b.id) {
                let _ = writeln!(out, "    {ins}");
            }
            for (to, kind) in self.successors(b.id) {
                let _ = writeln!(out, "    -> {to} ({kind:?})");
            }
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box fontname=monospace];\n");
        for b in &self.blocks {
            let _ = writeln!(out, "  b{} [label=\"{:#06x} {:?}\"];", b.id, b.start, b.terminator);
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::JumpTaken => "solid",
                EdgeKind::Fallthrough => "dashed",
                EdgeKind::Sequential => "dotted",
            };
            let _ = writeln!(out, "  b{} -> b{} [style={style}];", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble_text;
    use proptest::prelude::*;

    #[test]
    fn splits_on_jumps_and_jumpdests() {
        let code = assemble_text("PUSH 1 @a JUMPI PUSH 0 STOP a: PUSH 2 @b JUMP b: STOP").unwrap();
        let cfg = build_cfg(&code);
        let kinds: Vec<_> = cfg.blocks().iter().map(|b| b.terminator).collect();
        assert_eq!(
            kinds,
            vec![Terminator::JumpI, Terminator::Halt, Terminator::Jump, Terminator::Halt]
        );
        assert_eq!(
            cfg.successors(0),
            &[(2, EdgeKind::JumpTaken), (1, EdgeKind::Fallthrough)]
        );
        assert_eq!(cfg.successors(2), &[(3, EdgeKind::JumpTaken)]);
    }

    #[test]
    fn sequential_edge_into_jumpdest() {
        let code = assemble_text("PUSH 1 POP a: STOP").unwrap();
        let cfg = build_cfg(&code);
        assert_eq!(cfg.blocks().len(), 2);
        assert_eq!(cfg.block(0).terminator, Terminator::Fallthrough);
        assert_eq!(cfg.successors(0), &[(1, EdgeKind::Sequential)]);
    }

    #[test]
    fn dynamic_and_bad_targets() {
        let code = assemble_text("CALLDATASIZE JUMP PUSH 3 JUMP").unwrap();
        let cfg = build_cfg(&code);
        assert!(cfg.block(0).dynamic_exit);
        assert_eq!(cfg.block(1).bad_target, Some(Word::from(3u8)));
        assert!(cfg.successors(1).is_empty());
    }

    #[test]
    fn push_data_is_not_a_jumpdest() {
        // PUSH1 0x5b; the 0x5b byte is data.
        let cfg = build_cfg(&[0x60, 0x5b, 0x00]);
        assert!(cfg.jumpdests().is_empty());
        assert_eq!(cfg.blocks().len(), 1);
    }

    #[test]
    fn undefined_byte_terminates_block() {
        let cfg = build_cfg(&[0x0c, 0x00]);
        assert_eq!(cfg.block(0).terminator, Terminator::Invalid);
        assert_eq!(cfg.blocks().len(), 2);
    }

    proptest! {
        #[test]
        fn blocks_partition_instructions(code in proptest::collection::vec(any::<u8>(), 1..400)) {
            let cfg = build_cfg(&code);
            let mut next = 0;
            for (i, b) in cfg.blocks().iter().enumerate() {
                prop_assert_eq!(b.id, i);
                prop_assert_eq!(b.first, next);
                prop_assert!(b.last >= b.first);
                for ins in &cfg.instructions()[b.first..b.last] {
                    prop_assert!(!ins.opcode.is_terminator());
                }
                for ins in &cfg.instructions()[b.first + 1..=b.last] {
                    prop_assert!(ins.opcode != Opcode::JUMPDEST);
                }
                next = b.last + 1;
            }
            prop_assert_eq!(next, cfg.instructions().len());
            for d in cfg.jumpdests() {
                prop_assert!(cfg.block_at(*d).is_some());
            }
            for e in cfg.edges() {
                if e.kind == EdgeKind::JumpTaken {
                    prop_assert!(cfg.is_jumpdest(cfg.block(e.to).start));
                }
            }
        }
    }
}
