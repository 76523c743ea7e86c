//! Single-path execution with taint propagation.

use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::Instant;

use smallvec::SmallVec;

use super::memory::MAX_CONCRETE_OFFSET;
use super::state::{CallSite, EffectSite, Event, JumpiSite, ReturnData, State, StoreSite, TerminalKind};
use super::value::{hash_of, Guard, GuardKind, SourceKind, SymWord, Tags, TaintNode, TaintSource, Value};
use crate::bytecode::{Instruction, Opcode};
use crate::cfg::{Cfg, Terminator};
use crate::word::{self, Word, ADDRESS_MASK};

/// Largest concrete copy or hash region handled byte-exactly.
const MAX_REGION: usize = 4096;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub max_paths: usize,
    /// Entries allowed into one block under the same call context, beyond the first.
    pub max_block_revisits: u8,
    pub max_steps: u64,
    pub deadline: Option<Instant>,
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_paths: 512,
            max_block_revisits: 3,
            max_steps: 100_000,
            deadline: None,
            record_trace: false,
        }
    }
}

/// Facts gathered while probing a function, independent of path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeLog {
    /// Constant calldata offsets read.
    pub loads: BTreeSet<u32>,
    /// Offsets whose word was masked to 160 bits.
    pub masks: BTreeSet<u32>,
    /// Offsets whose word was used to compute another calldata offset.
    pub dynamic: BTreeSet<u32>,
    /// Offsets narrowed with the `SHL 96`/`SHR 96` pair instead of a mask.
    pub shift_idiom: BTreeSet<u32>,
}

/// A finished (or abandoned) path.
#[derive(Clone)]
pub struct Terminal {
    pub state: State,
    pub kind: TerminalKind,
    /// Offset of the instruction that ended the path.
    pub pc: usize,
}

#[allow(clippy::large_enum_variant)]
pub enum Step {
    /// A JUMPI with an unknown condition. `calldata_cond` is set when the
    /// condition derives from calldata.
    Branch { jump: State, fall: State, calldata_cond: bool },
    Done(Terminal),
}

pub struct Machine<'a> {
    cfg: &'a Cfg,
    code: &'a [u8],
    config: SimConfig,
    pub probe: ProbeLog,
}

fn sym(op: Opcode, parts: &[u64]) -> SymWord {
    SymWord::Symbol { id: hash_of(&(op.0, parts)), origin: op }
}

fn taints<'v>(values: impl IntoIterator<Item = &'v Value>) -> SmallVec<[Arc<TaintNode>; 2]> {
    let mut out: SmallVec<[Arc<TaintNode>; 2]> = SmallVec::new();
    for v in values {
        if let Some(t) = &v.taint {
            if !out.iter().any(|x| Arc::ptr_eq(x, t)) {
                out.push(t.clone());
            }
        }
    }
    out
}

fn small_usize(v: &Value) -> Option<usize> {
    v.concrete().and_then(word::to_usize)
}

/// Untainted and either an address-sized constant or a value read from storage.
fn is_trusted_reference(v: &Value) -> bool {
    if v.is_tainted() {
        return false;
    }
    match v.concrete() {
        Some(w) => w.bit_len() > 32 && w.bit_len() <= 160,
        None => v.tags.storage,
    }
}

/// The value is a calldata word with nothing but copies in between.
fn direct_param(v: &Value) -> Option<u32> {
    let s = v.summary()?;
    let only_cdl = s.kinds().all(|k| k == SourceKind::CallDataLoad);
    (s.cd_clean.len() == 1 && s.calls.is_empty() && only_cdl && !v.word.is_concrete())
        .then(|| s.cd_clean[0])
}

impl<'a> Machine<'a> {
    pub fn new(cfg: &'a Cfg, code: &'a [u8], config: SimConfig) -> Self {
        Machine { cfg, code, config, probe: ProbeLog::default() }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn cfg(&self) -> &'a Cfg {
        self.cfg
    }

    fn mint(&self, st: &mut State, word: SymWord, preds: SmallVec<[Arc<TaintNode>; 2]>, tags: Tags) -> Value {
        let uid = st.fresh_uid();
        let taint = (!preds.is_empty()).then(|| TaintNode::new(uid, preds, None, None));
        Value { uid, word, taint, tags }
    }

    fn konst(&self, st: &mut State, w: Word) -> Value {
        self.mint(st, SymWord::Concrete(w), SmallVec::new(), Tags::default())
    }

    fn source(
        &self,
        st: &mut State,
        word: SymWord,
        kind: SourceKind,
        calldata_offset: Option<u32>,
        preds: SmallVec<[Arc<TaintNode>; 2]>,
    ) -> Value {
        let uid = st.fresh_uid();
        let node = TaintNode::new(uid, preds, Some(TaintSource { kind, calldata_offset }), None);
        Value { uid, word, taint: Some(node), tags: Tags::default() }
    }

    /// Payload copy with a fresh identity, as produced by loads.
    fn copy_of(&self, st: &mut State, cell: &Value, via: &Value) -> Value {
        self.mint(st, cell.word, taints([via, cell]), cell.tags.clone())
    }

    /// What a store writes: the value itself, or a new node when the
    /// destination is tainted.
    fn stored(&self, st: &mut State, dest: &Value, val: &Value) -> Value {
        if dest.is_tainted() {
            self.mint(st, val.word, taints([dest, val]), val.tags.clone())
        } else {
            val.clone()
        }
    }

    fn call_context(&self, st: &State) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in &st.stack {
            if let Some(o) = small_usize(v) {
                if self.cfg.is_jumpdest(o) {
                    o.hash(&mut h);
                }
            }
        }
        h.finish()
    }

    fn done(st: State, kind: TerminalKind, pc: usize) -> Step {
        Step::Done(Terminal { state: st, kind, pc })
    }

    /// Runs one path until it reaches an undecided JUMPI or stops.
    pub fn run_to_branch(&mut self, mut st: State) -> Step {
        let cfg = self.cfg;
        loop {
            let block = cfg.block(st.block);
            if self.config.deadline.is_some_and(|d| Instant::now() >= d) {
                return Self::done(st, TerminalKind::Timeout, block.start);
            }
            let key = (st.block, self.call_context(&st));
            let seen = st.visits.get(&key).copied().unwrap_or(0);
            if seen > self.config.max_block_revisits {
                return Self::done(st, TerminalKind::LoopBound, block.start);
            }
            st.visits.insert(key, seen + 1);
            if self.config.record_trace {
                st.trace.push_back(block.start as u32);
            }

            let instrs = cfg.block_instrs(st.block);
            let jumps = matches!(block.terminator, Terminator::Jump | Terminator::JumpI);
            let body = if jumps { &instrs[..instrs.len() - 1] } else { instrs };
            for ins in body {
                st.steps += 1;
                if st.steps > self.config.max_steps {
                    return Self::done(st, TerminalKind::StepLimit, ins.offset);
                }
                if let Err(kind) = self.exec(&mut st, ins) {
                    return Self::done(st, kind, ins.offset);
                }
            }
            let next = (st.block + 1 < cfg.blocks().len()).then_some(st.block + 1);
            if !jumps {
                match next {
                    Some(n) if block.terminator == Terminator::Fallthrough => {
                        st.block = n;
                        continue;
                    }
                    _ => return Self::done(st, TerminalKind::Stop, block.end),
                }
            }

            let term = &instrs[instrs.len() - 1];
            let pc = term.offset;
            st.steps += 1;
            let dest = match st.stack.pop() {
                Some(d) => d,
                None => return Self::done(st, TerminalKind::Invalid, pc),
            };
            let target = small_usize(&dest).and_then(|o| cfg.jump_target(o));
            if term.opcode == Opcode::JUMP {
                match (target, dest.word.is_concrete()) {
                    (Some(t), _) => {
                        st.block = t;
                        continue;
                    }
                    (None, true) => return Self::done(st, TerminalKind::Invalid, pc),
                    (None, false) => return Self::done(st, TerminalKind::SymbolicJump, pc),
                }
            }

            let cond = match st.stack.pop() {
                Some(c) => c,
                None => return Self::done(st, TerminalKind::Invalid, pc),
            };
            let record = cond.from_calldata();
            let note = |st: &mut State, taken: bool| {
                if record {
                    st.events.push_back(Event::Jumpi(JumpiSite { pc, cond: cond.clone(), taken }));
                }
            };
            let fall_through = |st: &mut State| match next {
                Some(n) => {
                    st.block = n;
                    true
                }
                None => false,
            };
            if let Some(c) = cond.concrete() {
                let taken = !c.is_zero();
                note(&mut st, taken);
                if !taken {
                    if !fall_through(&mut st) {
                        return Self::done(st, TerminalKind::Stop, block.end);
                    }
                    continue;
                }
                match (target, dest.word.is_concrete()) {
                    (Some(t), _) => {
                        st.block = t;
                        continue;
                    }
                    (None, true) => return Self::done(st, TerminalKind::Invalid, pc),
                    (None, false) => return Self::done(st, TerminalKind::SymbolicJump, pc),
                }
            }
            if !dest.word.is_concrete() {
                return Self::done(st, TerminalKind::SymbolicJump, pc);
            }
            let Some(t) = target else {
                // The jump side faults; only the fallthrough survives.
                note(&mut st, false);
                if !fall_through(&mut st) {
                    return Self::done(st, TerminalKind::Stop, block.end);
                }
                continue;
            };
            let mut jump = st.clone();
            note(&mut jump, true);
            jump.block = t;
            note(&mut st, false);
            if fall_through(&mut st) {
                return Step::Branch { jump, fall: st, calldata_cond: record };
            }
            st = jump;
            continue;
        }
    }

    fn pop(st: &mut State) -> Result<Value, TerminalKind> {
        st.stack.pop().ok_or(TerminalKind::Invalid)
    }

    fn pop_n<const N: usize>(st: &mut State) -> Result<[Value; N], TerminalKind> {
        if st.stack.len() < N {
            return Err(TerminalKind::Invalid);
        }
        Ok(std::array::from_fn(|_| st.stack.pop().unwrap()))
    }

    fn push(st: &mut State, v: Value) -> Result<(), TerminalKind> {
        if st.stack.len() >= 1024 {
            return Err(TerminalKind::Invalid);
        }
        st.stack.push(v);
        Ok(())
    }

    /// Executes one non-jump instruction.
    pub fn exec(&mut self, st: &mut State, ins: &Instruction) -> Result<(), TerminalKind> {
        let op = ins.opcode;
        let pc = ins.offset;
        if let Some(v) = ins.push_value() {
            let v = self.konst(st, v);
            return Self::push(st, v);
        }
        if let Some(d) = op.dup_depth() {
            let len = st.stack.len();
            if len < d {
                return Err(TerminalKind::Invalid);
            }
            let v = st.stack[len - d].clone();
            return Self::push(st, v);
        }
        if let Some(d) = op.swap_depth() {
            let len = st.stack.len();
            if len <= d {
                return Err(TerminalKind::Invalid);
            }
            st.stack.swap(len - 1, len - 1 - d);
            return Ok(());
        }
        if !op.is_defined() {
            return Err(TerminalKind::Invalid);
        }

        match op {
            Opcode::STOP => Err(TerminalKind::Stop),
            Opcode::RETURN => {
                Self::pop_n::<2>(st)?;
                Err(TerminalKind::Return)
            }
            Opcode::REVERT => {
                Self::pop_n::<2>(st)?;
                Err(TerminalKind::Revert)
            }
            Opcode::INVALID => Err(TerminalKind::Invalid),
            Opcode::JUMPDEST => Ok(()),
            Opcode::POP => Self::pop(st).map(drop),
            Opcode::PC => {
                let v = self.konst(st, Word::from(pc));
                Self::push(st, v)
            }
            Opcode::MSIZE => {
                let v = self.konst(st, Word::from(st.memory.size()));
                Self::push(st, v)
            }
            Opcode::CODESIZE => {
                let v = self.konst(st, Word::from(self.code.len()));
                Self::push(st, v)
            }
            Opcode::GAS => {
                let w = sym(op, &[pc as u64, st.next_uid]);
                let v = self.mint(st, w, SmallVec::new(), Tags::default());
                Self::push(st, v)
            }
            Opcode::ORIGIN | Opcode::CALLER | Opcode::CALLVALUE => {
                let kind = SourceKind::for_opcode(op).unwrap();
                let v = self.source(st, sym(op, &[]), kind, None, SmallVec::new());
                Self::push(st, v)
            }
            Opcode::BALANCE => {
                let a = Self::pop(st)?;
                let v = self.source(st, sym(op, &[a.word.ident()]), SourceKind::Balance, None, taints([&a]));
                Self::push(st, v)
            }
            Opcode::EXTCODESIZE | Opcode::EXTCODEHASH | Opcode::BLOCKHASH | Opcode::BLOBHASH => {
                let a = Self::pop(st)?;
                let v = self.mint(st, sym(op, &[a.word.ident()]), taints([&a]), Tags::default());
                Self::push(st, v)
            }
            Opcode::ADDRESS
            | Opcode::CALLDATASIZE
            | Opcode::GASPRICE
            | Opcode::COINBASE
            | Opcode::TIMESTAMP
            | Opcode::NUMBER
            | Opcode::PREVRANDAO
            | Opcode::GASLIMIT
            | Opcode::CHAINID
            | Opcode::SELFBALANCE
            | Opcode::BASEFEE
            | Opcode::BLOBBASEFEE => {
                let v = self.mint(st, sym(op, &[]), SmallVec::new(), Tags::default());
                Self::push(st, v)
            }
            Opcode::RETURNDATASIZE => {
                let v = match st.returndata.call {
                    None => self.konst(st, Word::ZERO),
                    Some(id) => self.returndata_word(st, &[id as u64, u64::MAX]),
                };
                Self::push(st, v)
            }
            Opcode::CALLDATALOAD => {
                let off = Self::pop(st)?;
                let v = match small_usize(&off).and_then(|o| u32::try_from(o).ok()) {
                    Some(k) => {
                        self.probe.loads.insert(k);
                        self.source(st, sym(op, &[k as u64]), SourceKind::CallDataLoad, Some(k), taints([&off]))
                    }
                    None => {
                        self.probe.dynamic.extend(off.cd_clean().iter().copied());
                        let w = sym(op, &[off.word.ident()]);
                        self.source(st, w, SourceKind::CallDataLoad, None, taints([&off]))
                    }
                };
                Self::push(st, v)
            }
            Opcode::KECCAK256 => {
                let [off, len] = Self::pop_n::<2>(st)?;
                let v = match (small_usize(&off), small_usize(&len)) {
                    (Some(o), Some(l)) if l <= MAX_REGION && o <= MAX_CONCRETE_OFFSET => {
                        let region = st.memory.read(o, l);
                        let mut preds = taints([&off, &len]);
                        for t in region.taints {
                            if !preds.iter().any(|x| Arc::ptr_eq(x, &t)) {
                                preds.push(t);
                            }
                        }
                        let w = match region.bytes {
                            Some(b) => SymWord::Concrete(Word::from_be_bytes(word::keccak256(&b))),
                            None => sym(op, &[region.ident]),
                        };
                        self.mint(st, w, preds, Tags::default())
                    }
                    _ => {
                        let w = sym(op, &[off.word.ident(), len.word.ident(), st.memory.generation()]);
                        self.mint(st, w, taints([&off, &len]), Tags::default())
                    }
                };
                Self::push(st, v)
            }
            Opcode::MLOAD => {
                let off = Self::pop(st)?;
                let v = self.mload(st, &off);
                Self::push(st, v)
            }
            Opcode::MSTORE | Opcode::MSTORE8 => {
                let [off, val] = Self::pop_n::<2>(st)?;
                let cell = self.stored(st, &off, &val);
                match small_usize(&off) {
                    Some(o) if op == Opcode::MSTORE => st.memory.store_word(o, cell),
                    Some(o) => st.memory.store_byte(o, cell),
                    None => st.memory.store_symbolic(off.word.ident(), cell),
                }
                Ok(())
            }
            Opcode::SLOAD | Opcode::TLOAD => {
                let key = Self::pop(st)?;
                let k = key.word.ident();
                let map = if op == Opcode::SLOAD { &st.storage } else { &st.transient };
                let mut v = match map.get(&k).cloned() {
                    Some(cell) => self.copy_of(st, &cell, &key),
                    None => {
                        let tags = Tags { storage: !key.is_tainted(), ..Tags::default() };
                        let fresh = self.mint(st, sym(op, &[k]), taints([&key]), tags);
                        if op == Opcode::SLOAD {
                            st.storage.insert(k, fresh.clone());
                        } else {
                            st.transient.insert(k, fresh.clone());
                        }
                        fresh
                    }
                };
                if op == Opcode::SLOAD {
                    for off in key.cd_clean() {
                        v.tags.guards.push(Guard { calldata_offset: *off, kind: GuardKind::Mapping });
                    }
                }
                Self::push(st, v)
            }
            Opcode::SSTORE | Opcode::TSTORE => {
                let [key, val] = Self::pop_n::<2>(st)?;
                let cell = self.stored(st, &key, &val);
                if op == Opcode::SSTORE {
                    st.events.push_back(Event::Store(StoreSite { pc, key: key.clone(), value: val }));
                    st.storage.insert(key.word.ident(), cell);
                } else {
                    st.transient.insert(key.word.ident(), cell);
                }
                Ok(())
            }
            Opcode::CALLDATACOPY => {
                let [dest, off, len] = Self::pop_n::<3>(st)?;
                let base = small_usize(&off);
                let off_id = off.word.ident();
                self.write_chunks(st, &dest, &len, |m, st, i| {
                    let at = base.and_then(|b| u32::try_from(b + 32 * i).ok());
                    let w = sym(op, &[off_id, i as u64]);
                    m.source(st, w, SourceKind::CallDataCopy, at, taints([&off]))
                });
                Ok(())
            }
            Opcode::CODECOPY => {
                let [dest, off, len] = Self::pop_n::<3>(st)?;
                let src = small_usize(&off);
                let code = self.code;
                self.write_chunks(st, &dest, &len, |m, st, i| match src {
                    Some(s) => {
                        let mut buf = [0u8; 32];
                        for (j, b) in buf.iter_mut().enumerate() {
                            *b = code.get(s + 32 * i + j).copied().unwrap_or(0);
                        }
                        m.konst(st, Word::from_be_bytes(buf))
                    }
                    None => {
                        let w = sym(op, &[off.word.ident(), i as u64]);
                        m.mint(st, w, SmallVec::new(), Tags::default())
                    }
                });
                Ok(())
            }
            Opcode::EXTCODECOPY => {
                let [addr, dest, off, len] = Self::pop_n::<4>(st)?;
                self.write_chunks(st, &dest, &len, |m, st, i| {
                    let w = sym(op, &[addr.word.ident(), off.word.ident(), i as u64]);
                    m.mint(st, w, taints([&addr]), Tags::default())
                });
                Ok(())
            }
            Opcode::RETURNDATACOPY => {
                let [dest, off, len] = Self::pop_n::<3>(st)?;
                let id = st.returndata.call.map_or(u64::MAX - 1, |c| c as u64);
                let off_id = off.word.ident();
                self.write_chunks(st, &dest, &len, |m, st, i| m.returndata_word(st, &[id, off_id, i as u64]));
                Ok(())
            }
            Opcode::MCOPY => {
                let [dest, src, len] = Self::pop_n::<3>(st)?;
                match (small_usize(&dest), small_usize(&src), small_usize(&len)) {
                    (Some(d), Some(s), Some(l)) => st.memory.copy(d, s, l.min(MAX_REGION)),
                    _ => {
                        let w = sym(op, &[dest.word.ident(), src.word.ident(), st.memory.generation()]);
                        let v = self.mint(st, w, taints([&src, &len]), Tags::default());
                        match small_usize(&dest) {
                            Some(d) => st.memory.store_word(d, v),
                            None => st.memory.store_symbolic(dest.word.ident(), v),
                        }
                    }
                }
                Ok(())
            }
            op if (0xa0..=0xa4).contains(&op.0) => {
                let (pops, _) = op.stack_io();
                if st.stack.len() < pops {
                    return Err(TerminalKind::Invalid);
                }
                st.stack.truncate(st.stack.len() - pops);
                Ok(())
            }
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => self.call(st, op, pc),
            Opcode::CREATE | Opcode::CREATE2 => {
                let (pops, _) = op.stack_io();
                if st.stack.len() < pops {
                    return Err(TerminalKind::Invalid);
                }
                let operands: SmallVec<[Value; 4]> = (0..pops).map(|_| st.stack.pop().unwrap()).collect();
                st.events.push_back(Event::Effect(EffectSite { pc, opcode: op, operands }));
                st.returndata = ReturnData::default();
                let w = sym(op, &[pc as u64, st.next_uid]);
                let v = self.mint(st, w, SmallVec::new(), Tags::default());
                Self::push(st, v)
            }
            Opcode::SELFDESTRUCT => {
                let b = Self::pop(st)?;
                let mut operands = SmallVec::new();
                operands.push(b);
                st.events.push_back(Event::Effect(EffectSite { pc, opcode: op, operands }));
                Err(TerminalKind::SelfDestruct)
            }
            _ => self.arith(st, op),
        }
    }

    fn returndata_word(&self, st: &mut State, parts: &[u64]) -> Value {
        let w = sym(Opcode::RETURNDATACOPY, parts);
        match st.returndata.link.clone() {
            Some(link) => {
                let mut preds = SmallVec::new();
                preds.push(link);
                self.source(st, w, SourceKind::ExtCallResult, None, preds)
            }
            None => self.mint(st, w, SmallVec::new(), Tags::default()),
        }
    }

    fn mload(&self, st: &mut State, off: &Value) -> Value {
        match small_usize(off).filter(|o| *o <= MAX_CONCRETE_OFFSET) {
            Some(o) => {
                let region = st.memory.read(o, 32);
                if let Some(cell) = &region.exact {
                    return self.copy_of(st, cell, off);
                }
                let mut preds = taints([off]);
                preds.extend(region.taints);
                let w = match region.bytes {
                    Some(b) => SymWord::Concrete(word::from_be_slice(&b)),
                    None => sym(Opcode::MLOAD, &[region.ident]),
                };
                self.mint(st, w, preds, Tags::default())
            }
            None => match st.memory.load_symbolic(off.word.ident()).cloned() {
                Some(cell) => self.copy_of(st, &cell, off),
                None => {
                    let w = sym(Opcode::MLOAD, &[off.word.ident(), st.memory.generation()]);
                    self.mint(st, w, taints([off]), Tags::default())
                }
            },
        }
    }

    /// Fills `[dest, dest + len)` with 32-byte chunks from `make`.
    fn write_chunks(
        &self,
        st: &mut State,
        dest: &Value,
        len: &Value,
        mut make: impl FnMut(&Self, &mut State, usize) -> Value,
    ) {
        let total = small_usize(len).map(|l| l.min(MAX_REGION));
        match small_usize(dest).filter(|d| *d <= MAX_CONCRETE_OFFSET) {
            Some(d) => {
                let total = total.unwrap_or(32);
                let mut i = 0;
                while 32 * i < total {
                    let n = (total - 32 * i).min(32) as u8;
                    let v = make(self, st, i);
                    let v = self.stored(st, dest, &v);
                    st.memory.write(d + 32 * i, v, 0, n);
                    i += 1;
                }
            }
            None => {
                if total != Some(0) {
                    let v = make(self, st, 0);
                    let v = self.stored(st, dest, &v);
                    st.memory.store_symbolic(dest.word.ident(), v);
                }
            }
        }
    }

    fn call(&mut self, st: &mut State, op: Opcode, pc: usize) -> Result<(), TerminalKind> {
        let has_value = matches!(op, Opcode::CALL | Opcode::CALLCODE);
        let need = if has_value { 7 } else { 6 };
        if st.stack.len() < need {
            return Err(TerminalKind::Invalid);
        }
        let _gas = st.stack.pop().unwrap();
        let target = st.stack.pop().unwrap();
        let value = has_value.then(|| st.stack.pop().unwrap());
        let [_arg_off, _arg_len, ret_off, ret_len] = Self::pop_n::<4>(st)?;

        let id = st.next_call;
        st.next_call += 1;
        st.events.push_back(Event::Call(CallSite { id, pc, opcode: op, target: target.clone(), value }));

        let uid = st.fresh_uid();
        let word = sym(op, &[pc as u64, id as u64, uid]);
        let suc = if target.from_calldata() {
            let node = TaintNode::new(
                uid,
                taints([&target]),
                Some(TaintSource { kind: SourceKind::ExtCallResult, calldata_offset: None }),
                Some(id),
            );
            Value { uid, word, taint: Some(node), tags: Tags::default() }
        } else {
            Value { uid, word, taint: None, tags: Tags::default() }
        };
        st.returndata = ReturnData { call: Some(id), link: suc.taint.clone() };
        let ret_id = ret_off.word.ident();
        self.write_chunks(st, &ret_off, &ret_len, |m, st, i| {
            m.returndata_word(st, &[id as u64, ret_id, i as u64 | 1 << 40])
        });
        Self::push(st, suc)
    }

    fn arith(&mut self, st: &mut State, op: Opcode) -> Result<(), TerminalKind> {
        let (pops, _) = op.stack_io();
        if st.stack.len() < pops {
            return Err(TerminalKind::Invalid);
        }
        let args: SmallVec<[Value; 3]> = (0..pops).map(|_| st.stack.pop().unwrap()).collect();
        let konsts: Option<SmallVec<[Word; 3]>> = args.iter().map(|a| a.concrete()).collect();
        let folded = konsts.as_ref().and_then(|k| word::fold(op, k));
        let w = match folded {
            Some(w) => SymWord::Concrete(w),
            None => {
                let ids: SmallVec<[u64; 3]> = args.iter().map(|a| a.word.ident()).collect();
                sym(op, &ids)
            }
        };
        let tags = self.tags_for(op, &args);
        let v = self.mint(st, w, taints(args.iter()), tags);
        Self::push(st, v)
    }

    /// Which side information survives an arithmetic step.
    fn tags_for(&mut self, op: Opcode, args: &[Value]) -> Tags {
        let inherit = |v: &Value| Tags { storage: v.tags.storage, guards: v.tags.guards.clone(), shl96_of: None };
        let concrete = |v: &Value| v.word.is_concrete();
        match op {
            Opcode::ISZERO => Tags { guards: args[0].tags.guards.clone(), ..Tags::default() },
            Opcode::AND => {
                let (x, c) = if concrete(&args[1]) { (&args[0], &args[1]) } else { (&args[1], &args[0]) };
                if !concrete(c) {
                    return Tags::default();
                }
                if c.concrete() == Some(ADDRESS_MASK) {
                    if let Some(k) = direct_param(x) {
                        self.probe.masks.insert(k);
                    }
                }
                inherit(x)
            }
            Opcode::DIV if concrete(&args[1]) => inherit(&args[0]),
            Opcode::SHR | Opcode::SHL if concrete(&args[0]) => {
                let mut t = inherit(&args[1]);
                if args[0].concrete() == Some(Word::from(96u8)) {
                    if op == Opcode::SHL {
                        t.shl96_of = direct_param(&args[1]);
                    } else if let Some(k) = args[1].tags.shl96_of {
                        self.probe.shift_idiom.insert(k);
                    }
                }
                t
            }
            Opcode::EQ | Opcode::SUB | Opcode::XOR => {
                let mut guards: SmallVec<[Guard; 1]> = SmallVec::new();
                for (p, o) in [(&args[0], &args[1]), (&args[1], &args[0])] {
                    if is_trusted_reference(o) {
                        for k in p.cd_clean() {
                            let g = Guard { calldata_offset: *k, kind: GuardKind::Compare };
                            if !guards.contains(&g) {
                                guards.push(g);
                            }
                        }
                    }
                    if concrete(o) {
                        for g in &p.tags.guards {
                            if !guards.contains(g) {
                                guards.push(*g);
                            }
                        }
                    }
                }
                Tags { guards, ..Tags::default() }
            }
            _ => Tags::default(),
        }
    }
}
