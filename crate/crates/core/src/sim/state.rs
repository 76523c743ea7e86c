//! Per-path machine state and the events recorded along a path.

use std::sync::Arc;

use imbl::{HashMap, Vector};
use serde::Serialize;
use smallvec::SmallVec;

use super::memory::Memory;
use super::value::{CallId, TaintNode, Uid, Value};
use crate::bytecode::Opcode;
use crate::cfg::BlockId;

/// Conditional jump whose condition derives from calldata.
#[derive(Debug, Clone)]
pub struct JumpiSite {
    pub pc: usize,
    pub cond: Value,
    pub taken: bool,
}

/// External call.
#[derive(Debug, Clone)]
pub struct CallSite {
    pub id: CallId,
    pub pc: usize,
    pub opcode: Opcode,
    pub target: Value,
    /// Transferred wei for CALL and CALLCODE.
    pub value: Option<Value>,
}

impl CallSite {
    /// Sends a nonzero (or unknown) amount.
    pub fn carries_value(&self) -> bool {
        self.value.as_ref().is_some_and(|v| v.concrete().is_none_or(|w| !w.is_zero()))
    }

    pub fn is_static(&self) -> bool {
        self.opcode == Opcode::STATICCALL
    }
}

#[derive(Debug, Clone)]
pub struct StoreSite {
    pub pc: usize,
    pub key: Value,
    pub value: Value,
}

/// SELFDESTRUCT, CREATE or CREATE2.
#[derive(Debug, Clone)]
pub struct EffectSite {
    pub pc: usize,
    pub opcode: Opcode,
    pub operands: SmallVec<[Value; 4]>,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Event {
    Jumpi(JumpiSite),
    Call(CallSite),
    Store(StoreSite),
    Effect(EffectSite),
}

impl Event {
    pub fn pc(&self) -> usize {
        match self {
            Event::Jumpi(e) => e.pc,
            Event::Call(e) => e.pc,
            Event::Store(e) => e.pc,
            Event::Effect(e) => e.pc,
        }
    }
}

/// Why a path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    Stop,
    Return,
    Revert,
    /// INVALID, undefined opcode, bad jump target or stack fault.
    Invalid,
    SelfDestruct,
    /// Jump destination is symbolic; the path is dropped.
    SymbolicJump,
    LoopBound,
    StepLimit,
    PathBudget,
    Timeout,
}

impl TerminalKind {
    /// Execution was cut short rather than finishing.
    pub fn is_truncated(self) -> bool {
        matches!(
            self,
            TerminalKind::SymbolicJump
                | TerminalKind::LoopBound
                | TerminalKind::StepLimit
                | TerminalKind::PathBudget
                | TerminalKind::Timeout
        )
    }

    /// The transaction's effects are discarded.
    pub fn is_reverting(self) -> bool {
        matches!(self, TerminalKind::Revert | TerminalKind::Invalid)
    }
}

/// Return-data context of the most recent call.
#[derive(Debug, Clone, Default)]
pub struct ReturnData {
    pub call: Option<CallId>,
    /// Success flag node when the callee is calldata-derived.
    pub link: Option<Arc<TaintNode>>,
}

#[derive(Clone)]
pub struct State {
    pub block: BlockId,
    pub stack: Vec<Value>,
    pub memory: Memory,
    pub storage: HashMap<u64, Value>,
    pub transient: HashMap<u64, Value>,
    pub events: Vector<Event>,
    pub visits: HashMap<(BlockId, u64), u8>,
    /// Start offsets of visited blocks, when tracing is on.
    pub trace: Vector<u32>,
    pub returndata: ReturnData,
    pub next_uid: Uid,
    pub next_call: CallId,
    pub steps: u64,
    pub demotions: u32,
}

impl State {
    pub fn new(block: BlockId) -> Self {
        State {
            block,
            stack: Vec::new(),
            memory: Memory::default(),
            storage: HashMap::new(),
            transient: HashMap::new(),
            events: Vector::new(),
            visits: HashMap::new(),
            trace: Vector::new(),
            returndata: ReturnData::default(),
            next_uid: 1,
            next_call: 0,
            steps: 0,
            demotions: 0,
        }
    }

    pub fn fresh_uid(&mut self) -> Uid {
        let u = self.next_uid;
        self.next_uid += 1;
        u
    }
}
