//! Taint-tracking symbolic execution of one function at a time.

mod exec;
mod memory;
mod state;
mod value;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::ops::ControlFlow;

use smallvec::SmallVec;

pub use exec::{Machine, ProbeLog, SimConfig, Step, Terminal};
pub use memory::{Memory, Region};
pub use state::{CallSite, EffectSite, Event, JumpiSite, ReturnData, State, StoreSite, TerminalKind};
pub use value::{CallId, Guard, GuardKind, SourceKind, Summary, SymWord, Tags, TaintNode, TaintSource, Uid, Value};

use crate::cfg::FunctionCandidate;

/// State at a function's entry block: the dispatcher's stack (unknown slots as
/// untainted symbols) and the constant memory it set up.
pub fn initial_state(func: &FunctionCandidate) -> State {
    let mut st = State::new(func.entry);
    for (i, slot) in func.entry_stack.iter().enumerate() {
        let uid = st.fresh_uid();
        let word = match slot {
            Some(w) => SymWord::Concrete(*w),
            None => SymWord::Symbol {
                id: value::hash_of(&("entry-stack", i)),
                origin: crate::bytecode::Opcode::JUMPDEST,
            },
        };
        st.stack.push(Value { uid, word, taint: None, tags: Tags::default() });
    }
    for (off, w) in &func.entry_memory {
        let uid = st.fresh_uid();
        st.memory
            .store_word(*off, Value { uid, word: SymWord::Concrete(*w), taint: None, tags: Tags::default() });
    }
    st
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Terminal states handed to the callback.
    pub paths: usize,
    pub truncated: usize,
    pub timed_out: bool,
    /// The callback asked to stop.
    pub stopped_early: bool,
    pub budget_exhausted: bool,
}

struct Pending {
    demotions: u32,
    seq: u64,
    state: State,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.demotions.cmp(&self.demotions).then(self.seq.cmp(&other.seq))
    }
}

/// Prioritized exploration. Branches on calldata-derived conditions explore
/// the jump side first and demote the fallthrough; other branches keep equal
/// priority. Among equals the newest state runs first.
pub fn explore(
    machine: &mut Machine<'_>,
    init: State,
    mut on_terminal: impl FnMut(&Terminal) -> ControlFlow<()>,
) -> SearchStats {
    let mut stats = SearchStats::default();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Pending { demotions: 0, seq, state: init });
    let max_paths = machine.config().max_paths;

    while let Some(Pending { demotions, state, .. }) = heap.pop() {
        if machine.config().deadline.is_some_and(|d| std::time::Instant::now() >= d) {
            stats.timed_out = true;
            break;
        }
        match machine.run_to_branch(state) {
            Step::Done(t) => {
                stats.paths += 1;
                if t.kind.is_truncated() {
                    stats.truncated += 1;
                }
                if t.kind == TerminalKind::Timeout {
                    stats.timed_out = true;
                }
                if on_terminal(&t).is_break() {
                    stats.stopped_early = true;
                    return stats;
                }
                if stats.timed_out {
                    break;
                }
                if stats.paths >= max_paths && !heap.is_empty() {
                    stats.budget_exhausted = true;
                    let mut rest: Vec<Pending> = heap.drain().collect();
                    rest.sort_by(|a, b| b.cmp(a));
                    for p in rest {
                        let pc = machine.cfg().block(p.state.block).start;
                        let t = Terminal { state: p.state, kind: TerminalKind::PathBudget, pc };
                        stats.paths += 1;
                        stats.truncated += 1;
                        if on_terminal(&t).is_break() {
                            stats.stopped_early = true;
                            return stats;
                        }
                    }
                    break;
                }
            }
            Step::Branch { mut jump, mut fall, calldata_cond } => {
                let fall_demotions = demotions + u32::from(calldata_cond);
                fall.demotions = fall_demotions;
                jump.demotions = demotions;
                seq += 1;
                heap.push(Pending { demotions: fall_demotions, seq, state: fall });
                seq += 1;
                heap.push(Pending { demotions, seq, state: jump });
            }
        }
    }
    stats
}

/// Every terminal state reachable from `init`, following both sides of every
/// undecided branch. Intended for small loop-free programs.
pub fn enumerate_all(machine: &mut Machine<'_>, init: State, limit: usize) -> Vec<Terminal> {
    let mut out = Vec::new();
    let mut stack = vec![init];
    while let Some(st) = stack.pop() {
        if out.len() >= limit {
            break;
        }
        match machine.run_to_branch(st) {
            Step::Done(t) => out.push(t),
            Step::Branch { jump, fall, .. } => {
                stack.push(fall);
                stack.push(jump);
            }
        }
    }
    out
}

/// Human-readable dump of one path.
pub fn dump_terminal(path_id: usize, t: &Terminal) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "path {path_id}: {:?} at {:#06x}, {} steps", t.kind, t.pc, t.state.steps);
    if !t.state.trace.is_empty() {
        let blocks: Vec<String> = t.state.trace.iter().map(|b| format!("{b:#x}")).collect();
        let _ = writeln!(out, "  blocks: {}", blocks.join(" "));
    }
    for e in &t.state.events {
        let line = match e {
            Event::Jumpi(j) => format!(
                "jumpi {:#06x} taken={} cond={:?}",
                j.pc, j.taken, j.cond
            ),
            Event::Call(c) => format!("{} #{} {:#06x} target={:?}", c.opcode, c.id, c.pc, c.target),
            Event::Store(s) => format!("sstore {:#06x} key={:?} value={:?}", s.pc, s.key, s.value),
            Event::Effect(x) => {
                let ops: SmallVec<[String; 4]> = x.operands.iter().map(|v| format!("{v:?}")).collect();
                format!("{} {:#06x} {}", x.opcode, x.pc, ops.join(" "))
            }
        };
        let _ = writeln!(out, "  {line}");
    }
    out
}
