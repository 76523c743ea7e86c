//! Three-phase check over explored paths: missing verification, parameter
//! controlled external call, and a state change that depends on that call.

use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cfg::{AddressFunction, Cfg, ParamInfo, ParamKind};
use crate::sim::{
    explore, initial_state, CallSite, Event, GuardKind, JumpiSite, Machine, SearchStats, SimConfig, Terminal,
};

/// What counts as a parameter being verified before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationMode {
    /// Equality with a trusted address, or a lookup in a mapping keyed by the parameter.
    #[default]
    Whitelist,
    /// Equality with a trusted address only.
    Strict,
    /// Any branch whose condition depends on the parameter.
    Literal,
}

/// Phase at which a function was ruled out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Every path verifies the parameter.
    Verification,
    /// No unverified parameter reaches an external call target.
    ExternalCall,
    /// No state change depends on such a call.
    StateModification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "stopped_at")]
pub enum FunctionStatus {
    /// No parameter is masked as an address.
    NoAddressParams,
    Vulnerable,
    /// Ruled out; the phase is the furthest any path got before failing.
    Clean(Option<Phase>),
    Timeout,
}

/// How the state change is tied to the external call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dependence {
    /// An operand of the state change derives from the call.
    Data,
    /// The state change follows a branch on a value derived from the call.
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub selector: Option<String>,
    pub param_index: usize,
    pub param_offset: u32,
    pub call_pc: usize,
    pub call_opcode: String,
    pub effect_pc: usize,
    pub effect: String,
    pub dependence: Dependence,
    /// The state change is a zero-value external call.
    pub via_plain_call: bool,
    pub path_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub selector: Option<String>,
    pub entry: usize,
    pub params: Vec<ParamInfo>,
    pub status: FunctionStatus,
    /// Per parameter, the furthest phase reached when no finding was made.
    pub stopped_at: Vec<ParamPhase>,
    pub paths: usize,
    pub truncated_paths: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPhase {
    pub param_index: usize,
    pub phase: Option<Phase>,
}

/// Progress order. A path that never touches the parameter gets no further
/// than the external call phase, while one that verifies it has at least
/// seen a use worth checking.
fn progress(p: Phase) -> u8 {
    match p {
        Phase::ExternalCall => 0,
        Phase::Verification => 1,
        Phase::StateModification => 2,
    }
}

fn furthest(a: Option<Phase>, b: Phase) -> Option<Phase> {
    match a {
        Some(x) if progress(x) >= progress(b) => Some(x),
        _ => Some(b),
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectorConfig {
    pub mode: VerificationMode,
    pub sim: SimConfig,
}

struct Witness<'e> {
    call: &'e CallSite,
    effect: &'e Event,
    dependence: Dependence,
    via_plain_call: bool,
}

fn is_verifying(j: &JumpiSite, offset: u32, mode: VerificationMode) -> bool {
    match mode {
        VerificationMode::Literal => j.cond.cd_any().contains(&offset),
        VerificationMode::Strict => j
            .cond
            .tags
            .guards
            .iter()
            .any(|g| g.calldata_offset == offset && g.kind == GuardKind::Compare),
        VerificationMode::Whitelist => j.cond.tags.guards.iter().any(|g| g.calldata_offset == offset),
    }
}

/// Operands of a state-changing event, and whether it only qualifies as a
/// zero-value call.
fn effect_operands(e: &Event) -> Option<(Vec<&crate::sim::Value>, bool, String)> {
    match e {
        Event::Store(s) => Some((vec![&s.key, &s.value], false, "SSTORE".into())),
        Event::Call(c) if !c.is_static() => {
            let mut ops = vec![&c.target];
            ops.extend(c.value.as_ref());
            Some((ops, !c.carries_value(), c.opcode.to_string()))
        }
        Event::Effect(x) => Some((x.operands.iter().collect(), false, x.opcode.to_string())),
        _ => None,
    }
}

/// Checks one parameter against one path. `Err` names the failed phase.
fn check_path<'e>(
    events: &'e [Event],
    reverting: bool,
    param: &ParamInfo,
    mode: VerificationMode,
) -> Result<Witness<'e>, Phase> {
    let k = param.calldata_offset;
    let address = param.kind == ParamKind::Address;
    let verified_at = if address {
        events.iter().position(|e| matches!(e, Event::Jumpi(j) if is_verifying(j, k, mode)))
    } else {
        None
    };
    let candidates: Vec<(usize, &CallSite)> = events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            Event::Call(c) if c.target.cd_any().contains(&k) => Some((i, c)),
            _ => None,
        })
        .collect();

    let first_use = candidates.first().map_or(events.len(), |(i, _)| *i);
    if verified_at.is_some_and(|v| v < first_use) {
        return Err(Phase::Verification);
    }
    let unverified: Vec<(usize, &CallSite)> = candidates
        .into_iter()
        .filter(|(i, _)| verified_at.is_none_or(|v| v > *i))
        .collect();
    if unverified.is_empty() {
        return Err(Phase::ExternalCall);
    }
    if reverting {
        return Err(Phase::StateModification);
    }
    for (ci, call) in unverified {
        let mut control = false;
        for e in &events[ci + 1..] {
            if let Event::Jumpi(j) = e {
                if j.cond.calls().contains(&call.id) {
                    control = true;
                }
                continue;
            }
            let Some((operands, plain, _)) = effect_operands(e) else { continue };
            let data = operands.iter().any(|v| v.calls().contains(&call.id));
            if data || control {
                return Ok(Witness {
                    call,
                    effect: e,
                    dependence: if data { Dependence::Data } else { Dependence::Control },
                    via_plain_call: plain,
                });
            }
        }
    }
    Err(Phase::StateModification)
}

/// Called with each finished path when tracing.
pub type TraceFn<'a> = &'a mut dyn FnMut(usize, &Terminal);

/// Explores one function and applies the three phases to each finished path,
/// stopping at the first finding.
pub fn analyze_function(
    cfg: &Cfg,
    code: &[u8],
    func: &AddressFunction,
    config: &DetectorConfig,
    trace: Option<TraceFn<'_>>,
) -> (FunctionReport, Option<Finding>) {
    let mut machine = Machine::new(cfg, code, config.sim.clone());
    let mut reached: Vec<Option<Phase>> = vec![None; func.params.len()];
    let mut finding = None;
    let mut path_id = 0usize;
    let mut trace = trace;
    let selector = func.func.selector_hex();

    let stats: SearchStats = explore(&mut machine, initial_state(&func.func), |t| {
        let id = path_id;
        path_id += 1;
        if let Some(cb) = trace.as_mut() {
            cb(id, t);
        }
        let events: Vec<Event> = t.state.events.iter().cloned().collect();
        for (pi, param) in func.params.iter().enumerate() {
            match check_path(&events, t.kind.is_reverting(), param, config.mode) {
                Ok(w) => {
                    let (_, _, effect) = effect_operands(w.effect).unwrap();
                    finding = Some(Finding {
                        selector: selector.clone(),
                        param_index: param.index,
                        param_offset: param.calldata_offset,
                        call_pc: w.call.pc,
                        call_opcode: w.call.opcode.to_string(),
                        effect_pc: w.effect.pc(),
                        effect,
                        dependence: w.dependence,
                        via_plain_call: w.via_plain_call,
                        path_id: id,
                    });
                    return ControlFlow::Break(());
                }
                Err(phase) => reached[pi] = furthest(reached[pi], phase),
            }
        }
        ControlFlow::Continue(())
    });

    let overall = reached.iter().flatten().fold(None, |acc, p| furthest(acc, *p));
    let status = if finding.is_some() {
        FunctionStatus::Vulnerable
    } else if stats.timed_out {
        FunctionStatus::Timeout
    } else {
        FunctionStatus::Clean(overall)
    };
    let stopped_at = if finding.is_some() {
        Vec::new()
    } else {
        func.params
            .iter()
            .zip(&reached)
            .map(|(p, r)| ParamPhase { param_index: p.index, phase: *r })
            .collect()
    };
    let report = FunctionReport {
        selector,
        entry: func.func.entry_offset,
        params: func.params.clone(),
        status,
        stopped_at,
        paths: stats.paths,
        truncated_paths: stats.truncated,
        budget_exhausted: stats.budget_exhausted,
    };
    (report, finding)
}

/// Verdict over every terminal state of an exhaustive enumeration; used to
/// cross-check the prioritized search.
pub fn verdict_over(terminals: &[Terminal], func: &AddressFunction, mode: VerificationMode) -> bool {
    terminals.iter().any(|t| {
        let events: Vec<Event> = t.state.events.iter().cloned().collect();
        func.params
            .iter()
            .any(|p| check_path(&events, t.kind.is_reverting(), p, mode).is_ok())
    })
}

/// Convenience deadline helper.
pub fn deadline_after(timeout: std::time::Duration) -> Option<Instant> {
    Instant::now().checked_add(timeout)
}
