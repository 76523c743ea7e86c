//! Keeps only functions that take at least one address-typed parameter.
//!
//! Parameter types are not in the bytecode, so each function is probed with a
//! small path budget and the masking compilers emit for `address` values is
//! recorded per calldata offset.

use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Cfg, FunctionCandidate};
use crate::sim::{explore, initial_state, Machine, SimConfig};

/// Path budget for the type probe.
pub const PROBE_PATHS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Address,
    Word,
    /// Head word of a dynamic (offset-encoded) parameter.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub index: usize,
    pub calldata_offset: u32,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddressFunction {
    #[serde(flatten)]
    pub func: FunctionCandidate,
    pub params: Vec<ParamInfo>,
}

impl AddressFunction {
    pub fn address_params(&self) -> impl Iterator<Item = &ParamInfo> {
        self.params.iter().filter(|p| p.kind == ParamKind::Address)
    }
}

/// A parameter narrowed with `SHL 96`/`SHR 96`, which the probe does not
/// classify as an address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShiftIdiomMiss {
    pub selector: Option<u32>,
    pub param_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<AddressFunction>,
    pub dropped: Vec<FunctionCandidate>,
    pub shift_misses: Vec<ShiftIdiomMiss>,
}

fn param_index(offset: u32) -> Option<usize> {
    (offset >= 4 && (offset - 4).is_multiple_of(32)).then(|| (offset as usize - 4) / 32)
}

/// Probes each candidate and classifies its parameters.
pub fn filter_candidates(
    cfg: &Cfg,
    code: &[u8],
    funcs: &[FunctionCandidate],
    deadline: Option<Instant>,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for f in funcs {
        let config = SimConfig { max_paths: PROBE_PATHS, deadline, ..SimConfig::default() };
        let mut machine = Machine::new(cfg, code, config);
        explore(&mut machine, initial_state(f), |_| ControlFlow::Continue(()));
        let probe = machine.probe;

        let params: Vec<ParamInfo> = probe
            .loads
            .iter()
            .filter_map(|&off| {
                let index = param_index(off)?;
                let kind = if probe.masks.contains(&off) {
                    ParamKind::Address
                } else if probe.dynamic.contains(&off) {
                    ParamKind::Dynamic
                } else {
                    ParamKind::Word
                };
                Some(ParamInfo { index, calldata_offset: off, kind })
            })
            .collect();
        for off in &probe.shift_idiom {
            if let Some(index) = param_index(*off) {
                if !probe.masks.contains(off) {
                    out.shift_misses.push(ShiftIdiomMiss { selector: f.selector, param_index: index });
                }
            }
        }
        if params.iter().any(|p| p.kind == ParamKind::Address) {
            out.kept.push(AddressFunction { func: f.clone(), params });
        } else {
            out.dropped.push(f.clone());
        }
    }
    out
}
