//! Symbolic values and the taint graph attached to them.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::Serialize;
use smallvec::SmallVec;

use crate::bytecode::Opcode;
use crate::word::Word;

/// Identity of a node in the taint graph; unique within one path.
pub type Uid = u64;

/// Identifier of an external call site along a path.
pub type CallId = u32;

/// Content of a value: a known constant or an opaque symbol.
///
/// Symbols built from the same operation on the same operands share an id, so
/// re-deriving a storage key or memory offset yields the same symbol.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymWord {
    Concrete(Word),
    Symbol { id: u64, origin: Opcode },
}

impl SymWord {
    pub fn concrete(&self) -> Option<Word> {
        match self {
            SymWord::Concrete(w) => Some(*w),
            SymWord::Symbol { .. } => None,
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, SymWord::Concrete(_))
    }

    /// Stable identity usable for hash-consing.
    pub fn ident(&self) -> u64 {
        match self {
            SymWord::Concrete(w) => hash_of(&(0u8, w)),
            SymWord::Symbol { id, .. } => *id,
        }
    }
}

impl fmt::Debug for SymWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymWord::Concrete(w) => write!(f, "{w:#x}"),
            SymWord::Symbol { id, origin } => write!(f, "{origin}#{:x}", id & 0xffff_ffff),
        }
    }
}

pub(crate) fn hash_of<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

/// Kinds of taint source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    CallDataLoad,
    CallDataCopy,
    Origin,
    Caller,
    Balance,
    CallValue,
    ExtCallResult,
}

impl SourceKind {
    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn for_opcode(op: Opcode) -> Option<SourceKind> {
        Some(match op {
            Opcode::CALLDATALOAD => SourceKind::CallDataLoad,
            Opcode::CALLDATACOPY => SourceKind::CallDataCopy,
            Opcode::ORIGIN => SourceKind::Origin,
            Opcode::CALLER => SourceKind::Caller,
            Opcode::BALANCE => SourceKind::Balance,
            Opcode::CALLVALUE => SourceKind::CallValue,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaintSource {
    pub kind: SourceKind,
    /// Calldata byte offset for calldata sources with a constant offset.
    pub calldata_offset: Option<u32>,
}

/// Aggregated facts about a node's ancestry, computed once at creation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    /// Calldata offsets anywhere in the ancestry.
    pub cd_any: SmallVec<[u32; 4]>,
    /// Calldata offsets reachable without passing through a call result.
    pub cd_clean: SmallVec<[u32; 4]>,
    /// External calls in the ancestry.
    pub calls: SmallVec<[CallId; 4]>,
    kinds: u8,
}

fn union_into<T: Ord + Copy>(dst: &mut SmallVec<[T; 4]>, src: &[T]) {
    for x in src {
        if let Err(pos) = dst.binary_search(x) {
            dst.insert(pos, *x);
        }
    }
}

impl Summary {
    pub fn has_kind(&self, kind: SourceKind) -> bool {
        self.kinds & kind.bit() != 0
    }

    /// Ancestry reaches a calldata read.
    pub fn from_calldata(&self) -> bool {
        self.has_kind(SourceKind::CallDataLoad) || self.has_kind(SourceKind::CallDataCopy)
    }

    pub fn kinds(&self) -> impl Iterator<Item = SourceKind> + '_ {
        use SourceKind::*;
        [CallDataLoad, CallDataCopy, Origin, Caller, Balance, CallValue, ExtCallResult]
            .into_iter()
            .filter(|k| self.has_kind(*k))
    }
}

/// Node of the taint graph. Predecessors are the tainted values this one was
/// derived from.
pub struct TaintNode {
    pub uid: Uid,
    pub preds: SmallVec<[Arc<TaintNode>; 2]>,
    pub source: Option<TaintSource>,
    /// Set on call success flags; calldata offsets behind it are not "clean".
    pub call: Option<CallId>,
    pub summary: Summary,
}

impl TaintNode {
    pub fn new(
        uid: Uid,
        preds: SmallVec<[Arc<TaintNode>; 2]>,
        source: Option<TaintSource>,
        call: Option<CallId>,
    ) -> Arc<TaintNode> {
        let mut summary = Summary::default();
        for p in &preds {
            union_into(&mut summary.cd_any, &p.summary.cd_any);
            if call.is_none() {
                union_into(&mut summary.cd_clean, &p.summary.cd_clean);
            }
            union_into(&mut summary.calls, &p.summary.calls);
            summary.kinds |= p.summary.kinds;
        }
        if let Some(src) = source {
            summary.kinds |= src.kind.bit();
            if let Some(off) = src.calldata_offset {
                union_into(&mut summary.cd_any, &[off]);
                union_into(&mut summary.cd_clean, &[off]);
            }
        }
        if let Some(c) = call {
            union_into(&mut summary.calls, &[c]);
        }
        Arc::new(TaintNode { uid, preds, source, call, summary })
    }

    /// Every node in the ancestry, including this one, in DFS order.
    pub fn ancestry(self: &Arc<Self>) -> Vec<Arc<TaintNode>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(n) = stack.pop() {
            if !seen.insert(Arc::as_ptr(&n)) {
                continue;
            }
            stack.extend(n.preds.iter().cloned());
            out.push(n);
        }
        out
    }
}

impl fmt::Debug for TaintNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaintNode")
            .field("uid", &self.uid)
            .field("preds", &self.preds.iter().map(|p| p.uid).collect::<Vec<_>>())
            .field("source", &self.source)
            .field("call", &self.call)
            .finish()
    }
}

/// Evidence that a value checks a parameter against something trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Guard {
    pub calldata_offset: u32,
    pub kind: GuardKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardKind {
    /// Equality with a constant address or a stored value.
    Compare,
    /// Lookup in a storage mapping keyed by the parameter.
    Mapping,
}

/// Side information carried with a value but not part of the taint graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tags {
    /// Loaded from storage with an untainted key.
    pub storage: bool,
    pub guards: SmallVec<[Guard; 1]>,
    /// `SHL 96` applied to this calldata offset.
    pub shl96_of: Option<u32>,
}

#[derive(Clone)]
pub struct Value {
    pub uid: Uid,
    pub word: SymWord,
    pub taint: Option<Arc<TaintNode>>,
    pub tags: Tags,
}

impl Value {
    pub fn concrete(&self) -> Option<Word> {
        self.word.concrete()
    }

    pub fn is_tainted(&self) -> bool {
        self.taint.is_some()
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.taint.as_ref().map(|t| &t.summary)
    }

    pub fn from_calldata(&self) -> bool {
        self.summary().is_some_and(Summary::from_calldata)
    }

    pub fn cd_any(&self) -> &[u32] {
        self.summary().map_or(&[], |s| &s.cd_any)
    }

    pub fn cd_clean(&self) -> &[u32] {
        self.summary().map_or(&[], |s| &s.cd_clean)
    }

    pub fn calls(&self) -> &[CallId] {
        self.summary().map_or(&[], |s| &s.calls)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}={:?}", self.uid, self.word)?;
        if let Some(t) = &self.taint {
            write!(f, " taint{:?}", t.summary.cd_any.as_slice())?;
        }
        if !self.tags.guards.is_empty() {
            write!(f, " guards{:?}", self.tags.guards.as_slice())?;
        }
        Ok(())
    }
}
