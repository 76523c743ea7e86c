//! Detects deployment (constructor) code and slices out the runtime it returns.

use serde::{Deserialize, Serialize};

use super::{disassemble, BytecodeError, ConstStack, Opcode, RawCode};
use crate::word;

/// How the analysed code was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuntimeDecision {
    /// A constructor copy-and-return pattern was found; the returned slice is analysed.
    Extracted { offset: usize, length: usize },
    /// No constructor pattern; the input is analysed as runtime code.
    AsIs,
}

#[derive(Debug, Clone)]
pub struct RuntimeExtraction {
    pub runtime: RawCode,
    pub decision: RuntimeDecision,
    pub warning: Option<String>,
}

struct PendingCopy {
    dest: Option<word::Word>,
    src: Option<word::Word>,
    size: Option<word::Word>,
}

/// Looks for `CODECOPY(dest, src, size)` followed in the same straight-line
/// segment by `RETURN(dest, size)`. The copied slice becomes the runtime.
pub fn extract_runtime(code: &RawCode) -> Result<RuntimeExtraction, BytecodeError> {
    let bytes = code.bytes();
    let instrs = disassemble(bytes);
    let mut stack = ConstStack::default();
    let mut pending: Option<PendingCopy> = None;
    let mut warning = None;

    for ins in &instrs {
        if ins.opcode == Opcode::JUMPDEST {
            stack = ConstStack::default();
            pending = None;
        }
        match ins.opcode {
            Opcode::CODECOPY => {
                pending = Some(PendingCopy {
                    dest: stack.peek(0),
                    src: stack.peek(1),
                    size: stack.peek(2),
                });
            }
            Opcode::RETURN => {
                if let Some(copy) = pending.take() {
                    let ret_off = stack.peek(0);
                    let ret_len = stack.peek(1);
                    let decoded = (
                        copy.dest.and_then(word::to_usize),
                        copy.src.and_then(word::to_usize),
                        copy.size.and_then(word::to_usize),
                        ret_off.and_then(word::to_usize),
                        ret_len.and_then(word::to_usize),
                    );
                    match decoded {
                        (Some(dest), Some(src), Some(size), Some(off), Some(len))
                            if dest == off && size == len =>
                        {
                            if size == 0 {
                                return Err(BytecodeError::EmptyRuntime);
                            }
                            if src > ins.offset && src + size <= bytes.len() {
                                let runtime = RawCode::new(
                                    bytes[src..src + size].to_vec(),
                                    code.origin(),
                                )?;
                                return Ok(RuntimeExtraction {
                                    runtime,
                                    decision: RuntimeDecision::Extracted { offset: src, length: size },
                                    warning: None,
                                });
                            }
                        }
                        (Some(_), Some(_), Some(_), Some(_), Some(_)) => {}
                        _ => {
                            warning.get_or_insert_with(|| {
                                format!(
                                    "CODECOPY/RETURN at {:#x} has non-static arguments; treating input as runtime code",
                                    ins.offset
                                )
                            });
                        }
                    }
                }
            }
            _ => {}
        }
        stack.exec(ins);
        if ins.opcode.is_terminator() {
            stack = ConstStack::default();
            pending = None;
        }
    }

    Ok(RuntimeExtraction { runtime: code.clone(), decision: RuntimeDecision::AsIs, warning })
}
