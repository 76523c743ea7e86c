//! 256-bit EVM word arithmetic shared by the constant pre-passes and the simulator.

use ruint::aliases::U256;

use crate::bytecode::Opcode;

pub type Word = U256;

/// `2^160 - 1`, the mask compilers apply to address-typed values.
pub const ADDRESS_MASK: Word = Word::from_limbs([u64::MAX, u64::MAX, 0xffff_ffff, 0]);

pub fn from_be_slice(bytes: &[u8]) -> Word {
    let mut buf = [0u8; 32];
    let n = bytes.len().min(32);
    buf[32 - n..].copy_from_slice(&bytes[bytes.len() - n..]);
    Word::from_be_bytes(buf)
}

pub fn to_usize(w: Word) -> Option<usize> {
    let limbs = w.as_limbs();
    if limbs[1] != 0 || limbs[2] != 0 || limbs[3] != 0 {
        return None;
    }
    usize::try_from(limbs[0]).ok()
}

fn is_negative(w: Word) -> bool {
    w.bit(255)
}

fn twos_neg(w: Word) -> Word {
    w.wrapping_neg()
}

fn abs(w: Word) -> Word {
    if is_negative(w) {
        twos_neg(w)
    } else {
        w
    }
}

fn bool_word(b: bool) -> Word {
    if b {
        Word::from(1u8)
    } else {
        Word::ZERO
    }
}

fn shift_amount(shift: Word) -> Option<usize> {
    to_usize(shift).filter(|s| *s < 256)
}

/// Folds a pure stack opcode over concrete operands, top of stack first.
///
/// Returns `None` for opcodes that are not pure arithmetic or bitwise operations.
pub fn fold(op: Opcode, args: &[Word]) -> Option<Word> {
    let a = *args.first()?;
    let b = args.get(1).copied().unwrap_or_default();
    let out = match op {
        Opcode::ADD => a.wrapping_add(b),
        Opcode::MUL => a.wrapping_mul(b),
        Opcode::SUB => a.wrapping_sub(b),
        Opcode::DIV => a.checked_div(b).unwrap_or_default(),
        Opcode::MOD => a.checked_rem(b).unwrap_or_default(),
        Opcode::SDIV => {
            if b.is_zero() {
                Word::ZERO
            } else {
                let q = abs(a) / abs(b);
                if is_negative(a) != is_negative(b) {
                    twos_neg(q)
                } else {
                    q
                }
            }
        }
        Opcode::SMOD => {
            if b.is_zero() {
                Word::ZERO
            } else {
                let r = abs(a) % abs(b);
                if is_negative(a) {
                    twos_neg(r)
                } else {
                    r
                }
            }
        }
        Opcode::ADDMOD => {
            let n = *args.get(2)?;
            if n.is_zero() {
                Word::ZERO
            } else {
                a.add_mod(b, n)
            }
        }
        Opcode::MULMOD => {
            let n = *args.get(2)?;
            if n.is_zero() {
                Word::ZERO
            } else {
                a.mul_mod(b, n)
            }
        }
        Opcode::EXP => a.wrapping_pow(b),
        Opcode::SIGNEXTEND => {
            // a = byte index, b = value
            match to_usize(a) {
                Some(i) if i < 31 => {
                    let bit = i * 8 + 7;
                    let mask = (Word::from(1u8) << (bit + 1)) - Word::from(1u8);
                    if b.bit(bit) {
                        b | !mask
                    } else {
                        b & mask
                    }
                }
                _ => b,
            }
        }
        Opcode::LT => bool_word(a < b),
        Opcode::GT => bool_word(a > b),
        Opcode::SLT => bool_word(signed_lt(a, b)),
        Opcode::SGT => bool_word(signed_lt(b, a)),
        Opcode::EQ => bool_word(a == b),
        Opcode::ISZERO => bool_word(a.is_zero()),
        Opcode::AND => a & b,
        Opcode::OR => a | b,
        Opcode::XOR => a ^ b,
        Opcode::NOT => !a,
        Opcode::BYTE => match to_usize(a) {
            Some(i) if i < 32 => Word::from(b.to_be_bytes::<32>()[i]),
            _ => Word::ZERO,
        },
        Opcode::SHL => shift_amount(a).map_or(Word::ZERO, |s| b << s),
        Opcode::SHR => shift_amount(a).map_or(Word::ZERO, |s| b >> s),
        Opcode::SAR => match shift_amount(a) {
            Some(s) => b.arithmetic_shr(s),
            None if is_negative(b) => Word::MAX,
            None => Word::ZERO,
        },
        _ => return None,
    };
    Some(out)
}

fn signed_lt(a: Word, b: Word) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    use tiny_keccak::{Hasher, Keccak};
    let mut k = Keccak::v256();
    let mut out = [0u8; 32];
    k.update(data);
    k.finalize(&mut out);
    out
}

/// First four bytes of the keccak hash of a canonical function signature.
pub fn selector(signature: &str) -> u32 {
    let h = keccak256(signature.as_bytes());
    u32::from_be_bytes([h[0], h[1], h[2], h[3]])
}
