//! Byte-addressed symbolic memory built from value slices.
//!
//! Each cell covers `len` bytes taken from the big-endian image of a value,
//! starting at byte `skip`. Overlapping writes trim older cells, so aligned
//! re-reads return the stored value itself while misaligned reads can still be
//! assembled from concrete bytes or summarised as a mixed symbol.

use std::sync::Arc;

use imbl::{HashMap, OrdMap};

use super::value::{hash_of, TaintNode, Value};
use crate::word::{self, Word};

/// Concrete offsets beyond this are treated as unaddressable.
pub const MAX_CONCRETE_OFFSET: usize = 1 << 24;

#[derive(Clone)]
struct Cell {
    len: u8,
    skip: u8,
    value: Value,
}

impl Cell {
    fn end(&self, start: usize) -> usize {
        start + self.len as usize
    }
}

/// Result of reading a memory region.
pub struct Region {
    /// Whole content if every byte is known.
    pub bytes: Option<Vec<u8>>,
    /// Set when the region is exactly one full stored word.
    pub exact: Option<Value>,
    /// Tainted values overlapping the region.
    pub taints: Vec<Arc<TaintNode>>,
    /// Structural identity of the region's content.
    pub ident: u64,
}

#[derive(Clone, Default)]
pub struct Memory {
    cells: OrdMap<usize, Cell>,
    shadow: HashMap<u64, Value>,
    generation: u64,
    extent: usize,
}

impl Memory {
    /// Bumped on every write; used to name reads of unknown symbolic offsets.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Highest byte touched, rounded up to a word.
    pub fn size(&self) -> usize {
        self.extent.div_ceil(32) * 32
    }

    fn touch(&mut self, end: usize) {
        self.generation += 1;
        self.extent = self.extent.max(end);
    }

    /// Stores `len` bytes of `value` (starting at byte `skip` of its image) at `off`.
    pub fn write(&mut self, off: usize, value: Value, skip: u8, len: u8) {
        if len == 0 || off > MAX_CONCRETE_OFFSET {
            return;
        }
        let end = off + len as usize;
        let overlapping: Vec<(usize, Cell)> = self
            .cells
            .range(off.saturating_sub(31)..end)
            .filter(|(s, c)| c.end(**s) > off)
            .map(|(s, c)| (*s, c.clone()))
            .collect();
        for (s, c) in overlapping {
            self.cells.remove(&s);
            if s < off {
                let keep = (off - s) as u8;
                self.cells.insert(s, Cell { len: keep, skip: c.skip, value: c.value.clone() });
            }
            let c_end = c.end(s);
            if c_end > end {
                let cut = (end - s) as u8;
                self.cells.insert(
                    end,
                    Cell { len: (c_end - end) as u8, skip: c.skip + cut, value: c.value },
                );
            }
        }
        self.cells.insert(off, Cell { len, skip, value });
        self.touch(end);
    }

    pub fn store_word(&mut self, off: usize, value: Value) {
        self.write(off, value, 0, 32);
    }

    pub fn store_byte(&mut self, off: usize, value: Value) {
        self.write(off, value, 31, 1);
    }

    pub fn store_symbolic(&mut self, key: u64, value: Value) {
        self.generation += 1;
        self.shadow.insert(key, value);
    }

    pub fn load_symbolic(&self, key: u64) -> Option<&Value> {
        self.shadow.get(&key)
    }

    /// Reads `[off, off + len)`; absent bytes read as zero.
    pub fn read(&self, off: usize, len: usize) -> Region {
        let end = off.saturating_add(len);
        let mut bytes = Some(vec![0u8; len]);
        let mut taints: Vec<Arc<TaintNode>> = Vec::new();
        let mut parts: Vec<(usize, u64, u8, u8)> = Vec::new();
        let mut exact = None;
        if off <= MAX_CONCRETE_OFFSET && len > 0 {
            for (s, c) in self.cells.range(off.saturating_sub(31)..end) {
                let s = *s;
                let c_end = c.end(s);
                if c_end <= off {
                    continue;
                }
                if s == off && len == 32 && c.len == 32 && c.skip == 0 {
                    exact = Some(c.value.clone());
                }
                if let Some(t) = &c.value.taint {
                    if !taints.iter().any(|x| Arc::ptr_eq(x, t)) {
                        taints.push(t.clone());
                    }
                }
                parts.push((s, c.value.word.ident(), c.skip, c.len));
                let lo = s.max(off);
                let hi = c_end.min(end);
                match (&mut bytes, c.value.concrete()) {
                    (Some(buf), Some(w)) => {
                        let image = w.to_be_bytes::<32>();
                        let from = c.skip as usize + (lo - s);
                        buf[lo - off..hi - off].copy_from_slice(&image[from..from + (hi - lo)]);
                    }
                    _ => bytes = None,
                }
            }
        }
        let ident = match &bytes {
            Some(b) => hash_of(&(1u8, b)),
            None => hash_of(&(2u8, off, len, &parts)),
        };
        Region { bytes, exact, taints, ident }
    }

    /// Copies `len` bytes from `src` to `dest` cell by cell.
    pub fn copy(&mut self, dest: usize, src: usize, len: usize) {
        if src > MAX_CONCRETE_OFFSET || dest > MAX_CONCRETE_OFFSET {
            return;
        }
        let end = src + len;
        let pieces: Vec<(usize, Cell)> = self
            .cells
            .range(src.saturating_sub(31)..end)
            .filter(|(s, c)| c.end(**s) > src)
            .map(|(s, c)| (*s, c.clone()))
            .collect();
        // Clear the destination first so gaps read as zero.
        let zero = Value {
            uid: 0,
            word: super::value::SymWord::Concrete(Word::ZERO),
            taint: None,
            tags: Default::default(),
        };
        let mut at = dest;
        while at < dest + len {
            let n = (dest + len - at).min(32);
            self.write(at, zero.clone(), 0, n as u8);
            at += n;
        }
        for (s, c) in pieces {
            let lo = s.max(src);
            let hi = c.end(s).min(end);
            let skip = c.skip + (lo - s) as u8;
            self.write(dest + (lo - src), c.value, skip, (hi - lo) as u8);
        }
    }

    /// Concrete word at `off`, if all 32 bytes are known.
    pub fn concrete_word(&self, off: usize) -> Option<Word> {
        self.read(off, 32).bytes.map(|b| word::from_be_slice(&b))
    }
}
