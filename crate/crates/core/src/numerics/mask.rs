use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

/// Square boolean attention mask; `true` means the query may attend the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn full(len: usize) -> Self {
        Self { len, allow: vec![true; len * len] }
    }

    pub fn empty(len: usize) -> Self {
        Self { len, allow: vec![false; len * len] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allow[query * self.len + key]
    }

    pub fn set(&mut self, query: usize, key: usize, allowed: bool) {
        self.allow[query * self.len + key] = allowed;
    }

    pub fn set_block(&mut self, queries: Range<usize>, keys: Range<usize>, allowed: bool) {
        for q in queries {
            for k in keys.clone() {
                self.set(q, k, allowed);
            }
        }
    }

    /// Blocks the key column for every query.
    pub fn block_key(&mut self, key: usize) {
        for q in 0..self.len {
            self.set(q, key, false);
        }
    }

    /// The square sub-mask over `range × range`.
    pub fn sub_mask(&self, range: Range<usize>) -> AttentionMask {
        let n = range.len();
        let mut out = AttentionMask::empty(n);
        for (qi, q) in range.clone().enumerate() {
            for (ki, k) in range.clone().enumerate() {
                out.set(qi, ki, self.allows(q, k));
            }
        }
        out
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allow[query * self.len..(query + 1) * self.len]
    }

    pub fn column_all_false(&self, key: usize) -> bool {
        (0..self.len).all(|q| !self.allows(q, key))
    }
}
