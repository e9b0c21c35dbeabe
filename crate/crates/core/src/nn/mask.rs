use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Boolean attend/ignore relation over (query position, key position).
#[derive(Clone, PartialEq, Eq)]
pub struct AttentionMask {
    q_len: usize,
    k_len: usize,
    allow: Vec<bool>,
}

impl fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "AttentionMask {}x{}", self.q_len, self.k_len)?;
        for i in 0..self.q_len {
            let row: String = (0..self.k_len)
                .map(|j| if self.allows(i, j) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

impl AttentionMask {
    pub fn from_fn(q_len: usize, k_len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(q_len * k_len);
        for i in 0..q_len {
            for j in 0..k_len {
                allow.push(f(i, j));
            }
        }
        AttentionMask { q_len, k_len, allow }
    }

    pub fn dense(q_len: usize, k_len: usize) -> Self {
        AttentionMask {
            q_len,
            k_len,
            allow: vec![true; q_len * k_len],
        }
    }

    /// Lower-triangular self-attention mask for the decoder.
    pub fn causal(len: usize) -> Self {
        Self::from_fn(len, len, |i, j| j <= i)
    }

    /// Sliding-window attention with symmetric global positions: `i` attends
    /// `j` iff `|i - j| <= window / 2`, or either position is global.
    pub fn local_global(seq_len: usize, window: usize, global_positions: &BTreeSet<usize>) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("attention window must be >= 1"));
        }
        if let Some(&bad) = global_positions.iter().find(|&&p| p >= seq_len) {
            return Err(Error::invalid(format!(
                "global position {bad} outside sequence of length {seq_len}"
            )));
        }
        Ok(Self::from_fn(seq_len, seq_len, |i, j| {
            2 * i.abs_diff(j) <= window || global_positions.contains(&i) || global_positions.contains(&j)
        }))
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.k_len + j]
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn k_len(&self) -> usize {
        self.k_len
    }

    pub fn is_dense(&self) -> bool {
        self.allow.iter().all(|&a| a)
    }

    /// Number of allowed (query, key) pairs.
    pub fn pair_count(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.q_len).all(|i| (0..self.k_len).all(|j| j <= i || !self.allows(i, j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_window_is_dense() {
        for n in 1..12 {
            let m = AttentionMask::local_global(n, 2 * n, &BTreeSet::new()).unwrap();
            assert!(m.is_dense(), "n={n}");
        }
    }

    #[test]
    fn preconditions() {
        assert!(AttentionMask::local_global(4, 0, &BTreeSet::new()).is_err());
        assert!(AttentionMask::local_global(4, 2, &[4].into_iter().collect()).is_err());
    }

    #[test]
    fn causal_mask_shape() {
        let m = AttentionMask::causal(5);
        assert!(m.is_lower_triangular());
        assert!((0..5).all(|i| m.allows(i, i)));
        assert_eq!(m.pair_count(), 15);
    }

    #[test]
    fn seq8_window2_globals01_enumeration() {
        let globals: BTreeSet<usize> = [0, 1].into_iter().collect();
        let m = AttentionMask::local_global(8, 2, &globals).unwrap();
        // Brute-force oracle over all 64 cells.
        let mut mismatches = 0;
        for i in 0..8i64 {
            for j in 0..8i64 {
                let local = (i - j).abs() <= 1;
                let global = i <= 1 || j <= 1;
                if m.allows(i as usize, j as usize) != (local || global) {
                    mismatches += 1;
                }
            }
        }
        assert_eq!(mismatches, 0);
        // rows 0-1 full (16); row 2 {0..3} (4); rows 3-6 {0,1,i-1,i,i+1} (20); row 7 {0,1,6,7} (4)
        assert_eq!(m.pair_count(), 44);
    }
}
