use alloc::vec;
use alloc::vec::Vec;

use crate::model::{StateId, TransitionMatrix};

/// A probability (or likelihood) vector over states, stored as entries
/// sorted by state index. Absent states carry zero mass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    entries: Vec<(StateId, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn point(state: StateId) -> Self {
        Self {
            entries: vec![(state, 1.0)],
        }
    }

    /// Builds from entries sorted by state with no duplicates.
    pub fn from_sorted(entries: Vec<(StateId, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(i, p)| (i, *p))
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[(StateId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, state: StateId) -> f64 {
        match self.entries.binary_search_by_key(&state, |e| e.0) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, p) in &self.entries {
            out[i] = p;
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(StateId, f64) -> bool) {
        self.entries.retain(|&(s, p)| keep(s, p));
    }

    /// Keeps only `state`, divided by `norm`.
    pub fn condition_on(&mut self, state: StateId, norm: f64) {
        let p = self.get(state);
        self.entries.clear();
        if p > 0.0 {
            self.entries.push((state, p / norm));
        }
    }

    /// Dot product with a dense vector.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, p)| p * dense[i]).sum()
    }
}

/// Scatter-gather accumulator over the full state range. Reused across
/// steps so sparse propagation costs O(touched) instead of O(|S|).
#[derive(Debug, Clone)]
pub(crate) struct Scatter {
    acc: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<StateId>,
}

impl Scatter {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            acc: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, i: StateId, v: f64) {
        if !self.seen[i] {
            self.seen[i] = true;
            self.touched.push(i);
        }
        self.acc[i] += v;
    }

    /// Returns accumulated positive entries in state order and resets.
    pub(crate) fn drain(&mut self) -> SparseVec {
        self.touched.sort_unstable();
        let mut entries = Vec::with_capacity(self.touched.len());
        for &i in &self.touched {
            let v = self.acc[i];
            if v > 0.0 {
                entries.push((i, v));
            }
            self.acc[i] = 0.0;
            self.seen[i] = false;
        }
        self.touched.clear();
        SparseVec { entries }
    }

    /// `m^T · v`, i.e. one forward transition of a (sub-)distribution.
    pub(crate) fn propagate(&mut self, v: &SparseVec, m: &TransitionMatrix) -> SparseVec {
        for &(j, p) in v.entries() {
            let (cols, vals) = m.row(j);
            for (&i, &w) in cols.iter().zip(vals) {
                self.add(i, p * w);
            }
        }
        self.drain()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_propagates_and_resets() {
        let m = TransitionMatrix::from_dense(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let mut sc = Scatter::new(2);
        let v = SparseVec::from_dense(&[0.5, 0.5]);
        let out = sc.propagate(&v, &m);
        assert!((out.get(0) - 0.6).abs() < 1e-15);
        assert!((out.get(1) - 0.4).abs() < 1e-15);
        let again = sc.propagate(&SparseVec::point(1), &m);
        assert_eq!(again.entries(), &[(0, 0.3), (1, 0.7)]);
    }

    #[test]
    fn condition_on_missing_state_empties() {
        let mut v = SparseVec::from_dense(&[0.5, 0.0, 0.5]);
        v.condition_on(1, 1.0);
        assert!(v.is_empty());
        let mut w = SparseVec::from_dense(&[0.25, 0.75]);
        w.condition_on(1, 0.75);
        assert_eq!(w.entries(), &[(1, 1.0)]);
    }
}
