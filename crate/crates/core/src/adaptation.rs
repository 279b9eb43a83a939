//! Conditioning an object's a-priori chain on all of its observations.
//!
//! The forward pass walks from the first to the last observation and stores,
//! per tick, the time-reversed transition rows `R(t)` (where did the object
//! come from, given the past). The backward pass walks `R` back from the last
//! observation and yields the a-posteriori forward rows `F(t)` together with
//! the posterior marginals. Sampling along `F` from the first observation
//! reproduces exactly the distribution of observation-consistent paths.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::model::{
    Distribution, MarkovModel, ObjectId, Observation, StateId, Time, UncertainObject,
};
use crate::sparse::{Scatter, SparseVec};
use crate::{Error, Result};

/// Masses below this are treated as zero; the corresponding row is absent.
pub const MASS_GUARD: f64 = 1e-300;

/// Sparse conditional transition rows. Rows of states with no probability
/// mass are absent and must never be read.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionalMatrix {
    rows: Vec<StateId>,
    offsets: Vec<usize>,
    cols: Vec<StateId>,
    vals: Vec<f64>,
}

impl ConditionalMatrix {
    /// Builds from `(row, col, weight)` triplets sorted by `(row, col)`.
    /// Each row is normalized by its sum; rows with sum at or below
    /// [`MASS_GUARD`] are dropped. Returns the matrix and the row sums.
    fn from_joint(joint: &[(StateId, StateId, f64)]) -> (Self, SparseVec) {
        let mut m = Self {
            offsets: alloc::vec![0],
            ..Self::default()
        };
        let mut sums = Vec::new();
        let mut start = 0;
        while start < joint.len() {
            let row = joint[start].0;
            let end = start + joint[start..].partition_point(|e| e.0 == row);
            let total: f64 = joint[start..end].iter().map(|e| e.2).sum();
            if total > MASS_GUARD {
                m.rows.push(row);
                for e in &joint[start..end] {
                    m.cols.push(e.1);
                    m.vals.push(e.2 / total);
                }
                m.offsets.push(m.cols.len());
                sums.push((row, total));
            }
            start = end;
        }
        (m, SparseVec::from_sorted(sums))
    }

    /// Builds from explicit rows; used when loading a dump.
    pub fn from_rows(mut rows: Vec<(StateId, Vec<(StateId, f64)>)>) -> Self {
        rows.sort_by_key(|r| r.0);
        let mut m = Self {
            offsets: alloc::vec![0],
            ..Self::default()
        };
        for (row, mut entries) in rows {
            entries.sort_by_key(|e| e.0);
            m.rows.push(row);
            for (c, v) in entries {
                m.cols.push(c);
                m.vals.push(v);
            }
            m.offsets.push(m.cols.len());
        }
        m
    }

    pub fn row(&self, i: StateId) -> Option<(&[StateId], &[f64])> {
        let k = self.rows.binary_search(&i).ok()?;
        let (a, b) = (self.offsets[k], self.offsets[k + 1]);
        Some((&self.cols[a..b], &self.vals[a..b]))
    }

    pub fn defined_rows(&self) -> &[StateId] {
        &self.rows
    }

    /// `(row, col, probability)` for every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (StateId, StateId, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(k, &r)| {
            (self.offsets[k]..self.offsets[k + 1]).map(move |e| (r, self.cols[e], self.vals[e]))
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
}

/// Output of [`forward_pass`]. `backward[k]` is `R(first + k + 1)`, mapping a
/// state at that tick to its predecessor; `marginals[k]` is the distribution
/// at `first + k` given observations up to and including that tick.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub first: Time,
    pub backward: Vec<ConditionalMatrix>,
    pub marginals: Vec<SparseVec>,
}

/// Output of [`backward_pass`]. `forward[k]` is `F(first + k)` (transition to
/// the next tick); `marginals[k]` is the posterior at `first + k`.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub forward: Vec<ConditionalMatrix>,
    pub marginals: Vec<SparseVec>,
}

fn group_joint(mut joint: Vec<(StateId, StateId, f64)>) -> Vec<(StateId, StateId, f64)> {
    joint.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    joint
}

pub fn forward_pass(o: &UncertainObject) -> Result<ForwardPass> {
    let (first, last) = o.span();
    let mut s = SparseVec::point(o.observations()[0].state);
    let mut backward = Vec::with_capacity((last - first) as usize);
    let mut marginals = Vec::with_capacity((last - first) as usize + 1);
    marginals.push(s.clone());
    for t in first + 1..=last {
        let m = o.transition(t - 1)?;
        // X'(t)_{ij} = M(t-1)_{ji} s_j, joint of (o(t) = i, o(t-1) = j)
        let mut joint = Vec::new();
        for &(j, sj) in s.entries() {
            let (cols, vals) = m.row(j);
            joint.extend(cols.iter().zip(vals).map(|(&i, &w)| (i, j, w * sj)));
        }
        let (r, next) = ConditionalMatrix::from_joint(&group_joint(joint));
        s = next;
        if let Some(theta) = o.observation_at(t) {
            if s.get(theta) <= MASS_GUARD {
                return Err(Error::Inconsistent {
                    object: o.id(),
                    time: t,
                });
            }
            s = SparseVec::point(theta);
        }
        backward.push(r);
        marginals.push(s.clone());
    }
    Ok(ForwardPass {
        first,
        backward,
        marginals,
    })
}

pub fn backward_pass(fwd: &ForwardPass, o: &UncertainObject) -> Result<BackwardPass> {
    let (first, last) = o.span();
    debug_assert_eq!(fwd.first, first);
    let len = (last - first) as usize;
    let mut forward = Vec::with_capacity(len);
    let mut marginals = Vec::with_capacity(len + 1);
    let mut s = SparseVec::point(o.observations()[o.observations().len() - 1].state);
    marginals.push(s.clone());
    for t in (first..last).rev() {
        let r = &fwd.backward[(t - first) as usize];
        // X'(t)_{ij} = R(t+1)_{ji} s_j, joint of (o(t) = i, o(t+1) = j)
        let mut joint = Vec::new();
        for &(j, sj) in s.entries() {
            let (cols, vals) = r.row(j).ok_or(Error::Inconsistent {
                object: o.id(),
                time: t + 1,
            })?;
            joint.extend(cols.iter().zip(vals).map(|(&i, &w)| (i, j, w * sj)));
        }
        let (f, next) = ConditionalMatrix::from_joint(&group_joint(joint));
        s = next;
        if let Some(theta) = o.observation_at(t) {
            if s.get(theta) <= MASS_GUARD {
                return Err(Error::Inconsistent {
                    object: o.id(),
                    time: t,
                });
            }
            s = SparseVec::point(theta);
        }
        forward.push(f);
        marginals.push(s.clone());
    }
    forward.reverse();
    marginals.reverse();
    Ok(BackwardPass { forward, marginals })
}

/// The a-posteriori model of one object.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    object: ObjectId,
    first: Time,
    last: Time,
    first_state: StateId,
    backward: Vec<ConditionalMatrix>,
    forward: Vec<ConditionalMatrix>,
    marginals: Vec<SparseVec>,
    prior: Arc<MarkovModel>,
}

pub fn adapt(o: &UncertainObject) -> Result<AdaptedModel> {
    let fwd = forward_pass(o)?;
    let bwd = backward_pass(&fwd, o)?;
    let (first, last) = o.span();
    Ok(AdaptedModel {
        object: o.id(),
        first,
        last,
        first_state: o.observations()[0].state,
        backward: fwd.backward,
        forward: bwd.forward,
        marginals: bwd.marginals,
        prior: o.model().clone(),
    })
}

impl AdaptedModel {
    /// Reassembles a model from stored parts (e.g. a cache dump). The
    /// vectors must have the lengths produced by [`adapt`].
    pub fn from_parts(
        object: ObjectId,
        span: (Time, Time),
        backward: Vec<ConditionalMatrix>,
        forward: Vec<ConditionalMatrix>,
        marginals: Vec<SparseVec>,
        prior: Arc<MarkovModel>,
    ) -> Result<Self> {
        let (first, last) = span;
        let len = last
            .checked_sub(first)
            .ok_or(Error::InvalidParameter("empty span".into()))? as usize;
        if backward.len() != len || forward.len() != len || marginals.len() != len + 1 {
            return Err(Error::InvalidParameter(
                "adapted model parts do not match span".into(),
            ));
        }
        let first_state = match marginals[0].entries() {
            [(s, _)] => *s,
            _ => {
                return Err(Error::InvalidParameter(
                    "first marginal is not a point mass".into(),
                ))
            }
        };
        Ok(Self {
            object,
            first,
            last,
            first_state,
            backward,
            forward,
            marginals,
            prior,
        })
    }

    pub fn object(&self) -> ObjectId {
        self.object
    }

    pub fn span(&self) -> (Time, Time) {
        (self.first, self.last)
    }

    pub fn first_state(&self) -> StateId {
        self.first_state
    }

    pub fn state_count(&self) -> usize {
        self.prior.state_count()
    }

    /// The a-priori model this was adapted from.
    pub fn prior(&self) -> &Arc<MarkovModel> {
        &self.prior
    }

    /// `R(t)` for `t` in `(first, last]`.
    pub fn backward_at(&self, t: Time) -> Option<&ConditionalMatrix> {
        if t <= self.first || t > self.last {
            return None;
        }
        self.backward.get((t - self.first - 1) as usize)
    }

    /// `F(t)` for `t` in `[first, last)`.
    pub fn forward_at(&self, t: Time) -> Option<&ConditionalMatrix> {
        if t < self.first || t >= self.last {
            return None;
        }
        self.forward.get((t - self.first) as usize)
    }

    /// Posterior marginal at `t` within the span, sparse.
    pub fn marginal(&self, t: Time) -> Option<&SparseVec> {
        if t < self.first || t > self.last {
            return None;
        }
        self.marginals.get((t - self.first) as usize)
    }

    /// Posterior distribution at `t`. After the last observation nothing is
    /// left to condition on, so the last marginal is propagated with the
    /// a-priori chain.
    pub fn posterior_distribution(&self, t: Time) -> Result<Distribution> {
        let n = self.state_count();
        if let Some(v) = self.marginal(t) {
            return Ok(Distribution::from_sparse(v, n));
        }
        if t < self.first {
            return Err(Error::OutOfSpan {
                object: self.object,
                time: t,
            });
        }
        let mut v = self.marginals[self.marginals.len() - 1].clone();
        let mut scatter = Scatter::new(n);
        for tick in self.last..t {
            v = scatter.propagate(&v, self.prior.at(tick)?);
        }
        Ok(Distribution::from_sparse(&v, n))
    }
}

/// Adapted models keyed by object id and a hash of its observations, so a
/// changed observation list invalidates the entry.
#[derive(Debug, Default)]
pub struct AdaptationCache {
    entries: BTreeMap<(ObjectId, u64), Arc<AdaptedModel>>,
}

impl AdaptationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_adapt(&mut self, o: &UncertainObject) -> Result<Arc<AdaptedModel>> {
        let key = (o.id(), observations_hash(o.observations()));
        if let Some(a) = self.entries.get(&key) {
            return Ok(a.clone());
        }
        let a = Arc::new(adapt(o)?);
        self.entries.insert(key, a.clone());
        Ok(a)
    }

    pub fn insert(&mut self, o: &UncertainObject, a: Arc<AdaptedModel>) {
        self.entries
            .insert((o.id(), observations_hash(o.observations())), a);
    }

    pub fn get(&self, o: &UncertainObject) -> Option<&Arc<AdaptedModel>> {
        self.entries
            .get(&(o.id(), observations_hash(o.observations())))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// FNV-1a over `(time, state)` pairs.
pub fn observations_hash(obs: &[Observation]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for o in obs {
        for b in (o.time as u64)
            .to_le_bytes()
            .into_iter()
            .chain((o.state as u64).to_le_bytes())
        {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{propagate, TransitionMatrix};
    use alloc::vec;

    fn obj(obs: &[(Time, StateId)], m: TransitionMatrix) -> UncertainObject {
        let obs = obs.iter().map(|&(t, s)| Observation::new(t, s)).collect();
        UncertainObject::new(ObjectId(1), obs, Arc::new(MarkovModel::Homogeneous(m))).unwrap()
    }

    fn uniform2() -> TransitionMatrix {
        TransitionMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn identity_single_observation() {
        let o = obj(&[(0, 1)], TransitionMatrix::identity(3));
        let a = adapt(&o).unwrap();
        assert_eq!(a.span(), (0, 0));
        assert_eq!(
            a.posterior_distribution(0).unwrap().probs(),
            &[0.0, 1.0, 0.0]
        );
        assert_eq!(
            a.posterior_distribution(4).unwrap().probs(),
            &[0.0, 1.0, 0.0]
        );

        let o = obj(&[(0, 1), (3, 1)], TransitionMatrix::identity(3));
        let fwd = forward_pass(&o).unwrap();
        for r in &fwd.backward {
            assert_eq!(r.defined_rows(), &[1]);
            assert_eq!(r.row(1).unwrap(), (&[1usize][..], &[1.0][..]));
        }
    }

    #[test]
    fn forward_one_step_bayes() {
        let o = obj(&[(0, 0), (1, 0)], uniform2());
        let fwd = forward_pass(&o).unwrap();
        let r = &fwd.backward[0];
        assert_eq!(r.row(0).unwrap(), (&[0usize][..], &[1.0][..]));
        assert_eq!(r.row(1).unwrap(), (&[0usize][..], &[1.0][..]));
    }

    #[test]
    fn midpoint_posterior_by_enumeration() {
        // paths s0 s0 s0 and s0 s1 s0, each with weight 1/4 before normalizing
        let o = obj(&[(0, 0), (2, 0)], uniform2());
        let a = adapt(&o).unwrap();
        let mid = a.posterior_distribution(1).unwrap();
        assert!((mid.probs()[0] - 0.5).abs() < 1e-12 && (mid.probs()[1] - 0.5).abs() < 1e-12);
        let f0 = a.forward_at(0).unwrap();
        assert_eq!(f0.row(0).unwrap(), (&[0usize, 1][..], &[0.5, 0.5][..]));
        assert!(f0.row(1).is_none());
        let f1 = a.forward_at(1).unwrap();
        assert_eq!(f1.row(0).unwrap(), (&[0usize][..], &[1.0][..]));
        assert_eq!(f1.row(1).unwrap(), (&[0usize][..], &[1.0][..]));
    }

    #[test]
    fn asymmetric_two_step_matches_enumeration() {
        let m = TransitionMatrix::from_dense(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let o = obj(&[(0, 0), (2, 1)], m);
        // s0 s0 s1: 0.9*0.1 = 0.09, s0 s1 s1: 0.1*0.7 = 0.07
        let a = adapt(&o).unwrap();
        let mid = a.posterior_distribution(1).unwrap();
        assert!((mid.probs()[0] - 0.09 / 0.16).abs() < 1e-12);
        assert!((mid.probs()[1] - 0.07 / 0.16).abs() < 1e-12);
        let f0 = a.forward_at(0).unwrap();
        let (_, vals) = f0.row(0).unwrap();
        assert!((vals[0] - 0.09 / 0.16).abs() < 1e-12);
    }

    #[test]
    fn unconditioned_marginals_match_propagation() {
        let m = TransitionMatrix::from_dense(&[
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.1, 0.8],
            vec![0.6, 0.3, 0.1],
        ])
        .unwrap();
        let o = obj(&[(0, 2), (6, 0)], m.clone());
        let fwd = forward_pass(&o).unwrap();
        let mut d = Distribution::point_mass(3, 2);
        for k in 1..6 {
            d = propagate(&d, &m).unwrap();
            let got = fwd.marginals[k].to_dense(3);
            for (g, e) in got.iter().zip(d.probs()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impossible_observation_is_reported() {
        let o = obj(&[(0, 0), (1, 1)], TransitionMatrix::identity(2));
        assert_eq!(
            adapt(&o).unwrap_err(),
            Error::Inconsistent {
                object: ObjectId(1),
                time: 1
            }
        );
    }

    #[test]
    fn cache_reuses_entries() {
        let o = obj(&[(0, 0), (2, 0)], uniform2());
        let mut cache = AdaptationCache::new();
        let a = cache.get_or_adapt(&o).unwrap();
        let b = cache.get_or_adapt(&o).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}
