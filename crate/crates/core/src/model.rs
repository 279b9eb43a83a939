//! Discrete time and state spaces, transition matrices, observations and
//! a-priori propagation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::sparse::{Scatter, SparseVec};
use crate::{Error, Result};

/// Discrete timestamp, one tick per unit.
pub type Time = u32;
/// Index into a [`StateSpace`].
pub type StateId = usize;

/// Probability mass tolerance used by every stochasticity check.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    libm::sqrt(sq)
}

/// Finite set of distinct points in R^d with Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    dim: usize,
    coords: Vec<f64>,
}

impl StateSpace {
    /// `coords` holds `dim` consecutive coordinates per state.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidStateSpace(
                "dimension must be at least 1".into(),
            ));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::InvalidStateSpace(format!(
                "{} coordinates do not form whole {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidStateSpace("non-finite coordinate".into()));
        }
        let space = Self { dim, coords };
        let mut order: Vec<usize> = (0..space.len()).collect();
        order.sort_by(|&a, &b| {
            space
                .point(a)
                .iter()
                .zip(space.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if space.point(w[0]) == space.point(w[1]) {
                return Err(Error::InvalidStateSpace(format!(
                    "states {} and {} share a location",
                    w[0].min(w[1]),
                    w[0].max(w[1])
                )));
            }
        }
        Ok(space)
    }

    pub fn from_points_2d(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().flatten().copied().collect())
    }

    pub fn from_points_1d(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, s: StateId) -> &[f64] {
        &self.coords[s * self.dim..(s + 1) * self.dim]
    }

    pub fn distance(&self, a: StateId, b: StateId) -> f64 {
        euclidean(self.point(a), self.point(b))
    }

    pub fn distance_to(&self, s: StateId, p: &[f64]) -> f64 {
        euclidean(self.point(s), p)
    }
}

/// Row-stochastic transition matrix in compressed sparse row form.
/// Row = source state, column = target state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<StateId>,
    vals: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds from `(from, to, probability)` triplets. Duplicates are summed
    /// and zero entries dropped. Row sums are not checked here; see
    /// [`TransitionMatrix::row_sum_violations`] and [`validate`].
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (StateId, StateId, f64)>,
    ) -> Result<Self> {
        let mut items: Vec<(StateId, StateId, f64)> = Vec::new();
        for (i, j, p) in triplets {
            for s in [i, j] {
                if s >= n {
                    return Err(Error::InvalidState {
                        state: s,
                        states: n,
                    });
                }
            }
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability {
                    row: i,
                    col: j,
                    value: p,
                });
            }
            if p > 0.0 {
                items.push((i, j, p));
            }
        }
        items.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(items.len());
        let mut vals: Vec<f64> = Vec::with_capacity(items.len());
        let mut last: Option<(StateId, StateId)> = None;
        for (i, j, p) in items {
            if last == Some((i, j)) {
                *vals.last_mut().expect("duplicate follows an entry") += p;
                continue;
            }
            last = Some((i, j));
            offsets[i + 1] += 1;
            cols.push(j);
            vals.push(p);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        if let Some((pos, &v)) = vals.iter().enumerate().find(|(_, v)| **v > 1.0) {
            let row = offsets.partition_point(|&o| o <= pos) - 1;
            return Err(Error::InvalidProbability {
                row,
                col: cols[pos],
                value: v,
            });
        }
        Ok(Self {
            n,
            offsets,
            cols,
            vals,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            triplets.extend(row.iter().enumerate().map(|(j, &p)| (i, j, p)));
        }
        Self::from_triplets(n, triplets)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Number of states (rows = columns).
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Columns and probabilities of row `i`, columns ascending.
    #[inline]
    pub fn row(&self, i: StateId) -> (&[StateId], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: StateId, j: StateId) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: StateId) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Rows whose sum deviates from 1 by more than `tolerance`.
    pub fn row_sum_violations(&self, tolerance: f64) -> Vec<(StateId, f64)> {
        (0..self.n)
            .map(|i| (i, self.row_sum(i)))
            .filter(|(_, s)| (s - 1.0).abs() > tolerance)
            .collect()
    }

    pub fn is_stochastic(&self) -> bool {
        self.row_sum_violations(STOCHASTIC_TOLERANCE).is_empty()
    }

    /// States reachable from `i` in one step.
    pub fn successors(&self, i: StateId) -> &[StateId] {
        self.row(i).0
    }
}

/// The a-priori chain: one matrix for every tick, or one per tick.
/// The matrix returned for time `t` drives the transition `t -> t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkovModel {
    Homogeneous(TransitionMatrix),
    Inhomogeneous(Vec<TransitionMatrix>),
}

impl MarkovModel {
    pub fn at(&self, t: Time) -> Result<&TransitionMatrix> {
        match self {
            MarkovModel::Homogeneous(m) => Ok(m),
            MarkovModel::Inhomogeneous(ms) => ms
                .get(t as usize)
                .ok_or(Error::MissingTransition { time: t }),
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            MarkovModel::Homogeneous(m) => m.size(),
            MarkovModel::Inhomogeneous(ms) => ms.first().map_or(0, |m| m.size()),
        }
    }
}

/// Dense probability vector over all states.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((i, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidProbability {
                row: i,
                col: i,
                value: p,
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn point_mass(n: usize, s: StateId) -> Self {
        let mut v = vec![0.0; n];
        v[s] = 1.0;
        Self(v)
    }

    pub(crate) fn from_sparse(v: &SparseVec, n: usize) -> Self {
        Self(v.to_dense(n))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// One step of the a-priori chain: `M^T · dist`.
pub fn propagate(dist: &Distribution, m: &TransitionMatrix) -> Result<Distribution> {
    if dist.len() != m.size() {
        return Err(Error::DimensionMismatch {
            expected: m.size(),
            found: dist.len(),
        });
    }
    let mut out = vec![0.0; m.size()];
    for (j, &p) in dist.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (cols, vals) = m.row(j);
        for (&i, &w) in cols.iter().zip(vals) {
            out[i] += p * w;
        }
    }
    Ok(Distribution(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observation {
    pub time: Time,
    pub state: StateId,
}

impl Observation {
    pub fn new(time: Time, state: StateId) -> Self {
        Self { time, state }
    }
}

#[derive(Debug, Clone)]
pub struct UncertainObject {
    id: ObjectId,
    observations: Vec<Observation>,
    model: Arc<MarkovModel>,
}

impl UncertainObject {
    /// Observations must be non-empty, strictly increasing in time and name
    /// states of the model. Reachability is checked by [`validate`].
    pub fn new(
        id: ObjectId,
        observations: Vec<Observation>,
        model: Arc<MarkovModel>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidObservations {
                object: id,
                reason: "no observations",
            });
        }
        if observations.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err(Error::InvalidObservations {
                object: id,
                reason: "observation times must be strictly increasing",
            });
        }
        let states = model.state_count();
        if let Some(o) = observations.iter().find(|o| o.state >= states) {
            return Err(Error::InvalidState {
                state: o.state,
                states,
            });
        }
        Ok(Self {
            id,
            observations,
            model,
        })
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn model(&self) -> &Arc<MarkovModel> {
        &self.model
    }

    pub fn first_time(&self) -> Time {
        self.observations[0].time
    }

    pub fn last_time(&self) -> Time {
        self.observations[self.observations.len() - 1].time
    }

    pub fn span(&self) -> (Time, Time) {
        (self.first_time(), self.last_time())
    }

    pub fn covers(&self, t: Time) -> bool {
        (self.first_time()..=self.last_time()).contains(&t)
    }

    /// Whether every timestamp of `times` lies inside the span.
    pub fn covers_all(&self, times: &[Time]) -> bool {
        times.iter().all(|&t| self.covers(t))
    }

    pub fn observation_at(&self, t: Time) -> Option<StateId> {
        self.observations
            .binary_search_by_key(&t, |o| o.time)
            .ok()
            .map(|i| self.observations[i].state)
    }

    /// Latest observation at or before `t`.
    pub fn prev_observation(&self, t: Time) -> Option<&Observation> {
        let n = self.observations.partition_point(|o| o.time <= t);
        n.checked_sub(1).map(|i| &self.observations[i])
    }

    /// Earliest observation at or after `t`.
    pub fn next_observation(&self, t: Time) -> Option<&Observation> {
        let n = self.observations.partition_point(|o| o.time < t);
        self.observations.get(n)
    }

    pub fn transition(&self, t: Time) -> Result<&TransitionMatrix> {
        self.model.at(t)
    }
}

/// A certain trajectory: one state per tick from `start` onwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub object: ObjectId,
    pub start: Time,
    pub states: Vec<StateId>,
}

impl Trajectory {
    pub fn end(&self) -> Time {
        self.start + self.states.len() as Time - 1
    }

    pub fn state_at(&self, t: Time) -> Option<StateId> {
        t.checked_sub(self.start)
            .and_then(|k| self.states.get(k as usize))
            .copied()
    }

    /// Whether the trajectory passes through every observation.
    pub fn hits_all(&self, observations: &[Observation]) -> bool {
        observations
            .iter()
            .all(|o| self.state_at(o.time) == Some(o.state))
    }

    /// Whether every consecutive step has positive a-priori probability.
    pub fn is_feasible(&self, model: &MarkovModel) -> bool {
        self.states.windows(2).enumerate().all(|(k, w)| {
            model
                .at(self.start + k as Time)
                .map(|m| m.get(w[0], w[1]) > 0.0)
                .unwrap_or(false)
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryDatabase {
    space: Arc<StateSpace>,
    horizon: Time,
    objects: Vec<UncertainObject>,
    by_id: BTreeMap<ObjectId, usize>,
}

impl TrajectoryDatabase {
    /// Duplicate ids are kept (lookup returns the first) so that
    /// [`validate`] can report them.
    pub fn new(space: Arc<StateSpace>, horizon: Time, objects: Vec<UncertainObject>) -> Self {
        let mut by_id = BTreeMap::new();
        for (i, o) in objects.iter().enumerate() {
            by_id.entry(o.id()).or_insert(i);
        }
        Self {
            space,
            horizon,
            objects,
            by_id,
        }
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn horizon(&self) -> Time {
        self.horizon
    }

    pub fn objects(&self) -> &[UncertainObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: ObjectId) -> Option<&UncertainObject> {
        self.by_id.get(&id).map(|&i| &self.objects[i])
    }

    pub fn object(&self, id: ObjectId) -> Result<&UncertainObject> {
        self.get(id).ok_or(Error::UnknownObject(id))
    }

    /// Objects defined at every timestamp of `times`.
    pub fn covering<'a>(
        &'a self,
        times: &'a [Time],
    ) -> impl Iterator<Item = &'a UncertainObject> + 'a {
        self.objects.iter().filter(move |o| o.covers_all(times))
    }
}

/// Query reference `q`: a fixed state, a free point, or a certain trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    State(StateId),
    Point(Vec<f64>),
    Trajectory(Trajectory),
}

impl Reference {
    pub fn position<'a>(&'a self, space: &'a StateSpace, t: Time) -> Result<&'a [f64]> {
        match self {
            Reference::State(s) => {
                if *s >= space.len() {
                    return Err(Error::InvalidState {
                        state: *s,
                        states: space.len(),
                    });
                }
                Ok(space.point(*s))
            }
            Reference::Point(p) => {
                if p.len() != space.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: space.dim(),
                        found: p.len(),
                    });
                }
                Ok(p)
            }
            Reference::Trajectory(traj) => {
                let s = traj
                    .state_at(t)
                    .ok_or(Error::ReferenceUndefined { time: t })?;
                if s >= space.len() {
                    return Err(Error::InvalidState {
                        state: s,
                        states: space.len(),
                    });
                }
                Ok(space.point(s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub reference: Reference,
    times: Vec<Time>,
    pub tau: f64,
}

impl Query {
    /// Times are sorted and deduplicated; `tau` must lie in `[0, 1]`.
    pub fn new(reference: Reference, mut times: Vec<Time>, tau: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParameter(
                "query needs at least one timestamp".into(),
            ));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("tau {tau} outside [0, 1]")));
        }
        times.sort_unstable();
        times.dedup();
        Ok(Self {
            reference,
            times,
            tau,
        })
    }

    pub fn times(&self) -> &[Time] {
        &self.times
    }
}

/// A-priori distribution of `o` at `t`: point mass at the latest
/// observation at or before `t`, propagated forward with the a-priori chain.
/// Later observations are ignored.
pub fn a_priori_distribution(o: &UncertainObject, t: Time) -> Result<Distribution> {
    let v = a_priori_sparse(o, t)?;
    Ok(Distribution::from_sparse(&v, o.model().state_count()))
}

pub(crate) fn a_priori_sparse(o: &UncertainObject, t: Time) -> Result<SparseVec> {
    let prev = o.prev_observation(t).ok_or(Error::OutOfSpan {
        object: o.id(),
        time: t,
    })?;
    let mut v = SparseVec::point(prev.state);
    if prev.time == t {
        return Ok(v);
    }
    let mut scatter = Scatter::new(o.model().state_count());
    for tick in prev.time..t {
        v = scatter.propagate(&v, o.transition(tick)?);
    }
    Ok(v)
}

/// Which matrix of a model a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixTag {
    /// The single matrix of a homogeneous model.
    All,
    At(Time),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        matrix: MatrixTag,
        row: StateId,
        sum: f64,
    },
    ModelSize {
        object: ObjectId,
        model_states: usize,
        space_states: usize,
    },
    MissingTransition {
        object: ObjectId,
        time: Time,
    },
    Unreachable {
        object: ObjectId,
        from: Observation,
        to: Observation,
    },
    ObservationBeyondHorizon {
        object: ObjectId,
        time: Time,
    },
    DuplicateId(ObjectId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { matrix, row, sum } => match matrix {
                MatrixTag::All => write!(f, "transition row {row} sums to {sum}"),
                MatrixTag::At(t) => {
                    write!(f, "transition matrix at t={t}, row {row} sums to {sum}")
                }
            },
            Violation::ModelSize {
                object,
                model_states,
                space_states,
            } => write!(
                f,
                "object {object}: model has {model_states} states, state space has {space_states}"
            ),
            Violation::MissingTransition { object, time } => {
                write!(f, "object {object}: no transition matrix for t={time}")
            }
            Violation::Unreachable { object, from, to } => write!(
                f,
                "object {object}: state {} at t={} is unreachable from state {} at t={}",
                to.state, to.time, from.state, from.time
            ),
            Violation::ObservationBeyondHorizon { object, time } => {
                write!(f, "object {object}: observation at t={time} beyond horizon")
            }
            Violation::DuplicateId(id) => write!(f, "duplicate object id {id}"),
        }
    }
}

/// Checks every type invariant of a database. An empty list means the
/// database is well formed; nothing is repaired or renormalized.
pub fn validate(db: &TrajectoryDatabase) -> Vec<Violation> {
    let mut out = Vec::new();
    let space_states = db.space().len();

    let mut seen_models: Vec<&Arc<MarkovModel>> = Vec::new();
    for o in db.objects() {
        if seen_models.iter().any(|m| Arc::ptr_eq(m, o.model())) {
            continue;
        }
        seen_models.push(o.model());
        match o.model().as_ref() {
            MarkovModel::Homogeneous(m) => {
                for (row, sum) in m.row_sum_violations(STOCHASTIC_TOLERANCE) {
                    out.push(Violation::RowSum {
                        matrix: MatrixTag::All,
                        row,
                        sum,
                    });
                }
            }
            MarkovModel::Inhomogeneous(ms) => {
                for (t, m) in ms.iter().enumerate() {
                    for (row, sum) in m.row_sum_violations(STOCHASTIC_TOLERANCE) {
                        out.push(Violation::RowSum {
                            matrix: MatrixTag::At(t as Time),
                            row,
                            sum,
                        });
                    }
                }
            }
        }
    }

    let mut ids = BTreeMap::new();
    for o in db.objects() {
        let count = ids.entry(o.id()).or_insert(0usize);
        *count += 1;
        if *count == 2 {
            out.push(Violation::DuplicateId(o.id()));
        }
        let model_states = o.model().state_count();
        if model_states != space_states {
            out.push(Violation::ModelSize {
                object: o.id(),
                model_states,
                space_states,
            });
            continue;
        }
        if o.last_time() > db.horizon() {
            out.push(Violation::ObservationBeyondHorizon {
                object: o.id(),
                time: o.last_time(),
            });
        }
        for w in o.observations().windows(2) {
            match reachable_in(o.model(), w[0], w[1].time) {
                Ok(set) => {
                    if !set[w[1].state] {
                        out.push(Violation::Unreachable {
                            object: o.id(),
                            from: w[0],
                            to: w[1],
                        });
                    }
                }
                Err(Error::MissingTransition { time }) => {
                    out.push(Violation::MissingTransition {
                        object: o.id(),
                        time,
                    });
                    break;
                }
                Err(_) => break,
            }
        }
    }
    out
}

/// States reachable from `from` at exactly time `to`.
fn reachable_in(model: &MarkovModel, from: Observation, to: Time) -> Result<Vec<bool>> {
    let n = model.state_count();
    let mut current = vec![from.state];
    let mut mark = vec![false; n];
    for t in from.time..to {
        let m = model.at(t)?;
        let mut next = Vec::new();
        for &s in &current {
            for &j in m.successors(s) {
                if !mark[j] {
                    mark[j] = true;
                    next.push(j);
                }
            }
        }
        for &j in &next {
            mark[j] = false;
        }
        current = next;
    }
    for &s in &current {
        mark[s] = true;
    }
    Ok(mark)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform2() -> TransitionMatrix {
        TransitionMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    fn object(id: u64, obs: &[(Time, StateId)], m: &Arc<MarkovModel>) -> UncertainObject {
        let obs = obs.iter().map(|&(t, s)| Observation::new(t, s)).collect();
        UncertainObject::new(ObjectId(id), obs, m.clone()).unwrap()
    }

    #[test]
    fn propagate_examples() {
        let d = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(
            propagate(&d, &TransitionMatrix::identity(2))
                .unwrap()
                .probs(),
            &[1.0, 0.0]
        );
        assert_eq!(propagate(&d, &uniform2()).unwrap().probs(), &[0.5, 0.5]);
        let d = Distribution::new(vec![0.5, 0.5]).unwrap();
        let m = TransitionMatrix::from_dense(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let out = propagate(&d, &m).unwrap();
        assert!((out.probs()[0] - 0.6).abs() < 1e-15);
        assert!((out.probs()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn propagate_rejects_dimension_mismatch() {
        let d = Distribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            propagate(&d, &uniform2()),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn a_priori_examples() {
        let m = Arc::new(MarkovModel::Homogeneous(uniform2()));
        let o = object(1, &[(0, 0), (2, 0)], &m);
        assert_eq!(a_priori_distribution(&o, 0).unwrap().probs(), &[1.0, 0.0]);
        assert_eq!(a_priori_distribution(&o, 1).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(a_priori_distribution(&o, 2).unwrap().probs(), &[1.0, 0.0]);
        let late = object(2, &[(3, 1)], &m);
        assert!(matches!(
            a_priori_distribution(&late, 2),
            Err(Error::OutOfSpan { time: 2, .. })
        ));
    }

    #[test]
    fn validate_reports_row_sum_and_reachability() {
        let space = Arc::new(StateSpace::from_points_1d(&[0.0, 1.0]).unwrap());
        let good = Arc::new(MarkovModel::Homogeneous(uniform2()));
        let db =
            TrajectoryDatabase::new(space.clone(), 10, vec![object(1, &[(0, 0), (3, 1)], &good)]);
        assert!(validate(&db).is_empty());

        let short = TransitionMatrix::from_triplets(2, [(0, 0, 0.9), (1, 1, 1.0)]).unwrap();
        let bad = Arc::new(MarkovModel::Homogeneous(short));
        let db = TrajectoryDatabase::new(space.clone(), 10, vec![object(1, &[(0, 0)], &bad)]);
        let v = validate(&db);
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0],
            Violation::RowSum {
                matrix: MatrixTag::All,
                row: 0,
                ..
            }
        ));

        let stay = Arc::new(MarkovModel::Homogeneous(TransitionMatrix::identity(2)));
        let db =
            TrajectoryDatabase::new(space.clone(), 10, vec![object(1, &[(0, 0), (1, 1)], &stay)]);
        let v = validate(&db);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Unreachable { .. }));

        let db = TrajectoryDatabase::new(
            space,
            10,
            vec![object(7, &[(0, 0)], &good), object(7, &[(1, 1)], &good)],
        );
        assert_eq!(validate(&db), vec![Violation::DuplicateId(ObjectId(7))]);
    }

    #[test]
    fn object_rejects_unsorted_or_shared_timestamps() {
        let m = Arc::new(MarkovModel::Homogeneous(uniform2()));
        let obs = vec![Observation::new(2, 0), Observation::new(2, 1)];
        assert!(UncertainObject::new(ObjectId(1), obs, m.clone()).is_err());
        assert!(UncertainObject::new(ObjectId(1), vec![], m).is_err());
    }

    #[test]
    fn state_space_rejects_duplicates() {
        assert!(StateSpace::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(StateSpace::new(2, vec![0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_reject_out_of_range() {
        let m = TransitionMatrix::from_triplets(
            2,
            [(0, 1, 0.25), (0, 1, 0.25), (0, 0, 0.5), (1, 1, 1.0)],
        )
        .unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert!(m.is_stochastic());
        assert!(TransitionMatrix::from_triplets(2, [(0, 2, 1.0)]).is_err());
        assert!(TransitionMatrix::from_triplets(2, [(0, 1, 1.5)]).is_err());
    }
}
