//! Spatio-temporal bounding boxes and min/max distance pruning.
//!
//! Between two consecutive observations an object can only be in states that
//! are reachable from the earlier one and can still reach the later one.
//! Each such gap becomes one rectangle (time interval × bounding box of those
//! states). For a query timestamp, an object `x` whose box lies entirely
//! within distance `minDmax` of the reference is closer than any object
//! whose box lies entirely beyond it, which gives:
//!
//! * `C∀`: objects with `dmin ≤ minDmax` at every query timestamp (others
//!   have P∀NN zero);
//! * `I∀`: objects with `dmin ≤ minDmax` at some query timestamp (others
//!   never decide whether a candidate is nearest).

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::model::{
    ObjectId, Reference, StateId, StateSpace, Time, TrajectoryDatabase, UncertainObject,
};
use crate::{Error, Result};

/// Node fanout of the bulk-loaded tree.
pub const FANOUT: usize = 16;

/// Per-tick boxes are kept when the state space has at most this many states.
pub const DEFAULT_TICK_CACHE_STATES: usize = 10_000;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BBox {
    fn of_states(space: &StateSpace, states: &[StateId]) -> Self {
        let d = space.dim();
        let mut min = alloc::vec![f64::INFINITY; d];
        let mut max = alloc::vec![f64::NEG_INFINITY; d];
        for &s in states {
            for (k, &x) in space.point(s).iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Self { min, max }
    }

    fn extend(&mut self, other: &BBox) {
        for k in 0..self.min.len() {
            self.min[k] = self.min[k].min(other.min[k]);
            self.max[k] = self.max[k].max(other.max[k]);
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(k, &x)| self.min[k] <= x && x <= self.max[k])
    }

    pub fn volume(&self) -> f64 {
        self.min.iter().zip(&self.max).map(|(a, b)| b - a).product()
    }

    pub fn dmin(&self, p: &[f64]) -> f64 {
        dmin(&self.min, &self.max, p)
    }

    pub fn dmax(&self, p: &[f64]) -> f64 {
        dmax(&self.min, &self.max, p)
    }
}

/// Smallest distance from `p` to any point of the box.
pub fn dmin(min: &[f64], max: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..p.len() {
        let d = (min[k] - p[k]).max(p[k] - max[k]).max(0.0);
        acc += d * d;
    }
    libm::sqrt(acc)
}

/// Largest distance from `p` to any point of the box.
pub fn dmax(min: &[f64], max: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..p.len() {
        let d = (p[k] - min[k]).abs().max((p[k] - max[k]).abs());
        acc += d * d;
    }
    libm::sqrt(acc)
}

/// The states an object can occupy between two consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StRect {
    pub object: ObjectId,
    pub start: Time,
    pub end: Time,
    pub bbox: BBox,
}

/// Box of the reachable states of one object at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickBox {
    pub object: ObjectId,
    pub time: Time,
    pub bbox: BBox,
}

/// Reachable states at every tick of the gap starting at observation `k`
/// (inclusive at both ends). A single-observation object has one gap of
/// length zero.
fn gap_supports(o: &UncertainObject, k: usize) -> Result<Vec<Vec<StateId>>> {
    let obs = o.observations();
    let from = obs[k];
    let Some(&to) = obs.get(k + 1) else {
        return Ok(alloc::vec![alloc::vec![from.state]]);
    };
    let mut layers = alloc::vec![alloc::vec![from.state]];
    for t in from.time..to.time {
        let m = o.transition(t)?;
        let mut next: Vec<StateId> = layers
            .last()
            .unwrap()
            .iter()
            .flat_map(|&s| m.successors(s).iter().copied())
            .collect();
        next.sort_unstable();
        next.dedup();
        layers.push(next);
    }
    let last = layers.len() - 1;
    if layers[last].binary_search(&to.state).is_err() {
        return Err(Error::Inconsistent {
            object: o.id(),
            time: to.time,
        });
    }
    layers[last] = alloc::vec![to.state];
    for i in (0..last).rev() {
        let m = o.transition(from.time + i as Time)?;
        let (head, tail) = layers.split_at_mut(i + 1);
        let succ = &tail[0];
        head[i].retain(|&s| {
            m.successors(s)
                .iter()
                .any(|x| succ.binary_search(x).is_ok())
        });
    }
    Ok(layers)
}

/// States with positive posterior probability at `t`: forward-reachable from
/// the previous observation and able to reach the next one.
pub fn reachable_states(o: &UncertainObject, t: Time) -> Result<Vec<StateId>> {
    if !o.covers(t) {
        return Err(Error::OutOfSpan {
            object: o.id(),
            time: t,
        });
    }
    if let Some(s) = o.observation_at(t) {
        return Ok(alloc::vec![s]);
    }
    let k = o.observations().partition_point(|ob| ob.time <= t) - 1;
    let layers = gap_supports(o, k)?;
    Ok(layers[(t - o.observations()[k].time) as usize].clone())
}

#[derive(Debug, Clone)]
struct Node {
    start: Time,
    end: Time,
    bbox: BBox,
    /// Child node indices, or rect indices at the leaf level.
    children: Vec<usize>,
    leaf: bool,
}

/// Candidate and influence objects of one query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pruning {
    pub candidates: Vec<ObjectId>,
    pub influence: Vec<ObjectId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub objects: usize,
    pub rects: usize,
    pub tick_boxes: usize,
    pub average_volume: f64,
    pub height: usize,
}

#[derive(Debug, Clone)]
pub struct UstIndex {
    dim: usize,
    spans: Vec<(ObjectId, Time, Time)>,
    rects: Vec<StRect>,
    /// Sorted by (object, time); empty when not cached.
    ticks: Vec<TickBox>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl UstIndex {
    pub fn build(db: &TrajectoryDatabase) -> Result<Self> {
        Self::build_with(db, DEFAULT_TICK_CACHE_STATES)
    }

    /// Builds the index, caching per-tick boxes if the state space has at
    /// most `tick_cache_states` states.
    pub fn build_with(db: &TrajectoryDatabase, tick_cache_states: usize) -> Result<Self> {
        let space = db.space();
        let cache = space.len() <= tick_cache_states;
        let mut rects = Vec::new();
        let mut ticks = Vec::new();
        let mut spans = Vec::new();
        for o in db.objects() {
            spans.push((o.id(), o.first_time(), o.last_time()));
            let obs = o.observations();
            let gaps = obs.len().saturating_sub(1).max(1);
            for k in 0..gaps {
                let layers = gap_supports(o, k)?;
                let start = obs[k].time;
                let mut all: Vec<StateId> = layers.iter().flatten().copied().collect();
                all.sort_unstable();
                all.dedup();
                let end = start + layers.len() as Time - 1;
                rects.push(StRect {
                    object: o.id(),
                    start,
                    end,
                    bbox: BBox::of_states(space, &all),
                });
                if cache {
                    // The gap's end tick is the next gap's start; store it once.
                    let skip_last = k + 1 < gaps;
                    let n = layers.len() - skip_last as usize;
                    for (i, layer) in layers.iter().take(n).enumerate() {
                        let bbox = BBox::of_states(space, layer);
                        ticks.push(TickBox {
                            object: o.id(),
                            time: start + i as Time,
                            bbox,
                        });
                    }
                }
            }
        }
        Self::from_parts(space.dim(), spans, rects, ticks)
    }

    /// Reassembles an index from stored rectangles and tick boxes.
    pub fn from_parts(
        dim: usize,
        mut spans: Vec<(ObjectId, Time, Time)>,
        rects: Vec<StRect>,
        mut ticks: Vec<TickBox>,
    ) -> Result<Self> {
        if rects
            .iter()
            .any(|r| r.bbox.min.len() != dim || r.bbox.max.len() != dim || r.start > r.end)
        {
            return Err(Error::InvalidParameter("malformed index rectangle".into()));
        }
        spans.sort_by_key(|s| s.0);
        spans.dedup_by_key(|s| s.0);
        ticks.sort_by_key(|b| (b.object, b.time));
        let mut idx = Self {
            dim,
            spans,
            rects,
            ticks,
            nodes: Vec::new(),
            root: None,
        };
        idx.bulk_load();
        Ok(idx)
    }

    /// Sort rectangles by start time then box center and pack them
    /// bottom-up into nodes of `FANOUT` children.
    fn bulk_load(&mut self) {
        let mut order: Vec<usize> = (0..self.rects.len()).collect();
        let center = |r: &StRect| {
            r.bbox
                .min
                .iter()
                .zip(&r.bbox.max)
                .map(|(a, b)| a + b)
                .sum::<f64>()
        };
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&self.rects[a], &self.rects[b]);
            ra.start
                .cmp(&rb.start)
                .then(center(ra).total_cmp(&center(rb)))
        });
        let mut level: Vec<usize> = Vec::new();
        for chunk in order.chunks(FANOUT) {
            let mut bbox = self.rects[chunk[0]].bbox.clone();
            let (mut start, mut end) = (Time::MAX, 0);
            for &r in chunk {
                let rect = &self.rects[r];
                bbox.extend(&rect.bbox);
                start = start.min(rect.start);
                end = end.max(rect.end);
            }
            self.nodes.push(Node {
                start,
                end,
                bbox,
                children: chunk.to_vec(),
                leaf: true,
            });
            level.push(self.nodes.len() - 1);
        }
        while level.len() > 1 {
            let mut next = Vec::new();
            for chunk in level.chunks(FANOUT) {
                let mut bbox = self.nodes[chunk[0]].bbox.clone();
                let (mut start, mut end) = (Time::MAX, 0);
                for &n in chunk {
                    let node = &self.nodes[n];
                    bbox.extend(&node.bbox);
                    start = start.min(node.start);
                    end = end.max(node.end);
                }
                self.nodes.push(Node {
                    start,
                    end,
                    bbox,
                    children: chunk.to_vec(),
                    leaf: false,
                });
                next.push(self.nodes.len() - 1);
            }
            level = next;
        }
        self.root = level.first().copied();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rects(&self) -> &[StRect] {
        &self.rects
    }

    pub fn tick_boxes(&self) -> &[TickBox] {
        &self.ticks
    }

    pub fn spans(&self) -> &[(ObjectId, Time, Time)] {
        &self.spans
    }

    pub fn stats(&self) -> IndexStats {
        let average_volume = if self.rects.is_empty() {
            0.0
        } else {
            self.rects.iter().map(|r| r.bbox.volume()).sum::<f64>() / self.rects.len() as f64
        };
        let mut height = 0;
        let mut cur = self.root;
        while let Some(n) = cur {
            height += 1;
            let node = &self.nodes[n];
            cur = if node.leaf {
                None
            } else {
                node.children.first().copied()
            };
        }
        IndexStats {
            objects: self.spans.len(),
            rects: self.rects.len(),
            tick_boxes: self.ticks.len(),
            average_volume,
            height,
        }
    }

    /// Rectangles alive at `t` whose box passes `keep`, found through the
    /// tree.
    fn search(&self, t: Time, mut keep: impl FnMut(&BBox) -> bool, mut visit: impl FnMut(&StRect)) {
        let Some(root) = self.root else { return };
        let mut stack = alloc::vec![root];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if t < node.start || t > node.end || !keep(&node.bbox) {
                continue;
            }
            if node.leaf {
                for &r in &node.children {
                    let rect = &self.rects[r];
                    if rect.start <= t && t <= rect.end && keep(&rect.bbox) {
                        visit(rect);
                    }
                }
            } else {
                stack.extend(node.children.iter().copied());
            }
        }
    }

    fn tick_box(&self, object: ObjectId, t: Time) -> Option<&BBox> {
        self.ticks
            .binary_search_by(|b| (b.object, b.time).cmp(&(object, t)))
            .ok()
            .map(|i| &self.ticks[i].bbox)
    }

    /// Per-object `(dmin, dmax)` at `t` for the objects in `members`
    /// (sorted), in that order.
    fn bounds_at(&self, members: &[ObjectId], q: &[f64], t: Time) -> Vec<(f64, f64)> {
        let mut out = alloc::vec![(f64::NEG_INFINITY, f64::INFINITY); members.len()];
        let cached = !self.ticks.is_empty();
        let mut missing = false;
        for (k, &id) in members.iter().enumerate() {
            match cached.then(|| self.tick_box(id, t)).flatten() {
                Some(b) => out[k] = (b.dmin(q), b.dmax(q)),
                None => missing = true,
            }
        }
        if missing {
            // Several rectangles cover an observation tick; all of them
            // contain the true support, so the tightest bounds win.
            self.search(
                t,
                |_| true,
                |r| {
                    if let Ok(k) = members.binary_search(&r.object) {
                        let (lo, hi) = &mut out[k];
                        *lo = lo.max(r.bbox.dmin(q));
                        *hi = hi.min(r.bbox.dmax(q));
                    }
                },
            );
        }
        out
    }

    /// Candidate set `C∀` and influence set `I∀` for a query over `times`.
    /// Only objects defined at every query timestamp take part.
    pub fn prune(
        &self,
        space: &StateSpace,
        reference: &Reference,
        times: &[Time],
    ) -> Result<Pruning> {
        if times.is_empty() {
            return Err(Error::InvalidParameter("empty timestamp set".into()));
        }
        let members: Vec<ObjectId> = self
            .spans
            .iter()
            .filter(|(_, a, b)| times.iter().all(|t| a <= t && t <= b))
            .map(|s| s.0)
            .collect();
        let mut all_times = alloc::vec![true; members.len()];
        let mut some_time = alloc::vec![false; members.len()];
        for &t in times {
            let q = reference.position(space, t)?;
            let bounds = self.bounds_at(&members, q, t);
            let min_dmax = bounds.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
            for (k, &(lo, _)) in bounds.iter().enumerate() {
                if lo <= min_dmax {
                    some_time[k] = true;
                } else {
                    all_times[k] = false;
                }
            }
        }
        let pick = |flags: &[bool]| {
            members
                .iter()
                .zip(flags)
                .filter(|(_, &f)| f)
                .map(|(&id, _)| id)
                .collect()
        };
        Ok(Pruning {
            candidates: pick(&all_times),
            influence: pick(&some_time),
        })
    }

    pub fn candidates_forall(
        &self,
        space: &StateSpace,
        reference: &Reference,
        times: &[Time],
    ) -> Result<Vec<ObjectId>> {
        Ok(self.prune(space, reference, times)?.candidates)
    }

    pub fn influence_set(
        &self,
        space: &StateSpace,
        reference: &Reference,
        times: &[Time],
    ) -> Result<Vec<ObjectId>> {
        Ok(self.prune(space, reference, times)?.influence)
    }

    /// For P∃NN every object that may be nearest at some timestamp is both a
    /// candidate and an influence object.
    pub fn candidates_exists(
        &self,
        space: &StateSpace,
        reference: &Reference,
        times: &[Time],
    ) -> Result<Vec<ObjectId>> {
        self.influence_set(space, reference, times)
    }

    /// Objects whose rectangle alive at `t` intersects the ball of radius
    /// `radius` around `q`, via the tree.
    pub fn objects_within(&self, q: &[f64], t: Time, radius: f64) -> Vec<ObjectId> {
        let mut out = BTreeSet::new();
        self.search(
            t,
            |b| b.dmin(q) <= radius,
            |r| {
                out.insert(r.object);
            },
        );
        out.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkovModel, Observation, TransitionMatrix};
    use alloc::sync::Arc;
    use alloc::vec;

    fn uniform2() -> Arc<MarkovModel> {
        Arc::new(MarkovModel::Homogeneous(
            TransitionMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        ))
    }

    fn obj(id: u64, obs: &[(Time, StateId)], m: &Arc<MarkovModel>) -> UncertainObject {
        let obs = obs.iter().map(|&(t, s)| Observation::new(t, s)).collect();
        UncertainObject::new(ObjectId(id), obs, m.clone()).unwrap()
    }

    #[test]
    fn reachable_examples() {
        let o = obj(1, &[(0, 0), (2, 0)], &uniform2());
        assert_eq!(reachable_states(&o, 1).unwrap(), vec![0, 1]);
        assert_eq!(reachable_states(&o, 2).unwrap(), vec![0]);
        assert!(reachable_states(&o, 3).is_err());
        let det = Arc::new(MarkovModel::Homogeneous(
            TransitionMatrix::from_dense(&[
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ])
            .unwrap(),
        ));
        let d = obj(2, &[(0, 0), (4, 1)], &det);
        for t in 0..=4 {
            assert_eq!(reachable_states(&d, t).unwrap(), vec![(t as usize) % 3]);
        }
    }

    #[test]
    fn backward_filter_removes_dead_ends() {
        // From 0: go to 1 or 2; only 1 can reach 3.
        let m = Arc::new(MarkovModel::Homogeneous(
            TransitionMatrix::from_dense(&[
                vec![0.0, 0.5, 0.5, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap(),
        ));
        let o = obj(1, &[(0, 0), (2, 3)], &m);
        assert_eq!(reachable_states(&o, 1).unwrap(), vec![1]);
    }

    #[test]
    fn box_distances() {
        let (lo, hi) = ([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(dmin(&lo, &hi, &[0.5, 0.5]), 0.0);
        assert!((dmin(&lo, &hi, &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((dmax(&lo, &hi, &[2.0, 0.0]) - 5f64.sqrt()).abs() < 1e-15);
    }

    fn line_db(positions: &[f64], objects: Vec<UncertainObject>) -> TrajectoryDatabase {
        let space = Arc::new(StateSpace::from_points_1d(positions).unwrap());
        TrajectoryDatabase::new(space, 10, objects)
    }

    #[test]
    fn one_rect_per_gap() {
        let db = line_db(&[0.0, 1.0], vec![obj(1, &[(0, 0), (2, 0)], &uniform2())]);
        let idx = UstIndex::build(&db).unwrap();
        assert_eq!(idx.rects().len(), 1);
        assert_eq!(
            idx.rects()[0].bbox,
            BBox {
                min: vec![0.0],
                max: vec![1.0]
            }
        );
        assert_eq!(idx.stats().height, 1);
    }

    #[test]
    fn near_object_prunes_far_ones() {
        // States on a line; A wanders near q, B sits between, C far away.
        let walk = Arc::new(MarkovModel::Homogeneous(
            TransitionMatrix::from_dense(&[
                vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap(),
        ));
        let a = obj(1, &[(0, 0), (10, 1)], &walk);
        let b = obj(2, &[(0, 3), (10, 3)], &walk);
        let c = obj(3, &[(0, 5), (10, 5)], &walk);
        let db = line_db(&[0.0, 1.0, 0.8, 3.0, 4.0, 9.0], vec![a, b, c]);
        // B can come close in between but is pinned far at t = 10.
        let times: Vec<Time> = (2..=10).collect();
        let q = Reference::Point(vec![0.0]);
        let idx = UstIndex::build(&db).unwrap();
        let p = idx.prune(db.space(), &q, &times).unwrap();
        assert_eq!(p.candidates, vec![ObjectId(1)]);
        assert_eq!(p.influence, vec![ObjectId(1), ObjectId(2)]);
        // Gap rectangles alone are looser but still exclude C.
        let coarse = UstIndex::build_with(&db, 0).unwrap();
        assert!(coarse.tick_boxes().is_empty());
        let p = coarse.prune(db.space(), &q, &times).unwrap();
        assert_eq!(p.influence, vec![ObjectId(1), ObjectId(2)]);
        assert!(p.candidates.contains(&ObjectId(1)) && !p.candidates.contains(&ObjectId(3)));
    }

    #[test]
    fn single_object() {
        let db = line_db(&[0.0, 1.0], vec![obj(7, &[(0, 0), (2, 1)], &uniform2())]);
        let idx = UstIndex::build(&db).unwrap();
        let p = idx.prune(db.space(), &Reference::State(1), &[1]).unwrap();
        assert_eq!(p.candidates, vec![ObjectId(7)]);
        assert_eq!(p.influence, vec![ObjectId(7)]);
    }
}
