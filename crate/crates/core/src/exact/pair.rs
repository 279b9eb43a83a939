//! Hit/drop matrix propagation for one candidate against one competitor.

use alloc::vec;
use alloc::vec::Vec;

use crate::adaptation::MASS_GUARD;
use crate::model::{
    a_priori_sparse, Reference, StateId, StateSpace, Time, TransitionMatrix, UncertainObject,
};
use crate::{Error, Result};

/// Joint mass of (candidate state, competitor state), split into worlds
/// where the candidate has been at least as close as the competitor at every
/// query timestamp so far (`hit`) and the rest (`drop`). Row-major over
/// `rows × cols`.
#[derive(Debug, Clone)]
struct Grid {
    rows: Vec<StateId>,
    cols: Vec<StateId>,
    hit: Vec<f64>,
    drop: Vec<f64>,
}

impl Grid {
    fn outer(a: &crate::SparseVec, b: &crate::SparseVec) -> Self {
        let rows: Vec<StateId> = a.states().collect();
        let cols: Vec<StateId> = b.states().collect();
        let mut hit = Vec::with_capacity(rows.len() * cols.len());
        for &(_, pa) in a.entries() {
            hit.extend(b.entries().iter().map(|&(_, pb)| pa * pb));
        }
        let drop = vec![0.0; hit.len()];
        Self {
            rows,
            cols,
            hit,
            drop,
        }
    }

    fn sums(&self) -> (f64, f64) {
        (self.hit.iter().sum(), self.drop.iter().sum())
    }

    /// `M^T · X` for both hit and drop.
    fn transition_rows(&mut self, m: &TransitionMatrix, pos: &mut [usize]) {
        let mut next_rows: Vec<StateId> = self
            .rows
            .iter()
            .flat_map(|&s| m.successors(s).iter().copied())
            .collect();
        next_rows.sort_unstable();
        next_rows.dedup();
        for (k, &s) in next_rows.iter().enumerate() {
            pos[s] = k;
        }
        let w = self.cols.len();
        let mut hit = vec![0.0; next_rows.len() * w];
        let mut drop = vec![0.0; next_rows.len() * w];
        for (k, &s) in self.rows.iter().enumerate() {
            let (src_h, src_d) = (
                &self.hit[k * w..(k + 1) * w],
                &self.drop[k * w..(k + 1) * w],
            );
            let (cols, vals) = m.row(s);
            for (&i, &p) in cols.iter().zip(vals) {
                let base = pos[i] * w;
                for l in 0..w {
                    hit[base + l] += p * src_h[l];
                    drop[base + l] += p * src_d[l];
                }
            }
        }
        for &s in &next_rows {
            pos[s] = usize::MAX;
        }
        self.rows = next_rows;
        self.hit = hit;
        self.drop = drop;
    }

    /// `X · M'` for both hit and drop.
    fn transition_cols(&mut self, m: &TransitionMatrix, pos: &mut [usize]) {
        let mut next_cols: Vec<StateId> = self
            .cols
            .iter()
            .flat_map(|&s| m.successors(s).iter().copied())
            .collect();
        next_cols.sort_unstable();
        next_cols.dedup();
        for (k, &s) in next_cols.iter().enumerate() {
            pos[s] = k;
        }
        let (w, nw) = (self.cols.len(), next_cols.len());
        let mut hit = vec![0.0; self.rows.len() * nw];
        let mut drop = vec![0.0; self.rows.len() * nw];
        for i in 0..self.rows.len() {
            for (l, &s) in self.cols.iter().enumerate() {
                let (h, d) = (self.hit[i * w + l], self.drop[i * w + l]);
                if h == 0.0 && d == 0.0 {
                    continue;
                }
                let (cols, vals) = m.row(s);
                for (&j, &p) in cols.iter().zip(vals) {
                    let at = i * nw + pos[j];
                    hit[at] += h * p;
                    drop[at] += d * p;
                }
            }
        }
        for &s in &next_cols {
            pos[s] = usize::MAX;
        }
        self.cols = next_cols;
        self.hit = hit;
        self.drop = drop;
    }

    /// Moves worlds in which the competitor is strictly closer to `q` from
    /// hit to drop (ties stay hits).
    fn shift(&mut self, space: &StateSpace, q: &[f64]) {
        let dc: Vec<f64> = self.cols.iter().map(|&s| space.distance_to(s, q)).collect();
        let w = self.cols.len();
        for (k, &s) in self.rows.iter().enumerate() {
            let d = space.distance_to(s, q);
            for (l, &dl) in dc.iter().enumerate() {
                if d > dl {
                    let at = k * w + l;
                    self.drop[at] += self.hit[at];
                    self.hit[at] = 0.0;
                }
            }
        }
    }

    /// Conditions on the observations at this tick and renormalizes hit and
    /// drop jointly. Returns `false` if the observations have no mass.
    fn reweigh(&mut self, row_obs: Option<StateId>, col_obs: Option<StateId>) -> bool {
        let keep_rows: Vec<usize> = match row_obs {
            Some(s) => self.rows.binary_search(&s).ok().into_iter().collect(),
            None => (0..self.rows.len()).collect(),
        };
        let keep_cols: Vec<usize> = match col_obs {
            Some(s) => self.cols.binary_search(&s).ok().into_iter().collect(),
            None => (0..self.cols.len()).collect(),
        };
        let w = self.cols.len();
        let mut total = 0.0;
        for &k in &keep_rows {
            for &l in &keep_cols {
                total += self.hit[k * w + l] + self.drop[k * w + l];
            }
        }
        if total <= MASS_GUARD {
            return false;
        }
        let mut hit = Vec::with_capacity(keep_rows.len() * keep_cols.len());
        let mut drop = Vec::with_capacity(hit.capacity());
        for &k in &keep_rows {
            for &l in &keep_cols {
                hit.push(self.hit[k * w + l] / total);
                drop.push(self.drop[k * w + l] / total);
            }
        }
        self.rows = keep_rows.iter().map(|&k| self.rows[k]).collect();
        self.cols = keep_cols.iter().map(|&l| self.cols[l]).collect();
        self.hit = hit;
        self.drop = drop;
        true
    }
}

/// Hit and drop mass after one tick of the pair propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStep {
    pub time: Time,
    pub hit: f64,
    pub drop: f64,
    /// Whether either object was observed (and the grid reweighed) at `time`.
    pub observed: bool,
}

pub(crate) fn check_pair(
    o: &UncertainObject,
    other: &UncertainObject,
    times: &[Time],
) -> Result<()> {
    if o.id() == other.id() {
        return Err(Error::InvalidParameter(
            "candidate and competitor must differ".into(),
        ));
    }
    check_times(times)?;
    for x in [o, other] {
        if let Some(&t) = times.iter().find(|&&t| !x.covers(t)) {
            return Err(Error::OutOfSpan {
                object: x.id(),
                time: t,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_times(times: &[Time]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty timestamp set".into()));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "timestamps must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Runs the pair propagation from the first query timestamp until the later
/// of the two final observations, so that every observation of either
/// object is folded in. The shift only happens at query timestamps.
pub(crate) fn run_pair(
    o: &UncertainObject,
    other: &UncertainObject,
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
    mut trace: Option<&mut Vec<PairStep>>,
) -> Result<f64> {
    check_pair(o, other, times)?;
    let ts = times[0];
    let end = o.last_time().max(other.last_time());
    let mut grid = Grid::outer(&a_priori_sparse(o, ts)?, &a_priori_sparse(other, ts)?);
    grid.shift(space, reference.position(space, ts)?);
    if let Some(tr) = trace.as_deref_mut() {
        let (hit, drop) = grid.sums();
        tr.push(PairStep {
            time: ts,
            hit,
            drop,
            observed: false,
        });
    }
    let mut pos = vec![usize::MAX; space.len()];
    let mut next_query = 1;
    for t in ts + 1..=end {
        if t <= o.last_time() {
            grid.transition_rows(o.transition(t - 1)?, &mut pos);
        }
        if t <= other.last_time() {
            grid.transition_cols(other.transition(t - 1)?, &mut pos);
        }
        if times.get(next_query) == Some(&t) {
            grid.shift(space, reference.position(space, t)?);
            next_query += 1;
        }
        let (ro, co) = (o.observation_at(t), other.observation_at(t));
        if (ro.is_some() || co.is_some()) && !grid.reweigh(ro, co) {
            let culprit = if ro.is_some() { o.id() } else { other.id() };
            return Err(Error::Inconsistent {
                object: culprit,
                time: t,
            });
        }
        if let Some(tr) = trace.as_deref_mut() {
            let (hit, drop) = grid.sums();
            tr.push(PairStep {
                time: t,
                hit,
                drop,
                observed: ro.is_some() || co.is_some(),
            });
        }
    }
    Ok(grid.sums().0)
}
