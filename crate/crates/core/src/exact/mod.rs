//! Exact nearest-neighbor probabilities.
//!
//! [`pann_pair`] propagates a joint hit/drop matrix for one candidate and one
//! competitor. [`pann`] handles a whole database exactly by conditioning the
//! competitors on the candidate's distance (see [`joint`]).
//! [`pann_factorized`] multiplies pairwise probabilities; that product equals
//! the true value only when the candidate's position at every query
//! timestamp is certain (for instance when all of `T` are observation times
//! of the candidate). Otherwise the pairwise events are positively correlated
//! through the candidate and the product underestimates.

mod joint;
mod pair;
pub mod pcnn;

use alloc::vec::Vec;

pub use joint::{pann_joint, DEFAULT_MAX_BRANCHES, MAX_BRANCH_ENTRIES};
pub use pair::PairStep;
pub use pcnn::{apriori_maximal, TimeSetProbability, THRESHOLD_SLACK};

use crate::index::Pruning;
use crate::model::{
    ObjectId, Query, Reference, StateSpace, Time, TrajectoryDatabase, UncertainObject,
};
use crate::{oracle, Error, Result};

/// Which state pairs count as a hit at one timestamp: `C[i][j] = 1` iff a
/// candidate in state `i` is at least as close to the reference as a
/// competitor in state `j`. Stored as one distance per state.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    distances: Vec<f64>,
}

impl IndicatorMatrix {
    pub fn new(space: &StateSpace, reference: &Reference, t: Time) -> Result<Self> {
        let q = reference.position(space, t)?;
        Ok(Self {
            distances: (0..space.len()).map(|s| space.distance_to(s, q)).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.distances.len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.distances[i] <= self.distances[j]
    }

    pub fn distance(&self, s: usize) -> f64 {
        self.distances[s]
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let n = self.size();
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }
}

/// Probability that `o` is at least as close to the reference as `other` at
/// every timestamp of `times` (sorted, strictly increasing).
pub fn pann_pair(
    o: &UncertainObject,
    other: &UncertainObject,
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
) -> Result<f64> {
    pair::run_pair(o, other, reference, space, times, None)
}

/// [`pann_pair`] plus the hit/drop mass after every tick.
pub fn pann_pair_traced(
    o: &UncertainObject,
    other: &UncertainObject,
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
) -> Result<(f64, Vec<PairStep>)> {
    let mut trace = Vec::new();
    let p = pair::run_pair(o, other, reference, space, times, Some(&mut trace))?;
    Ok((p, trace))
}

/// Objects of `db` that compete with `o` on `times`: every other object
/// defined at all of them.
pub fn competitors<'a>(
    db: &'a TrajectoryDatabase,
    o: ObjectId,
    times: &'a [Time],
) -> Vec<&'a UncertainObject> {
    db.covering(times).filter(|x| x.id() != o).collect()
}

fn candidate<'a>(
    db: &'a TrajectoryDatabase,
    o: ObjectId,
    times: &[Time],
) -> Result<&'a UncertainObject> {
    let obj = db.object(o)?;
    pair::check_times(times)?;
    if let Some(&t) = times.iter().find(|&&t| !obj.covers(t)) {
        return Err(Error::OutOfSpan { object: o, time: t });
    }
    Ok(obj)
}

/// Exact P∀NN of object `o` in `db`.
pub fn pann(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<f64> {
    let obj = candidate(db, o, times)?;
    let comps = competitors(db, o, times);
    pann_joint(
        obj,
        &comps,
        reference,
        db.space(),
        times,
        DEFAULT_MAX_BRANCHES,
    )
}

/// Exact P∀NN against an explicit competitor set.
pub fn pann_among(
    o: &UncertainObject,
    competitors: &[&UncertainObject],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
) -> Result<f64> {
    pann_joint(
        o,
        competitors,
        reference,
        space,
        times,
        DEFAULT_MAX_BRANCHES,
    )
}

/// Product of pairwise probabilities. Exact only if `o` is certain at every
/// query timestamp; kept as the cheap approximation.
pub fn pann_factorized(
    o: &UncertainObject,
    competitors: &[&UncertainObject],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
) -> Result<f64> {
    let mut p = 1.0;
    for c in competitors {
        p *= pann_pair(o, c, reference, space, times)?;
        if p == 0.0 {
            break;
        }
    }
    Ok(p)
}

/// One result row of a P∀NN query.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProbability {
    pub object: ObjectId,
    pub probability: f64,
}

fn sort_results(rows: &mut [ObjectProbability]) {
    rows.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.object.cmp(&b.object))
    });
}

/// Candidate and competitor objects for a query, with or without pruning.
fn query_sets<'a>(
    db: &'a TrajectoryDatabase,
    times: &'a [Time],
    pruning: Option<&Pruning>,
) -> Result<(Vec<&'a UncertainObject>, Vec<&'a UncertainObject>)> {
    match pruning {
        Some(p) => {
            let cands = p
                .candidates
                .iter()
                .map(|&id| db.object(id))
                .collect::<Result<_>>()?;
            let infl = p
                .influence
                .iter()
                .map(|&id| db.object(id))
                .collect::<Result<_>>()?;
            Ok((cands, infl))
        }
        None => {
            let all: Vec<_> = db.covering(times).collect();
            Ok((all.clone(), all))
        }
    }
}

/// Exact P∀NN query: every object with probability at least `query.tau`
/// (and above zero), sorted by probability descending then id. With
/// `pruning`, only its candidates are evaluated and only its influence
/// objects act as competitors.
pub fn pann_query(
    db: &TrajectoryDatabase,
    query: &Query,
    pruning: Option<&Pruning>,
) -> Result<Vec<ObjectProbability>> {
    let times = query.times();
    let (cands, infl) = query_sets(db, times, pruning)?;
    let mut out = Vec::new();
    for o in cands {
        let comps: Vec<_> = infl.iter().copied().filter(|c| c.id() != o.id()).collect();
        let p = pann_among(o, &comps, &query.reference, db.space(), times)?;
        if p > 0.0 && pcnn::reaches(p, query.tau) {
            out.push(ObjectProbability {
                object: o.id(),
                probability: p,
            });
        }
    }
    sort_results(&mut out);
    Ok(out)
}

/// Maximal timestamp sets for which `o` is the nearest neighbor with
/// probability at least `tau`. Competitors are fixed by the full `times`.
pub fn pcnn_object(
    o: &UncertainObject,
    competitors: &[&UncertainObject],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
    tau: f64,
) -> Result<Vec<TimeSetProbability>> {
    pair::check_times(times)?;
    apriori_maximal(times, tau, |sub| {
        pann_among(o, competitors, reference, space, sub)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcnnEntry {
    pub object: ObjectId,
    pub times: Vec<Time>,
    pub probability: f64,
}

/// PCNN query over the database. `query.tau` must be positive.
pub fn pcnn_query(
    db: &TrajectoryDatabase,
    query: &Query,
    pruning: Option<&Pruning>,
) -> Result<Vec<PcnnEntry>> {
    let times = query.times();
    // Any set-wise nearest neighbor is a possible nearest neighbor somewhere.
    let (_, infl) = query_sets(db, times, pruning)?;
    let mut out = Vec::new();
    for o in &infl {
        let comps: Vec<_> = infl.iter().copied().filter(|c| c.id() != o.id()).collect();
        for r in pcnn_object(o, &comps, &query.reference, db.space(), times, query.tau)? {
            out.push(PcnnEntry {
                object: o.id(),
                times: r.times,
                probability: r.probability,
            });
        }
    }
    out.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.object.cmp(&b.object))
            .then_with(|| a.times.cmp(&b.times))
    });
    Ok(out)
}

/// P∃NN by exhaustive enumeration of possible worlds. Exponential; small
/// inputs only.
pub fn penn_exact_oracle(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<f64> {
    oracle::oracle_penn(db, o, reference, times)
}
