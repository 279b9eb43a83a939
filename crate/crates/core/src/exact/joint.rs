//! Exact P∀NN against any number of competitors.
//!
//! Competitors are independent of each other and of the candidate, but they
//! are *not* independent given nothing: the candidate's own position couples
//! them. So the candidate's mass is split at every query timestamp by how
//! far it is from the reference, and each competitor is conditioned on
//! staying at least that far away. Within one branch the competitors factor.
//!
//! A branch holds a sub-vector of the candidate's filtered distribution plus,
//! per competitor, the filtered mass of trajectories that have stayed
//! outside every radius seen by this branch. Candidate states whose distance
//! falls between the same pair of competitor distances share a branch, so
//! the branch count is bounded by the product over query timestamps of the
//! number of distinct competitor distances, and in practice much smaller.

use alloc::vec;
use alloc::vec::Vec;

use crate::adaptation::MASS_GUARD;
use crate::model::{a_priori_sparse, Reference, StateId, StateSpace, Time, UncertainObject};
use crate::sparse::Scatter;
use crate::{Error, Result, SparseVec};

/// Default cap on the number of live branches.
pub const DEFAULT_MAX_BRANCHES: usize = 1 << 20;

/// Cap on the sparse entries held by all live branches together (about
/// 16 bytes each).
pub const MAX_BRANCH_ENTRIES: usize = 1 << 24;

struct Branch {
    cand: SparseVec,
    /// `None` while a competitor is still unrestricted in this branch; its
    /// vector is then the competitor's filtered distribution itself.
    hits: Vec<Option<SparseVec>>,
}

/// Filtered forward state of one object: the distribution conditioned on
/// observations up to the current tick.
struct Filter<'a> {
    object: &'a UncertainObject,
    dist: SparseVec,
}

impl<'a> Filter<'a> {
    fn new(object: &'a UncertainObject, ts: Time) -> Result<Self> {
        Ok(Self {
            object,
            dist: a_priori_sparse(object, ts)?,
        })
    }

    /// Advances to `t` and returns the normalizer for an observation at `t`
    /// (1 if unobserved). Past the last observation the object stays put;
    /// nothing downstream depends on its state there.
    fn step(&mut self, t: Time, scatter: &mut Scatter) -> Result<Option<(StateId, f64)>> {
        if t > self.object.last_time() {
            return Ok(None);
        }
        self.dist = scatter.propagate(&self.dist, self.object.transition(t - 1)?);
        match self.object.observation_at(t) {
            Some(s) => {
                let norm = self.dist.get(s);
                if norm <= MASS_GUARD {
                    return Err(Error::Inconsistent {
                        object: self.object.id(),
                        time: t,
                    });
                }
                self.dist = SparseVec::point(s);
                Ok(Some((s, norm)))
            }
            None => Ok(None),
        }
    }
}

fn advance(
    v: &SparseVec,
    object: &UncertainObject,
    t: Time,
    cond: Option<(StateId, f64)>,
    scatter: &mut Scatter,
) -> Result<SparseVec> {
    if t > object.last_time() {
        return Ok(v.clone());
    }
    let mut next = scatter.propagate(v, object.transition(t - 1)?);
    if let Some((s, norm)) = cond {
        next.condition_on(s, norm);
    }
    Ok(next)
}

/// Relative likelihood of all observations after `te`, for each state in
/// `support` at time `te`. Aligned with `support.entries()`. Only ratios
/// matter, so the vector is rescaled as it is built.
fn future_likelihood(o: &UncertainObject, te: Time, support: &SparseVec) -> Result<Vec<f64>> {
    if te >= o.last_time() {
        return Ok(vec![1.0; support.len()]);
    }
    let mut layers: Vec<Vec<StateId>> = vec![support.states().collect()];
    for t in te + 1..=o.last_time() {
        let m = o.transition(t - 1)?;
        let prev = layers.last().unwrap();
        let mut next: Vec<StateId> = match o.observation_at(t) {
            Some(s) => prev
                .iter()
                .any(|&p| m.get(p, s) > 0.0)
                .then_some(s)
                .into_iter()
                .collect(),
            None => prev
                .iter()
                .flat_map(|&p| m.successors(p).iter().copied())
                .collect(),
        };
        next.sort_unstable();
        next.dedup();
        if next.is_empty() {
            return Err(Error::Inconsistent {
                object: o.id(),
                time: t,
            });
        }
        layers.push(next);
    }
    let mut beta = vec![1.0; layers.last().unwrap().len()];
    for k in (0..layers.len() - 1).rev() {
        let m = o.transition(te + k as Time)?;
        let succ = &layers[k + 1];
        let mut cur: Vec<f64> = layers[k]
            .iter()
            .map(|&s| {
                let (cols, vals) = m.row(s);
                cols.iter()
                    .zip(vals)
                    .filter_map(|(j, p)| succ.binary_search(j).ok().map(|at| p * beta[at]))
                    .sum()
            })
            .collect();
        let max = cur.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            cur.iter_mut().for_each(|b| *b /= max);
        }
        beta = cur;
    }
    Ok(beta)
}

fn weighted(v: &SparseVec, total: &SparseVec, beta: &[f64]) -> f64 {
    // `v` is a sub-vector of `total`; both are sorted.
    let mut sum = 0.0;
    let mut k = 0;
    for &(s, p) in v.entries() {
        while total.entries()[k].0 < s {
            k += 1;
        }
        sum += p * beta[k];
    }
    sum
}

/// Distance range of a support set to the reference.
fn range(space: &StateSpace, v: &SparseVec, q: &[f64]) -> (f64, f64) {
    v.states()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            let d = space.distance_to(s, q);
            (lo.min(d), hi.max(d))
        })
}

enum Screen {
    /// Some competitor is certainly closer at some query time.
    Zero,
    /// Indices of competitors that can decide the outcome at some time.
    Active(Vec<usize>),
}

/// Forward supports are supersets of the posterior supports, so the
/// decisions made here are safe.
fn screen(
    o: &UncertainObject,
    competitors: &[&UncertainObject],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
    scatter: &mut Scatter,
) -> Result<Screen> {
    let (ts, te) = (times[0], *times.last().unwrap());
    let mut cand = Filter::new(o, ts)?;
    let mut comps = competitors
        .iter()
        .map(|c| Filter::new(c, ts))
        .collect::<Result<Vec<_>>>()?;
    let mut relevant = vec![false; comps.len()];
    let mut next_query = 0;
    for t in ts..=te {
        if t > ts {
            cand.step(t, scatter)?;
            for c in &mut comps {
                c.step(t, scatter)?;
            }
        }
        if times[next_query] != t {
            continue;
        }
        next_query += 1;
        let q = reference.position(space, t)?;
        let (cand_min, cand_max) = range(space, &cand.dist, q);
        let ranges: Vec<(f64, f64)> = comps.iter().map(|c| range(space, &c.dist, q)).collect();
        let min_hi = ranges.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        if min_hi < cand_min {
            return Ok(Screen::Zero);
        }
        for (k, &(lo, _)) in ranges.iter().enumerate() {
            // Whenever c would beat the candidate, an object that is always
            // strictly closer than c beats it as well, so c changes nothing.
            if lo < cand_max && lo <= min_hi {
                relevant[k] = true;
            }
        }
    }
    Ok(Screen::Active(
        (0..comps.len()).filter(|&k| relevant[k]).collect(),
    ))
}

/// P∀NN of `o` against `competitors` (which must not contain `o`), exact
/// under the model. Fails with `InstanceTooLarge` if more than
/// `max_branches` branches are live at once.
pub fn pann_joint(
    o: &UncertainObject,
    competitors: &[&UncertainObject],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
    max_branches: usize,
) -> Result<f64> {
    super::pair::check_times(times)?;
    for x in core::iter::once(o).chain(competitors.iter().copied()) {
        if let Some(&t) = times.iter().find(|&&t| !x.covers(t)) {
            return Err(Error::OutOfSpan {
                object: x.id(),
                time: t,
            });
        }
    }
    if competitors.iter().any(|c| c.id() == o.id()) {
        return Err(Error::InvalidParameter(
            "candidate listed among its competitors".into(),
        ));
    }
    let mut scatter = Scatter::new(space.len());
    let active = match screen(o, competitors, reference, space, times, &mut scatter)? {
        Screen::Zero => return Ok(0.0),
        Screen::Active(a) => a,
    };
    let competitors: Vec<&UncertainObject> = active.iter().map(|&k| competitors[k]).collect();

    let (ts, te) = (times[0], *times.last().unwrap());
    let mut cand = Filter::new(o, ts)?;
    let mut comps = competitors
        .iter()
        .map(|c| Filter::new(c, ts))
        .collect::<Result<Vec<_>>>()?;
    let mut branches = vec![Branch {
        cand: cand.dist.clone(),
        hits: vec![None; comps.len()],
    }];
    let mut next_query = 0;
    for t in ts..=te {
        if t > ts {
            let cond_o = cand.step(t, &mut scatter)?;
            let conds: Vec<_> = comps
                .iter_mut()
                .map(|c| c.step(t, &mut scatter))
                .collect::<Result<_>>()?;
            let mut next = Vec::with_capacity(branches.len());
            'branch: for b in &branches {
                let c = advance(&b.cand, o, t, cond_o, &mut scatter)?;
                if c.is_empty() {
                    continue;
                }
                let mut hits = Vec::with_capacity(b.hits.len());
                for (k, h) in b.hits.iter().enumerate() {
                    let Some(h) = h else {
                        hits.push(None);
                        continue;
                    };
                    let h = advance(h, competitors[k], t, conds[k], &mut scatter)?;
                    if h.is_empty() {
                        continue 'branch;
                    }
                    hits.push(Some(h));
                }
                next.push(Branch { cand: c, hits });
            }
            branches = next;
        }
        if times.get(next_query) == Some(&t) {
            next_query += 1;
            branches = split(
                branches,
                &comps,
                reference.position(space, t)?,
                space,
                max_branches,
            )?;
        }
        if branches.is_empty() {
            return Ok(0.0);
        }
    }

    let beta_o = future_likelihood(o, te, &cand.dist)?;
    let norm_o = weighted(&cand.dist, &cand.dist, &beta_o);
    let mut betas = Vec::with_capacity(comps.len());
    for c in &comps {
        let beta = future_likelihood(c.object, te, &c.dist)?;
        let norm = weighted(&c.dist, &c.dist, &beta);
        betas.push((beta, norm));
    }
    let mut total = 0.0;
    for b in &branches {
        let mut p = weighted(&b.cand, &cand.dist, &beta_o) / norm_o;
        for (k, h) in b.hits.iter().enumerate() {
            if let Some(h) = h {
                let (beta, norm) = &betas[k];
                p *= weighted(h, &comps[k].dist, beta) / norm;
            }
        }
        total += p;
    }
    Ok(total.min(1.0))
}

/// Splits every branch by which of its own competitor states lie strictly
/// closer than the candidate, then removes those states from each child's
/// competitor vectors. Candidate states with no competitor distance between
/// them filter identically and stay together.
fn split(
    branches: Vec<Branch>,
    comps: &[Filter<'_>],
    q: &[f64],
    space: &StateSpace,
    max_branches: usize,
) -> Result<Vec<Branch>> {
    let sorted = |v: &SparseVec| {
        let mut d: Vec<f64> = v.states().map(|s| space.distance_to(s, q)).collect();
        d.sort_unstable_by(f64::total_cmp);
        d
    };
    let global: Vec<Vec<f64>> = comps.iter().map(|c| sorted(&c.dist)).collect();
    let mut out = Vec::with_capacity(branches.len());
    let mut entries = 0;
    for b in branches {
        let mut cuts: Vec<f64> = Vec::new();
        for (k, h) in b.hits.iter().enumerate() {
            match h {
                Some(h) => cuts.extend(h.states().map(|s| space.distance_to(s, q))),
                None => cuts.extend_from_slice(&global[k]),
            }
        }
        cuts.sort_unstable_by(f64::total_cmp);
        cuts.dedup();
        // Group candidate states by cut index; entries stay state-sorted.
        let mut groups: alloc::collections::BTreeMap<usize, (f64, Vec<(StateId, f64)>)> =
            Default::default();
        for &(s, p) in b.cand.entries() {
            let d = space.distance_to(s, q);
            let key = cuts.partition_point(|&x| x < d);
            groups
                .entry(key)
                .or_insert_with(|| (d, Vec::new()))
                .1
                .push((s, p));
        }
        'group: for (_, (d, cand)) in groups {
            let mut hits = Vec::with_capacity(b.hits.len());
            for (k, h) in b.hits.iter().enumerate() {
                let h = match h {
                    None if global[k].first().is_none_or(|&x| x >= d) => None,
                    None => Some(comps[k].dist.clone()),
                    Some(h) => Some(h.clone()),
                };
                let h = h.map(|mut h| {
                    h.retain(|s, _| space.distance_to(s, q) >= d);
                    h
                });
                if h.as_ref().is_some_and(|h| h.is_empty()) {
                    continue 'group;
                }
                hits.push(h);
            }
            entries += cand.len() + hits.iter().flatten().map(SparseVec::len).sum::<usize>();
            out.push(Branch {
                cand: SparseVec::from_sorted(cand),
                hits,
            });
            if out.len() > max_branches {
                return Err(Error::InstanceTooLarge {
                    limit: max_branches as u64,
                });
            }
            if entries > MAX_BRANCH_ENTRIES {
                return Err(Error::InstanceTooLarge {
                    limit: MAX_BRANCH_ENTRIES as u64,
                });
            }
        }
    }
    Ok(out)
}
