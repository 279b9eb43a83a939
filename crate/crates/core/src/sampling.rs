//! Monte-Carlo estimation over sampled possible worlds.
//!
//! World `i` draws one trajectory per object, each from the generator
//! `object_rng(seed, id, i)`, so the i-th samples of all objects are paired
//! and any subset of worlds can be evaluated on any thread.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::adaptation::AdaptedModel;
use crate::exact::{self, apriori_maximal, TimeSetProbability};
use crate::model::{
    ObjectId, Reference, StateId, StateSpace, Time, Trajectory, TrajectoryDatabase,
    TransitionMatrix, UncertainObject,
};
use crate::rng::{object_rng, Rng};
use crate::{Error, Result};

/// Attempt cap for the rejection baselines.
pub const DEFAULT_ATTEMPT_CAP: u64 = 10_000_000;

/// Default number of sampled worlds.
pub const DEFAULT_SAMPLES: u64 = 10_000;

/// Default failure probability when reporting a Hoeffding half-width.
pub const DEFAULT_DELTA: f64 = 0.05;

fn draw_row(rng: &mut Rng, cols: &[StateId], vals: &[f64]) -> Option<StateId> {
    let total: f64 = vals.iter().sum();
    if cols.is_empty() || total <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    for (&c, &p) in cols.iter().zip(vals) {
        if u < p {
            return Some(c);
        }
        u -= p;
    }
    // Rounding left a sliver: take the last positive entry.
    cols.iter()
        .zip(vals)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(&c, _)| c)
}

fn draw_prior(rng: &mut Rng, m: &TransitionMatrix, s: StateId) -> Option<StateId> {
    let (cols, vals) = m.row(s);
    draw_row(rng, cols, vals)
}

/// Walks the a-posteriori chain from `state` at `from` up to `to`, pushing
/// each drawn state onto `out`.
fn walk_posterior(
    a: &AdaptedModel,
    from: Time,
    to: Time,
    mut state: StateId,
    rng: &mut Rng,
    out: &mut Vec<StateId>,
) {
    for t in from..to {
        state = if t < a.span().1 {
            let (cols, vals) = a
                .forward_at(t)
                .and_then(|f| f.row(state))
                .expect("a-posteriori chain reached a state with no mass");
            draw_row(rng, cols, vals).expect("a-posteriori row with no mass")
        } else {
            // Past the last observation the prior is the posterior.
            draw_prior(rng, a_prior(a, t), state).expect("a-priori row with no mass")
        };
        out.push(state);
    }
}

fn a_prior(a: &AdaptedModel, t: Time) -> &TransitionMatrix {
    a.prior()
        .at(t)
        .expect("a-priori model lacks a matrix inside the object span")
}

/// One trajectory over the whole span, started at the first observation and
/// driven by the a-posteriori chain. Every draw passes through every
/// observation.
pub fn sample_trajectory(a: &AdaptedModel, rng: &mut Rng) -> Trajectory {
    let (first, last) = a.span();
    let mut states = Vec::with_capacity((last - first + 1) as usize);
    states.push(a.first_state());
    walk_posterior(a, first, last, a.first_state(), rng, &mut states);
    Trajectory {
        object: a.object(),
        start: first,
        states,
    }
}

/// One trajectory over `window`: a draw from the posterior marginal at the
/// window start, continued with the a-posteriori chain.
pub fn sample_window(a: &AdaptedModel, window: (Time, Time), rng: &mut Rng) -> Result<Trajectory> {
    let (ts, te) = window;
    if te < ts {
        return Err(Error::InvalidParameter("empty window".into()));
    }
    let s0 = match a.marginal(ts) {
        Some(v) => {
            let (cols, vals): (Vec<StateId>, Vec<f64>) = v.entries().iter().copied().unzip();
            draw_row(rng, &cols, &vals)
        }
        None => {
            let dist = a.posterior_distribution(ts)?;
            let probs = dist.probs();
            let cols: Vec<StateId> = (0..probs.len()).filter(|&s| probs[s] > 0.0).collect();
            let vals: Vec<f64> = cols.iter().map(|&s| probs[s]).collect();
            draw_row(rng, &cols, &vals)
        }
    }
    .expect("posterior marginal with no mass");
    let mut states = Vec::with_capacity((te - ts + 1) as usize);
    states.push(s0);
    walk_posterior(a, ts, te, s0, rng, &mut states);
    Ok(Trajectory {
        object: a.object(),
        start: ts,
        states,
    })
}

/// Result of a rejection sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOutcome {
    /// `None` if the attempt cap was hit first.
    pub trajectory: Option<Trajectory>,
    pub attempts: u64,
    pub truncated: bool,
}

/// Forward-simulates `states.last()` with the a-priori chain for
/// `steps` ticks starting at `from`, failing on the first missed
/// observation.
fn simulate(
    o: &UncertainObject,
    from: Time,
    steps: u32,
    rng: &mut Rng,
    states: &mut Vec<StateId>,
) -> Result<bool> {
    let mut s = *states.last().unwrap();
    for t in from..from + steps {
        match draw_prior(rng, o.transition(t)?, s) {
            Some(next) => s = next,
            None => return Ok(false),
        }
        if o.observation_at(t + 1).is_some_and(|obs| obs != s) {
            return Ok(false);
        }
        states.push(s);
    }
    Ok(true)
}

/// Baseline: sample whole trajectories from the a-priori chain and discard
/// any that miss an observation.
pub fn rejection_sampler_naive(
    o: &UncertainObject,
    rng: &mut Rng,
    cap: u64,
) -> Result<RejectionOutcome> {
    let (first, last) = o.span();
    let mut attempts = 0;
    while attempts < cap {
        attempts += 1;
        let mut states = alloc::vec![o.observations()[0].state];
        if simulate(o, first, last - first, rng, &mut states)? {
            let trajectory = Some(Trajectory {
                object: o.id(),
                start: first,
                states,
            });
            return Ok(RejectionOutcome {
                trajectory,
                attempts,
                truncated: false,
            });
        }
    }
    Ok(RejectionOutcome {
        trajectory: None,
        attempts,
        truncated: true,
    })
}

/// Baseline: rejection per segment between consecutive observations, with
/// accepted segments kept. Attempts are summed over segments.
pub fn rejection_sampler_segmented(
    o: &UncertainObject,
    rng: &mut Rng,
    cap: u64,
) -> Result<RejectionOutcome> {
    let obs = o.observations();
    let mut states = alloc::vec![obs[0].state];
    let mut attempts = 0;
    for w in obs.windows(2) {
        let keep = states.len();
        loop {
            if attempts >= cap {
                return Ok(RejectionOutcome {
                    trajectory: None,
                    attempts,
                    truncated: true,
                });
            }
            attempts += 1;
            if simulate(o, w[0].time, w[1].time - w[0].time, rng, &mut states)? {
                break;
            }
            states.truncate(keep);
        }
    }
    if obs.len() == 1 {
        attempts = 1;
    }
    let trajectory = Some(Trajectory {
        object: o.id(),
        start: o.first_time(),
        states,
    });
    Ok(RejectionOutcome {
        trajectory,
        attempts,
        truncated: false,
    })
}

/// Where an object's sampled trajectories come from.
#[derive(Debug, Clone)]
pub enum TrajectorySource<'a> {
    /// The a-posteriori chain; never rejects.
    Posterior(Arc<AdaptedModel>),
    /// Whole-trajectory rejection from the a-priori chain.
    Naive(&'a UncertainObject),
    /// Segment-wise rejection from the a-priori chain.
    Segmented(&'a UncertainObject),
}

/// A drawn trajectory restricted to a window, with the attempts it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub trajectory: Trajectory,
    pub attempts: u64,
}

impl TrajectorySource<'_> {
    pub fn object(&self) -> ObjectId {
        match self {
            TrajectorySource::Posterior(a) => a.object(),
            TrajectorySource::Naive(o) | TrajectorySource::Segmented(o) => o.id(),
        }
    }

    pub fn draw(&self, window: (Time, Time), rng: &mut Rng) -> Result<Draw> {
        let outcome = match self {
            TrajectorySource::Posterior(a) => {
                return Ok(Draw {
                    trajectory: sample_window(a, window, rng)?,
                    attempts: 1,
                });
            }
            TrajectorySource::Naive(o) => rejection_sampler_naive(o, rng, DEFAULT_ATTEMPT_CAP)?,
            TrajectorySource::Segmented(o) => {
                rejection_sampler_segmented(o, rng, DEFAULT_ATTEMPT_CAP)?
            }
        };
        let full = outcome.trajectory.ok_or(Error::InstanceTooLarge {
            limit: DEFAULT_ATTEMPT_CAP,
        })?;
        let lo = window.0.checked_sub(full.start).ok_or(Error::OutOfSpan {
            object: full.object,
            time: window.0,
        })?;
        let hi = window.1 - full.start;
        if hi as usize >= full.states.len() {
            return Err(Error::OutOfSpan {
                object: full.object,
                time: window.1,
            });
        }
        let states = full.states[lo as usize..=hi as usize].to_vec();
        Ok(Draw {
            trajectory: Trajectory {
                object: full.object,
                start: window.0,
                states,
            },
            attempts: outcome.attempts,
        })
    }
}

/// One trajectory per object over a common window.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWorld {
    pub trajectories: Vec<Trajectory>,
    pub attempts: u64,
}

/// World number `index` under master seed `seed`.
pub fn sample_world(
    sources: &[TrajectorySource<'_>],
    window: (Time, Time),
    seed: u64,
    index: u64,
) -> Result<SampledWorld> {
    let mut trajectories = Vec::with_capacity(sources.len());
    let mut attempts = 0;
    for src in sources {
        let mut rng = object_rng(seed, src.object(), index);
        let d = src.draw(window, &mut rng)?;
        attempts += d.attempts;
        trajectories.push(d.trajectory);
    }
    Ok(SampledWorld {
        trajectories,
        attempts,
    })
}

/// Which predicate a Monte-Carlo estimate counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredicateKind {
    /// Nearest neighbor at every query timestamp.
    Forall,
    /// Nearest neighbor at some query timestamp.
    Exists,
}

/// A Monte-Carlo experiment for one target object: which worlds to draw and
/// what to look at in them.
pub struct Experiment<'a> {
    pub target: ObjectId,
    /// Must include the target.
    pub sources: &'a [TrajectorySource<'a>],
    pub reference: &'a Reference,
    pub space: &'a StateSpace,
    /// Sorted, strictly increasing, at most 64 entries.
    pub times: &'a [Time],
    pub seed: u64,
}

impl Experiment<'_> {
    fn check(&self) -> Result<usize> {
        exact_check_times(self.times)?;
        if self.times.len() > 64 {
            return Err(Error::InvalidParameter(
                "at most 64 timestamps per sampled query".into(),
            ));
        }
        self.sources
            .iter()
            .position(|s| s.object() == self.target)
            .ok_or(Error::UnknownObject(self.target))
    }

    /// Bit `k` of the result is set iff the target is at least as close to
    /// the reference as every other object at `times[k]`, in world `index`.
    pub fn nn_mask(&self, index: u64) -> Result<u64> {
        let me = self.check()?;
        let window = (self.times[0], *self.times.last().unwrap());
        let world = sample_world(self.sources, window, self.seed, index)?;
        let mut mask = 0;
        for (k, &t) in self.times.iter().enumerate() {
            let q = self.reference.position(self.space, t)?;
            let at = (t - window.0) as usize;
            let mine = self.space.distance_to(world.trajectories[me].states[at], q);
            let nearest = world
                .trajectories
                .iter()
                .enumerate()
                .all(|(j, tr)| j == me || mine <= self.space.distance_to(tr.states[at], q));
            if nearest {
                mask |= 1 << k;
            }
        }
        Ok(mask)
    }

    /// Masks for worlds `0..n`, serially.
    pub fn masks(&self, n: u64) -> Result<Vec<u64>> {
        (0..n).map(|i| self.nn_mask(i)).collect()
    }

    pub fn full_mask(&self) -> u64 {
        if self.times.len() == 64 {
            u64::MAX
        } else {
            (1 << self.times.len()) - 1
        }
    }
}

fn exact_check_times(times: &[Time]) -> Result<()> {
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

/// Whether the predicate holds in a world with the given mask.
pub fn holds(kind: PredicateKind, mask: u64, full: u64) -> bool {
    match kind {
        PredicateKind::Forall => mask == full,
        PredicateKind::Exists => mask != 0,
    }
}

/// Estimated probability with its Hoeffding half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub samples: u64,
    pub epsilon: f64,
    pub delta: f64,
}

impl EstimatorReport {
    /// Half-width at failure probability `delta` for `samples` worlds,
    /// rounded up so that `hoeffding_samples(epsilon, delta) <= samples`.
    pub fn new(estimate: f64, samples: u64, delta: f64) -> Self {
        let mut epsilon = libm::sqrt(libm::log(2.0 / delta) / (2.0 * samples as f64));
        while epsilon < 1.0 && hoeffding_samples(epsilon, delta).is_ok_and(|n| n > samples) {
            epsilon *= 1.0 + 1e-12;
        }
        Self {
            estimate,
            samples,
            epsilon,
            delta,
        }
    }
}

/// Fraction of `n` worlds in which the predicate holds.
pub fn estimate(
    kind: PredicateKind,
    experiment: &Experiment<'_>,
    n: u64,
) -> Result<EstimatorReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let full = experiment.full_mask();
    let mut hits = 0u64;
    for i in 0..n {
        if holds(kind, experiment.nn_mask(i)?, full) {
            hits += 1;
        }
    }
    Ok(EstimatorReport::new(
        hits as f64 / n as f64,
        n,
        DEFAULT_DELTA,
    ))
}

/// Number of samples after which the mean of bounded draws is within
/// `epsilon` of its expectation with probability at least `1 - delta`.
pub fn hoeffding_samples(epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(
            "epsilon and delta must lie in (0, 1)".into(),
        ));
    }
    let x = libm::log(2.0 / delta) / (2.0 * epsilon * epsilon);
    // Absorb rounding noise so that exact integers stay exact.
    let r = libm::round(x);
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        return Ok(r as u64);
    }
    Ok(libm::ceil(x) as u64)
}

/// PCNN by Monte-Carlo: every candidate timestamp set is scored on the same
/// pool of world masks.
pub fn pcnn_from_masks(masks: &[u64], times: &[Time], tau: f64) -> Result<Vec<TimeSetProbability>> {
    if masks.is_empty() {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let n = masks.len() as f64;
    apriori_maximal(times, tau, |sub| {
        let mut want = 0u64;
        for t in sub {
            let k = times
                .binary_search(t)
                .expect("subset of the query timestamps");
            want |= 1 << k;
        }
        Ok(masks.iter().filter(|&&m| m & want == want).count() as f64 / n)
    })
}

/// Baseline: product of single-timestamp exact probabilities. Ignores the
/// temporal correlation of positions, which biases it downwards.
pub fn snapshot_product_estimator(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<f64> {
    exact_check_times(times)?;
    let mut p = 1.0;
    for &t in times {
        p *= exact::pann(db, o, reference, &[t])?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::adapt;
    use crate::model::{MarkovModel, Observation};
    use alloc::vec;

    fn obj(id: u64, obs: &[(Time, StateId)], m: &[Vec<f64>]) -> UncertainObject {
        let model = Arc::new(MarkovModel::Homogeneous(
            TransitionMatrix::from_dense(m).unwrap(),
        ));
        let obs = obs.iter().map(|&(t, s)| Observation::new(t, s)).collect();
        UncertainObject::new(ObjectId(id), obs, model).unwrap()
    }

    #[test]
    fn hoeffding_examples() {
        let delta = 2.0 / core::f64::consts::E.powi(2);
        assert_eq!(hoeffding_samples(0.5, delta).unwrap(), 4);
        assert_eq!(hoeffding_samples(0.01, 0.05).unwrap(), 18445);
        assert!(hoeffding_samples(0.0, 0.05).is_err());
        assert!(hoeffding_samples(0.1, 1.0).is_err());
    }

    #[test]
    fn report_epsilon_is_consistent() {
        for n in [1, 10, 4611, 18445, 100_000] {
            let r = EstimatorReport::new(0.5, n, 0.05);
            if r.epsilon >= 1.0 {
                continue;
            }
            assert!(hoeffding_samples(r.epsilon, 0.05).unwrap() <= n);
        }
    }

    #[test]
    fn deterministic_chain_one_path() {
        let o = obj(1, &[(0, 0), (3, 1)], &[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let a = adapt(&o).unwrap();
        let mut rng = object_rng(1, o.id(), 0);
        for _ in 0..10 {
            assert_eq!(sample_trajectory(&a, &mut rng).states, vec![0, 1, 0, 1]);
        }
        let r = rejection_sampler_naive(&o, &mut rng, 10).unwrap();
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn posterior_samples_hit_observations() {
        let o = obj(
            1,
            &[(0, 0), (2, 0), (5, 1)],
            &[vec![0.5, 0.5], vec![0.2, 0.8]],
        );
        let a = adapt(&o).unwrap();
        let mut rng = object_rng(3, o.id(), 0);
        for _ in 0..1000 {
            assert!(sample_trajectory(&a, &mut rng).hits_all(o.observations()));
        }
    }

    #[test]
    fn segmented_equals_naive_on_one_segment() {
        let o = obj(1, &[(0, 0), (1, 0)], &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        for i in 0..20 {
            let a = rejection_sampler_naive(&o, &mut object_rng(9, o.id(), i), 100).unwrap();
            let b = rejection_sampler_segmented(&o, &mut object_rng(9, o.id(), i), 100).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cap_truncates() {
        let o = obj(1, &[(0, 0), (1, 1)], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = rejection_sampler_naive(&o, &mut object_rng(0, o.id(), 0), 5).unwrap();
        assert!(r.truncated && r.trajectory.is_none() && r.attempts == 5);
    }

    #[test]
    fn pcnn_masks() {
        let masks = [0b11, 0b01, 0b11, 0b10];
        let out = pcnn_from_masks(&masks, &[4, 9], 0.5).unwrap();
        assert_eq!(
            out,
            vec![TimeSetProbability {
                times: vec![4, 9],
                probability: 0.5
            }]
        );
    }
}
