//! Reliability of predicted ∀-probabilities against known true
//! trajectories: bucket every uncertain prediction by its value and compare
//! with how often it came true.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ust_core::index::UstIndex;
use ust_core::model::{ObjectId, Reference, Time, Trajectory, TrajectoryDatabase};

use crate::error::{CliError, Result};
use crate::runner::{run_query, Estimator, QueryKind, QuerySpec, SampleSize};
use crate::workload::random_queries;

/// Buckets with fewer tuples than this are flagged as unreliable.
pub const DEFAULT_MIN_TUPLES: usize = 200;

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub queries: usize,
    pub times_len: u32,
    pub buckets: usize,
    pub min_tuples: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            queries: 2_500,
            times_len: 5,
            buckets: 10,
            min_tuples: DEFAULT_MIN_TUPLES,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub tuples: usize,
    pub mean_predicted: f64,
    /// Fraction of tuples whose prediction came true.
    pub observed: f64,
    /// Too few tuples to judge.
    pub flagged: bool,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

/// Whether `o` is at least as close to the reference as every other object
/// defined on `times`, at every timestamp, in the true trajectories.
pub fn truly_nearest(
    db: &TrajectoryDatabase,
    truth: &BTreeMap<ObjectId, &Trajectory>,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<bool> {
    let space = db.space();
    let at = |id: ObjectId, t: Time| -> Result<usize> {
        truth.get(&id).and_then(|tr| tr.state_at(t)).ok_or_else(|| {
            CliError::Validation(format!("no true position for object {id} at time {t}"))
        })
    };
    for &t in times {
        let q = reference.position(space, t)?;
        let mine = space.distance_to(at(o, t)?, q);
        for other in db.covering(times) {
            if other.id() != o && space.distance_to(at(other.id(), t)?, q) < mine {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Predicted probability and outcome of every uncertain result.
#[derive(Debug, Clone, Default)]
pub struct Tuples {
    pub tuples: Vec<(f64, bool)>,
    /// Queries whose exact answer exceeded the work budget.
    pub skipped: usize,
}

pub fn collect_tuples(
    db: &TrajectoryDatabase,
    truth: &[Trajectory],
    index: &UstIndex,
    cfg: &CalibrationConfig,
) -> Result<Tuples> {
    let truth: BTreeMap<ObjectId, &Trajectory> = truth.iter().map(|t| (t.object, t)).collect();
    let mut out = Tuples::default();
    for q in random_queries(db, cfg.queries, cfg.times_len, cfg.seed) {
        let spec = QuerySpec {
            kind: QueryKind::Forall,
            reference: q.reference.clone(),
            times: q.times.clone(),
            tau: 0.0,
            estimator: Estimator::Exact,
            samples: SampleSize::default(),
            seed: cfg.seed,
            prune: true,
        };
        let rows = match run_query(db, Some(index), None, &spec) {
            Ok(res) => res.rows,
            Err(CliError::Core(ust_core::Error::InstanceTooLarge { .. })) => {
                out.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for row in rows {
            if row.probability >= 1.0 {
                continue;
            }
            let hit = truly_nearest(db, &truth, row.object, &q.reference, &q.times)?;
            out.tuples.push((row.probability, hit));
        }
    }
    Ok(out)
}

/// Groups tuples into `buckets` equal-width probability intervals.
pub fn bucketize(tuples: &[(f64, bool)], buckets: usize, min_tuples: usize) -> Vec<Bucket> {
    let buckets = buckets.max(1);
    let mut sums = vec![(0usize, 0.0f64, 0usize); buckets];
    for &(p, hit) in tuples {
        let k = ((p * buckets as f64) as usize).min(buckets - 1);
        sums[k].0 += 1;
        sums[k].1 += p;
        sums[k].2 += hit as usize;
    }
    sums.iter()
        .enumerate()
        .map(|(k, &(n, psum, hits))| {
            let denom = n.max(1) as f64;
            Bucket {
                lo: k as f64 / buckets as f64,
                hi: (k + 1) as f64 / buckets as f64,
                tuples: n,
                mean_predicted: psum / denom,
                observed: hits as f64 / denom,
                flagged: n < min_tuples,
            }
        })
        .collect()
}

/// Buckets plus the number of queries skipped for size.
pub fn calibrate(
    db: &TrajectoryDatabase,
    truth: &[Trajectory],
    index: &UstIndex,
    cfg: &CalibrationConfig,
) -> Result<(Vec<Bucket>, usize)> {
    let t = collect_tuples(db, truth, index, cfg)?;
    Ok((bucketize(&t.tuples, cfg.buckets, cfg.min_tuples), t.skipped))
}

pub fn format_buckets(buckets: &[Bucket]) -> String {
    let mut s = String::from("lo\thi\ttuples\texpected\tmean_predicted\tobserved\tflag\n");
    for b in buckets {
        let _ = writeln!(
            s,
            "{:.2}\t{:.2}\t{}\t{:.3}\t{:.4}\t{:.4}\t{}",
            b.lo,
            b.hi,
            b.tuples,
            b.midpoint(),
            b.mean_predicted,
            b.observed,
            if b.flagged { "few" } else { "ok" }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use ust_core::rng::keyed_rng;

    #[test]
    fn self_consistent_predictions_are_calibrated() {
        let mut rng = keyed_rng(3, 0, 0);
        let tuples: Vec<(f64, bool)> = (0..20_000)
            .map(|_| {
                let p: f64 = rng.gen();
                (p, rng.gen::<f64>() < p)
            })
            .collect();
        for b in bucketize(&tuples, 10, 200) {
            assert!(!b.flagged);
            assert!((b.observed - b.mean_predicted).abs() < 0.05, "{b:?}");
        }
    }

    #[test]
    fn sparse_buckets_are_flagged() {
        let b = bucketize(&[(0.05, true), (0.95, false)], 10, 2);
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|b| b.flagged));
        assert_eq!(b[0].tuples, 1);
        assert_eq!(b[9].observed, 0.0);
    }
}
