//! Query evaluation: prune with the index, then refine every candidate
//! exactly or by sampling possible worlds.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use ust_core::adaptation::{adapt, AdaptedModel};
use ust_core::exact::{pann_among, pcnn_object, THRESHOLD_SLACK};
use ust_core::index::UstIndex;
use ust_core::model::{ObjectId, Reference, StateSpace, Time, TrajectoryDatabase, UncertainObject};
use ust_core::oracle;
use ust_core::sampling::{
    hoeffding_samples, pcnn_from_masks, sample_world, TrajectorySource, DEFAULT_SAMPLES,
};

use crate::error::{CliError, Result};
use crate::format::sig12;
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    /// Nearest neighbor at every query timestamp.
    Forall,
    /// Nearest neighbor at some query timestamp.
    Exists,
    /// Maximal timestamp sets with a ∀-probability above the threshold.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    /// Worlds drawn from the adapted chains.
    Posterior,
    /// Worlds drawn by whole-trajectory rejection.
    Ts1,
    /// Worlds drawn by per-segment rejection.
    Ts2,
    /// Product of single-timestamp exact probabilities.
    Snapshot,
}

impl Estimator {
    fn samples_worlds(self) -> bool {
        matches!(self, Estimator::Posterior | Estimator::Ts1 | Estimator::Ts2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Count(u64),
    Hoeffding { epsilon: f64, delta: f64 },
}

impl SampleSize {
    pub fn resolve(self) -> Result<u64> {
        match self {
            SampleSize::Count(0) => Err(CliError::Validation("need at least one sample".into())),
            SampleSize::Count(n) => Ok(n),
            SampleSize::Hoeffding { epsilon, delta } => Ok(hoeffding_samples(epsilon, delta)?),
        }
    }
}

impl Default for SampleSize {
    fn default() -> Self {
        SampleSize::Count(DEFAULT_SAMPLES)
    }
}

#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub kind: QueryKind,
    pub reference: Reference,
    /// Sorted, without duplicates.
    pub times: Vec<Time>,
    pub tau: f64,
    pub estimator: Estimator,
    pub samples: SampleSize,
    pub seed: u64,
    pub prune: bool,
}

impl QuerySpec {
    /// Exact for the ∀ and continuous queries, posterior sampling for ∃.
    pub fn default_estimator(kind: QueryKind) -> Estimator {
        match kind {
            QueryKind::Exists => Estimator::Posterior,
            _ => Estimator::Exact,
        }
    }

    fn check(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(CliError::Validation("no query timestamps".into()));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Validation(
                "query timestamps must be sorted and distinct".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CliError::Validation(format!(
                "tau {} outside [0, 1]",
                self.tau
            )));
        }
        if self.kind == QueryKind::Continuous && self.tau <= 0.0 {
            return Err(CliError::Validation(
                "continuous queries need tau > 0".into(),
            ));
        }
        if self.estimator == Estimator::Snapshot && self.kind != QueryKind::Forall {
            return Err(CliError::Validation(
                "the snapshot estimator only answers ∀ queries".into(),
            ));
        }
        if self.estimator.samples_worlds() && self.times.len() > 64 {
            return Err(CliError::Validation(
                "sampled queries take at most 64 timestamps".into(),
            ));
        }
        Ok(())
    }
}

/// One result line. `times` is set for continuous queries only.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub object: ObjectId,
    pub times: Option<Vec<Time>>,
    pub probability: f64,
}

#[derive(Debug, Clone, Default)]
pub struct QueryOutcome {
    pub rows: Vec<Row>,
    pub candidates: usize,
    pub influence: usize,
    pub samples: u64,
    /// Adaptation, sampling and exact refinement, in milliseconds.
    pub ts_ms: f64,
    pub sa_ms: f64,
    pub ex_ms: f64,
}

pub fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn reaches(p: f64, tau: f64) -> bool {
    p > 0.0 && p + THRESHOLD_SLACK >= tau
}

/// Runs one query. Without an index (or with `spec.prune` off) every object
/// defined on all query timestamps is both candidate and competitor.
/// Adapted models are taken from `adapted_cache` when a matching dump is
/// there.
pub fn run_query(
    db: &TrajectoryDatabase,
    index: Option<&UstIndex>,
    adapted_cache: Option<&Path>,
    spec: &QuerySpec,
) -> Result<QueryOutcome> {
    spec.check()?;
    let times = &spec.times[..];
    let space = db.space();
    for &t in times {
        spec.reference.position(space, t)?;
    }
    let (cands, comps): (Vec<&UncertainObject>, Vec<&UncertainObject>) =
        match index.filter(|_| spec.prune) {
            Some(idx) => {
                let p = idx.prune(space, &spec.reference, times)?;
                let get = |ids: &[ObjectId]| {
                    ids.iter()
                        .map(|&id| db.object(id))
                        .collect::<ust_core::Result<Vec<_>>>()
                };
                let cands = if spec.kind == QueryKind::Forall {
                    get(&p.candidates)?
                } else {
                    get(&p.influence)?
                };
                (cands, get(&p.influence)?)
            }
            None => {
                let all: Vec<_> = db.covering(times).collect();
                (all.clone(), all)
            }
        };
    let mut out = QueryOutcome {
        candidates: cands.len(),
        influence: comps.len(),
        ..Default::default()
    };

    if spec.estimator.samples_worlds() {
        let n = spec.samples.resolve()?;
        out.samples = n;
        let started = Instant::now();
        let adapted = if spec.estimator == Estimator::Posterior {
            adapt_all(&comps, adapted_cache)?
        } else {
            Vec::new()
        };
        out.ts_ms = elapsed_ms(started);
        let sources: Vec<TrajectorySource<'_>> = match spec.estimator {
            Estimator::Posterior => adapted
                .into_iter()
                .map(TrajectorySource::Posterior)
                .collect(),
            Estimator::Ts1 => comps.iter().map(|&o| TrajectorySource::Naive(o)).collect(),
            _ => comps
                .iter()
                .map(|&o| TrajectorySource::Segmented(o))
                .collect(),
        };
        let started = Instant::now();
        let targets: Vec<usize> = cands
            .iter()
            .map(|c| {
                comps
                    .iter()
                    .position(|x| x.id() == c.id())
                    .expect("candidates compete")
            })
            .collect();
        let masks = world_masks(
            &sources,
            &targets,
            &spec.reference,
            space,
            times,
            spec.seed,
            n,
        )?;
        let full = if times.len() == 64 {
            u64::MAX
        } else {
            (1u64 << times.len()) - 1
        };
        for (c, m) in cands.iter().zip(&masks) {
            match spec.kind {
                QueryKind::Forall | QueryKind::Exists => {
                    let hit = |x: &u64| {
                        if spec.kind == QueryKind::Forall {
                            *x == full
                        } else {
                            *x != 0
                        }
                    };
                    let p = m.iter().filter(|x| hit(x)).count() as f64 / n as f64;
                    if reaches(p, spec.tau) {
                        out.rows.push(Row {
                            object: c.id(),
                            times: None,
                            probability: p,
                        });
                    }
                }
                QueryKind::Continuous => {
                    for r in pcnn_from_masks(m, times, spec.tau)? {
                        out.rows.push(Row {
                            object: c.id(),
                            times: Some(r.times),
                            probability: r.probability,
                        });
                    }
                }
            }
        }
        out.sa_ms = elapsed_ms(started);
    } else {
        let started = Instant::now();
        out.rows = refine_exact(spec, space, &cands, &comps, db)?;
        out.ex_ms = elapsed_ms(started);
    }
    sort_rows(&mut out.rows);
    Ok(out)
}

fn refine_exact(
    spec: &QuerySpec,
    space: &StateSpace,
    cands: &[&UncertainObject],
    comps: &[&UncertainObject],
    db: &TrajectoryDatabase,
) -> Result<Vec<Row>> {
    let times = &spec.times[..];
    let others = |o: &UncertainObject| -> Vec<&UncertainObject> {
        comps.iter().copied().filter(|c| c.id() != o.id()).collect()
    };
    let rows: Vec<Vec<Row>> = match (spec.kind, spec.estimator) {
        (QueryKind::Exists, _) => {
            // No polynomial algorithm exists; enumerate worlds of the
            // competing objects only.
            let sub = TrajectoryDatabase::new(
                db.space().clone(),
                db.horizon(),
                comps.iter().map(|&o| o.clone()).collect(),
            );
            cands
                .par_iter()
                .map(|o| {
                    let p = oracle::oracle_penn(&sub, o.id(), &spec.reference, times)?;
                    Ok(single(o.id(), p, spec.tau))
                })
                .collect::<Result<_>>()?
        }
        (QueryKind::Forall, Estimator::Snapshot) => cands
            .par_iter()
            .map(|o| {
                let mut p = 1.0;
                for &t in times {
                    p *= pann_among(o, &others(o), &spec.reference, space, &[t])?;
                }
                Ok(single(o.id(), p, spec.tau))
            })
            .collect::<Result<_>>()?,
        (QueryKind::Forall, _) => cands
            .par_iter()
            .map(|o| {
                let p = pann_among(o, &others(o), &spec.reference, space, times)?;
                Ok(single(o.id(), p, spec.tau))
            })
            .collect::<Result<_>>()?,
        (QueryKind::Continuous, _) => cands
            .par_iter()
            .map(|o| {
                let sets = pcnn_object(o, &others(o), &spec.reference, space, times, spec.tau)?;
                Ok(sets
                    .into_iter()
                    .map(|r| Row {
                        object: o.id(),
                        times: Some(r.times),
                        probability: r.probability,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?,
    };
    Ok(rows.into_iter().flatten().collect())
}

fn single(object: ObjectId, p: f64, tau: f64) -> Vec<Row> {
    if reaches(p, tau) {
        vec![Row {
            object,
            times: None,
            probability: p,
        }]
    } else {
        Vec::new()
    }
}

/// Descending probability, then object id, then timestamp set.
pub fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.object.cmp(&b.object))
            .then_with(|| a.times.cmp(&b.times))
    });
}

/// Adapted models for `objects`, from the cache directory when possible.
pub fn adapt_all(
    objects: &[&UncertainObject],
    cache: Option<&Path>,
) -> Result<Vec<Arc<AdaptedModel>>> {
    objects
        .par_iter()
        .map(|&o| {
            if let Some(dir) = cache {
                if let Some(a) = io::load_cached_adapted(dir, o)? {
                    return Ok(Arc::new(a));
                }
            }
            Ok(Arc::new(adapt(o)?))
        })
        .collect()
}

/// For each target (an index into `sources`), its nearest-neighbor mask in
/// worlds `0..n`: bit `k` is set iff the target is at least as close to the
/// reference as every other sampled object at `times[k]`.
pub fn world_masks(
    sources: &[TrajectorySource<'_>],
    targets: &[usize],
    reference: &Reference,
    space: &StateSpace,
    times: &[Time],
    seed: u64,
    n: u64,
) -> Result<Vec<Vec<u64>>> {
    let window = (times[0], *times.last().expect("non-empty"));
    let positions = times
        .iter()
        .map(|&t| reference.position(space, t))
        .collect::<ust_core::Result<Vec<_>>>()?;
    let per_world: Vec<Vec<u64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let world = sample_world(sources, window, seed, i)?;
            let mut masks = vec![0u64; targets.len()];
            let mut dist = vec![0.0; sources.len()];
            for (k, (&t, q)) in times.iter().zip(&positions).enumerate() {
                let at = (t - window.0) as usize;
                for (d, tr) in dist.iter_mut().zip(&world.trajectories) {
                    *d = space.distance_to(tr.states[at], q);
                }
                let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
                for (m, &j) in masks.iter_mut().zip(targets) {
                    if dist[j] <= min {
                        *m |= 1 << k;
                    }
                }
            }
            Ok(masks)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::with_capacity(n as usize); targets.len()];
    for w in per_world {
        for (o, m) in out.iter_mut().zip(w) {
            o.push(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Tsv,
    JsonLines,
}

fn json_prob(p: f64) -> serde_json::Value {
    let rounded: f64 = sig12(p).parse().expect("formatted float");
    json!(rounded)
}

pub fn format_rows(rows: &[Row], format: OutputFormat) -> String {
    let mut s = String::new();
    for r in rows {
        let times = r.times.as_ref().map(|ts| {
            ts.iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        });
        match format {
            OutputFormat::Tsv => {
                let _ = match &times {
                    Some(ts) => writeln!(s, "{}\t{}\t{}", r.object, ts, sig12(r.probability)),
                    None => writeln!(s, "{}\t{}", r.object, sig12(r.probability)),
                };
            }
            OutputFormat::JsonLines => {
                let v = match &r.times {
                    Some(ts) => {
                        json!({ "object": r.object.0, "times": ts, "probability": json_prob(r.probability) })
                    }
                    None => {
                        json!({ "object": r.object.0, "probability": json_prob(r.probability) })
                    }
                };
                let _ = writeln!(s, "{v}");
            }
        }
    }
    s
}

/// `key<TAB>value` lines; times in milliseconds.
pub fn format_timing(pairs: &[(&str, f64)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}\t{v:.3}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sort_and_print() {
        let mut rows = vec![
            Row {
                object: ObjectId(3),
                times: None,
                probability: 0.25,
            },
            Row {
                object: ObjectId(1),
                times: None,
                probability: 0.25,
            },
            Row {
                object: ObjectId(2),
                times: None,
                probability: 2.0 / 3.0,
            },
        ];
        sort_rows(&mut rows);
        assert_eq!(
            format_rows(&rows, OutputFormat::Tsv),
            "2\t0.666666666667\n1\t0.25\n3\t0.25\n"
        );
        let j = format_rows(&rows[..1], OutputFormat::JsonLines);
        assert_eq!(j, "{\"object\":2,\"probability\":0.666666666667}\n");
    }

    #[test]
    fn continuous_rows_list_times() {
        let rows = vec![Row {
            object: ObjectId(4),
            times: Some(vec![2, 3]),
            probability: 0.5,
        }];
        assert_eq!(format_rows(&rows, OutputFormat::Tsv), "4\t2,3\t0.5\n");
    }
}
