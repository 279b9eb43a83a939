//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints one PASS/FAIL line; exits nonzero if any check fails.
//! Pass check numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng as _;
use ust::calibrate::{bucketize, collect_tuples, CalibrationConfig};
use ust::workload::random_queries;
use ust_core::adaptation::adapt;
use ust_core::datagen::{gen_database, random_instance, GenConfig, LagMode, TinyConfig};
use ust_core::exact::{self, pann_among, pann_pair, pann_pair_traced, pcnn_object};
use ust_core::index::UstIndex;
use ust_core::model::{Query, Reference, StateId, Time, UncertainObject};
use ust_core::oracle::{enumerate_paths, oracle_pann, oracle_pcnn};
use ust_core::rng::keyed_rng;
use ust_core::sampling::{
    estimate, hoeffding_samples, rejection_sampler_naive, rejection_sampler_segmented,
    sample_trajectory, Experiment, PredicateKind, TrajectorySource, DEFAULT_ATTEMPT_CAP,
};

type Outcome = (bool, String);

fn main() {
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let checks: [(u32, &str, fn() -> Outcome); 11] = [
        (
            1,
            "exact P∀NN equals possible-worlds oracle",
            oracle_equivalence,
        ),
        (2, "PCNN equals subset scan", pcnn_equivalence),
        (
            3,
            "adapted model equals path enumeration",
            adaptation_correctness,
        ),
        (4, "posterior sampler never rejects", posterior_sampler),
        (5, "rejection sampler attempt trends", rejection_trends),
        (
            6,
            "Monte-Carlo accuracy at Hoeffding size",
            monte_carlo_accuracy,
        ),
        (7, "snapshot product underestimates", snapshot_bias),
        (8, "pruning is lossless", pruning_soundness),
        (9, "calibration against ground truth", calibration),
        (10, "monotonicity and trace invariants", monotonicity),
        (11, "pairwise runtime scaling", complexity),
    ];
    let mut failed = 0;
    for (n, name, check) in checks {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let (ok, detail) = check();
        let secs = started.elapsed().as_secs_f64();
        println!(
            "{} {n:>2} {name}: {detail} ({secs:.1} s)",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += !ok as u32;
    }
    if failed > 0 {
        println!("{failed} check(s) failed");
        std::process::exit(1);
    }
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let cfg = TinyConfig::default();
    let (mut worst, mut evaluated) = (0.0f64, 0);
    for seed in 0..200 {
        let inst = random_instance(10_000 + seed, &cfg);
        for o in inst.db.covering(&inst.times) {
            let e = exact::pann(&inst.db, o.id(), &inst.reference, &inst.times).unwrap();
            let w = oracle_pann(&inst.db, o.id(), &inst.reference, &inst.times).unwrap();
            worst = worst.max((e - w).abs());
            evaluated += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (
        worst <= 1e-9 && secs < 60.0,
        format!("{evaluated} objects on 200 instances, max error {worst:.2e}"),
    )
}

fn pcnn_equivalence() -> Outcome {
    let started = Instant::now();
    let cfg = TinyConfig::default();
    let (mut mismatches, mut sets) = (0, 0);
    for seed in 0..50 {
        let inst = random_instance(20_000 + seed, &cfg);
        for tau in [0.3, 0.7] {
            for o in inst.db.covering(&inst.times) {
                let comps = exact::competitors(&inst.db, o.id(), &inst.times);
                let got: Vec<Vec<Time>> = pcnn_object(
                    o,
                    &comps,
                    &inst.reference,
                    inst.db.space(),
                    &inst.times,
                    tau,
                )
                .unwrap()
                .into_iter()
                .map(|r| r.times)
                .collect();
                let want: Vec<Vec<Time>> =
                    oracle_pcnn(&inst.db, o.id(), &inst.reference, &inst.times, tau)
                        .unwrap()
                        .into_iter()
                        .map(|r| r.0)
                        .collect();
                sets += want.len();
                mismatches += (got != want) as usize;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (
        mismatches == 0 && secs < 60.0,
        format!("{sets} maximal sets, {mismatches} mismatching objects"),
    )
}

fn adaptation_correctness() -> Outcome {
    let cfg = TinyConfig {
        max_observations: 4,
        max_span: 8,
        horizon: 8,
        ..TinyConfig::default()
    };
    let mut worst = 0.0f64;
    let mut rows = 0;
    for seed in 0..100 {
        let inst = random_instance(30_000 + seed, &cfg);
        let n = inst.db.space().len();
        for o in inst.db.objects() {
            let a = adapt(o).unwrap();
            let (first, last) = o.span();
            let paths = enumerate_paths(o, (first, last)).unwrap();
            let mut marg = vec![vec![0.0; n]; (last - first + 1) as usize];
            let mut joint: BTreeMap<(Time, StateId, StateId), f64> = BTreeMap::new();
            for (p, w) in &paths {
                for (k, &s) in p.iter().enumerate() {
                    marg[k][s] += w;
                    if k + 1 < p.len() {
                        *joint.entry((first + k as Time, s, p[k + 1])).or_default() += w;
                    }
                }
            }
            for t in first..=last {
                let got = a.posterior_distribution(t).unwrap();
                for (g, w) in got.probs().iter().zip(&marg[(t - first) as usize]) {
                    worst = worst.max((g - w).abs());
                }
            }
            for t in first..last {
                let f = a.forward_at(t).unwrap();
                for i in 0..n {
                    let m = marg[(t - first) as usize][i];
                    match f.row(i) {
                        None if m == 0.0 => {}
                        None => worst = f64::INFINITY,
                        Some((cols, vals)) => {
                            rows += 1;
                            for j in 0..n {
                                let want = joint.get(&(t, i, j)).copied().unwrap_or(0.0) / m;
                                let got =
                                    cols.iter().position(|&c| c == j).map_or(0.0, |k| vals[k]);
                                worst = worst.max((got - want).abs());
                            }
                        }
                    }
                }
            }
        }
    }
    (
        worst <= 1e-9,
        format!("{rows} conditional rows on 100 instances, max error {worst:.2e}"),
    )
}

fn posterior_sampler() -> Outcome {
    let mut objects: Vec<UncertainObject> = Vec::new();
    for (k, obs) in [(7usize, 3u32), (7, 4), (6, 5)] {
        let cfg = GenConfig {
            states: 1_000,
            objects: k,
            lifetime: 10 * (obs - 1),
            horizon: 100,
            seed: obs as u64,
            ..GenConfig::default()
        };
        let (db, _) = gen_database(&cfg).unwrap();
        objects.extend(db.objects().iter().cloned());
    }
    let per_object = 10_000 / objects.len() as u64;
    let (mut samples, mut hits, mut extra_attempts) = (0u64, 0u64, 0u64);
    for o in &objects {
        let a = std::sync::Arc::new(adapt(o).unwrap());
        let src = TrajectorySource::Posterior(a.clone());
        for i in 0..per_object {
            let mut rng = keyed_rng(4, o.id().0, i);
            let tr = sample_trajectory(&a, &mut rng);
            let draw = src.draw(o.span(), &mut rng).unwrap();
            samples += 1;
            hits += (tr.hits_all(o.observations()) && draw.trajectory.hits_all(o.observations()))
                as u64;
            extra_attempts += draw.attempts - 1;
        }
    }
    let obs: Vec<usize> = objects.iter().map(|o| o.observations().len()).collect();
    let range = (obs.iter().min().unwrap(), obs.iter().max().unwrap());
    (
        hits == samples && extra_attempts == 0 && samples >= 10_000 - objects.len() as u64,
        format!(
            "{hits}/{samples} samples hit every observation over {} objects with {}-{} observations, {extra_attempts} rejected draws",
            objects.len(),
            range.0,
            range.1
        ),
    )
}

fn rejection_trends() -> Outcome {
    const OBJECTS: usize = 10;
    const DRAWS: u64 = 10;
    let counts = [2u32, 3, 4, 5];
    let mut ts1 = [0.0f64; 4];
    let mut ts2 = [0.0f64; 4];
    let mut truncated = 0;
    for seed in 0..5u64 {
        for (c, &obs) in counts.iter().enumerate() {
            let cfg = GenConfig {
                states: 100,
                branching: 8.0,
                objects: OBJECTS,
                spacing: 1,
                lifetime: obs - 1,
                horizon: 20,
                seed,
                ..GenConfig::default()
            };
            let (db, _) = gen_database(&cfg).unwrap();
            for o in db.objects() {
                for i in 0..DRAWS {
                    let mut rng = keyed_rng(seed, o.id().0, i);
                    let a = rejection_sampler_naive(o, &mut rng, DEFAULT_ATTEMPT_CAP).unwrap();
                    let b = rejection_sampler_segmented(o, &mut rng, DEFAULT_ATTEMPT_CAP).unwrap();
                    truncated += a.truncated as u32 + b.truncated as u32;
                    ts1[c] += a.attempts as f64;
                    ts2[c] += b.attempts as f64;
                }
            }
        }
    }
    let n = (5 * OBJECTS as u64 * DRAWS) as f64;
    ts1.iter_mut().chain(ts2.iter_mut()).for_each(|x| *x /= n);
    let increasing = ts1.windows(2).all(|w| w[1] > w[0]);
    // Least-squares line through (observations, mean TS2 attempts).
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ts2.iter().sum::<f64>() / 4.0);
    let slope = xs
        .iter()
        .zip(&ts2)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let fit = |x: f64| my + slope * (x - mx);
    let worst = xs
        .iter()
        .zip(&ts2)
        .map(|(&x, &y)| (y / fit(x)).max(fit(x) / y))
        .fold(0.0, f64::max);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.1}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    (
        increasing && worst <= 1.5 && truncated == 0,
        format!(
            "mean attempts for 2/3/4/5 observations: TS1 {} TS2 {} (worst ratio to linear fit {worst:.2}, {truncated} truncated)",
            fmt(&ts1),
            fmt(&ts2)
        ),
    )
}

fn monte_carlo_accuracy() -> Outcome {
    let n = hoeffding_samples(0.02, 0.05).unwrap();
    let cfg = TinyConfig::default();
    let (mut trials, mut within, mut seed) = (0, 0, 60_000u64);
    while trials < 100 {
        seed += 1;
        let inst = random_instance(seed, &cfg);
        let o = &inst.db.objects()[0];
        let exact = exact::pann(&inst.db, o.id(), &inst.reference, &inst.times).unwrap();
        if exact <= 0.0 || exact >= 1.0 {
            continue;
        }
        let sources: Vec<TrajectorySource<'_>> = inst
            .db
            .covering(&inst.times)
            .map(|x| TrajectorySource::Posterior(std::sync::Arc::new(adapt(x).unwrap())))
            .collect();
        let exp = Experiment {
            target: o.id(),
            sources: &sources,
            reference: &inst.reference,
            space: inst.db.space(),
            times: &inst.times,
            seed,
        };
        let est = estimate(PredicateKind::Forall, &exp, n).unwrap();
        trials += 1;
        within += ((est.estimate - exact).abs() <= 0.02) as u32;
    }
    (
        within >= 95,
        format!("{within}/100 estimates within 0.02 at n = {n}"),
    )
}

fn snapshot_bias() -> Outcome {
    let cfg = GenConfig {
        states: 1_000,
        objects: 100,
        lifetime: 100,
        horizon: 200,
        spacing: 10,
        lag: 0.2,
        lag_mode: LagMode::ExtraTime,
        seed: 7,
        ..GenConfig::default()
    };
    let (db, _) = gen_database(&cfg).unwrap();
    let idx = UstIndex::build(&db).unwrap();
    let (mut diffs, mut below, mut too_large) = (Vec::new(), 0, 0);
    for q in random_queries(&db, 50, 3, 7) {
        let p = idx.prune(db.space(), &q.reference, &q.times).unwrap();
        let infl: Vec<_> = p
            .influence
            .iter()
            .map(|&id| db.object(id).unwrap())
            .collect();
        for &id in &p.candidates {
            let o = db.object(id).unwrap();
            let comps: Vec<_> = infl.iter().copied().filter(|c| c.id() != id).collect();
            let e = match pann_among(o, &comps, &q.reference, db.space(), &q.times) {
                Ok(e) => e,
                Err(ust_core::Error::InstanceTooLarge { .. }) => {
                    too_large += 1;
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            if e <= 0.0 || e >= 1.0 {
                continue;
            }
            let mut ss = 1.0;
            for &t in &q.times {
                ss *= pann_among(o, &comps, &q.reference, db.space(), &[t]).unwrap();
            }
            below += (ss <= e + 1e-12) as usize;
            diffs.push(ss - e);
        }
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
    let frac = below as f64 / diffs.len().max(1) as f64;
    (
        !diffs.is_empty() && mean < 0.0 && frac >= 0.8,
        format!(
            "{} uncertain results, mean(SS - exact) = {mean:.4}, SS <= exact in {:.0}%, {too_large} candidates over the work budget",
            diffs.len(),
            frac * 100.0
        ),
    )
}

fn pruning_soundness() -> Outcome {
    let cfg = GenConfig {
        states: 2_000,
        objects: 100,
        lifetime: 100,
        horizon: 200,
        seed: 8,
        ..GenConfig::default()
    };
    let (db, _) = gen_database(&cfg).unwrap();
    let idx = UstIndex::build(&db).unwrap();
    let (mut worst, mut lost, mut rows, mut too_large) = (0.0f64, 0, 0, 0);
    let (mut cands, mut covering) = (0, 0);
    for q in random_queries(&db, 100, 3, 8) {
        let query = Query::new(q.reference.clone(), q.times.clone(), 0.0).unwrap();
        let pruning = idx
            .prune(db.space(), &query.reference, query.times())
            .unwrap();
        cands += pruning.candidates.len();
        // Unpruned answer, one object at a time so an oversized object does
        // not hide the rest of the query.
        let mut full = Vec::new();
        for o in db.covering(query.times()) {
            covering += 1;
            match exact::pann(&db, o.id(), &query.reference, query.times()) {
                Ok(p) if p > 0.0 => full.push((o.id(), p)),
                Ok(_) => {}
                Err(ust_core::Error::InstanceTooLarge { .. }) => too_large += 1,
                Err(e) => panic!("{e}"),
            }
        }
        rows += full.len();
        let pruned = match exact::pann_query(&db, &query, Some(&pruning)) {
            Ok(res) => Some(res),
            Err(ust_core::Error::InstanceTooLarge { .. }) => None,
            Err(e) => panic!("{e}"),
        };
        for &(id, p) in &full {
            if !pruning.candidates.contains(&id) {
                lost += 1;
            } else if let Some(res) = &pruned {
                let got = res
                    .iter()
                    .find(|r| r.object == id)
                    .map_or(0.0, |r| r.probability);
                worst = worst.max((got - p).abs());
            }
        }
    }
    (
        lost == 0 && worst <= 1e-12,
        format!(
            "100 queries, {rows} results, {cands} candidates of {covering} live objects, max diff {worst:.1e}, \
             {lost} results pruned, {too_large} objects over the work budget"
        ),
    )
}

fn calibration() -> Outcome {
    let cfg = GenConfig {
        states: 1_000,
        objects: 60,
        lifetime: 100,
        horizon: 150,
        spacing: 10,
        wrong_turn_period: Some(10),
        seed: 9,
        ..GenConfig::default()
    };
    let (db, truth) = gen_database(&cfg).unwrap();
    let idx = UstIndex::build(&db).unwrap();
    let cal = CalibrationConfig {
        queries: 2_500,
        times_len: 3,
        seed: 9,
        ..CalibrationConfig::default()
    };
    let collected = collect_tuples(&db, &truth, &idx, &cal).unwrap();
    let tuples = collected.tuples;
    let buckets = bucketize(&tuples, cal.buckets, cal.min_tuples);
    let judged: Vec<_> = buckets.iter().filter(|b| !b.flagged).collect();
    let bad: Vec<String> = judged
        .iter()
        .filter(|b| (b.observed - b.midpoint()).abs() > 0.1)
        .map(|b| format!("[{:.1},{:.1}) observed {:.3}", b.lo, b.hi, b.observed))
        .collect();
    let summary: Vec<String> = buckets
        .iter()
        .map(|b| format!("{}:{:.2}/{:.2}", b.tuples, b.mean_predicted, b.observed))
        .collect();
    (
        bad.is_empty() && !judged.is_empty(),
        format!(
            "{} tuples from 2500 queries ({} skipped over the work budget), {} buckets with >= 200 tuples, off-diagonal: {} (tuples:predicted/observed per bucket {})",
            tuples.len(),
            collected.skipped,
            judged.len(),
            if bad.is_empty() { "none".into() } else { bad.join(", ") },
            summary.join(" ")
        ),
    )
}

fn monotonicity() -> Outcome {
    let cfg = TinyConfig::default();
    let (mut pairs, mut violations, mut traces, mut trace_bad, mut same_objects) = (0, 0, 0, 0, 0);
    let mut seed = 70_000u64;
    while pairs < 1000 {
        seed += 1;
        let inst = random_instance(seed, &cfg);
        if inst.times.len() < 2 {
            continue;
        }
        let mut rng = keyed_rng(seed, 10, 0);
        let o = &inst.db.objects()[0];
        let sub: Vec<Time> = loop {
            let s: Vec<Time> = inst
                .times
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            if !s.is_empty() && s.len() < inst.times.len() {
                break s;
            }
        };
        // Objects defined on the subset but not on all of T would join the
        // competition, so the competitor set is fixed by T.
        let comps = exact::competitors(&inst.db, o.id(), &inst.times);
        let big = pann_among(o, &comps, &inst.reference, inst.db.space(), &inst.times).unwrap();
        let small = pann_among(o, &comps, &inst.reference, inst.db.space(), &sub).unwrap();
        pairs += 1;
        violations += (small < big - 1e-12) as u32;
        if inst.db.covering(&sub).count() == inst.db.covering(&inst.times).count() {
            same_objects += 1;
            let small_db = exact::pann(&inst.db, o.id(), &inst.reference, &sub).unwrap();
            violations += (small_db < big - 1e-12) as u32;
        }
        if let Some(other) = exact::competitors(&inst.db, o.id(), &inst.times).first() {
            let (_, steps) =
                pann_pair_traced(o, other, &inst.reference, inst.db.space(), &inst.times).unwrap();
            traces += 1;
            let mass_ok = steps.iter().all(|s| (s.hit + s.drop - 1.0).abs() <= 1e-9);
            let hit_ok = steps
                .windows(2)
                .all(|w| w[1].observed || w[1].hit <= w[0].hit + 1e-12);
            trace_bad += (!mass_ok || !hit_ok) as u32;
        }
    }
    (
        violations == 0 && trace_bad == 0,
        format!(
            "{violations} violations on 1000 subset pairs ({same_objects} also checked database-wide), {trace_bad}/{traces} traces violate invariants"
        ),
    )
}

/// Median wall time of `f` over `reps` runs, in seconds.
fn median_secs(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut v: Vec<f64> = (0..reps)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v[reps / 2]
}

fn pair_setup(states: usize) -> (ust_core::model::TrajectoryDatabase, Reference) {
    let cfg = GenConfig {
        states,
        objects: 2,
        lifetime: 40,
        horizon: 40,
        spacing: 10,
        seed: 11,
        ..GenConfig::default()
    };
    let (db, _) = gen_database(&cfg).unwrap();
    let q = Reference::State(db.objects()[1].observations()[1].state);
    (db, q)
}

fn complexity() -> Outcome {
    let time_pair = |states: usize, len: u32| {
        let (db, q) = pair_setup(states);
        let times: Vec<Time> = (1..=len).collect();
        let (a, b) = (&db.objects()[0], &db.objects()[1]);
        median_secs(7, || {
            pann_pair(a, b, &q, db.space(), &times).unwrap();
        })
    };
    let by_t: Vec<f64> = [5, 10, 20].iter().map(|&l| time_pair(2_000, l)).collect();
    let t_ratio = by_t.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let sizes = [1_000usize, 2_000, 4_000];
    let by_s: Vec<f64> = sizes.iter().map(|&s| time_pair(s, 10)).collect();
    // Slope of log time against log |S|.
    let lx: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let ly: Vec<f64> = by_s.iter().map(|t| t.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let exponent = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let ms = |v: &[f64]| {
        v.iter()
            .map(|t| format!("{:.2}", t * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    };
    (
        t_ratio <= 2.5 && exponent < 3.0,
        format!(
            "|T| 5/10/20: {} ms (max step ratio {t_ratio:.2}); |S| 1k/2k/4k: {} ms (fitted exponent {exponent:.2})",
            ms(&by_t),
            ms(&by_s)
        ),
    )
}
