//! Possible-worlds brute force. Slow on purpose: enumerate every
//! observation-consistent path of every object, weight it by its a-priori
//! probability, and evaluate the nearest-neighbor predicates world by world.
//! Uses nothing from the exact or sampling code.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::{ObjectId, Reference, StateId, Time, TrajectoryDatabase, UncertainObject};
use crate::{Error, Result};

/// Work guard for path search nodes and for world count.
pub const GUARD: u64 = 1_000_000;

/// All paths of `o` over its full span that pass through every observation,
/// projected onto `window` (inclusive), with normalized weights. Paths that
/// agree on the window are merged.
pub fn enumerate_paths(
    o: &UncertainObject,
    window: (Time, Time),
) -> Result<Vec<(Vec<StateId>, f64)>> {
    let (a, b) = window;
    if a > b {
        return Err(Error::InvalidParameter("empty window".into()));
    }
    for t in [a, b] {
        if !o.covers(t) {
            return Err(Error::OutOfSpan {
                object: o.id(),
                time: t,
            });
        }
    }
    let (first, last) = o.span();
    let mut merged: BTreeMap<Vec<StateId>, f64> = BTreeMap::new();
    let mut path = alloc::vec![o.observations()[0].state];
    let mut nodes = 0u64;
    dfs(o, first, last, 1.0, &mut path, &mut nodes, &mut |p, w| {
        let lo = (a - first) as usize;
        let hi = (b - first) as usize;
        *merged.entry(p[lo..=hi].to_vec()).or_insert(0.0) += w;
    })?;
    let total: f64 = merged.values().sum();
    if total <= 0.0 {
        return Err(Error::Inconsistent {
            object: o.id(),
            time: last,
        });
    }
    Ok(merged.into_iter().map(|(p, w)| (p, w / total)).collect())
}

fn dfs(
    o: &UncertainObject,
    t: Time,
    last: Time,
    weight: f64,
    path: &mut Vec<StateId>,
    nodes: &mut u64,
    emit: &mut dyn FnMut(&[StateId], f64),
) -> Result<()> {
    *nodes += 1;
    if *nodes > GUARD {
        return Err(Error::InstanceTooLarge { limit: GUARD });
    }
    if t == last {
        emit(path, weight);
        return Ok(());
    }
    let m = o.transition(t)?;
    let here = *path.last().unwrap();
    let required = o.observation_at(t + 1);
    let (cols, vals) = m.row(here);
    for (&next, &p) in cols.iter().zip(vals) {
        if p == 0.0 || required.is_some_and(|s| s != next) {
            continue;
        }
        path.push(next);
        dfs(o, t + 1, last, weight * p, path, nodes, emit)?;
        path.pop();
    }
    Ok(())
}

/// Per-object path lists over a common window; worlds are the cross product.
#[derive(Debug, Clone)]
pub struct WorldEnumeration {
    pub start: Time,
    pub objects: Vec<(ObjectId, Vec<(Vec<StateId>, f64)>)>,
}

impl WorldEnumeration {
    pub fn new(objects: &[&UncertainObject], window: (Time, Time)) -> Result<Self> {
        let mut out = Vec::with_capacity(objects.len());
        let mut worlds: u64 = 1;
        for o in objects {
            let paths = enumerate_paths(o, window)?;
            worlds = worlds.saturating_mul(paths.len() as u64);
            if worlds > GUARD {
                return Err(Error::InstanceTooLarge { limit: GUARD });
            }
            out.push((o.id(), paths));
        }
        Ok(Self {
            start: window.0,
            objects: out,
        })
    }

    /// Calls `f` with one path per object (in object order) and the joint
    /// weight, for every world.
    pub fn for_each(&self, mut f: impl FnMut(&[&[StateId]], f64)) {
        let n = self.objects.len();
        if self.objects.iter().any(|(_, p)| p.is_empty()) {
            return;
        }
        let mut idx = alloc::vec![0usize; n];
        loop {
            let mut w = 1.0;
            let mut paths: Vec<&[StateId]> = Vec::with_capacity(n);
            for (k, (_, ps)) in self.objects.iter().enumerate() {
                let (p, pw) = &ps[idx[k]];
                w *= pw;
                paths.push(p);
            }
            f(&paths, w);
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                idx[k] += 1;
                if idx[k] < self.objects[k].1.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// For every world, the subset of `times` (as a bitmask over positions) at
/// which `o` is at least as close to the reference as every other object.
fn nn_masks(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<Vec<(u64, f64)>> {
    if times.is_empty() || times.len() > 63 {
        return Err(Error::InvalidParameter(
            "oracle needs 1 to 63 timestamps".into(),
        ));
    }
    let target = db.object(o)?;
    if let Some(&t) = times.iter().find(|&&t| !target.covers(t)) {
        return Err(Error::OutOfSpan { object: o, time: t });
    }
    let lo = *times.iter().min().unwrap();
    let hi = *times.iter().max().unwrap();
    let objects: Vec<&UncertainObject> = db
        .objects()
        .iter()
        .filter(|x| times.iter().all(|&t| x.covers(t)))
        .collect();
    let me = objects.iter().position(|x| x.id() == o).unwrap();
    let worlds = WorldEnumeration::new(&objects, (lo, hi))?;
    let space = db.space();
    let mut positions = Vec::with_capacity(times.len());
    for &t in times {
        positions.push(reference.position(space, t)?);
    }
    let mut out = Vec::new();
    worlds.for_each(|paths, w| {
        let mut mask = 0u64;
        for (k, &t) in times.iter().enumerate() {
            let at = (t - lo) as usize;
            let mine = space.distance_to(paths[me][at], positions[k]);
            let nearest = paths
                .iter()
                .enumerate()
                .all(|(j, p)| j == me || mine <= space.distance_to(p[at], positions[k]));
            if nearest {
                mask |= 1 << k;
            }
        }
        out.push((mask, w));
    });
    Ok(out)
}

/// P(o is a nearest neighbor at every t in `times`).
pub fn oracle_pann(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<f64> {
    let full = (1u64 << times.len()) - 1;
    Ok(nn_masks(db, o, reference, times)?
        .iter()
        .filter(|(m, _)| *m == full)
        .map(|(_, w)| w)
        .sum())
}

/// P(o is a nearest neighbor at some t in `times`).
pub fn oracle_penn(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
) -> Result<f64> {
    Ok(nn_masks(db, o, reference, times)?
        .iter()
        .filter(|(m, _)| *m != 0)
        .map(|(_, w)| w)
        .sum())
}

/// Every subset of `times` whose P∀NN reaches `tau` and has no qualifying
/// strict superset, largest first. `times` must be sorted.
pub fn oracle_pcnn(
    db: &TrajectoryDatabase,
    o: ObjectId,
    reference: &Reference,
    times: &[Time],
    tau: f64,
) -> Result<Vec<(Vec<Time>, f64)>> {
    if times.len() > 20 {
        return Err(Error::InstanceTooLarge { limit: 20 });
    }
    let masks = nn_masks(db, o, reference, times)?;
    let n = times.len();
    let qualifying: Vec<(u64, f64)> = (1u64..1 << n)
        .map(|s| {
            (
                s,
                masks
                    .iter()
                    .filter(|(m, _)| m & s == s)
                    .map(|(_, w)| w)
                    .sum::<f64>(),
            )
        })
        // Same rounding slack as the level-wise miner.
        .filter(|&(_, p)| p + 1e-12 >= tau)
        .collect();
    let mut out: Vec<(Vec<Time>, f64)> = qualifying
        .iter()
        .filter(|&&(s, _)| !qualifying.iter().any(|&(u, _)| u != s && u & s == s))
        .map(|&(s, p)| {
            (
                (0..n)
                    .filter(|k| s >> k & 1 == 1)
                    .map(|k| times[k])
                    .collect(),
                p,
            )
        })
        .collect();
    out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}
