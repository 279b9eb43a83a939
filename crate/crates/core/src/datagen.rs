//! Synthetic workloads: random geometric graphs in the unit square and
//! objects that travel near-shortest paths between random waypoints.

use alloc::collections::BinaryHeap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;

use crate::model::{
    MarkovModel, ObjectId, Observation, StateId, StateSpace, Time, Trajectory, TrajectoryDatabase,
    TransitionMatrix, UncertainObject,
};
use crate::rng::{keyed_rng, Rng};
use crate::{Error, Result};

/// How the lag parameter `v` turns into motion between observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagMode {
    /// One hop per tick; every `l = round(i·v)`-th node is observed.
    #[default]
    Subsample,
    /// Observations every `i` ticks with `l` hops in between; the object
    /// stays put on the remaining ticks and the model gets matching
    /// self-loops of probability `1 − v`.
    ExtraTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub states: usize,
    pub branching: f64,
    pub objects: usize,
    pub lifetime: u32,
    pub horizon: Time,
    /// Observation spacing `i`.
    pub spacing: u32,
    /// Lag `v` in `(0, 1]`.
    pub lag: f64,
    /// Take a wrong turn every this many path nodes; `None` for exact
    /// shortest paths.
    pub wrong_turn_period: Option<u32>,
    pub lag_mode: LagMode,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            states: 10_000,
            branching: 8.0,
            objects: 1_000,
            lifetime: 100,
            horizon: 1_000,
            spacing: 10,
            lag: 1.0,
            wrong_turn_period: Some(10),
            lag_mode: LagMode::Subsample,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.states < 1 {
            return bad("need at least one state");
        }
        if !(self.branching > 0.0) {
            return bad("branching must be positive");
        }
        if !(self.lag > 0.0 && self.lag <= 1.0) {
            return bad("lag must lie in (0, 1]");
        }
        if self.spacing < 1 {
            return bad("spacing must be at least 1");
        }
        if self.lifetime > self.horizon {
            return bad("lifetime exceeds horizon");
        }
        if self.wrong_turn_period == Some(0) {
            return bad("wrong-turn period must be positive");
        }
        Ok(())
    }

    /// Nodes between consecutive observations.
    pub fn hops_per_observation(&self) -> u32 {
        (libm::round(self.spacing as f64 * self.lag) as u32).max(1)
    }

    /// Connection radius giving `branching` neighbors on average.
    pub fn radius(&self) -> f64 {
        libm::sqrt(self.branching / (self.states as f64 * core::f64::consts::PI))
    }
}

/// Key for the per-purpose random streams.
const SPACE_KEY: u64 = u64::MAX;

pub fn gen_state_space(cfg: &GenConfig) -> Result<StateSpace> {
    let mut rng = keyed_rng(cfg.seed, SPACE_KEY, 0);
    let coords: Vec<f64> = (0..2 * cfg.states).map(|_| rng.gen::<f64>()).collect();
    StateSpace::new(2, coords)
}

/// Neighbors within `r` (excluding the state itself), by grid bucketing.
fn neighbors(space: &StateSpace, r: f64) -> Vec<Vec<(StateId, f64)>> {
    let cells = (libm::floor(1.0 / r) as usize).clamp(1, 4096);
    let cell = |x: f64| ((x * cells as f64) as usize).min(cells - 1);
    let mut grid: Vec<Vec<StateId>> = vec![Vec::new(); cells * cells];
    for s in 0..space.len() {
        let p = space.point(s);
        grid[cell(p[1]) * cells + cell(p[0])].push(s);
    }
    let mut out = vec![Vec::new(); space.len()];
    for s in 0..space.len() {
        let p = space.point(s);
        let (cx, cy) = (cell(p[0]) as isize, cell(p[1]) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= cells as isize || y >= cells as isize {
                    continue;
                }
                for &u in &grid[y as usize * cells + x as usize] {
                    let d = space.distance(s, u);
                    if d > 0.0 && d < r {
                        out[s].push((u, d));
                    }
                }
            }
        }
        out[s].sort_unstable_by_key(|e| e.0);
    }
    out
}

/// Edges between states closer than the radius, weighted by inverse
/// distance and normalized per row. Isolated states loop on themselves.
pub fn gen_transitions(cfg: &GenConfig, space: &StateSpace) -> Result<TransitionMatrix> {
    let adj = neighbors(space, cfg.radius());
    let mut triplets = Vec::new();
    for (s, nb) in adj.iter().enumerate() {
        if nb.is_empty() {
            triplets.push((s, s, 1.0));
            continue;
        }
        let total: f64 = nb.iter().map(|&(_, d)| 1.0 / d).sum();
        triplets.extend(nb.iter().map(|&(u, d)| (s, u, (1.0 / d) / total)));
    }
    TransitionMatrix::from_triplets(space.len(), triplets)
}

/// The model objects follow: the graph itself, or with `ExtraTime` a lazy
/// version that stays put with probability `1 − v`.
pub fn object_model(cfg: &GenConfig, graph: &TransitionMatrix) -> Result<TransitionMatrix> {
    if cfg.lag_mode == LagMode::Subsample || cfg.lag >= 1.0 {
        return Ok(graph.clone());
    }
    let mut triplets = Vec::with_capacity(graph.nnz() + graph.size());
    for s in 0..graph.size() {
        let (cols, vals) = graph.row(s);
        for (&u, &p) in cols.iter().zip(vals) {
            triplets.push((s, u, p * cfg.lag));
        }
        triplets.push((s, s, 1.0 - cfg.lag));
    }
    TransitionMatrix::from_triplets(graph.size(), triplets)
}

#[derive(PartialEq)]
struct Entry(f64, StateId);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Shortest path by Euclidean edge length over the graph's non-loop edges.
/// Returns the nodes after `from` up to and including `to`.
fn shortest_path(
    space: &StateSpace,
    graph: &TransitionMatrix,
    from: StateId,
    to: StateId,
) -> Option<Vec<StateId>> {
    let n = graph.size();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Entry(0.0, from));
    while let Some(Entry(d, s)) = heap.pop() {
        if s == to {
            break;
        }
        if d > dist[s] {
            continue;
        }
        for &u in graph.successors(s) {
            if u == s {
                continue;
            }
            let nd = d + space.distance(s, u);
            if nd < dist[u] {
                dist[u] = nd;
                prev[u] = s;
                heap.push(Entry(nd, u));
            }
        }
    }
    if !dist[to].is_finite() || from == to {
        return None;
    }
    let mut path = vec![to];
    while let Some(&s) = path.last() {
        let p = prev[s];
        if p == from {
            break;
        }
        path.push(p);
    }
    path.reverse();
    Some(path)
}

const ROUTE_RETRIES: u32 = 100;

/// States reachable from `s`, sorted.
fn component(graph: &TransitionMatrix, s: StateId) -> Vec<StateId> {
    let mut seen = vec![false; graph.size()];
    seen[s] = true;
    let mut stack = vec![s];
    let mut out = Vec::new();
    while let Some(x) = stack.pop() {
        out.push(x);
        for &u in graph.successors(x) {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    out.sort_unstable();
    out
}

/// A walk of `nodes` states along near-shortest paths between random
/// waypoints.
fn route(
    cfg: &GenConfig,
    space: &StateSpace,
    graph: &TransitionMatrix,
    nodes: usize,
    rng: &mut Rng,
) -> Result<Vec<StateId>> {
    let n = space.len();
    let mut failures = 0;
    let fail = |failures: &mut u32| {
        *failures += 1;
        if *failures > ROUTE_RETRIES {
            Err(Error::InvalidParameter(
                "could not route an object; graph too sparse".into(),
            ))
        } else {
            Ok(())
        }
    };
    // Waypoints come from the start's component so every leg is routable.
    let (mut path, reachable) = loop {
        let s = rng.gen_range(0..n);
        let comp = component(graph, s);
        if comp.len() > 1 || nodes == 1 {
            break (vec![s], comp);
        }
        fail(&mut failures)?;
    };
    let mut since_turn = 0;
    let mut pending = None;
    while path.len() < nodes {
        let here = *path.last().unwrap();
        let goal = pending
            .take()
            .unwrap_or_else(|| reachable[rng.gen_range(0..reachable.len())]);
        if goal == here {
            continue;
        }
        let Some(leg) = shortest_path(space, graph, here, goal) else {
            fail(&mut failures)?;
            continue;
        };
        for (k, &s) in leg.iter().enumerate() {
            if path.len() >= nodes {
                break;
            }
            let cur = *path.last().unwrap();
            since_turn += 1;
            let period = cfg.wrong_turn_period.map(|p| p as usize);
            if period.is_some_and(|p| since_turn >= p) && k + 1 < leg.len() {
                since_turn = 0;
                let off: Vec<StateId> = graph
                    .successors(cur)
                    .iter()
                    .copied()
                    .filter(|&u| u != cur && u != s)
                    .collect();
                if !off.is_empty() {
                    // Detour, then route to the same goal from there.
                    path.push(off[rng.gen_range(0..off.len())]);
                    pending = Some(goal);
                    break;
                }
            }
            path.push(s);
        }
    }
    Ok(path)
}

/// One object and its full trajectory. Observations follow the lag mode;
/// the trajectory is placed at a random offset within the horizon and ends
/// at its last observation.
pub fn gen_object(
    cfg: &GenConfig,
    space: &StateSpace,
    graph: &TransitionMatrix,
    model: &Arc<MarkovModel>,
    id: ObjectId,
) -> Result<(UncertainObject, Trajectory)> {
    let mut rng = keyed_rng(cfg.seed, id.0, 0);
    let l = cfg.hops_per_observation();
    let (ticks_per_obs, hops_per_obs) = match cfg.lag_mode {
        LagMode::Subsample => (l, l),
        LagMode::ExtraTime => (cfg.spacing, l.min(cfg.spacing)),
    };
    let intervals = cfg.lifetime / ticks_per_obs;
    let duration = intervals * ticks_per_obs;
    let path = route(
        cfg,
        space,
        graph,
        (intervals * hops_per_obs) as usize + 1,
        &mut rng,
    )?;
    let slack = cfg.horizon - duration;
    let offset = if slack == 0 {
        0
    } else {
        rng.gen_range(0..=slack)
    };

    let mut states = Vec::with_capacity(duration as usize + 1);
    states.push(path[0]);
    for k in 0..intervals as usize {
        let hops = &path[k * hops_per_obs as usize + 1..=(k + 1) * hops_per_obs as usize];
        if ticks_per_obs == hops_per_obs {
            states.extend_from_slice(hops);
            continue;
        }
        // Choose which ticks of the interval move; the others stay.
        let mut moves = vec![false; ticks_per_obs as usize];
        let mut placed = 0;
        while placed < hops.len() {
            let j = rng.gen_range(0..moves.len());
            if !moves[j] {
                moves[j] = true;
                placed += 1;
            }
        }
        let mut next = hops.iter();
        for m in moves {
            let s = if m {
                *next.next().unwrap()
            } else {
                *states.last().unwrap()
            };
            states.push(s);
        }
    }
    let observations: Vec<Observation> = (0..=intervals)
        .map(|k| {
            let tick = k * ticks_per_obs;
            Observation::new(offset + tick, states[tick as usize])
        })
        .collect();
    let object = UncertainObject::new(id, observations, model.clone())?;
    Ok((
        object,
        Trajectory {
            object: id,
            start: offset,
            states,
        },
    ))
}

/// Full trajectories of every generated object.
pub type GroundTruth = Vec<Trajectory>;

pub fn gen_database(cfg: &GenConfig) -> Result<(TrajectoryDatabase, GroundTruth)> {
    cfg.check()?;
    let space = Arc::new(gen_state_space(cfg)?);
    let graph = gen_transitions(cfg, &space)?;
    let model = Arc::new(MarkovModel::Homogeneous(object_model(cfg, &graph)?));
    let mut objects = Vec::with_capacity(cfg.objects);
    let mut truth = Vec::with_capacity(cfg.objects);
    for k in 0..cfg.objects {
        let (o, t) = gen_object(cfg, &space, &graph, &model, ObjectId(k as u64))?;
        objects.push(o);
        truth.push(t);
    }
    Ok((TrajectoryDatabase::new(space, cfg.horizon, objects), truth))
}


/// Bounds for [`random_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct TinyConfig {
    pub max_states: usize,
    pub max_branching: usize,
    pub max_objects: usize,
    pub max_observations: usize,
    pub max_span: u32,
    pub max_times: usize,
    pub horizon: Time,
    /// Probability that an instance uses a time-dependent chain.
    pub inhomogeneous: f64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self {
            max_states: 6,
            max_branching: 3,
            max_objects: 3,
            max_observations: 3,
            max_span: 7,
            max_times: 5,
            horizon: 8,
            inhomogeneous: 0.3,
        }
    }
}

/// A small random database with a query whose timestamps lie inside the
/// first object's span. Small enough for exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub db: TrajectoryDatabase,
    pub reference: crate::model::Reference,
    pub times: Vec<Time>,
}

fn random_matrix(rng: &mut Rng, n: usize, max_branching: usize) -> TransitionMatrix {
    let mut triplets = Vec::new();
    for s in 0..n {
        let k = rng.gen_range(1..=max_branching.min(n));
        let mut targets: Vec<StateId> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            targets.swap(i, j);
        }
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=4) as f64).collect();
        let total: f64 = weights.iter().sum();
        for (i, w) in weights.iter().enumerate() {
            triplets.push((s, targets[i], w / total));
        }
    }
    TransitionMatrix::from_triplets(n, triplets).expect("valid random matrix")
}

fn walk(rng: &mut Rng, model: &MarkovModel, start: Time, len: u32, s0: StateId) -> Vec<StateId> {
    let mut states = vec![s0];
    for t in start..start + len {
        let (cols, vals) = model
            .at(t)
            .expect("matrix for every tick")
            .row(*states.last().unwrap());
        let mut u = rng.gen::<f64>();
        let mut next = cols[cols.len() - 1];
        for (&c, &p) in cols.iter().zip(vals) {
            if u < p {
                next = c;
                break;
            }
            u -= p;
        }
        states.push(next);
    }
    states
}

pub fn random_instance(seed: u64, cfg: &TinyConfig) -> TinyInstance {
    use crate::model::Reference;
    let mut rng = keyed_rng(seed, 0x7417, 0);
    let n = rng.gen_range(2..=cfg.max_states.max(2));
    // Small integer coordinates make distance ties common.
    let dim = rng.gen_range(1..=2);
    let mut cells: Vec<(u32, u32)> = if dim == 1 {
        (0..8).map(|x| (x, 0)).collect()
    } else {
        (0..5).flat_map(|x| (0..5).map(move |y| (x, y))).collect()
    };
    for i in 0..n {
        let j = rng.gen_range(i..cells.len());
        cells.swap(i, j);
    }
    let coords: Vec<f64> = cells[..n]
        .iter()
        .flat_map(|&(x, y)| {
            if dim == 1 {
                vec![x as f64]
            } else {
                vec![x as f64, y as f64]
            }
        })
        .collect();
    let space = Arc::new(StateSpace::new(dim, coords).expect("distinct cells"));
    let model = if rng.gen_bool(cfg.inhomogeneous) {
        MarkovModel::Inhomogeneous(
            (0..cfg.horizon + cfg.max_span)
                .map(|_| random_matrix(&mut rng, n, cfg.max_branching))
                .collect(),
        )
    } else {
        MarkovModel::Homogeneous(random_matrix(&mut rng, n, cfg.max_branching))
    };
    let model = Arc::new(model);
    let count = rng.gen_range(1..=cfg.max_objects);
    let mut objects = Vec::with_capacity(count);
    for k in 0..count {
        let start = rng.gen_range(0..=cfg.horizon / 3);
        let span = rng.gen_range(if k == 0 { 1 } else { 0 }..=cfg.max_span);
        let s0 = rng.gen_range(0..n);
        let path = walk(&mut rng, &model, start, span, s0);
        let mut ticks = vec![0u32, span];
        let extra = rng.gen_range(0..=cfg.max_observations.saturating_sub(2));
        for _ in 0..extra {
            ticks.push(rng.gen_range(0..=span));
        }
        ticks.sort_unstable();
        ticks.dedup();
        let obs = ticks
            .iter()
            .map(|&d| Observation::new(start + d, path[d as usize]))
            .collect();
        objects.push(
            UncertainObject::new(ObjectId(k as u64 + 1), obs, model.clone())
                .expect("walk is consistent"),
        );
    }
    let (first, last) = objects[0].span();
    let mut times: Vec<Time> = (first..=last).collect();
    let keep = rng.gen_range(1..=cfg.max_times.min(times.len()));
    for i in 0..keep {
        let j = rng.gen_range(i..times.len());
        times.swap(i, j);
    }
    times.truncate(keep);
    times.sort_unstable();
    let reference = match rng.gen_range(0..3) {
        0 => Reference::State(rng.gen_range(0..n)),
        1 => Reference::Point((0..dim).map(|_| rng.gen_range(0..9) as f64 / 2.0).collect()),
        _ => Reference::Trajectory(Trajectory {
            object: ObjectId(0),
            start: first,
            states: (first..=last).map(|_| rng.gen_range(0..n)).collect(),
        }),
    };
    let horizon = objects.iter().map(|o| o.last_time()).max().unwrap();
    TinyInstance {
        db: TrajectoryDatabase::new(space, horizon, objects),
        reference,
        times,
    }
}
