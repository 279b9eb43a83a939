//! On-disk formats. Every file is line-oriented UTF-8 text; blank lines and
//! lines starting with `#` are skipped.
//!
//! A database directory holds `states.txt`, `transitions.txt` and
//! `observations.txt`, plus optionally `groundtruth.txt`, `index.ust` and an
//! `adapted/` cache.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ust_core::adaptation::{observations_hash, AdaptedModel, ConditionalMatrix};
use ust_core::index::{BBox, StRect, TickBox, UstIndex};
use ust_core::model::{
    MarkovModel, ObjectId, Observation, StateSpace, Time, Trajectory, TrajectoryDatabase,
    TransitionMatrix, UncertainObject, STOCHASTIC_TOLERANCE,
};
use ust_core::SparseVec;

use crate::error::{CliError, Result};

pub const STATES_FILE: &str = "states.txt";
pub const TRANSITIONS_FILE: &str = "transitions.txt";
pub const OBSERVATIONS_FILE: &str = "observations.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const INDEX_FILE: &str = "index.ust";
pub const ADAPTED_DIR: &str = "adapted";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Content lines with 1-based line numbers, already split on whitespace.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

struct Line<'a> {
    path: &'a Path,
    no: usize,
    fields: Vec<&'a str>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            inner: text.lines().enumerate(),
        }
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = Line<'a>;

    fn next(&mut self) -> Option<Line<'a>> {
        for (i, raw) in self.inner.by_ref() {
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            return Some(Line {
                path: self.path,
                no: i + 1,
                fields: s.split_whitespace().collect(),
            });
        }
        None
    }
}

impl Line<'_> {
    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_path_buf(),
            line: self.no,
            msg: msg.into(),
        }
    }

    fn expect_len(&self, allowed: &[usize]) -> Result<()> {
        if allowed.contains(&self.fields.len()) {
            return Ok(());
        }
        Err(self.err(format!(
            "expected {} fields, found {}",
            describe(allowed),
            self.fields.len()
        )))
    }

    fn get<T: FromStr>(&self, k: usize, what: &str) -> Result<T> {
        let raw = self
            .fields
            .get(k)
            .ok_or_else(|| self.err(format!("missing {what}")))?;
        raw.parse()
            .map_err(|_| self.err(format!("bad {what} '{raw}'")))
    }

    /// Values computed in floating point may overshoot 1 by rounding; they
    /// are kept as written so dumps load back bit for bit.
    fn prob(&self, k: usize) -> Result<f64> {
        let p: f64 = self.get(k, "probability")?;
        if !p.is_finite() || !(0.0..=1.0 + STOCHASTIC_TOLERANCE).contains(&p) {
            return Err(self.err(format!("probability {p} outside [0, 1]")));
        }
        Ok(p)
    }

    fn state(&self, k: usize, states: usize) -> Result<usize> {
        let s: usize = self.get(k, "state id")?;
        if s >= states {
            return Err(self.err(format!("state {s} out of range (have {states})")));
        }
        Ok(s)
    }
}

fn describe(allowed: &[usize]) -> String {
    allowed
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" or ")
}

pub fn parse_states(path: &Path, text: &str) -> Result<StateSpace> {
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    let mut dim = None;
    for line in Lines::new(path, text) {
        if line.fields.len() < 2 {
            return Err(line.err("expected a state id and at least one coordinate"));
        }
        let d = line.fields.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(line.err(format!("expected {} coordinates, found {d}", dim.unwrap())));
        }
        let id: usize = line.get(0, "state id")?;
        let coords = (1..=d)
            .map(|k| line.get(k, "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(line.err("coordinates must be finite"));
        }
        rows.push((id, coords, line.no));
    }
    let n = rows.len();
    let dim = dim.ok_or_else(|| CliError::Parse {
        path: path.into(),
        line: 0,
        msg: "no states".into(),
    })?;
    let mut coords = vec![f64::NAN; n * dim];
    let mut seen = vec![false; n];
    for (id, c, no) in rows {
        if id >= n {
            return Err(CliError::Parse {
                path: path.into(),
                line: no,
                msg: format!("state ids must be 0..{n}"),
            });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(CliError::Parse {
                path: path.into(),
                line: no,
                msg: format!("duplicate state id {id}"),
            });
        }
        coords[id * dim..(id + 1) * dim].copy_from_slice(&c);
    }
    Ok(StateSpace::new(dim, coords)?)
}

/// Three columns `from to prob` give one matrix for all ticks; four columns
/// `t from to prob` give one matrix per tick starting at 0.
pub fn parse_transitions(path: &Path, text: &str, states: usize) -> Result<MarkovModel> {
    let mut width = None;
    // (tick, from) -> line of first entry, for error reporting.
    let mut first_line: BTreeMap<(Time, usize), usize> = BTreeMap::new();
    let mut by_tick: BTreeMap<Time, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for line in Lines::new(path, text) {
        line.expect_len(&[3, 4])?;
        let w = *width.get_or_insert(line.fields.len());
        if w != line.fields.len() {
            return Err(line.err(format!(
                "expected {w} fields like the first line, found {}",
                line.fields.len()
            )));
        }
        let (t, k) = if w == 4 {
            (line.get::<Time>(0, "time")?, 1)
        } else {
            (0, 0)
        };
        let from = line.state(k, states)?;
        let to = line.state(k + 1, states)?;
        let p = line.prob(k + 2)?;
        first_line.entry((t, from)).or_insert(line.no);
        by_tick.entry(t).or_default().push((from, to, p));
    }
    let width = width.ok_or_else(|| CliError::Parse {
        path: path.into(),
        line: 0,
        msg: "no transitions".into(),
    })?;
    let last_tick = by_tick.keys().next_back().copied().unwrap_or(0);
    let mut matrices = Vec::new();
    for t in 0..=last_tick {
        let triplets = by_tick.remove(&t).unwrap_or_default();
        let m = TransitionMatrix::from_triplets(states, triplets)?;
        if let Some(&(row, sum)) = m.row_sum_violations(STOCHASTIC_TOLERANCE).first() {
            let at = if width == 4 {
                format!(" at t={t}")
            } else {
                String::new()
            };
            return match first_line.get(&(t, row)) {
                Some(&no) => Err(CliError::Parse {
                    path: path.into(),
                    line: no,
                    msg: format!("row {row}{at} sums to {sum}, expected 1"),
                }),
                None => Err(CliError::Validation(format!(
                    "{}: state {row}{at} has no outgoing transitions",
                    path.display()
                ))),
            };
        }
        matrices.push(m);
    }
    Ok(if width == 3 {
        MarkovModel::Homogeneous(matrices.pop().expect("one matrix"))
    } else {
        MarkovModel::Inhomogeneous(matrices)
    })
}

/// `object time state` lines grouped by object, each sorted by time.
fn parse_timed_states(
    path: &Path,
    text: &str,
    states: usize,
) -> Result<BTreeMap<u64, Vec<(Time, usize, usize)>>> {
    let mut out: BTreeMap<u64, Vec<(Time, usize, usize)>> = BTreeMap::new();
    for line in Lines::new(path, text) {
        line.expect_len(&[3])?;
        let id: u64 = line.get(0, "object id")?;
        let t: Time = line.get(1, "time")?;
        let s = line.state(2, states)?;
        out.entry(id).or_default().push((t, s, line.no));
    }
    for rows in out.values_mut() {
        rows.sort_by_key(|r| (r.0, r.2));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(CliError::Parse {
                path: path.into(),
                line: w[1].2,
                msg: format!("second entry for the same object at time {}", w[1].0),
            });
        }
    }
    Ok(out)
}

pub fn parse_observations(
    path: &Path,
    text: &str,
    model: &Arc<MarkovModel>,
) -> Result<Vec<UncertainObject>> {
    let grouped = parse_timed_states(path, text, model.state_count())?;
    grouped
        .into_iter()
        .map(|(id, rows)| {
            let obs = rows
                .iter()
                .map(|&(t, s, _)| Observation::new(t, s))
                .collect();
            Ok(UncertainObject::new(ObjectId(id), obs, model.clone())?)
        })
        .collect()
}

pub fn parse_groundtruth(path: &Path, text: &str, states: usize) -> Result<Vec<Trajectory>> {
    let grouped = parse_timed_states(path, text, states)?;
    grouped
        .into_iter()
        .map(|(id, rows)| {
            let start = rows[0].0;
            for (k, r) in rows.iter().enumerate() {
                if r.0 != start + k as Time {
                    return Err(CliError::Parse {
                        path: path.into(),
                        line: r.2,
                        msg: format!("trajectory of object {id} has a gap before time {}", r.0),
                    });
                }
            }
            Ok(Trajectory {
                object: ObjectId(id),
                start,
                states: rows.iter().map(|r| r.1).collect(),
            })
        })
        .collect()
}

/// A reference trajectory: `time state` lines over consecutive ticks.
pub fn load_reference_trajectory(path: &Path, states: usize) -> Result<Trajectory> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for line in Lines::new(path, &text) {
        line.expect_len(&[2])?;
        let t: Time = line.get(0, "time")?;
        if let Some(&(prev, _)) = rows.last() {
            if t != prev + 1 {
                return Err(line.err("reference trajectory must cover consecutive ticks"));
            }
        }
        rows.push((t, line.state(1, states)?));
    }
    let start = rows.first().map(|r| r.0).ok_or_else(|| CliError::Parse {
        path: path.into(),
        line: 0,
        msg: "empty trajectory".into(),
    })?;
    Ok(Trajectory {
        object: ObjectId(u64::MAX),
        start,
        states: rows.into_iter().map(|r| r.1).collect(),
    })
}

/// Loads a database directory. The horizon is the latest observation time.
pub fn load_database(dir: &Path) -> Result<TrajectoryDatabase> {
    let p = dir.join(STATES_FILE);
    let space = Arc::new(parse_states(&p, &read_text(&p)?)?);
    let p = dir.join(TRANSITIONS_FILE);
    let model = Arc::new(parse_transitions(&p, &read_text(&p)?, space.len())?);
    let p = dir.join(OBSERVATIONS_FILE);
    let objects = parse_observations(&p, &read_text(&p)?, &model)?;
    let horizon = objects.iter().map(|o| o.last_time()).max().unwrap_or(0);
    Ok(TrajectoryDatabase::new(space, horizon, objects))
}

pub fn load_groundtruth(dir: &Path, states: usize) -> Result<Vec<Trajectory>> {
    let p = dir.join(GROUNDTRUTH_FILE);
    parse_groundtruth(&p, &read_text(&p)?, states)
}

pub fn format_states(space: &StateSpace) -> String {
    let mut s = String::from("# state_id coordinates\n");
    for i in 0..space.len() {
        let _ = write!(s, "{i}");
        for c in space.point(i) {
            let _ = write!(s, " {c}");
        }
        s.push('\n');
    }
    s
}

pub fn format_transitions(model: &MarkovModel) -> String {
    let mut s = String::new();
    let rows = |s: &mut String, m: &TransitionMatrix, t: Option<Time>| {
        for i in 0..m.size() {
            let (cols, vals) = m.row(i);
            for (j, p) in cols.iter().zip(vals) {
                if let Some(t) = t {
                    let _ = write!(s, "{t} ");
                }
                let _ = writeln!(s, "{i} {j} {p}");
            }
        }
    };
    match model {
        MarkovModel::Homogeneous(m) => {
            s.push_str("# from to prob\n");
            rows(&mut s, m, None);
        }
        MarkovModel::Inhomogeneous(ms) => {
            s.push_str("# t from to prob\n");
            for (t, m) in ms.iter().enumerate() {
                rows(&mut s, m, Some(t as Time));
            }
        }
    }
    s
}

pub fn format_observations(objects: &[UncertainObject]) -> String {
    let mut s = String::from("# object time state\n");
    for o in objects {
        for ob in o.observations() {
            let _ = writeln!(s, "{} {} {}", o.id(), ob.time, ob.state);
        }
    }
    s
}

pub fn format_groundtruth(truth: &[Trajectory]) -> String {
    let mut s = String::from("# object time state\n");
    for tr in truth {
        for (k, st) in tr.states.iter().enumerate() {
            let _ = writeln!(s, "{} {} {}", tr.object, tr.start + k as Time, st);
        }
    }
    s
}

/// Writes the three database files. All objects must share one model.
pub fn write_database(
    dir: &Path,
    db: &TrajectoryDatabase,
    truth: Option<&[Trajectory]>,
) -> Result<()> {
    let model = match db.objects().first() {
        Some(o) => o.model().clone(),
        None => {
            return Err(CliError::Validation(
                "cannot write an empty database".into(),
            ))
        }
    };
    if db.objects().iter().any(|o| !Arc::ptr_eq(o.model(), &model)) {
        return Err(CliError::Validation(
            "objects with different models cannot share a transitions file".into(),
        ));
    }
    write_text(&dir.join(STATES_FILE), &format_states(db.space()))?;
    write_text(&dir.join(TRANSITIONS_FILE), &format_transitions(&model))?;
    write_text(
        &dir.join(OBSERVATIONS_FILE),
        &format_observations(db.objects()),
    )?;
    if let Some(truth) = truth {
        write_text(&dir.join(GROUNDTRUTH_FILE), &format_groundtruth(truth))?;
    }
    Ok(())
}

fn push_box(s: &mut String, b: &BBox) {
    for c in b.min.iter().chain(&b.max) {
        let _ = write!(s, " {c}");
    }
    s.push('\n');
}

pub fn format_index(idx: &UstIndex) -> String {
    let mut s = String::from("# ust index\n");
    let _ = writeln!(s, "dim {}", idx.dim());
    for (o, a, b) in idx.spans() {
        let _ = writeln!(s, "span {o} {a} {b}");
    }
    for r in idx.rects() {
        let _ = write!(s, "rect {} {} {}", r.object, r.start, r.end);
        push_box(&mut s, &r.bbox);
    }
    for t in idx.tick_boxes() {
        let _ = write!(s, "tick {} {}", t.object, t.time);
        push_box(&mut s, &t.bbox);
    }
    s
}

pub fn parse_index(path: &Path, text: &str) -> Result<UstIndex> {
    let mut dim = None;
    let (mut spans, mut rects, mut ticks) = (Vec::new(), Vec::new(), Vec::new());
    let bbox = |line: &Line<'_>, from: usize, dim: usize| -> Result<BBox> {
        line.expect_len(&[from + 2 * dim])?;
        let c = (from..from + 2 * dim)
            .map(|k| line.get(k, "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        Ok(BBox {
            min: c[..dim].to_vec(),
            max: c[dim..].to_vec(),
        })
    };
    for line in Lines::new(path, text) {
        let need_dim = || dim.ok_or_else(|| line.err("'dim' line must come first"));
        match line.fields[0] {
            "dim" => {
                line.expect_len(&[2])?;
                dim = Some(line.get::<usize>(1, "dimension")?);
            }
            "span" => {
                line.expect_len(&[4])?;
                spans.push((
                    ObjectId(line.get(1, "object id")?),
                    line.get(2, "time")?,
                    line.get(3, "time")?,
                ));
            }
            "rect" => {
                let d = need_dim()?;
                rects.push(StRect {
                    object: ObjectId(line.get(1, "object id")?),
                    start: line.get(2, "time")?,
                    end: line.get(3, "time")?,
                    bbox: bbox(&line, 4, d)?,
                });
            }
            "tick" => {
                let d = need_dim()?;
                ticks.push(TickBox {
                    object: ObjectId(line.get(1, "object id")?),
                    time: line.get(2, "time")?,
                    bbox: bbox(&line, 3, d)?,
                });
            }
            other => return Err(line.err(format!("unknown record '{other}'"))),
        }
    }
    let dim = dim.ok_or_else(|| CliError::Parse {
        path: path.into(),
        line: 0,
        msg: "missing 'dim' line".into(),
    })?;
    Ok(UstIndex::from_parts(dim, spans, rects, ticks)?)
}

pub fn adapted_path(dir: &Path, o: ObjectId) -> PathBuf {
    dir.join(ADAPTED_DIR).join(format!("{o}.txt"))
}

/// Text dump of an adapted model. Probabilities carry 17 significant
/// digits, so loading gives back the same bits.
pub fn format_adapted(a: &AdaptedModel, obs_hash: u64) -> String {
    let (first, last) = a.span();
    let mut s = String::new();
    let _ = writeln!(s, "object {}", a.object());
    let _ = writeln!(s, "span {first} {last}");
    let _ = writeln!(s, "hash {obs_hash}");
    s.push_str("R\n");
    for t in first + 1..=last {
        for (i, j, p) in a.backward_at(t).expect("inside span").entries() {
            let _ = writeln!(s, "{t} {i} {j} {p:.16e}");
        }
    }
    s.push_str("F\n");
    for t in first..last {
        for (i, j, p) in a.forward_at(t).expect("inside span").entries() {
            let _ = writeln!(s, "{t} {i} {j} {p:.16e}");
        }
    }
    s.push_str("marginal\n");
    for t in first..=last {
        for &(i, p) in a.marginal(t).expect("inside span").entries() {
            let _ = writeln!(s, "{t} {i} {p:.16e}");
        }
    }
    s
}

/// Parses a dump; returns the model and the observation hash it was built
/// from.
pub fn parse_adapted(
    path: &Path,
    text: &str,
    prior: Arc<MarkovModel>,
) -> Result<(AdaptedModel, u64)> {
    let mut lines = Lines::new(path, text);
    let mut header = |key: &str, n: usize| -> Result<Line<'_>> {
        let line = lines.next().ok_or_else(|| CliError::Parse {
            path: path.into(),
            line: 0,
            msg: format!("missing '{key}' line"),
        })?;
        if line.fields[0] != key {
            return Err(line.err(format!("expected '{key}'")));
        }
        line.expect_len(&[n])?;
        Ok(line)
    };
    let object = ObjectId(header("object", 2)?.get(1, "object id")?);
    let l = header("span", 3)?;
    let (first, last): (Time, Time) = (l.get(1, "time")?, l.get(2, "time")?);
    if last < first {
        return Err(l.err("empty span"));
    }
    let hash: u64 = header("hash", 2)?.get(1, "hash")?;
    let len = (last - first) as usize;
    let states = prior.state_count();
    let mut r_rows: Vec<BTreeMap<usize, Vec<(usize, f64)>>> = vec![BTreeMap::new(); len];
    let mut f_rows: Vec<BTreeMap<usize, Vec<(usize, f64)>>> = vec![BTreeMap::new(); len];
    let mut marg: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len + 1];
    let mut section = "";
    for line in lines {
        if line.fields.len() == 1 {
            section = match line.fields[0] {
                s @ ("R" | "F" | "marginal") => s,
                other => return Err(line.err(format!("unknown section '{other}'"))),
            };
            continue;
        }
        let t: Time = line.get(0, "time")?;
        let range_err = || line.err(format!("time {t} outside the span"));
        match section {
            "R" | "F" => {
                line.expect_len(&[4])?;
                let (i, j, p) = (
                    line.state(1, states)?,
                    line.state(2, states)?,
                    line.prob(3)?,
                );
                let k = if section == "R" {
                    t.checked_sub(first + 1)
                        .filter(|&k| (k as usize) < len)
                        .ok_or_else(range_err)?
                } else {
                    t.checked_sub(first)
                        .filter(|&k| (k as usize) < len)
                        .ok_or_else(range_err)?
                };
                let rows = if section == "R" {
                    &mut r_rows
                } else {
                    &mut f_rows
                };
                rows[k as usize].entry(i).or_default().push((j, p));
            }
            "marginal" => {
                line.expect_len(&[3])?;
                let (i, p) = (line.state(1, states)?, line.prob(2)?);
                let k = t
                    .checked_sub(first)
                    .filter(|&k| k as usize <= len)
                    .ok_or_else(range_err)?;
                marg[k as usize].push((i, p));
            }
            _ => return Err(line.err("entry before any section header")),
        }
    }
    let to_matrix = |rows: Vec<BTreeMap<usize, Vec<(usize, f64)>>>| {
        rows.into_iter()
            .map(|r| ConditionalMatrix::from_rows(r.into_iter().collect()))
            .collect()
    };
    let marginals = marg
        .into_iter()
        .map(|mut v| {
            v.sort_by_key(|e| e.0);
            SparseVec::from_sorted(v)
        })
        .collect();
    let a = AdaptedModel::from_parts(
        object,
        (first, last),
        to_matrix(r_rows),
        to_matrix(f_rows),
        marginals,
        prior,
    )?;
    Ok((a, hash))
}

/// Loads the cached model of `o` if it exists and matches its observations.
pub fn load_cached_adapted(dir: &Path, o: &UncertainObject) -> Result<Option<AdaptedModel>> {
    let p = adapted_path(dir, o.id());
    if !p.exists() {
        return Ok(None);
    }
    let (a, hash) = parse_adapted(&p, &read_text(&p)?, o.model().clone())?;
    Ok((hash == observations_hash(o.observations()) && a.object() == o.id()).then_some(a))
}
