//! Parameter sweeps on generated data.

use std::fmt::Write as _;
use std::time::Instant;

use ust_core::datagen::{gen_database, GenConfig};
use ust_core::index::UstIndex;

use crate::error::{CliError, Result};
use crate::runner::{elapsed_ms, run_query, Estimator, QueryKind, QuerySpec, SampleSize};
use crate::workload::random_queries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchParam {
    /// Number of states `N`.
    States,
    /// Average branching `b`.
    Branching,
    /// Database size `|D|`.
    Objects,
    /// Probability threshold.
    Tau,
    /// Number of query timestamps `|T|`.
    Times,
}

impl BenchParam {
    pub fn name(self) -> &'static str {
        match self {
            BenchParam::States => "states",
            BenchParam::Branching => "branching",
            BenchParam::Objects => "objects",
            BenchParam::Tau => "tau",
            BenchParam::Times => "times",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub base: GenConfig,
    pub param: BenchParam,
    pub values: Vec<f64>,
    pub queries: usize,
    pub times_len: u32,
    pub tau: f64,
    pub estimator: Estimator,
    pub samples: SampleSize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            base: GenConfig {
                states: 2_000,
                objects: 100,
                lifetime: 100,
                horizon: 200,
                ..GenConfig::default()
            },
            param: BenchParam::Objects,
            values: vec![100.0, 200.0, 400.0],
            queries: 20,
            times_len: 5,
            tau: 0.0,
            estimator: Estimator::Exact,
            samples: SampleSize::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub value: f64,
    /// Mean wall time per query, milliseconds.
    pub runtime_ms: f64,
    pub candidates: f64,
    pub influence: f64,
    pub results: f64,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.queries == 0 {
        return Err(CliError::Validation("need at least one query".into()));
    }
    let mut out = Vec::with_capacity(cfg.values.len());
    for &v in &cfg.values {
        let mut gen = cfg.base.clone();
        let (mut tau, mut len) = (cfg.tau, cfg.times_len);
        let as_count = |what: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::Validation(format!(
                    "{what} must be a positive integer, got {v}"
                )))
            }
        };
        match cfg.param {
            BenchParam::States => gen.states = as_count("states")?,
            BenchParam::Branching => gen.branching = v,
            BenchParam::Objects => gen.objects = as_count("objects")?,
            BenchParam::Tau => tau = v,
            BenchParam::Times => len = as_count("times")? as u32,
        }
        let (db, _) = gen_database(&gen)?;
        let index = UstIndex::build(&db)?;
        let queries = random_queries(&db, cfg.queries, len, cfg.seed);
        let mut row = BenchRow {
            value: v,
            runtime_ms: 0.0,
            candidates: 0.0,
            influence: 0.0,
            results: 0.0,
        };
        for q in &queries {
            let spec = QuerySpec {
                kind: QueryKind::Forall,
                reference: q.reference.clone(),
                times: q.times.clone(),
                tau,
                estimator: cfg.estimator,
                samples: cfg.samples,
                seed: cfg.seed,
                prune: true,
            };
            let started = Instant::now();
            let res = run_query(&db, Some(&index), None, &spec)?;
            row.runtime_ms += elapsed_ms(started);
            row.candidates += res.candidates as f64;
            row.influence += res.influence as f64;
            row.results += res.rows.len() as f64;
        }
        let n = queries.len().max(1) as f64;
        row.runtime_ms /= n;
        row.candidates /= n;
        row.influence /= n;
        row.results /= n;
        out.push(row);
    }
    Ok(out)
}

pub fn format_bench(param: BenchParam, rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{}\truntime_ms\tcandidates\tinfluence\tresults\n",
        param.name()
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.3}\t{:.2}\t{:.2}\t{:.2}",
            r.value, r.runtime_ms, r.candidates, r.influence, r.results
        );
    }
    s
}
