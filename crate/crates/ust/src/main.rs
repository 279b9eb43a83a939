use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ust::bench::{format_bench, run_bench, BenchConfig, BenchParam};
use ust::calibrate::{calibrate, format_buckets, CalibrationConfig};
use ust::format::{parse_list, parse_times, sig12};
use ust::io;
use ust::runner::{
    adapt_all, elapsed_ms, format_rows, format_timing, run_query, sort_rows, Estimator,
    OutputFormat, QueryKind, QuerySpec, Row, SampleSize,
};
use ust::{CliError, Result};
use ust_core::adaptation::observations_hash;
use ust_core::datagen::{gen_database, GenConfig, LagMode};
use ust_core::index::{UstIndex, DEFAULT_TICK_CACHE_STATES};
use ust_core::model::{validate, ObjectId, Reference, TrajectoryDatabase};
use ust_core::oracle;

#[derive(Parser)]
#[command(
    name = "ust",
    version,
    about = "Nearest-neighbor queries over uncertain Markov-chain trajectories"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic database with ground truth.
    Gen(GenArgs),
    /// Build or inspect the spatio-temporal index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Precompute adapted models into <db>/adapted/.
    Adapt {
        #[arg(long)]
        db: PathBuf,
    },
    /// Evaluate a nearest-neighbor query.
    Query {
        #[arg(value_enum)]
        kind: Kind,
        #[command(flatten)]
        args: QueryArgs,
    },
    /// Brute-force answer by enumerating possible worlds (tiny inputs only).
    Oracle {
        #[arg(value_enum)]
        kind: Kind,
        #[command(flatten)]
        args: QueryArgs,
    },
    /// Sweep one generator or query parameter and tabulate cost.
    Bench(BenchArgs),
    /// Reliability table of predicted probabilities against ground truth.
    Calibrate(CalibrateArgs),
    /// Check a database directory for invariant violations.
    Validate {
        #[arg(long)]
        db: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Pann,
    Penn,
    Pcnn,
}

impl From<Kind> for QueryKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Pann => QueryKind::Forall,
            Kind::Penn => QueryKind::Exists,
            Kind::Pcnn => QueryKind::Continuous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Posterior,
    Ts1,
    Ts2,
    Ss,
    Exact,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Posterior => Estimator::Posterior,
            EstimatorArg::Ts1 => Estimator::Ts1,
            EstimatorArg::Ts2 => Estimator::Ts2,
            EstimatorArg::Ss => Estimator::Snapshot,
            EstimatorArg::Exact => Estimator::Exact,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Jsonlines,
}

#[derive(Clone, Copy, ValueEnum)]
enum LagModeArg {
    Subsample,
    ExtraTime,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    states: usize,
    #[arg(long, default_value_t = 8.0)]
    branching: f64,
    #[arg(long, default_value_t = 1_000)]
    objects: usize,
    #[arg(long, default_value_t = 100)]
    lifetime: u32,
    #[arg(long, default_value_t = 1_000)]
    horizon: u32,
    /// Ticks between observations.
    #[arg(long, default_value_t = 10)]
    spacing: u32,
    /// Fraction of the spacing spent moving, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    lag: f64,
    #[arg(long, value_enum, default_value = "subsample")]
    lag_mode: LagModeArg,
    /// Take a wrong turn every this many nodes; 0 follows shortest paths.
    #[arg(long, default_value_t = 10)]
    wrong_turn_every: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig {
            states: self.states,
            branching: self.branching,
            objects: self.objects,
            lifetime: self.lifetime,
            horizon: self.horizon,
            spacing: self.spacing,
            lag: self.lag,
            wrong_turn_period: (self.wrong_turn_every > 0).then_some(self.wrong_turn_every),
            lag_mode: match self.lag_mode {
                LagModeArg::Subsample => LagMode::Subsample,
                LagModeArg::ExtraTime => LagMode::ExtraTime,
            },
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build the index and write it to disk.
    Build {
        #[arg(long)]
        db: PathBuf,
        /// Defaults to <db>/index.ust.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cache per-tick boxes up to this many states.
        #[arg(long, default_value_t = DEFAULT_TICK_CACHE_STATES)]
        tick_cache_states: usize,
    },
    /// Print index statistics.
    Stats {
        #[arg(long)]
        db: PathBuf,
        /// Defaults to <db>/index.ust; built in memory if absent.
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("reference").required(true).args(["q_state", "q_point", "q_traj"]))]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    /// Reference state id.
    #[arg(long)]
    q_state: Option<usize>,
    /// Reference point, comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    q_point: Option<String>,
    /// Reference trajectory file with `time state` lines.
    #[arg(long)]
    q_traj: Option<PathBuf>,
    /// Query timestamps, e.g. `2-8,12`.
    #[arg(long = "T", value_name = "TIMES")]
    times: String,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Default: exact for pann and pcnn, posterior for penn.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long, conflicts_with_all = ["epsilon", "delta"])]
    samples: Option<u64>,
    #[arg(long, requires = "delta")]
    epsilon: Option<f64>,
    #[arg(long, requires = "epsilon")]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate every object instead of the index candidates.
    #[arg(long)]
    no_prune: bool,
    #[arg(long, value_enum, default_value = "tsv")]
    format: FormatArg,
    /// Result file; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timing report file; standard error if absent.
    #[arg(long)]
    timing: Option<PathBuf>,
}

impl QueryArgs {
    fn reference(&self, db: &TrajectoryDatabase) -> Result<Reference> {
        if let Some(s) = self.q_state {
            return Ok(Reference::State(s));
        }
        if let Some(p) = &self.q_point {
            return Ok(Reference::Point(parse_list(p)?));
        }
        let path = self.q_traj.as_ref().expect("one reference is required");
        Ok(Reference::Trajectory(io::load_reference_trajectory(
            path,
            db.space().len(),
        )?))
    }

    fn samples(&self) -> SampleSize {
        match (self.samples, self.epsilon, self.delta) {
            (Some(n), _, _) => SampleSize::Count(n),
            (None, Some(epsilon), Some(delta)) => SampleSize::Hoeffding { epsilon, delta },
            _ => SampleSize::default(),
        }
    }

    fn spec(&self, kind: Kind, db: &TrajectoryDatabase) -> Result<QuerySpec> {
        let kind = QueryKind::from(kind);
        Ok(QuerySpec {
            kind,
            reference: self.reference(db)?,
            times: parse_times(&self.times)?,
            tau: self.tau,
            estimator: self
                .estimator
                .map(Estimator::from)
                .unwrap_or(QuerySpec::default_estimator(kind)),
            samples: self.samples(),
            seed: self.seed,
            prune: !self.no_prune,
        })
    }

    fn output_format(&self) -> OutputFormat {
        match self.format {
            FormatArg::Tsv => OutputFormat::Tsv,
            FormatArg::Jsonlines => OutputFormat::JsonLines,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "objects")]
    param: ParamArg,
    /// Comma-separated values of the swept parameter.
    #[arg(long, default_value = "100,200,400")]
    values: String,
    #[arg(long, default_value_t = 2_000)]
    states: usize,
    #[arg(long, default_value_t = 8.0)]
    branching: f64,
    #[arg(long, default_value_t = 100)]
    objects: usize,
    #[arg(long, default_value_t = 100)]
    lifetime: u32,
    #[arg(long, default_value_t = 200)]
    horizon: u32,
    #[arg(long, default_value_t = 10)]
    spacing: u32,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Number of consecutive query timestamps.
    #[arg(long, default_value_t = 5)]
    times_len: u32,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "exact")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    States,
    Branching,
    Objects,
    Tau,
    Times,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Database directory with groundtruth.txt.
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value_t = 2_500)]
    queries: usize,
    #[arg(long, default_value_t = 5)]
    times_len: u32,
    #[arg(long, default_value_t = 10)]
    buckets: usize,
    #[arg(long, default_value_t = 200)]
    min_tuples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// The database and its index, loaded from disk or built on the fly.
struct Loaded {
    db: TrajectoryDatabase,
    index: UstIndex,
    load_ms: f64,
    index_ms: f64,
}

fn load(dir: &Path) -> Result<Loaded> {
    let started = Instant::now();
    let db = io::load_database(dir)?;
    check(&db)?;
    let load_ms = elapsed_ms(started);
    let started = Instant::now();
    let index = load_or_build_index(dir, &db, None)?;
    Ok(Loaded {
        db,
        index,
        load_ms,
        index_ms: elapsed_ms(started),
    })
}

fn check(db: &TrajectoryDatabase) -> Result<()> {
    let violations = validate(db);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    Err(CliError::Validation(list.join("\n")))
}

fn load_or_build_index(
    dir: &Path,
    db: &TrajectoryDatabase,
    path: Option<&Path>,
) -> Result<UstIndex> {
    let default = dir.join(io::INDEX_FILE);
    let path = path.unwrap_or(&default);
    if path.exists() {
        return io::parse_index(path, &io::read_text(path)?);
    }
    Ok(UstIndex::build(db)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => {
            let (db, truth) = gen_database(&args.config())?;
            io::write_database(&args.out, &db, Some(&truth))?;
            eprintln!("objects\t{}\nstates\t{}", db.len(), db.space().len());
        }
        Command::Index(IndexCommand::Build {
            db,
            out,
            tick_cache_states,
        }) => {
            let d = io::load_database(&db)?;
            check(&d)?;
            let idx = UstIndex::build_with(&d, tick_cache_states)?;
            let out = out.unwrap_or_else(|| db.join(io::INDEX_FILE));
            io::write_text(&out, &io::format_index(&idx))?;
            print!("{}", stats_text(&idx));
        }
        Command::Index(IndexCommand::Stats { db, index }) => {
            let d = io::load_database(&db)?;
            let idx = load_or_build_index(&db, &d, index.as_deref())?;
            print!("{}", stats_text(&idx));
        }
        Command::Adapt { db } => {
            let d = io::load_database(&db)?;
            check(&d)?;
            let objects: Vec<_> = d.objects().iter().collect();
            let started = Instant::now();
            let models = adapt_all(&objects, None)?;
            for (o, a) in objects.iter().zip(&models) {
                let text = io::format_adapted(a, observations_hash(o.observations()));
                io::write_text(&io::adapted_path(&db, o.id()), &text)?;
            }
            eprint!("{}", format_timing(&[("ts_ms", elapsed_ms(started))]));
        }
        Command::Query { kind, args } => {
            let l = load(&args.db)?;
            let spec = args.spec(kind, &l.db)?;
            let res = run_query(&l.db, Some(&l.index), Some(&args.db), &spec)?;
            emit(
                args.out.as_deref(),
                &format_rows(&res.rows, args.output_format()),
            )?;
            let timing = format_timing(&[
                ("load_ms", l.load_ms),
                ("index_ms", l.index_ms),
                ("ts_ms", res.ts_ms),
                ("sa_ms", res.sa_ms),
                ("ex_ms", res.ex_ms),
                ("candidates", res.candidates as f64),
                ("influence", res.influence as f64),
                ("samples", res.samples as f64),
            ]);
            match &args.timing {
                Some(p) => io::write_text(p, &timing)?,
                None => eprint!("{timing}"),
            }
        }
        Command::Oracle { kind, args } => {
            let db = io::load_database(&args.db)?;
            check(&db)?;
            let spec = args.spec(kind, &db)?;
            let rows = oracle_rows(&db, &spec)?;
            emit(
                args.out.as_deref(),
                &format_rows(&rows, args.output_format()),
            )?;
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                base: GenConfig {
                    states: a.states,
                    branching: a.branching,
                    objects: a.objects,
                    lifetime: a.lifetime,
                    horizon: a.horizon,
                    spacing: a.spacing,
                    seed: a.seed,
                    ..GenConfig::default()
                },
                param: match a.param {
                    ParamArg::States => BenchParam::States,
                    ParamArg::Branching => BenchParam::Branching,
                    ParamArg::Objects => BenchParam::Objects,
                    ParamArg::Tau => BenchParam::Tau,
                    ParamArg::Times => BenchParam::Times,
                },
                values: parse_list(&a.values)?,
                queries: a.queries,
                times_len: a.times_len,
                tau: a.tau,
                estimator: a.estimator.into(),
                samples: SampleSize::Count(a.samples),
                seed: a.seed,
            };
            print!("{}", format_bench(cfg.param, &run_bench(&cfg)?));
        }
        Command::Calibrate(a) => {
            let l = load(&a.db)?;
            let truth = io::load_groundtruth(&a.db, l.db.space().len())?;
            let cfg = CalibrationConfig {
                queries: a.queries,
                times_len: a.times_len,
                buckets: a.buckets,
                min_tuples: a.min_tuples,
                seed: a.seed,
            };
            let (buckets, skipped) = calibrate(&l.db, &truth, &l.index, &cfg)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} queries over the exact work budget");
            }
            print!("{}", format_buckets(&buckets));
        }
        Command::Validate { db } => {
            let d = io::load_database(&db)?;
            check(&d)?;
            println!("ok\t{} objects\t{} states", d.len(), d.space().len());
        }
    }
    Ok(())
}

fn stats_text(idx: &UstIndex) -> String {
    let s = idx.stats();
    format!(
        "objects\t{}\nrects\t{}\ntick_boxes\t{}\navg_box_volume\t{}\nheight\t{}\n",
        s.objects,
        s.rects,
        s.tick_boxes,
        sig12(s.average_volume),
        s.height
    )
}

fn oracle_rows(db: &TrajectoryDatabase, spec: &QuerySpec) -> Result<Vec<Row>> {
    let ids: Vec<ObjectId> = db.covering(&spec.times).map(|o| o.id()).collect();
    let mut rows = Vec::new();
    for id in ids {
        match spec.kind {
            QueryKind::Forall | QueryKind::Exists => {
                let p = if spec.kind == QueryKind::Forall {
                    oracle::oracle_pann(db, id, &spec.reference, &spec.times)?
                } else {
                    oracle::oracle_penn(db, id, &spec.reference, &spec.times)?
                };
                if p > 0.0 && p + ust_core::exact::THRESHOLD_SLACK >= spec.tau {
                    rows.push(Row {
                        object: id,
                        times: None,
                        probability: p,
                    });
                }
            }
            QueryKind::Continuous => {
                for (times, p) in
                    oracle::oracle_pcnn(db, id, &spec.reference, &spec.times, spec.tau)?
                {
                    rows.push(Row {
                        object: id,
                        times: Some(times),
                        probability: p,
                    });
                }
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
