use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use ust::io;
use ust_core::adaptation::adapt;
use ust_core::exact;
use ust_core::model::Reference;

fn ust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ust"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ust(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn generated() -> TempDir {
    let dir = TempDir::new().unwrap();
    let db = dir.path().to_str().unwrap();
    ok(&[
        "gen",
        "--states",
        "300",
        "--objects",
        "12",
        "--lifetime",
        "20",
        "--horizon",
        "20",
        "--seed",
        "3",
        "--out",
        db,
    ]);
    dir
}

/// `object -> probability` from tab-separated result lines.
fn rows(text: &str) -> BTreeMap<usize, f64> {
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[f.len() - 1].parse().unwrap())
        })
        .collect()
}

/// A state object 0 is observed at (tick 10). Queries stay near that
/// observation, where the exact answer is cheap.
fn reference_state(dir: &Path) -> usize {
    let db = io::load_database(dir).unwrap();
    db.objects()[0].observations()[1].state
}

#[test]
fn query_matches_library_and_is_deterministic() {
    let dir = generated();
    let db = dir.path().to_str().unwrap();
    ok(&["index", "build", "--db", db]);
    assert!(dir.path().join(io::INDEX_FILE).exists());
    let q = reference_state(dir.path()).to_string();
    let out = dir.path().join("res.tsv");
    let timing = dir.path().join("timing.txt");
    let args = [
        "query",
        "pann",
        "--db",
        db,
        "--q-state",
        &q,
        "--T",
        "9-11",
        "--tau",
        "0.05",
    ];
    let with_files = [
        &args[..],
        &[
            "--out",
            out.to_str().unwrap(),
            "--timing",
            timing.to_str().unwrap(),
        ],
    ]
    .concat();
    ok(&with_files);
    let text = fs::read_to_string(&out).unwrap();

    let d = io::load_database(dir.path()).unwrap();
    let times = [9, 10, 11];
    let reference = Reference::State(q.parse().unwrap());
    let mut expected = BTreeMap::new();
    for o in d.covering(&times) {
        let p = exact::pann(&d, o.id(), &reference, &times).unwrap();
        if p >= 0.05 {
            expected.insert(o.id().0 as usize, p);
        }
    }
    let got = rows(&text);
    assert!(!got.is_empty());
    assert_eq!(
        got.keys().collect::<Vec<_>>(),
        expected.keys().collect::<Vec<_>>()
    );
    for (id, p) in &got {
        assert!(
            (p - expected[id]).abs() < 1e-9,
            "object {id}: {p} vs {}",
            expected[id]
        );
    }

    let report = fs::read_to_string(&timing).unwrap();
    for key in [
        "load_ms",
        "index_ms",
        "ts_ms",
        "sa_ms",
        "ex_ms",
        "candidates",
        "influence",
    ] {
        assert!(
            report.lines().any(|l| l.starts_with(&format!("{key}\t"))),
            "{key} missing"
        );
    }

    assert_eq!(stdout(&ok(&args)), text);
    assert_eq!(stdout(&ok(&[&args[..], &["--no-prune"]].concat())), text);
}

#[test]
fn posterior_sampling_agrees_with_exact() {
    let dir = generated();
    let db = dir.path().to_str().unwrap();
    let q = reference_state(dir.path()).to_string();
    let base = ["query", "pann", "--db", db, "--q-state", &q, "--T", "8-12"];
    let exact = rows(&stdout(&ok(
        &[&base[..], &["--estimator", "exact"]].concat()
    )));
    let sampled = rows(&stdout(&ok(&[
        &base[..],
        &[
            "--estimator",
            "posterior",
            "--samples",
            "20000",
            "--seed",
            "1",
        ],
    ]
    .concat())));
    assert!(!exact.is_empty());
    for id in exact.keys().chain(sampled.keys()) {
        let (a, b) = (
            exact.get(id).copied().unwrap_or(0.0),
            sampled.get(id).copied().unwrap_or(0.0),
        );
        assert!((a - b).abs() <= 0.02, "object {id}: exact {a}, sampled {b}");
    }
}

#[test]
fn jsonlines_output() {
    let dir = generated();
    let db = dir.path().to_str().unwrap();
    let q = reference_state(dir.path()).to_string();
    let base = [
        "query",
        "pcnn",
        "--db",
        db,
        "--q-state",
        &q,
        "--T",
        "9-11",
        "--tau",
        "0.2",
    ];
    let tsv = stdout(&ok(&base));
    let json = stdout(&ok(&[&base[..], &["--format", "jsonlines"]].concat()));
    assert_eq!(tsv.lines().count(), json.lines().count());
    for line in json.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["object"].is_u64(), "{line}");
        assert!(v["times"].is_array(), "{line}");
        assert!(v["probability"].as_f64().unwrap() >= 0.2 - 1e-9, "{line}");
    }
}

#[test]
fn adapted_cache_round_trips() {
    let dir = generated();
    let db = dir.path().to_str().unwrap();
    let q = reference_state(dir.path()).to_string();
    let args = [
        "query",
        "penn",
        "--db",
        db,
        "--q-state",
        &q,
        "--T",
        "8-12",
        "--samples",
        "2000",
        "--seed",
        "5",
    ];
    let before = stdout(&ok(&args));
    ok(&["adapt", "--db", db]);
    let d = io::load_database(dir.path()).unwrap();
    for o in d.objects() {
        let cached = io::load_cached_adapted(dir.path(), o)
            .unwrap()
            .expect("cache hit");
        let fresh = adapt(o).unwrap();
        for t in o.span().0..=o.span().1 {
            assert_eq!(cached.marginal(t).unwrap(), fresh.marginal(t).unwrap());
        }
    }
    assert_eq!(stdout(&ok(&args)), before);
}

fn tiny_db(dir: &Path, transitions: &str) {
    fs::write(
        dir.join(io::STATES_FILE),
        "0 0.0 0.0\n1 1.0 0.0\n2 2.0 0.0\n",
    )
    .unwrap();
    fs::write(dir.join(io::TRANSITIONS_FILE), transitions).unwrap();
    fs::write(
        dir.join(io::OBSERVATIONS_FILE),
        "0 0 0\n0 2 2\n1 5 1\n1 7 1\n",
    )
    .unwrap();
}

const CHAIN: &str = "0 0 0.5\n0 1 0.5\n1 1 0.5\n1 2 0.5\n2 2 1.0\n";

#[test]
fn no_live_objects_gives_empty_output() {
    let dir = TempDir::new().unwrap();
    tiny_db(dir.path(), CHAIN);
    let out = dir.path().join("res.tsv");
    let db = dir.path().to_str().unwrap();
    ok(&[
        "query",
        "pann",
        "--db",
        db,
        "--q-state",
        "0",
        "--T",
        "3-4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    tiny_db(dir.path(), CHAIN);
    let db = dir.path().to_str().unwrap();

    // Validation: pcnn needs a positive threshold, bad time lists are rejected.
    assert_eq!(
        ust(&["query", "pcnn", "--db", db, "--q-state", "0", "--T", "0-2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ust(&["query", "pann", "--db", db, "--q-state", "0", "--T", "2-x"])
            .status
            .code(),
        Some(2)
    );

    // A row that does not sum to one.
    let bad = TempDir::new().unwrap();
    tiny_db(bad.path(), "0 0 0.5\n0 1 0.4\n1 1 0.5\n1 2 0.5\n2 2 1.0\n");
    let out = ust(&["validate", "--db", bad.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transitions.txt:1:"));

    // Missing database.
    let missing = dir.path().join("nope");
    assert_eq!(
        ust(&["validate", "--db", missing.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );

    // Brute force on a generated database exceeds its work guard.
    let big = generated();
    let args = [
        "oracle",
        "pann",
        "--db",
        big.path().to_str().unwrap(),
        "--q-state",
        "0",
        "--T",
        "0-19",
    ];
    assert_eq!(ust(&args).status.code(), Some(3));
}

#[test]
fn oracle_agrees_on_tiny_database() {
    let dir = TempDir::new().unwrap();
    tiny_db(dir.path(), CHAIN);
    fs::write(
        dir.path().join(io::OBSERVATIONS_FILE),
        "0 0 0\n0 2 2\n1 0 1\n1 2 2\n",
    )
    .unwrap();
    let db = dir.path().to_str().unwrap();
    let base = ["--db", db, "--q-state", "0", "--T", "0-2"];
    let exact = rows(&stdout(&ok(&[&["query", "pann"][..], &base].concat())));
    let brute = rows(&stdout(&ok(&[&["oracle", "pann"][..], &base].concat())));
    assert_eq!(
        exact.keys().collect::<Vec<_>>(),
        brute.keys().collect::<Vec<_>>()
    );
    for (id, p) in &exact {
        assert!((p - brute[id]).abs() < 1e-9);
    }
}
