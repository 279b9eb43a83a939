//! Random query workloads over a database.

use rand::Rng as _;
use ust_core::model::{Reference, Time, TrajectoryDatabase};
use ust_core::rng::keyed_rng;

/// Purpose tag for the query stream.
const QUERY_KEY: u64 = 0x5157_4552_59;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomQuery {
    pub reference: Reference,
    pub times: Vec<Time>,
}

/// `count` queries, each an interval of `len` consecutive ticks inside the
/// lifetime of a randomly chosen object and a uniformly random reference
/// state. Objects shorter than `len` are never chosen; with none left the
/// result is empty.
pub fn random_queries(
    db: &TrajectoryDatabase,
    count: usize,
    len: u32,
    seed: u64,
) -> Vec<RandomQuery> {
    let len = len.max(1);
    let eligible: Vec<_> = db
        .objects()
        .iter()
        .filter(|o| o.last_time() - o.first_time() + 1 >= len)
        .collect();
    if eligible.is_empty() || db.space().is_empty() {
        return Vec::new();
    }
    (0..count as u64)
        .map(|i| {
            let mut rng = keyed_rng(seed, QUERY_KEY, i);
            let o = eligible[rng.gen_range(0..eligible.len())];
            let start = rng.gen_range(o.first_time()..=o.last_time() + 1 - len);
            let reference = Reference::State(rng.gen_range(0..db.space().len()));
            RandomQuery {
                reference,
                times: (start..start + len).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ust_core::datagen::{gen_database, GenConfig};

    #[test]
    fn queries_fit_some_object() {
        let cfg = GenConfig {
            states: 200,
            objects: 10,
            lifetime: 20,
            horizon: 50,
            ..Default::default()
        };
        let (db, _) = gen_database(&cfg).unwrap();
        let qs = random_queries(&db, 50, 5, 1);
        assert_eq!(qs.len(), 50);
        for q in &qs {
            assert_eq!(q.times.len(), 5);
            assert!(db.covering(&q.times).next().is_some());
        }
        assert_eq!(qs, random_queries(&db, 50, 5, 1));
    }
}
