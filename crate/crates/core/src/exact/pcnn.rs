//! Level-wise mining of maximal timestamp sets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::model::Time;
use crate::{Error, Result};

/// Probabilities this close below a threshold still reach it. Values that
/// equal the threshold in exact arithmetic otherwise qualify or not
/// depending on summation order.
pub const THRESHOLD_SLACK: f64 = 1e-12;

pub(crate) fn reaches(p: f64, tau: f64) -> bool {
    p + THRESHOLD_SLACK >= tau
}

/// A timestamp set on which an object is the nearest neighbor with
/// probability at least the threshold, and no qualifying superset exists.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSetProbability {
    pub times: Vec<Time>,
    pub probability: f64,
}

/// Apriori over subsets of `times`: a (k+1)-set is only evaluated if all of
/// its k-subsets qualified. Works for any probability that is
/// anti-monotone in the timestamp set, exact or estimated on a fixed pool of
/// worlds.
///
/// If a singleton `{t}` has probability exactly 1, conditioning on it changes
/// nothing, so `P(X ∪ {t}) = P(X)` and the evaluation is skipped.
pub fn apriori_maximal(
    times: &[Time],
    tau: f64,
    mut eval: impl FnMut(&[Time]) -> Result<f64>,
) -> Result<Vec<TimeSetProbability>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(
            "PCNN threshold must lie in (0, 1]".into(),
        ));
    }
    let mut cache: BTreeMap<Vec<Time>, f64> = BTreeMap::new();
    let mut certain: BTreeSet<Time> = BTreeSet::new();
    let mut levels: Vec<Vec<Vec<Time>>> = Vec::new();

    let mut level: Vec<Vec<Time>> = Vec::new();
    for &t in times {
        let p = eval(&[t])?;
        if p >= 1.0 {
            certain.insert(t);
        }
        if reaches(p, tau) {
            level.push(alloc::vec![t]);
        }
        cache.insert(alloc::vec![t], p);
    }
    while !level.is_empty() {
        let members: BTreeSet<&Vec<Time>> = level.iter().collect();
        let mut next = Vec::new();
        for (i, a) in level.iter().enumerate() {
            for b in &level[i + 1..] {
                let k = a.len();
                if a[..k - 1] != b[..k - 1] {
                    // Level is sorted lexicographically, so no later b shares the prefix.
                    break;
                }
                let mut cand = a.clone();
                cand.push(b[k - 1]);
                let all_subsets = (0..cand.len()).all(|skip| {
                    let sub: Vec<Time> = cand
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != skip)
                        .map(|(_, &t)| t)
                        .collect();
                    members.contains(&sub)
                });
                if !all_subsets {
                    continue;
                }
                let p = match cand.iter().position(|t| certain.contains(t)) {
                    Some(j) => {
                        let mut sub = cand.clone();
                        sub.remove(j);
                        cache[&sub]
                    }
                    None => eval(&cand)?,
                };
                cache.insert(cand.clone(), p);
                if reaches(p, tau) {
                    next.push(cand);
                }
            }
        }
        levels.push(level);
        level = next;
    }

    let mut out = Vec::new();
    for (k, lvl) in levels.iter().enumerate() {
        let above = levels.get(k + 1);
        for set in lvl {
            let covered = above.is_some_and(|up| up.iter().any(|sup| is_subset(set, sup)));
            if !covered {
                out.push(TimeSetProbability {
                    times: set.clone(),
                    probability: cache[set],
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.times
            .len()
            .cmp(&a.times.len())
            .then_with(|| a.times.cmp(&b.times))
    });
    Ok(out)
}

fn is_subset(small: &[Time], big: &[Time]) -> bool {
    let mut it = big.iter();
    small.iter().all(|t| it.any(|u| u == t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn finds_incomparable_maxima() {
        // P = 0.9 on {1,2} and {2,3}, 0.3 on anything containing {1,3}.
        let eval = |ts: &[Time]| {
            Ok(if ts.contains(&1) && ts.contains(&3) {
                0.3
            } else {
                0.9
            })
        };
        let out = apriori_maximal(&[1, 2, 3], 0.5, eval).unwrap();
        let sets: Vec<_> = out.iter().map(|x| x.times.clone()).collect();
        assert_eq!(sets, vec![vec![1, 2], vec![2, 3]]);
    }

    #[test]
    fn certain_timestamps_skip_evaluation() {
        let mut calls = 0;
        let eval = |ts: &[Time]| {
            calls += 1;
            Ok(if ts == [2] { 1.0 } else { 0.8 })
        };
        let out = apriori_maximal(&[1, 2], 0.5, eval).unwrap();
        assert_eq!(
            out,
            vec![TimeSetProbability {
                times: vec![1, 2],
                probability: 0.8
            }]
        );
        assert_eq!(calls, 2);
    }

    #[test]
    fn rejects_zero_threshold() {
        assert!(apriori_maximal(&[1], 0.0, |_| Ok(1.0)).is_err());
    }

    #[test]
    fn nothing_qualifies() {
        assert!(apriori_maximal(&[1, 2], 0.5, |_| Ok(0.1))
            .unwrap()
            .is_empty());
    }
}
