//! Filtered ranking and the MR / MRR / Hits@k suite.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EntityId, IdTuple, RelationId, Split};
use crate::error::{Error, Result};
use crate::model::{CandidateCache, Model};
use crate::scoring::ScoreVector;

/// Environment variable overriding the evaluation worker count.
pub const WORKERS_ENV: &str = "CKGR_WORKERS";

/// All known targets per (source, relation) over train ∪ dev ∪ test.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    map: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

impl FilterIndex {
    pub fn from_tuples<'a>(tuples: impl IntoIterator<Item = &'a IdTuple>) -> Self {
        let mut map: HashMap<_, BTreeSet<_>> = HashMap::new();
        for t in tuples {
            map.entry((t.source, t.relation)).or_default().insert(t.target);
        }
        Self { map }
    }

    pub fn targets(&self, source: EntityId, relation: RelationId) -> &BTreeSet<EntityId> {
        static EMPTY: BTreeSet<EntityId> = BTreeSet::new();
        self.map.get(&(source, relation)).unwrap_or(&EMPTY)
    }

    /// Known targets other than `gold`.
    pub fn known_true(&self, t: &IdTuple) -> BTreeSet<EntityId> {
        let mut s = self.targets(t.source, t.relation).clone();
        s.remove(&t.target);
        s
    }
}

pub fn build_filter_index(ds: &Dataset) -> FilterIndex {
    FilterIndex::from_tuples(ds.all_tuples())
}

/// `1 + #(survivors scoring strictly higher) + ⌈#(other survivors tied)/2⌉`,
/// where survivors are candidates outside `known_true` (gold always survives).
pub fn rank_among(values: &[f64], candidates: &[EntityId], gold: EntityId, known_true: &BTreeSet<EntityId>) -> Result<(usize, usize)> {
    let gi = candidates.iter().position(|&c| c == gold).ok_or(Error::GoldNotCandidate(gold.0))?;
    let g = values[gi];
    let (mut higher, mut ties, mut survivors) = (0usize, 0usize, 0usize);
    for (i, (&c, &v)) in candidates.iter().zip(values).enumerate() {
        if i == gi {
            survivors += 1;
            continue;
        }
        if known_true.contains(&c) {
            continue;
        }
        survivors += 1;
        if v > g {
            higher += 1;
        } else if v == g {
            ties += 1;
        }
    }
    Ok((1 + higher + ties.div_ceil(2), survivors))
}

/// Filtered rank of `gold`, computed on the pre-sigmoid logits.
pub fn filtered_rank(scores: &ScoreVector, gold: EntityId, known_true: &BTreeSet<EntityId>) -> Result<usize> {
    Ok(rank_among(&scores.logits, &scores.candidates, gold, known_true)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub tuple: IdTuple,
    pub rank: usize,
    pub candidate_count: usize,
    pub filtered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean rank; lower is better.
    pub mr: f64,
    /// Mean reciprocal rank; higher is better.
    pub mrr: f64,
    /// Percentages; higher is better.
    pub hits10: f64,
    pub hits3: f64,
    pub hits1: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptySplit("evaluation"));
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(Self {
            mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits10: hits(10),
            hits3: hits(3),
            hits1: hits(1),
            n: ranks.len(),
        })
    }

    /// JSON object with orientation labels next to each metric.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "MR": self.mr,
            "MRR": self.mrr,
            "Hits@10": self.hits10,
            "Hits@3": self.hits3,
            "Hits@1": self.hits1,
            "orientation": {
                "MR": "lower is better",
                "MRR": "higher is better",
                "Hits@10": "higher is better",
                "Hits@3": "higher is better",
                "Hits@1": "higher is better",
            },
        })
    }
}

/// Expected MRR of a scorer ranking survivors uniformly at random:
/// mean over tuples of H(n)/n for n survivors.
pub fn random_mrr(results: &[RankingResult]) -> f64 {
    let per = |n: usize| (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64;
    results.iter().map(|r| per(r.candidate_count - r.filtered)).sum::<f64>() / results.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub ranks: Vec<RankingResult>,
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`] when set, else the global pool.
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Ranks each tuple's gold target against every vocabulary entity.
pub fn evaluate_tuples(model: &Model, tuples: &[IdTuple], filter: &FilterIndex, cache: &CandidateCache) -> Result<EvalOutput> {
    if tuples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let candidates = model.all_entities();
    let ranks = with_workers(|| {
        tuples
            .par_iter()
            .map(|t| {
                let scores = model.score_candidates(t.source, t.relation, &candidates, Some(cache))?;
                let known = filter.known_true(t);
                let (rank, _) = rank_among(&scores.logits, &candidates, t.target, &known)?;
                let filtered = known.iter().filter(|e| e.idx() < candidates.len()).count();
                Ok(RankingResult { tuple: *t, rank, candidate_count: candidates.len(), filtered })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let report = MetricsReport::from_ranks(&ranks.iter().map(|r| r.rank).collect::<Vec<_>>())?;
    Ok(EvalOutput { report, ranks })
}

pub fn evaluate(model: &Model, ds: &Dataset, split: Split) -> Result<EvalOutput> {
    let tuples = ds.split(split);
    if tuples.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let filter = build_filter_index(ds);
    let cache = with_workers(|| model.candidate_cache())?;
    evaluate_tuples(model, tuples, &filter, &cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: u32) -> Vec<EntityId> {
        (0..n).map(EntityId).collect()
    }

    fn sv(values: &[f64]) -> ScoreVector {
        ScoreVector { candidates: ids(values.len() as u32), scores: values.to_vec(), logits: values.to_vec() }
    }

    /// Sort survivors descending and locate the gold's tie block.
    fn brute_force_rank(values: &[f64], gold: usize, known: &BTreeSet<EntityId>) -> usize {
        let mut survivors: Vec<(usize, f64)> = values
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, _)| *i == gold || !known.contains(&EntityId(*i as u32)))
            .collect();
        survivors.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let g = values[gold];
        let first = survivors.iter().position(|&(_, v)| v == g).unwrap();
        let block = survivors.iter().filter(|&&(_, v)| v == g).count();
        first + 1 + (block - 1).div_ceil(2)
    }

    #[test]
    fn rank_examples() {
        // gold = 0 (0.9), a = 1 (0.95, known true), b = 2 (0.5)
        let known: BTreeSet<_> = [EntityId(1)].into();
        assert_eq!(filtered_rank(&sv(&[0.9, 0.95, 0.5]), EntityId(0), &known).unwrap(), 1);
        assert_eq!(filtered_rank(&sv(&[0.95, 0.9, 0.5]), EntityId(1), &BTreeSet::new()).unwrap(), 2);
        assert_eq!(filtered_rank(&sv(&[0.3]), EntityId(0), &BTreeSet::new()).unwrap(), 1);
        assert_eq!(filtered_rank(&sv(&[0.5; 5]), EntityId(2), &BTreeSet::new()).unwrap(), 3);
        assert!(matches!(
            filtered_rank(&sv(&[0.5; 3]), EntityId(7), &BTreeSet::new()),
            Err(Error::GoldNotCandidate(7))
        ));
    }

    #[test]
    fn ranking_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for case in 0..1000 {
            let n = rng.random_range(1..=30usize);
            // Coarse score levels force frequent ties.
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.25).collect();
            let gold = rng.random_range(0..n);
            let known: BTreeSet<_> =
                (0..n).filter(|&i| i != gold && rng.random_bool(0.3)).map(|i| EntityId(i as u32)).collect();
            let got = filtered_rank(&sv(&values), EntityId(gold as u32), &known).unwrap();
            assert_eq!(got, brute_force_rank(&values, gold, &known), "case {case}");
        }
    }

    #[test]
    fn metrics_examples() {
        let r = MetricsReport::from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((r.mr, r.mrr, r.hits10, r.hits3, r.hits1), (1.0, 1.0, 100.0, 100.0, 100.0));
        let r = MetricsReport::from_ranks(&[1, 2, 4]).unwrap();
        assert!((r.mr - 7.0 / 3.0).abs() < 1e-12);
        assert!((r.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert_eq!(r.hits10, 100.0);
        assert!((r.hits3 - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.hits1 - 100.0 / 3.0).abs() < 1e-12);
        assert!(MetricsReport::from_ranks(&[]).is_err());
    }

    #[test]
    fn filter_index_unions_splits() {
        let t = |s, r, o| IdTuple { source: EntityId(s), relation: RelationId(r), target: EntityId(o) };
        let f = FilterIndex::from_tuples(&[t(0, 0, 1), t(0, 0, 2), t(3, 1, 4)]);
        assert_eq!(f.targets(EntityId(3), RelationId(1)), &[EntityId(4)].into());
        assert_eq!(f.targets(EntityId(0), RelationId(0)), &[EntityId(1), EntityId(2)].into());
        assert!(f.targets(EntityId(9), RelationId(0)).is_empty());
        assert_eq!(f.known_true(&t(0, 0, 1)), [EntityId(2)].into());
    }

    proptest! {
        #[test]
        fn metric_bounds(ranks in prop::collection::vec(1usize..500, 1..50)) {
            let r = MetricsReport::from_ranks(&ranks).unwrap();
            prop_assert!(r.mr >= 1.0);
            prop_assert!(r.mrr > 0.0 && r.mrr <= 1.0);
            prop_assert!(r.hits1 <= r.hits3 && r.hits3 <= r.hits10);
        }

        #[test]
        fn filtering_never_worsens_rank_and_shift_is_harmless(
            values in prop::collection::vec(-3i32..3, 2..20),
            gold_pick in 0usize..100,
            extra_pick in 0usize..100,
            shift in -10.0f64..10.0,
        ) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let n = values.len();
            let gold = EntityId((gold_pick % n) as u32);
            let extra = EntityId((extra_pick % n) as u32);
            let empty = BTreeSet::new();
            let base = filtered_rank(&sv(&values), gold, &empty).unwrap();
            let with: BTreeSet<_> = [extra].into();
            prop_assert!(filtered_rank(&sv(&values), gold, &with).unwrap() <= base);
            // Integer-valued scores plus a dyadic shift stay exactly representable.
            let shifted: Vec<f64> = values.iter().map(|v| v + (shift * 4.0).round() / 4.0).collect();
            prop_assert_eq!(filtered_rank(&sv(&shifted), gold, &empty).unwrap(), base);
        }
    }
}
