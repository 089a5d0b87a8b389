//! Ranking by Euclidean distance and MAP@K.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::FeatureVector;
use crate::error::{Error, Result};
use crate::imagexform::DomainProfile;
use crate::policy::Policy;
use crate::source::FeatureSource;
use crate::util::{euclidean, pairwise_sum, worker_pool};

/// Database ids in ascending distance; ties by ascending id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(u64, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

pub fn rank(query: &FeatureVector, db: &[(u64, FeatureVector)]) -> Result<RankedList> {
    let mut entries = db
        .iter()
        .map(|(id, v)| {
            if v.dim() != query.dim() {
                return Err(Error::Shape {
                    expected: query.dim(),
                    actual: v.dim(),
                });
            }
            Ok((*id, euclidean(query.values(), v.values())))
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(RankedList { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub expected: BTreeSet<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingTask {
    pub queries: Vec<Query>,
    pub database: Vec<u64>,
    pub k: usize,
}

impl RankingTask {
    pub fn new(queries: Vec<Query>, database: Vec<u64>, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        if queries.is_empty() {
            return Err(Error::Parameter("ranking task has no queries".into()));
        }
        if let Some(q) = queries.iter().find(|q| q.expected.is_empty()) {
            return Err(Error::Parameter(format!("query {} has no expected ids", q.id)));
        }
        Ok(Self { queries, database, k })
    }

    /// Database for one query: every database id except the query itself.
    pub fn database_for(&self, query: u64) -> impl Iterator<Item = u64> + '_ {
        self.database.iter().copied().filter(move |&id| id != query)
    }
}

/// A parsed task file before the database is resolved against a cache.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskManifest {
    pub k: Option<usize>,
    pub queries: Vec<Query>,
    pub database: Option<Vec<u64>>,
}

impl TaskManifest {
    /// Format: an optional `K=<int>` header, then `query<TAB>id,id,...`
    /// lines, then optionally a `db:` line followed by database ids (one or
    /// more per line, separated by commas or whitespace).
    pub fn parse(text: &str) -> Result<Self> {
        let mut k = None;
        let mut queries = Vec::new();
        let mut database: Option<Vec<u64>> = None;
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let pos = || format!("line {}", n + 1);
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(db) = database.as_mut() {
                for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                    db.push(parse_id(tok).map_err(|m| Error::parse(pos(), m))?);
                }
                continue;
            }
            if let Some(v) = line.strip_prefix("K=") {
                if k.is_some() || !queries.is_empty() {
                    return Err(Error::parse(pos(), "K= must be the first line"));
                }
                let v: usize = v.trim().parse().map_err(|_| Error::parse(pos(), format!("invalid K {v:?}")))?;
                if v < 1 {
                    return Err(Error::parse(pos(), "K must be at least 1"));
                }
                k = Some(v);
                continue;
            }
            if line == "db:" {
                database = Some(Vec::new());
                continue;
            }
            let (q, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(pos(), "expected query<TAB>expected ids"))?;
            let id = parse_id(q.trim()).map_err(|m| Error::parse(pos(), m))?;
            if !seen.insert(id) {
                return Err(Error::parse(pos(), format!("duplicate query {id}")));
            }
            let expected = rest
                .split(',')
                .map(|t| parse_id(t.trim()))
                .collect::<std::result::Result<BTreeSet<u64>, String>>()
                .map_err(|m| Error::parse(pos(), m))?;
            queries.push(Query { id, expected });
        }
        if queries.is_empty() {
            return Err(Error::parse("line 1", "task manifest lists no queries"));
        }
        Ok(Self { k, queries, database })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Resolves the database (explicit list, or `available` minus queries)
    /// and K (manifest value, else `k_override`, else the profile default).
    pub fn resolve(self, available: &[u64], k_override: Option<usize>, profile: DomainProfile) -> Result<RankingTask> {
        let database = match self.database {
            Some(db) => {
                let mut db = db;
                db.sort_unstable();
                db.dedup();
                db
            }
            None => {
                let queries: BTreeSet<u64> = self.queries.iter().map(|q| q.id).collect();
                let mut db: Vec<u64> = available.iter().copied().filter(|id| !queries.contains(id)).collect();
                db.sort_unstable();
                db.dedup();
                db
            }
        };
        let k = k_override.or(self.k).unwrap_or_else(|| profile.default_k());
        RankingTask::new(self.queries, database, k)
    }
}

fn parse_id(tok: &str) -> std::result::Result<u64, String> {
    tok.parse().map_err(|_| format!("invalid image id {tok:?}"))
}

/// Average precision of one ranking: at each hit within the top `k`, the
/// hit count so far divided by the rank; the total is divided by the full
/// number of expected items.
pub fn average_precision(ranked: impl IntoIterator<Item = u64>, expected: &BTreeSet<u64>, k: usize) -> f64 {
    if expected.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, id) in ranked.into_iter().take(k).enumerate() {
        if expected.contains(&id) {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    sum / expected.len() as f64
}

pub fn map_at_k(task: &RankingTask, rankings: &[RankedList]) -> Result<f64> {
    if task.k < 1 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    if rankings.len() != task.queries.len() {
        return Err(Error::Shape {
            expected: task.queries.len(),
            actual: rankings.len(),
        });
    }
    let aps: Vec<f64> = task
        .queries
        .iter()
        .zip(rankings)
        .map(|(q, r)| average_precision(r.ids(), &q.expected, task.k))
        .collect();
    Ok(pairwise_sum(&aps) / aps.len() as f64)
}

/// MAP@K with descriptors from `describe`, computed once per image id.
pub fn evaluate_with<F>(task: &RankingTask, describe: F) -> Result<f64>
where
    F: Fn(u64) -> Result<FeatureVector> + Sync,
{
    let ids: BTreeSet<u64> = task.queries.iter().map(|q| q.id).chain(task.database.iter().copied()).collect();
    let ids: Vec<u64> = ids.into_iter().collect();
    worker_pool().install(|| {
        let vectors: HashMap<u64, FeatureVector> = ids
            .par_iter()
            .map(|&id| describe(id).map(|v| (id, v)))
            .collect::<Result<_>>()?;
        let rankings = task
            .queries
            .par_iter()
            .map(|q| {
                let db: Vec<(u64, FeatureVector)> =
                    task.database_for(q.id).map(|id| (id, vectors[&id].clone())).collect();
                rank(&vectors[&q.id], &db)
            })
            .collect::<Result<Vec<_>>>()?;
        map_at_k(task, &rankings)
    })
}

/// MAP@K with every image described by the policy's composed feature.
pub fn evaluate_policy<S: FeatureSource + ?Sized>(policy: &Policy, source: &S, task: &RankingTask) -> Result<f64> {
    evaluate_with(task, |id| policy.compose(id, source))
}

/// MAP@K with the untransformed descriptor of every image.
pub fn evaluate_baseline<S: FeatureSource + ?Sized>(source: &S, task: &RankingTask) -> Result<f64> {
    evaluate_with(task, |id| source.baseline(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn set(ids: &[u64]) -> BTreeSet<u64> {
        ids.iter().copied().collect()
    }

    #[test]
    fn rank_examples() {
        let r = rank(&fv(&[1.0, 0.0]), &[(2, fv(&[0.0, 1.0])), (1, fv(&[1.0, 0.0]))]).unwrap();
        assert_eq!(r.entries[0], (1, 0.0));
        assert_eq!(r.entries[1].0, 2);
        assert!((r.entries[1].1 - 2f64.sqrt()).abs() < 1e-15);
        let tie = rank(&fv(&[0.0, 0.0]), &[(9, fv(&[1.0, 0.0])), (4, fv(&[0.0, 1.0]))]).unwrap();
        assert_eq!(tie.ids().collect::<Vec<_>>(), vec![4, 9]);
        assert!(rank(&fv(&[0.0]), &[(1, fv(&[0.0, 1.0]))]).is_err());
    }

    #[test]
    fn ap_examples() {
        // hits at ranks 2 and 4, three expected
        let ap = average_precision([10, 1, 11, 2, 12], &set(&[1, 2, 3]), 5);
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_precision([1, 2, 9], &set(&[1, 2]), 5), 1.0);
        assert_eq!(average_precision([8, 9, 1], &set(&[1]), 2), 0.0);
        // more expected items than K: capped below 1
        assert!((average_precision([1, 2], &set(&[1, 2, 3]), 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn k_zero_rejected() {
        assert!(RankingTask::new(vec![Query { id: 1, expected: set(&[2]) }], vec![2], 0).is_err());
        let task = RankingTask {
            queries: vec![Query { id: 1, expected: set(&[2]) }],
            database: vec![2],
            k: 0,
        };
        assert!(map_at_k(&task, &[RankedList { entries: vec![(2, 0.0)] }]).is_err());
    }

    #[test]
    fn manifest_parse_and_resolve() {
        let m = TaskManifest::parse("K=5\n1\t2,3\n4\t5\n").unwrap();
        assert_eq!(m.k, Some(5));
        let task = m.resolve(&[1, 2, 3, 4, 5, 6], None, DomainProfile::Trademark).unwrap();
        assert_eq!(task.database, vec![2, 3, 5, 6]);
        assert_eq!(task.k, 5);
        let m = TaskManifest::parse("1\t2\ndb:\n2, 3\n7\n").unwrap();
        let task = m.resolve(&[], None, DomainProfile::Landmark).unwrap();
        assert_eq!(task.database, vec![2, 3, 7]);
        assert_eq!(task.k, 10);
        assert!(TaskManifest::parse("K=5\n").is_err());
        let err = TaskManifest::parse("K=5\n1\t2\n3 4\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(TaskManifest::parse("1\t2\n1\t3\n").is_err());
    }

    #[test]
    fn query_excluded_from_own_ranking() {
        let task = RankingTask::new(vec![Query { id: 1, expected: set(&[2]) }], vec![1, 2, 3], 1).unwrap();
        let vectors: HashMap<u64, FeatureVector> =
            [(1, fv(&[1.0, 0.0])), (2, fv(&[0.9, 0.1])), (3, fv(&[0.0, 1.0]))].into_iter().collect();
        let map = evaluate_with(&task, |id| Ok(vectors[&id].clone())).unwrap();
        assert_eq!(map, 1.0);
    }

    proptest! {
        #[test]
        fn map_bounded_and_monotone(
            order in Just((0u64..12).collect::<Vec<_>>()).prop_shuffle(),
            expected in prop::collection::btree_set(0u64..12, 1..5),
            k in 1usize..12,
            swap in 1usize..12,
        ) {
            let ap = average_precision(order.iter().copied(), &expected, k);
            prop_assert!((0.0..=1.0).contains(&ap));
            // Move an expected item one place earlier.
            if expected.contains(&order[swap]) && !expected.contains(&order[swap - 1]) {
                let mut better = order.clone();
                better.swap(swap, swap - 1);
                prop_assert!(average_precision(better.iter().copied(), &expected, k) >= ap);
            }
        }
    }
}
