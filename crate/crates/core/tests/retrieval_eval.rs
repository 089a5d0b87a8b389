use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tta_core::aggregate::AggregationKind;
use tta_core::featcache::{CacheKey, FeatureCache};
use tta_core::imagexform::{DomainProfile, TransformOp, TransformSpec};
use tta_core::policy::{Policy, Slot};
use tta_core::retrieval::{evaluate_baseline, evaluate_policy, Query, RankingTask};

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Full grid plus baseline for each image; `vector(id, key)` supplies values.
fn cache_with(ids: &[u64], mut vector: impl FnMut(u64, CacheKey) -> Vec<f32>) -> FeatureCache {
    let mut entries = Vec::new();
    for &id in ids {
        let mut keys: BTreeSet<CacheKey> = TransformSpec::full_grid().into_iter().map(|s| CacheKey::for_spec(id, s)).collect();
        keys.insert(CacheKey::baseline(id));
        for k in keys {
            entries.push((k, vector(id, k)));
        }
    }
    FeatureCache::from_entries("test", AggregationKind::Mac, DomainProfile::Trademark, None, entries).unwrap()
}

fn all_slots(op: TransformOp) -> Policy {
    Policy::new(vec![Slot::new(op, 1, 1).unwrap(); 8]).unwrap()
}

fn query(id: u64, expected: &[u64]) -> Query {
    Query {
        id,
        expected: expected.iter().copied().collect(),
    }
}

#[test]
fn duplicates_under_every_transform_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<u64> = (1..=6).collect();
    let mut shared = std::collections::HashMap::new();
    let cache = cache_with(&ids, |id, key| {
        // Images 1 and 2 are duplicates, as are 3 and 4.
        let group = id.div_ceil(2);
        shared
            .entry((group, key.op_id, key.magnitude))
            .or_insert_with(|| unit(&mut rng, 8))
            .clone()
    });
    let task = RankingTask::new(vec![query(1, &[2]), query(3, &[4])], ids.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let slots = (0..8)
            .map(|_| Slot::new(TransformOp::ALL[rng.gen_range(0..17)], rng.gen_range(1..=10), rng.gen_range(1..=10)).unwrap())
            .collect();
        let p = Policy::new(slots).unwrap();
        assert_eq!(evaluate_policy(&p, &cache, &task).unwrap(), 1.0);
    }
}

#[test]
fn adversarial_database_scores_zero() {
    let cache = cache_with(&[1, 2, 3, 4], |id, _| match id {
        1 | 3 | 4 => vec![1.0, 0.0],
        _ => vec![0.0, 1.0],
    });
    let task = RankingTask::new(vec![query(1, &[2])], vec![2, 3, 4], 2).unwrap();
    assert_eq!(evaluate_policy(&all_slots(TransformOp::Invert), &cache, &task).unwrap(), 0.0);
}

/// Independent AP: sort by (distance, id), walk the top K.
fn brute_map(vectors: &dyn Fn(u64) -> Vec<f64>, task: &RankingTask) -> f64 {
    let mut total = 0.0;
    for q in &task.queries {
        let qv = vectors(q.id);
        let mut scored: Vec<(f64, u64)> = task
            .database
            .iter()
            .filter(|&&id| id != q.id)
            .map(|&id| {
                let d = vectors(id).iter().zip(&qv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (d, id)
            })
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut hits = 0.0;
        let mut ap = 0.0;
        for (j, (_, id)) in scored.iter().take(task.k).enumerate() {
            if q.expected.contains(id) {
                hits += 1.0;
                ap += hits / (j + 1) as f64;
            }
        }
        total += ap / q.expected.len() as f64;
    }
    total / task.queries.len() as f64
}

#[test]
fn twenty_image_task_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ids: Vec<u64> = (1..=20).collect();
    let cache = cache_with(&ids, |_, _| unit(&mut rng, 6));
    let queries = (1..=5)
        .map(|q| {
            let expected: Vec<u64> = (0..3).map(|_| rng.gen_range(6..=20)).collect();
            query(q, &expected)
        })
        .collect();
    let task = RankingTask::new(queries, ids, 4).unwrap();
    let policy = Policy::new(
        [TransformOp::Rotate, TransformOp::Equalize, TransformOp::Color, TransformOp::Resize]
            .iter()
            .cycle()
            .take(8)
            .enumerate()
            .map(|(i, &op)| Slot::new(op, (i + 2) as u8, (i + 1) as u8).unwrap())
            .collect(),
    )
    .unwrap();
    let got = evaluate_policy(&policy, &cache, &task).unwrap();
    let want = brute_map(&|id| policy.compose(id, &cache).unwrap().values().to_vec(), &task);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn separable_under_transform_beats_baseline() {
    // Baseline descriptors are noise; under Equalize images of the same
    // class (id parity) coincide.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids: Vec<u64> = (1..=10).collect();
    let cache = cache_with(&ids, |id, key| {
        if key.op_id == TransformOp::Equalize.id() {
            if id % 2 == 0 {
                vec![1.0, 0.0, 0.0, 0.0]
            } else {
                vec![0.0, 1.0, 0.0, 0.0]
            }
        } else {
            unit(&mut rng, 4)
        }
    });
    let task = RankingTask::new(vec![query(1, &[3, 5, 7, 9]), query(2, &[4, 6, 8, 10])], ids, 10).unwrap();
    let with = evaluate_policy(&all_slots(TransformOp::Equalize), &cache, &task).unwrap();
    let without = evaluate_baseline(&cache, &task).unwrap();
    assert_eq!(with, 1.0);
    assert!(with >= without);
}
