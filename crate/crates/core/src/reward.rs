//! Triplet-margin reward of a policy.
//!
//! For each triplet the policy composes anchor, positive and negative
//! descriptors; the reward is the negated mean hinge
//! `max(d(a, p) - d(a, n) + margin, 0)`. Composed descriptors are unit
//! vectors, so `R` lies in `[-(2 + margin), 0]`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::FeatureVector;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::source::FeatureSource;
use crate::util::{euclidean, pairwise_sum, worker_pool};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

impl Triplet {
    pub fn new(anchor: u64, positive: u64, negative: u64) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub margin: f64,
    /// Evaluate a seeded uniform subset of this many triplets per call;
    /// `None` uses all of them.
    pub subsample: Option<usize>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            subsample: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Parameter(format!("margin must be non-negative, got {}", self.margin)));
        }
        if self.subsample == Some(0) {
            return Err(Error::Parameter("triplet subsample must be positive".into()));
        }
        Ok(())
    }
}

pub fn hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Reward from precomputed `(d(a, p), d(a, n))` pairs.
pub fn reward_from_distances(distances: &[(f64, f64)], margin: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Parameter("no triplets".into()));
    }
    let hinges: Vec<f64> = distances.iter().map(|&(p, n)| hinge(p, n, margin)).collect();
    Ok(-pairwise_sum(&hinges) / hinges.len() as f64)
}

/// Reward over every triplet (or `config.subsample` of them, drawn from `rng`).
pub fn triplet_reward_with<S, R>(
    policy: &Policy,
    triplets: &[Triplet],
    source: &S,
    config: &RewardConfig,
    rng: &mut R,
) -> Result<f64>
where
    S: FeatureSource + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    match config.subsample {
        Some(k) if k < triplets.len() => {
            let mut idx = sample_indices(rng, triplets.len(), k).into_vec();
            idx.sort_unstable();
            let chosen: Vec<Triplet> = idx.into_iter().map(|i| triplets[i]).collect();
            evaluate(policy, &chosen, source, config.margin)
        }
        _ => evaluate(policy, triplets, source, config.margin),
    }
}

/// Reward over every triplet; `config.subsample` is ignored.
pub fn triplet_reward<S: FeatureSource + ?Sized>(
    policy: &Policy,
    triplets: &[Triplet],
    source: &S,
    config: &RewardConfig,
) -> Result<f64> {
    config.validate()?;
    evaluate(policy, triplets, source, config.margin)
}

fn evaluate<S: FeatureSource + ?Sized>(policy: &Policy, triplets: &[Triplet], source: &S, margin: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Parameter("no triplets".into()));
    }
    let ids: Vec<u64> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let composed: HashMap<u64, FeatureVector> = worker_pool().install(|| {
        ids.par_iter()
            .map(|&id| policy.compose(id, source).map(|v| (id, v)))
            .collect::<Result<_>>()
    })?;
    let distances: Vec<(f64, f64)> = triplets
        .iter()
        .map(|t| {
            let a = composed[&t.anchor].values();
            (
                euclidean(a, composed[&t.positive].values()),
                euclidean(a, composed[&t.negative].values()),
            )
        })
        .collect();
    reward_from_distances(&distances, margin)
}

/// Parses `anchor<TAB>positive<TAB>negative` lines. Blank lines are skipped.
pub fn parse_triplets(text: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("expected 3 tab-separated ids, found {} field(s)", fields.len()),
            ));
        }
        let mut ids = [0u64; 3];
        for (slot, f) in ids.iter_mut().zip(&fields) {
            *slot = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {line_no}"), format!("invalid image id {f:?}")))?;
        }
        if ids[0] == ids[2] {
            return Err(Error::parse(format!("line {line_no}"), "anchor equals negative"));
        }
        out.push(Triplet::new(ids[0], ids[1], ids[2]));
    }
    if out.is_empty() {
        return Err(Error::parse("line 1", "triplet manifest is empty"));
    }
    Ok(out)
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triplets(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::AggregationKind;
    use crate::featcache::{CacheKey, FeatureCache};
    use crate::imagexform::{DomainProfile, TransformOp};
    use crate::policy::Slot;
    use crate::util::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_rewards() {
        assert_eq!(reward_from_distances(&[(0.5, 1.0)], 0.2).unwrap(), 0.0);
        assert!((reward_from_distances(&[(1.0, 0.5)], 0.2).unwrap() + 0.7).abs() < 1e-12);
        assert!((reward_from_distances(&[(0.5, 1.0), (1.0, 0.5)], 0.2).unwrap() + 0.35).abs() < 1e-12);
        assert!(reward_from_distances(&[], 0.2).is_err());
    }

    #[test]
    fn manifest_parsing() {
        assert_eq!(parse_triplets("1\t2\t3\n").unwrap(), vec![Triplet::new(1, 2, 3)]);
        assert_eq!(parse_triplets("1\t2\t3\n1\t2\t3").unwrap().len(), 2);
        assert!(parse_triplets("").is_err());
        let err = parse_triplets("1\t2\t3\n1 2\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_triplets("1\t2\t1\n").is_err());
        assert!(parse_triplets("1\tx\t3\n").is_err());
    }

    /// One key per image (Invert) with the given unit vector.
    fn cache(vectors: &[(u64, [f32; 2])]) -> FeatureCache {
        let entries = vectors
            .iter()
            .map(|&(id, v)| (CacheKey::new(id, TransformOp::Invert, crate::imagexform::MagnitudeLevel::MIN), v.to_vec()))
            .collect();
        FeatureCache::from_entries("t", AggregationKind::Mac, DomainProfile::Trademark, None, entries).unwrap()
    }

    fn invert_policy() -> Policy {
        Policy::new(vec![Slot::new(TransformOp::Invert, 1, 1).unwrap(); 8]).unwrap()
    }

    #[test]
    fn reward_over_cache_and_subsample() {
        let c = cache(&[(1, [1.0, 0.0]), (2, [1.0, 0.0]), (3, [0.0, 1.0])]);
        let good = Triplet::new(1, 2, 3);
        let bad = Triplet::new(1, 3, 2);
        let cfg = RewardConfig::default();
        let r = triplet_reward(&invert_policy(), &[good, bad], &c, &cfg).unwrap();
        // hinges 0 and sqrt(2) + 0.2
        assert!((r + (2f64.sqrt() + 0.2) / 2.0).abs() < 1e-6);
        assert!(triplet_reward(&invert_policy(), &[], &c, &cfg).is_err());
        assert!(triplet_reward(&invert_policy(), &[Triplet::new(1, 2, 9)], &c, &cfg).is_err());
        let sub = RewardConfig {
            subsample: Some(1),
            ..cfg
        };
        let r1 = triplet_reward_with(&invert_policy(), &[good, bad], &c, &sub, &mut seeded_rng(0)).unwrap();
        assert!(r1 == 0.0 || (r1 + 2f64.sqrt() + 0.2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bounded_monotone_and_permutation_invariant(
            pairs in prop::collection::vec((0.0f64..=2.0, 0.0f64..=2.0), 1..20),
            margin in 0.0f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let r = reward_from_distances(&pairs, margin).unwrap();
            prop_assert!(r <= 0.0 && r >= -(2.0 + margin) - 1e-12);
            prop_assert!(reward_from_distances(&pairs, margin + extra).unwrap() <= r);
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert!((reward_from_distances(&rev, margin).unwrap() - r).abs() < 1e-12);
            let zero = pairs.iter().all(|&(p, n)| p - n + margin <= 0.0);
            prop_assert_eq!(r == 0.0, zero);
        }
    }
}
