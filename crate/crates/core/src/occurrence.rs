//! How often each transform appears among the unique policies of a run.
//!
//! The normal rate of an op is its share of all slots; the weighted rate is
//! its share of normalized weight mass. Both are computed over the set of
//! distinct policies, so a policy sampled many times counts once.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagexform::TransformOp;
use crate::policy::Policy;
use crate::util::pairwise_sum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceRow {
    pub op: TransformOp,
    pub normal: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceReport {
    pub unique_policies: usize,
    /// One row per op in id order.
    pub rows: Vec<OccurrenceRow>,
}

pub fn occurrence_rates<'a>(policies: impl IntoIterator<Item = &'a Policy>) -> Result<OccurrenceReport> {
    let mut seen = BTreeSet::new();
    let unique: Vec<&Policy> = policies.into_iter().filter(|p| seen.insert(p.to_string())).collect();
    if unique.is_empty() {
        return Err(Error::Parameter("no policies to report on".into()));
    }
    let mut counts = [0usize; TransformOp::COUNT];
    let mut mass = vec![Vec::new(); TransformOp::COUNT];
    let mut total_slots = 0usize;
    for p in &unique {
        for (slot, w) in p.slots().iter().zip(p.normalized_weights()) {
            counts[slot.op.index()] += 1;
            mass[slot.op.index()].push(w);
            total_slots += 1;
        }
    }
    let n = unique.len() as f64;
    let rows = TransformOp::ALL
        .iter()
        .map(|&op| OccurrenceRow {
            op,
            normal: counts[op.index()] as f64 / total_slots as f64,
            weighted: pairwise_sum(&mass[op.index()]) / n,
        })
        .collect();
    Ok(OccurrenceReport {
        unique_policies: unique.len(),
        rows,
    })
}

impl OccurrenceReport {
    pub fn rate(&self, op: TransformOp) -> &OccurrenceRow {
        &self.rows[op.index()]
    }

    /// Aligned text table, most frequent first.
    pub fn table(&self) -> String {
        let mut rows: Vec<&OccurrenceRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.normal.total_cmp(&a.normal).then(a.op.id().cmp(&b.op.id())));
        let mut out = format!("unique policies: {}\n", self.unique_policies);
        let _ = writeln!(out, "{:<16} {:>8} {:>9}", "op", "normal", "weighted");
        for r in rows {
            let _ = writeln!(out, "{:<16} {:>8.4} {:>9.4}", r.op.name(), r.normal, r.weighted);
        }
        out
    }

    /// Tab-separated data file in op id order.
    pub fn tsv(&self) -> String {
        let mut out = String::from("op_id\top\tnormal_rate\tweighted_rate\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{:.12}\t{:.12}", r.op.id(), r.op.name(), r.normal, r.weighted);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Slot;

    fn uniform(ops: &[TransformOp]) -> Policy {
        Policy::new(ops.iter().map(|&op| Slot::new(op, 1, 5).unwrap()).collect()).unwrap()
    }

    #[test]
    fn single_solarize_policy() {
        let p = uniform(&[TransformOp::Solarize; 8]);
        let r = occurrence_rates([&p, &p]).unwrap();
        assert_eq!(r.unique_policies, 1);
        assert_eq!(r.rate(TransformOp::Solarize).normal, 1.0);
        assert!((r.rate(TransformOp::Solarize).weighted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_policies_split_evenly() {
        use TransformOp::*;
        let a = uniform(&[Rotate, Rotate, Invert, Invert, Rotate, Invert, Rotate, Invert]);
        let b = uniform(&[Color, Color, Color, Color, Equalize, Equalize, Equalize, Equalize]);
        let r = occurrence_rates([&a, &b]).unwrap();
        for op in [Rotate, Invert, Color, Equalize] {
            assert!((r.rate(op).normal - 0.25).abs() < 1e-12);
            assert!((r.rate(op).weighted - 0.25).abs() < 1e-12);
        }
        let total: f64 = r.rows.iter().map(|x| x.normal).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(r.tsv().lines().count() == 18);
        assert!(r.table().contains("Rotate"));
    }

    #[test]
    fn empty_is_error() {
        assert!(occurrence_rates(std::iter::empty::<&Policy>()).is_err());
    }
}
