//! Augmentation policies: `n` slots of (operation, magnitude, weight).
//!
//! Text form, as printed by [`format_policy`]:
//!
//! ```text
//! Color: (1, 7), Color: (1, 2), Contour: (1, 1), Contrast: (1, 1), ...
//! ```
//!
//! where each pair is `(magnitude level, weight level)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{l2_normalize, FeatureVector};
use crate::error::{Error, Result};
use crate::featcache::write_atomically;
use crate::imagexform::{MagnitudeLevel, TransformOp};
use crate::source::{FeatureSource, WeightedSlot};

/// Slots per policy.
pub const POLICY_SLOTS: usize = 8;

/// Weight level in `1..=10`; zero is excluded so the L1 normalization is
/// always defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct WeightLevel(u8);

impl WeightLevel {
    pub const COUNT: usize = 10;

    pub fn new(level: u8) -> Result<Self> {
        if (1..=10).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::OutOfRange(format!("weight level {level} not in 1..=10")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for WeightLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightLevel> for u8 {
    fn from(w: WeightLevel) -> u8 {
        w.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub op: TransformOp,
    pub magnitude: MagnitudeLevel,
    pub weight: WeightLevel,
}

impl Slot {
    pub fn new(op: TransformOp, magnitude: u8, weight: u8) -> Result<Self> {
        Ok(Self {
            op,
            magnitude: MagnitudeLevel::new(magnitude)?,
            weight: WeightLevel::new(weight)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    slots: Vec<Slot>,
}

impl Policy {
    /// Any non-empty slot list; duplicate slots are allowed.
    pub fn new(slots: Vec<Slot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Parameter("a policy needs at least one slot".into()));
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize_weights(&self.slots.iter().map(|s| s.weight).collect::<Vec<_>>())
    }

    pub fn weighted_slots(&self) -> Vec<WeightedSlot> {
        self.slots
            .iter()
            .zip(self.normalized_weights())
            .map(|(s, w)| (s.op, s.magnitude, w))
            .collect()
    }

    /// Augmented descriptor of one image: the L2-normalized, L1-weighted sum
    /// of the per-slot descriptors.
    pub fn compose<S: FeatureSource + ?Sized>(&self, image_id: u64, source: &S) -> Result<FeatureVector> {
        let summed = source.accumulate_weighted(image_id, &self.weighted_slots())?;
        l2_normalize(&summed)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: ({}, {})", s.op, s.magnitude.get(), s.weight.get())?;
        }
        Ok(())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_policy(s)
    }
}

/// `w_j = level_j / sum(levels)`.
pub fn normalize_weights(levels: &[WeightLevel]) -> Vec<f64> {
    let total: f64 = levels.iter().map(|l| f64::from(l.get())).sum();
    levels.iter().map(|l| f64::from(l.get()) / total).collect()
}

pub fn format_policy(policy: &Policy) -> String {
    policy.to_string()
}

/// Parses exactly [`POLICY_SLOTS`] entries.
pub fn parse_policy(text: &str) -> Result<Policy> {
    parse_policy_with_len(text, POLICY_SLOTS)
}

pub fn parse_policy_with_len(text: &str, expected_slots: usize) -> Result<Policy> {
    let mut p = Cursor { text, pos: 0 };
    let mut slots = Vec::new();
    loop {
        p.skip_ws();
        let entry = slots.len() + 1;
        let name_start = p.pos;
        let name = p.take_while(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if name.is_empty() {
            return Err(p.error(format!("entry {entry}: expected an operation name")));
        }
        let op = TransformOp::from_name(name).ok_or_else(|| {
            Error::parse(
                format!("byte {name_start}"),
                format!("entry {entry}: unknown operation {name:?}"),
            )
        })?;
        p.expect(':')?;
        p.expect('(')?;
        let magnitude = p.number()?;
        p.expect(',')?;
        let weight = p.number()?;
        p.expect(')')?;
        let magnitude = MagnitudeLevel::new(magnitude)
            .map_err(|e| Error::parse(format!("entry {entry}"), e.to_string()))?;
        let weight = WeightLevel::new(weight).map_err(|e| Error::parse(format!("entry {entry}"), e.to_string()))?;
        slots.push(Slot { op, magnitude, weight });
        p.skip_ws();
        if p.at_end() {
            break;
        }
        p.expect(',')?;
    }
    if slots.len() != expected_slots {
        return Err(Error::parse(
            "end of input",
            format!("expected {expected_slots} entries, found {}", slots.len()),
        ));
    }
    Policy::new(slots)
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn skip_ws(&mut self) {
        self.take_while(char::is_whitespace);
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let n = rest.find(|c| !f(c)).unwrap_or(rest.len());
        self.pos += n;
        &rest[..n]
    }

    fn error(&self, message: String) -> Error {
        Error::parse(format!("byte {}", self.pos), message)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            let found = self.rest().chars().next().map_or("end of input".to_string(), |f| format!("{f:?}"));
            Err(self.error(format!("expected {c:?}, found {found}")))
        }
    }

    fn number(&mut self) -> Result<u8> {
        self.skip_ws();
        let start = self.pos;
        let digits = self.take_while(|c| c.is_ascii_digit() || c == '-');
        digits
            .parse::<i64>()
            .ok()
            .and_then(|v| u8::try_from(v).ok())
            .ok_or_else(|| {
                Error::parse(
                    format!("byte {start}"),
                    format!("expected a level, found {digits:?}"),
                )
            })
    }
}

/// Canonical spacing of policy text: no whitespace except one space after
/// each `:` and `,`.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        out.push(c);
        if c == ':' || c == ',' {
            out.push(' ');
        }
    }
    out
}

/// Sidecar metadata written next to exported policy files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub profile: String,
    pub extractor: String,
    pub aggregation: String,
    pub reward: Option<f64>,
    pub margin: f64,
    pub seed: u64,
    pub iteration: u64,
}

pub fn metadata_path(policy_path: &Path) -> PathBuf {
    PathBuf::from(format!("{}.meta.json", policy_path.display()))
}

/// One policy per line, plus a `<path>.meta.json` sidecar.
pub fn write_policies(path: &Path, policies: &[Policy], metadata: &PolicyMetadata) -> Result<()> {
    let text: String = policies.iter().map(|p| format!("{p}\n")).collect();
    write_atomically(path, text.as_bytes())?;
    let meta = serde_json::to_string_pretty(metadata)?;
    write_atomically(&metadata_path(path), meta.as_bytes())
}

/// Reads every non-blank, non-`#` line as a policy of any slot count.
pub fn read_policies(path: &Path) -> Result<Vec<Policy>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let slots = line.matches('(').count().max(1);
        let policy = parse_policy_with_len(line, slots).map_err(|e| match e {
            Error::Parse { position, message } => Error::parse(format!("line {}, {position}", n + 1), message),
            other => other,
        })?;
        out.push(policy);
    }
    if out.is_empty() {
        return Err(Error::parse(path.display().to_string(), "no policy found"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::AggregationKind;
    use crate::featcache::{CacheKey, FeatureCache};
    use crate::imagexform::DomainProfile;
    use proptest::prelude::*;

    const TRADEMARK: &str = "Color: (1, 7), Color: (1, 2), Contour: (1, 1), Contrast: (1, 1), \
                             Solarise: (1, 3), Solarise: (9, 1), Solarise: (4, 1), Solarise: (2, 1)";
    const LANDMARK: &str = "TranslateY: (3, 2), TranslateY: (2, 4), Resize: (2, 4), TranslateY: (1, 4), \
                            Resize: (1, 3), Resize: (1, 3), Resize: (1, 3), Resize: (1, 1)";

    fn levels(v: &[u8]) -> Vec<WeightLevel> {
        v.iter().map(|&l| WeightLevel::new(l).unwrap()).collect()
    }

    #[test]
    fn weight_normalization() {
        assert!(normalize_weights(&levels(&[1; 8])).iter().all(|&w| w == 0.125));
        let w = normalize_weights(&levels(&[7, 2, 1, 1, 3, 1, 1, 1]));
        let expected = [7.0, 2.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0].map(|x| x / 17.0);
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w[0] - 0.4118).abs() < 1e-4);
        let w = normalize_weights(&levels(&[10, 1, 1, 1, 1, 1, 1, 1]));
        assert!((w[0] - 10.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn trademark_policy_round_trip() {
        let p = parse_policy(TRADEMARK).unwrap();
        assert_eq!(p.len(), 8);
        assert_eq!(p.slots()[0], Slot::new(TransformOp::Color, 1, 7).unwrap());
        assert_eq!(p.slots()[5], Slot::new(TransformOp::Solarize, 9, 1).unwrap());
        assert_eq!(format_policy(&p), TRADEMARK.replace("Solarise", "Solarize"));
        let weights: Vec<u8> = p.slots().iter().map(|s| s.weight.get()).collect();
        assert_eq!(weights, vec![7, 2, 1, 1, 3, 1, 1, 1]);
    }

    #[test]
    fn landmark_policy_round_trip() {
        let p = parse_policy(LANDMARK).unwrap();
        assert_eq!(format_policy(&p), LANDMARK);
    }

    #[test]
    fn whitespace_is_normalized() {
        let messy = "  Color :( 1 ,7 ),Color: (1, 2),   Contour: (1, 1), Contrast: (1, 1),\n\
                     Solarize: (1, 3), Solarize: (9, 1), Solarize: (4, 1), Solarize: (2,1)  ";
        let p = parse_policy(messy).unwrap();
        assert_eq!(format_policy(&p), TRADEMARK.replace("Solarise", "Solarize"));
        assert_eq!(format_policy(&p), normalize_whitespace(&messy.replace("Solarise", "Solarize")));
        assert_eq!(normalize_whitespace("Color :( 1 ,7 )"), "Color: (1, 7)");
    }

    #[test]
    fn parse_errors() {
        let bad_mag = TRADEMARK.replacen("Color: (1, 7)", "Rotate: (11, 1)", 1);
        let err = parse_policy(&bad_mag).unwrap_err();
        assert!(err.to_string().contains("entry 1"), "{err}");
        assert!(parse_policy(&TRADEMARK.replacen("(1, 7)", "(1, 0)", 1)).is_err());
        let err = parse_policy(&TRADEMARK.replacen("Color", "Blur", 1)).unwrap_err();
        assert!(err.to_string().contains("Blur"));
        let err = parse_policy("Color: (1, 7), Color: (1, 2)").unwrap_err();
        assert!(err.to_string().contains("expected 8 entries"));
        assert!(parse_policy("Color: (1 7)").is_err());
        assert!(parse_policy("").is_err());
        assert!(parse_policy(&format!("{TRADEMARK},")).is_err());
    }

    fn unit_cache(vectors: &[(TransformOp, u8, [f32; 3])]) -> FeatureCache {
        let entries = vectors
            .iter()
            .map(|&(op, m, v)| (CacheKey::new(1, op, MagnitudeLevel::new(m).unwrap()), v.to_vec()))
            .collect();
        FeatureCache::from_entries("t", AggregationKind::Mac, DomainProfile::Trademark, None, entries).unwrap()
    }

    #[test]
    fn compose_single_shared_vector() {
        let cache = unit_cache(&[(TransformOp::Rotate, 2, [0.6, 0.8, 0.0])]);
        let mut slots = vec![Slot::new(TransformOp::Rotate, 2, 10).unwrap()];
        slots.extend(std::iter::repeat(Slot::new(TransformOp::Rotate, 2, 1).unwrap()).take(7));
        let v = Policy::new(slots).unwrap().compose(1, &cache).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-7 && (v.values()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn compose_orthogonal_pair() {
        let cache = unit_cache(&[
            (TransformOp::Invert, 1, [1.0, 0.0, 0.0]),
            (TransformOp::Equalize, 1, [0.0, 1.0, 0.0]),
        ]);
        let p = Policy::new(vec![
            Slot::new(TransformOp::Invert, 1, 4).unwrap(),
            Slot::new(TransformOp::Equalize, 5, 4).unwrap(),
        ])
        .unwrap();
        let v = p.compose(1, &cache).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((v.values()[0] - r).abs() < 1e-15 && (v.values()[1] - r).abs() < 1e-15);
        assert_eq!(v.values()[2], 0.0);
    }

    #[test]
    fn compose_zero_sum_is_error() {
        let cache = unit_cache(&[
            (TransformOp::Invert, 1, [1.0, 0.0, 0.0]),
            (TransformOp::Equalize, 1, [-1.0, 0.0, 0.0]),
        ]);
        let p = Policy::new(vec![
            Slot::new(TransformOp::Invert, 1, 3).unwrap(),
            Slot::new(TransformOp::Equalize, 1, 3).unwrap(),
        ])
        .unwrap();
        assert!(matches!(p.compose(1, &cache), Err(Error::ZeroNorm)));
        assert!(matches!(p.compose(2, &cache), Err(Error::NotFound(_))));
    }

    #[test]
    fn policy_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.txt");
        let policies = vec![parse_policy(TRADEMARK).unwrap(), parse_policy(LANDMARK).unwrap()];
        let meta = PolicyMetadata {
            profile: "trademark".into(),
            extractor: "builtin-desk".into(),
            aggregation: "mac".into(),
            reward: Some(-0.25),
            margin: 0.2,
            seed: 7,
            iteration: 100,
        };
        write_policies(&path, &policies, &meta).unwrap();
        assert_eq!(read_policies(&path).unwrap(), policies);
        let meta_back: PolicyMetadata =
            serde_json::from_str(&fs::read_to_string(metadata_path(&path)).unwrap()).unwrap();
        assert_eq!(meta_back, meta);
    }

    fn arb_slot() -> impl Strategy<Value = Slot> {
        (0usize..17, 1u8..=10, 1u8..=10)
            .prop_map(|(op, m, w)| Slot::new(TransformOp::ALL[op], m, w).unwrap())
    }

    proptest! {
        #[test]
        fn text_round_trip(slots in proptest::collection::vec(arb_slot(), 8)) {
            let p = Policy::new(slots).unwrap();
            let text = format_policy(&p);
            prop_assert_eq!(parse_policy(&text).unwrap(), p);
            prop_assert_eq!(format_policy(&parse_policy(&text).unwrap()), text);
        }

        #[test]
        fn normalized_weights_sum_to_one(w in proptest::collection::vec(1u8..=10, 1..12)) {
            let n = normalize_weights(&levels(&w));
            prop_assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(n.iter().all(|&x| x > 0.0));
        }
    }
}
