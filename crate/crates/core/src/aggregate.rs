//! Spatial pooling of feature maps into descriptors, PCA whitening and L2
//! normalization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::FeatureMap;
use crate::util::l2_norm;

pub const GEM_DEFAULT_P: f64 = 3.0;
pub const RMAC_DEFAULT_LEVELS: usize = 3;
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;
const GEM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {bad}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Unit vector with equal components.
    pub fn uniform_unit(dim: usize) -> Self {
        Self(vec![1.0 / (dim as f64).sqrt(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Pooling scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AggregationKind {
    Mac,
    Spoc,
    Gem { p: f64 },
    Rmac { levels: usize },
    Crow,
}

impl AggregationKind {
    /// Tag byte used in the cache header. Parameters are not stored; reading a
    /// tag yields the default parameters.
    pub fn tag(self) -> u8 {
        match self {
            AggregationKind::Mac => 0,
            AggregationKind::Spoc => 1,
            AggregationKind::Gem { .. } => 2,
            AggregationKind::Rmac { .. } => 3,
            AggregationKind::Crow => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => AggregationKind::Mac,
            1 => AggregationKind::Spoc,
            2 => AggregationKind::Gem { p: GEM_DEFAULT_P },
            3 => AggregationKind::Rmac {
                levels: RMAC_DEFAULT_LEVELS,
            },
            4 => AggregationKind::Crow,
            _ => return None,
        })
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            AggregationKind::Gem { p } if !(p > 0.0 && p.is_finite()) => {
                Err(Error::Parameter(format!("GeM exponent must be positive, got {p}")))
            }
            AggregationKind::Rmac { levels: 0 } => {
                Err(Error::Parameter("R-MAC needs at least one level".into()))
            }
            kind => Ok(kind),
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationKind::Mac => f.write_str("mac"),
            AggregationKind::Spoc => f.write_str("spoc"),
            AggregationKind::Gem { p } => write!(f, "gem:{p}"),
            AggregationKind::Rmac { levels } => write!(f, "rmac:{levels}"),
            AggregationKind::Crow => f.write_str("crow"),
        }
    }
}

impl FromStr for AggregationKind {
    type Err = Error;

    /// `mac`, `spoc`, `crow`, `gem[:p]`, `rmac[:levels]`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let bad = |msg: &str| Error::parse(s, msg);
        let kind = match (name, arg) {
            ("mac", None) => AggregationKind::Mac,
            ("spoc", None) => AggregationKind::Spoc,
            ("crow", None) => AggregationKind::Crow,
            ("gem", None) => AggregationKind::Gem { p: GEM_DEFAULT_P },
            ("gem", Some(p)) => AggregationKind::Gem {
                p: p.parse().map_err(|_| bad("bad GeM exponent"))?,
            },
            ("rmac", None) => AggregationKind::Rmac {
                levels: RMAC_DEFAULT_LEVELS,
            },
            ("rmac", Some(l)) => AggregationKind::Rmac {
                levels: l.parse().map_err(|_| bad("bad R-MAC level count"))?,
            },
            _ => return Err(bad("unknown aggregation")),
        };
        kind.validate()
    }
}

/// Pools `map` according to `kind`; R-MAC is computed without a region PCA.
pub fn aggregate(map: &FeatureMap, kind: AggregationKind) -> Result<FeatureVector> {
    match kind.validate()? {
        AggregationKind::Mac => Ok(mac(map)),
        AggregationKind::Spoc => Ok(spoc(map)),
        AggregationKind::Gem { p } => gem(map, p),
        AggregationKind::Rmac { levels } => rmac(map, levels, None),
        AggregationKind::Crow => Ok(crow(map)),
    }
}

fn per_channel(map: &FeatureMap, f: impl Fn(&[f64]) -> f64) -> FeatureVector {
    FeatureVector((0..map.channels()).map(|c| f(map.channel(c))).collect())
}

/// Per-channel spatial maximum.
pub fn mac(map: &FeatureMap) -> FeatureVector {
    per_channel(map, |plane| plane.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Per-channel spatial sum.
pub fn spoc(map: &FeatureMap) -> FeatureVector {
    per_channel(map, |plane| plane.iter().sum())
}

/// Generalized mean `(mean x^p)^(1/p)` per channel, with activations clamped
/// to at least 1e-6 first.
pub fn gem(map: &FeatureMap, p: f64) -> Result<FeatureVector> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("GeM exponent must be positive, got {p}")));
    }
    Ok(per_channel(map, |plane| {
        let mean = plane.iter().map(|v| v.max(GEM_EPS).powf(p)).sum::<f64>() / plane.len() as f64;
        mean.powf(1.0 / p)
    }))
}

/// Axis-aligned square (or clamped) window over a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// R-MAC region grid.
///
/// Level 1 is the whole map. Level `l >= 2` uses square windows of side
/// `floor(2 min(W, H) / (l + 1))` placed uniformly, `l` per axis plus extra
/// positions along the longer axis chosen so that consecutive windows overlap
/// by about 40%. Windows larger than the map are clamped to it.
pub fn rmac_regions(width: usize, height: usize, levels: usize) -> Vec<Region> {
    let mut regions = vec![Region {
        x: 0,
        y: 0,
        width,
        height,
    }];
    let short = width.min(height) as f64;
    let long = width.max(height) as f64;

    // Extra positions along the long side.
    let extra = if width == height {
        0
    } else {
        let overlap = 0.4;
        (2..=7usize)
            .map(|steps| {
                let b = (long - short) / (steps - 1) as f64;
                ((short * short - short * b) / (short * short) - overlap).abs()
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i + 1)
            .unwrap_or(0)
    };
    let (extra_w, extra_h) = if height < width { (extra, 0) } else { (0, extra) };

    for l in 2..=levels {
        let side = ((2.0 * short / (l as f64 + 1.0)).floor() as usize).max(1);
        let positions = |dim: usize, extra: usize| -> Vec<(usize, usize)> {
            let side = side.min(dim);
            let count = l + extra;
            let half = (side as f64 / 2.0 - 1.0).floor();
            let step = if count > 1 {
                (dim - side) as f64 / (count - 1) as f64
            } else {
                0.0
            };
            let mut out: Vec<(usize, usize)> = (0..count)
                .map(|i| {
                    let start = ((half + i as f64 * step).floor() - half) as usize;
                    (start.min(dim - side), side)
                })
                .collect();
            out.dedup();
            out
        };
        for &(y, h) in &positions(height, extra_h) {
            for &(x, w) in &positions(width, extra_w) {
                regions.push(Region {
                    x,
                    y,
                    width: w,
                    height: h,
                });
            }
        }
    }
    regions
}

fn region_mac(map: &FeatureMap, r: Region) -> Vec<f64> {
    (0..map.channels())
        .map(|c| {
            let mut best = f64::NEG_INFINITY;
            for y in r.y..r.y + r.height {
                for x in r.x..r.x + r.width {
                    best = best.max(map.get(c, y, x));
                }
            }
            best
        })
        .collect()
}

/// Regional MAC: per-region MAC, L2-normalized (and whitened when a model is
/// given), summed over all regions of [`rmac_regions`]. Regions with an
/// all-zero response contribute nothing.
pub fn rmac(map: &FeatureMap, levels: usize, pca: Option<&PcaModel>) -> Result<FeatureVector> {
    if levels == 0 {
        return Err(Error::Parameter("R-MAC needs at least one level".into()));
    }
    let dim = pca.map_or(map.channels(), |m| m.output_dim);
    let mut acc = vec![0.0; dim];
    for region in rmac_regions(map.width(), map.height(), levels) {
        let v = FeatureVector(region_mac(map, region));
        let Ok(mut v) = l2_normalize(&v) else { continue };
        if let Some(model) = pca {
            match l2_normalize(&pca_apply(model, &v)?) {
                Ok(w) => v = w,
                Err(_) => continue,
            }
        }
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x;
        }
    }
    Ok(FeatureVector(acc))
}

/// Cross-dimensional weighting: spatial weights from the L2-normalized
/// channel-sum map (square-root power), channel weights from the log inverse
/// fraction of non-zero locations.
pub fn crow(map: &FeatureMap) -> FeatureVector {
    let plane = map.width() * map.height();
    let mut aggregate = vec![0.0; plane];
    for c in 0..map.channels() {
        for (s, v) in aggregate.iter_mut().zip(map.channel(c)) {
            *s += v;
        }
    }
    let norm = l2_norm(&aggregate);
    let spatial: Vec<f64> = if norm > 0.0 {
        aggregate.iter().map(|s| (s / norm).max(0.0).sqrt()).collect()
    } else {
        vec![0.0; plane]
    };

    let nonzero: Vec<f64> = (0..map.channels())
        .map(|c| map.channel(c).iter().filter(|&&v| v != 0.0).count() as f64 / plane as f64)
        .collect();
    let total: f64 = nonzero.iter().sum();

    FeatureVector(
        (0..map.channels())
            .map(|c| {
                let q = nonzero[c];
                let weight = if q > 0.0 { (total / q).ln() } else { 0.0 };
                let pooled: f64 = map.channel(c).iter().zip(&spatial).map(|(v, a)| v * a).sum();
                weight * pooled
            })
            .collect(),
    )
}

/// Fitted PCA-whitening transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    /// `output_dim` rows of length `input_dim`, row-major.
    pub components: Vec<f64>,
    pub whitening_scale: Vec<f64>,
}

impl PcaModel {
    pub fn identity(dim: usize) -> Self {
        let mut components = vec![0.0; dim * dim];
        for i in 0..dim {
            components[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            mean: vec![0.0; dim],
            components,
            whitening_scale: vec![1.0; dim],
        }
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.input_dim == 0 || self.output_dim == 0 || self.output_dim > self.input_dim {
            return bad(format!(
                "PCA dims {} -> {} are invalid",
                self.input_dim, self.output_dim
            ));
        }
        if self.mean.len() != self.input_dim
            || self.components.len() != self.input_dim * self.output_dim
            || self.whitening_scale.len() != self.output_dim
        {
            return bad("PCA array lengths do not match its dims".into());
        }
        if self
            .mean
            .iter()
            .chain(&self.components)
            .chain(&self.whitening_scale)
            .any(|v| !v.is_finite())
        {
            return bad("PCA model has non-finite values".into());
        }
        if self.whitening_scale.iter().any(|&s| s <= 0.0) {
            return bad("PCA whitening scale must be positive".into());
        }
        Ok(())
    }
}

/// Mean-centred eigendecomposition of the (population) covariance, keeping
/// the top `output_dim` axes. Eigenvalues below `eigen_floor` are floored.
pub fn pca_fit(corpus: &[FeatureVector], output_dim: usize, eigen_floor: f64) -> Result<PcaModel> {
    let Some(first) = corpus.first() else {
        return Err(Error::Parameter("PCA corpus is empty".into()));
    };
    let dim = first.dim();
    if let Some(v) = corpus.iter().find(|v| v.dim() != dim) {
        return Err(Error::Shape {
            expected: dim,
            actual: v.dim(),
        });
    }
    if output_dim == 0 || output_dim > dim {
        return Err(Error::Parameter(format!(
            "PCA output dim {output_dim} must be in 1..={dim}"
        )));
    }
    if corpus.len() < output_dim {
        return Err(Error::Parameter(format!(
            "PCA corpus has {} vectors, needs at least {output_dim}",
            corpus.len()
        )));
    }
    if eigen_floor.is_nan() || eigen_floor <= 0.0 {
        return Err(Error::Parameter("eigen floor must be positive".into()));
    }

    let n = corpus.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in corpus {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for v in corpus {
        let centred: Vec<f64> = v.values().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += centred[i] * centred[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let c = cov[(i, j)] / n;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(output_dim * dim);
    let mut whitening_scale = Vec::with_capacity(output_dim);
    for &k in order.iter().take(output_dim) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(axis);
        whitening_scale.push(1.0 / eig.eigenvalues[k].max(eigen_floor).sqrt());
    }

    Ok(PcaModel {
        input_dim: dim,
        output_dim,
        mean,
        components,
        whitening_scale,
    })
}

/// `whitening_scale * (components . (v - mean))`.
pub fn pca_apply(model: &PcaModel, v: &FeatureVector) -> Result<FeatureVector> {
    if v.dim() != model.input_dim {
        return Err(Error::Shape {
            expected: model.input_dim,
            actual: v.dim(),
        });
    }
    let centred: Vec<f64> = v.values().iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(FeatureVector(
        (0..model.output_dim)
            .map(|i| {
                let dot: f64 = model.component(i).iter().zip(&centred).map(|(a, b)| a * b).sum();
                dot * model.whitening_scale[i]
            })
            .collect(),
    ))
}

pub fn l2_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("vector norm {norm}")));
    }
    Ok(FeatureVector(v.values().iter().map(|x| x / norm).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_from(w: usize, h: usize, channels: &[&[f64]]) -> FeatureMap {
        let values = channels.iter().flat_map(|c| c.iter().copied()).collect();
        FeatureMap::new(w, h, channels.len(), values).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> FeatureMap {
        let values = (0..w * h * c)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) })
            .collect();
        FeatureMap::new(w, h, c, values).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn example_map() -> FeatureMap {
        map_from(2, 2, &[&[1.0, 3.0, 2.0, 0.0], &[0.0, 5.0, 4.0, 4.0]])
    }

    #[test]
    fn mac_and_spoc_by_inspection() {
        let m = example_map();
        assert_eq!(mac(&m).values(), &[3.0, 5.0]);
        assert_eq!(spoc(&m).values()[0], 6.0);
        let constant = map_from(3, 2, &[&[0.7; 6], &[0.7; 6]]);
        assert_eq!(mac(&constant).values(), &[0.7, 0.7]);
    }

    #[test]
    fn mac_spoc_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 4, 4, 8);
        let (mut max, mut sum) = (vec![f64::MIN; 8], vec![0.0; 8]);
        for c in 0..8 {
            for y in 0..4 {
                for x in 0..4 {
                    max[c] = max[c].max(m.get(c, y, x));
                    sum[c] += m.get(c, y, x);
                }
            }
        }
        assert_eq!(mac(&m).values(), max.as_slice());
        assert!(close(spoc(&m).values(), &sum, 0.0));
    }

    #[test]
    fn gem_values() {
        let m = map_from(2, 2, &[&[1.0, 3.0, 2.0, 0.0]]);
        let g1 = gem(&m, 1.0).unwrap().values()[0];
        assert!((g1 - 1.5).abs() < 1e-6);
        let g3 = gem(&m, 3.0).unwrap().values()[0];
        assert!((g3 - 9f64.powf(1.0 / 3.0)).abs() < 1e-9);
        assert!((g3 - 2.0801).abs() < 1e-4);
        let g64 = gem(&m, 64.0).unwrap().values()[0];
        assert!((g64 - 3.0).abs() / 3.0 < 0.05);
        assert!(matches!(gem(&m, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gem(&m, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn gem_p1_is_mean_on_positive_maps() {
        let m = map_from(2, 1, &[&[0.5, 2.5]]);
        assert_eq!(gem(&m, 1.0).unwrap().values()[0], 1.5);
    }

    #[test]
    fn rmac_single_level_is_normalized_mac() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (w, h) in [(4, 4), (5, 3), (2, 7)] {
            let m = random_map(&mut rng, w, h, 6);
            let expected = l2_normalize(&mac(&m)).unwrap();
            assert!(close(rmac(&m, 1, None).unwrap().values(), expected.values(), 1e-12));
        }
    }

    #[test]
    fn rmac_two_levels_on_2x2_matches_enumeration() {
        let m = example_map();
        assert_eq!(rmac_regions(2, 2, 2).len(), 5);
        let mut expected = l2_normalize(&mac(&m)).unwrap().into_values();
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let cell = FeatureVector::new(vec![m.get(0, y, x), m.get(1, y, x)]).unwrap();
            if let Ok(n) = l2_normalize(&cell) {
                for (e, v) in expected.iter_mut().zip(n.values()) {
                    *e += v;
                }
            }
        }
        assert!(close(rmac(&m, 2, None).unwrap().values(), &expected, 1e-12));
    }

    #[test]
    fn rmac_regions_stay_inside_map() {
        for (w, h) in [(1, 1), (3, 9), (16, 10), (7, 7)] {
            for r in rmac_regions(w, h, 4) {
                assert!(r.width >= 1 && r.height >= 1);
                assert!(r.x + r.width <= w && r.y + r.height <= h);
            }
        }
    }

    #[test]
    fn rmac_constant_map_points_along_ones() {
        let m = map_from(6, 4, &[&[0.3; 24], &[0.3; 24], &[0.3; 24]]);
        let v = l2_normalize(&rmac(&m, 3, None).unwrap()).unwrap();
        let u = FeatureVector::uniform_unit(3);
        assert!(close(v.values(), u.values(), 1e-12));
    }

    #[test]
    fn rmac_with_pca_uses_output_dim() {
        let m = example_map();
        let mut pca = PcaModel::identity(2);
        pca.output_dim = 1;
        pca.components.truncate(2);
        pca.whitening_scale.truncate(1);
        assert_eq!(rmac(&m, 2, Some(&pca)).unwrap().dim(), 1);
    }

    /// Independent CRoW computed step by step with plain loops.
    fn crow_oracle(m: &FeatureMap) -> Vec<f64> {
        let (w, h, c) = (m.width(), m.height(), m.channels());
        let mut s = vec![vec![0.0; w]; h];
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    s[y][x] += m.get(k, y, x);
                }
            }
        }
        let z: f64 = s.iter().flatten().map(|v| v * v).sum::<f64>().powf(0.5);
        let q: Vec<f64> = (0..c)
            .map(|k| {
                let mut nz = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        if m.get(k, y, x) > 0.0 {
                            nz += 1.0;
                        }
                    }
                }
                nz / (w * h) as f64
            })
            .collect();
        let qsum: f64 = q.iter().sum();
        (0..c)
            .map(|k| {
                let beta = if q[k] > 0.0 { (qsum / q[k]).ln() } else { 0.0 };
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += (s[y][x] / z).powf(0.5) * m.get(k, y, x);
                    }
                }
                beta * acc
            })
            .collect()
    }

    #[test]
    fn crow_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_map(&mut rng, 4, 4, 8);
        assert!(close(crow(&m).values(), &crow_oracle(&m), 1e-12));
    }

    #[test]
    fn crow_uniform_is_proportional_to_spoc() {
        let m = map_from(3, 3, &[&[2.0; 9], &[0.5; 9], &[1.0; 9]]);
        let a = l2_normalize(&crow(&m)).unwrap();
        let b = l2_normalize(&spoc(&m)).unwrap();
        assert!(close(a.values(), b.values(), 1e-12));
    }

    #[test]
    fn crow_single_location() {
        let mut a = vec![0.0; 9];
        let mut b = vec![0.0; 9];
        a[4] = 3.0;
        b[4] = 4.0;
        let m = map_from(3, 3, &[&a, &b]);
        // Both channels are non-zero at one of nine places: weight ln 2 each;
        // the spatial weight at the single location is 1.
        let expected = [3.0 * 2f64.ln(), 4.0 * 2f64.ln()];
        assert!(close(crow(&m).values(), &expected, 1e-12));
    }

    #[test]
    fn crow_zero_map_is_zero() {
        let m = map_from(2, 2, &[&[0.0; 4], &[0.0; 4]]);
        assert_eq!(crow(&m).values(), &[0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_cases() {
        let v = l2_normalize(&FeatureVector::new(vec![3.0, 4.0]).unwrap()).unwrap();
        assert!(close(v.values(), &[0.6, 0.8], 1e-15));
        let u = FeatureVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_normalize(&u).unwrap(), u);
        assert!(matches!(
            l2_normalize(&FeatureVector::zeros(2)),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn pca_identical_corpus_is_floored() {
        let corpus = vec![FeatureVector::new(vec![1.0, 2.0, 3.0]).unwrap(); 4];
        let model = pca_fit(&corpus, 3, 1e-8).unwrap();
        for s in &model.whitening_scale {
            assert!((s - 1e4).abs() < 1e-6);
        }
        for v in &corpus {
            assert!(pca_apply(&model, v).unwrap().values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn pca_axis_aligned_corpus() {
        let corpus: Vec<_> = [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]
            .iter()
            .map(|v| FeatureVector::new(v.to_vec()).unwrap())
            .collect();
        let model = pca_fit(&corpus, 2, 1e-8).unwrap();
        // Covariance diag(1/2, 2): the y axis comes first.
        assert!(close(model.component(0), &[0.0, 1.0], 1e-12));
        assert!(close(model.component(1), &[1.0, 0.0], 1e-12));
        assert!(close(&model.whitening_scale, &[1.0 / 2f64.sqrt(), 2f64.sqrt()], 1e-12));
        let projected: Vec<_> = corpus.iter().map(|v| pca_apply(&model, v).unwrap()).collect();
        for axis in 0..2 {
            let var: f64 = projected.iter().map(|p| p.values()[axis].powi(2)).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_full_rank_whitens_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 5;
        let mix: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let corpus: Vec<_> = (0..200)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v = (0..dim)
                    .map(|i| (0..dim).map(|j| mix[i * dim + j] * z[j]).sum::<f64>() + 3.0)
                    .collect();
                FeatureVector::new(v).unwrap()
            })
            .collect();
        let model = pca_fit(&corpus, dim, 1e-8).unwrap();
        model.validate().unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let dot: f64 = model.component(i).iter().zip(model.component(j)).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        let projected: Vec<_> = corpus.iter().map(|v| pca_apply(&model, v).unwrap()).collect();
        let n = projected.len() as f64;
        for i in 0..dim {
            for j in 0..dim {
                let cov: f64 = projected.iter().map(|p| p.values()[i] * p.values()[j]).sum::<f64>() / n;
                assert!((cov - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6, "cov[{i}][{j}] = {cov}");
            }
        }
    }

    #[test]
    fn pca_errors() {
        let corpus = vec![FeatureVector::new(vec![1.0, 2.0]).unwrap()];
        assert!(pca_fit(&corpus, 2, 1e-8).is_err());
        assert!(pca_fit(&corpus, 3, 1e-8).is_err());
        assert!(pca_fit(&[], 1, 1e-8).is_err());
        let model = PcaModel::identity(2);
        assert!(matches!(
            pca_apply(&model, &FeatureVector::zeros(3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn identity_pca_is_noop() {
        let v = FeatureVector::new(vec![0.3, -1.2, 4.0]).unwrap();
        assert_eq!(pca_apply(&PcaModel::identity(3), &v).unwrap(), v);
    }

    #[test]
    fn aggregation_kind_parsing() {
        assert_eq!("mac".parse::<AggregationKind>().unwrap(), AggregationKind::Mac);
        assert_eq!("gem:2.5".parse::<AggregationKind>().unwrap(), AggregationKind::Gem { p: 2.5 });
        assert_eq!("rmac".parse::<AggregationKind>().unwrap(), AggregationKind::Rmac { levels: 3 });
        assert!("gem:0".parse::<AggregationKind>().is_err());
        assert!("rmac:0".parse::<AggregationKind>().is_err());
        assert!("vlad".parse::<AggregationKind>().is_err());
        for tag in 0..5 {
            assert_eq!(AggregationKind::from_tag(tag).unwrap().tag(), tag);
        }
        assert!(AggregationKind::from_tag(5).is_none());
    }

    proptest! {
        #[test]
        fn pooling_invariants(seed in any::<u64>(), w in 1usize..6, h in 1usize..6, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_map(&mut rng, w, h, c);
            let mx = mac(&m);
            let sp = spoc(&m);
            for (a, s) in mx.values().iter().zip(sp.values()) {
                prop_assert!(*a >= s / (w * h) as f64 - 1e-12);
            }
            let mut prev = gem(&m, 0.5).unwrap();
            for p in [1.0, 2.0, 3.0, 8.0] {
                let g = gem(&m, p).unwrap();
                for (a, b) in g.values().iter().zip(prev.values()) {
                    prop_assert!(*a >= b - 1e-12);
                }
                prev = g;
            }
            for kind in [AggregationKind::Mac, AggregationKind::Spoc, AggregationKind::Gem { p: 3.0 },
                         AggregationKind::Rmac { levels: 3 }, AggregationKind::Crow] {
                let v = aggregate(&m, kind).unwrap();
                prop_assert_eq!(v.dim(), c);
                prop_assert!(v.values().iter().all(|x| x.is_finite()));
            }
        }

        #[test]
        fn l2_normalize_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let v = FeatureVector::new(v).unwrap();
            if let Ok(once) = l2_normalize(&v) {
                let twice = l2_normalize(&once).unwrap();
                prop_assert!(close(once.values(), twice.values(), 1e-12));
                prop_assert!((once.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
