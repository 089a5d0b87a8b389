//! Offline feature cache.
//!
//! Every `(image, transform, magnitude)` descriptor is computed once, stored
//! as a unit vector and replayed during search. Magnitude-free operations are
//! stored under magnitude 1 only. The untransformed descriptor of each image
//! is stored under the reserved op id 0.
//!
//! File layout, little-endian:
//!
//! ```text
//! "TTAC" | version u16 = 1 | feature_dim u32 | entry_count u64
//! | name_len u16 | extractor_name utf-8 | aggregation u8 | profile u8
//! | pca_present u8 [ input_dim u32 | output_dim u32 | mean f32 * in
//!                    | components f32 * out * in | scale f32 * out ]
//! | entry_count * ( image_id u64 | op_id u8 | magnitude u8 | 6 zero bytes
//!                   | feature_dim * f32 )
//! ```
//!
//! Records are sorted by `(image_id, op_id, magnitude)` and unique.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aggregate::{pca_fit, AggregationKind, FeatureVector, PcaModel, DEFAULT_EIGEN_FLOOR};
use crate::error::{Error, Result};
use crate::extractor::ExtractorDescriptor;
use crate::imagexform::{DomainProfile, Image, MagnitudeLevel, TransformOp, TransformSpec};
use crate::source::{FeatureSource, Pipeline, WeightedSlot};
use crate::util::{l2_norm, worker_pool};

pub const MAGIC: &[u8; 4] = b"TTAC";
pub const FORMAT_VERSION: u16 = 1;
/// Op id reserved for the untransformed image.
pub const BASELINE_OP_ID: u8 = 0;
const RECORD_PREFIX: usize = 16;
const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub image_id: u64,
    pub op_id: u8,
    pub magnitude: u8,
}

impl CacheKey {
    pub fn new(image_id: u64, op: TransformOp, magnitude: MagnitudeLevel) -> Self {
        Self::for_spec(image_id, TransformSpec::new(op, magnitude))
    }

    pub fn for_spec(image_id: u64, spec: TransformSpec) -> Self {
        let spec = spec.canonical();
        Self {
            image_id,
            op_id: spec.op.id(),
            magnitude: spec.magnitude.get(),
        }
    }

    pub fn baseline(image_id: u64) -> Self {
        Self {
            image_id,
            op_id: BASELINE_OP_ID,
            magnitude: 1,
        }
    }

    /// Pins the magnitude to 1 for the baseline and magnitude-free ops.
    pub fn canonical(self) -> Self {
        let free = self.op_id == BASELINE_OP_ID
            || TransformOp::from_id(self.op_id).is_some_and(|op| !op.requires_magnitude());
        if free {
            Self { magnitude: 1, ..self }
        } else {
            self
        }
    }

    fn is_valid(self) -> bool {
        let op_ok = self.op_id == BASELINE_OP_ID || TransformOp::from_id(self.op_id).is_some();
        op_ok && (1..=10).contains(&self.magnitude) && self.canonical() == self
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match TransformOp::from_id(self.op_id) {
            _ if self.op_id == BASELINE_OP_ID => write!(f, "image {} baseline", self.image_id),
            Some(op) => write!(f, "image {} {} level {}", self.image_id, op, self.magnitude),
            None => write!(
                f,
                "image {} op {} level {}",
                self.image_id, self.op_id, self.magnitude
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub version: u16,
    pub feature_dim: usize,
    pub entry_count: u64,
    pub extractor_name: String,
    pub aggregation: AggregationKind,
    pub profile: DomainProfile,
    pub pca: Option<PcaModel>,
}

/// An open cache: immutable, indexed in memory, shareable across threads.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    header: CacheHeader,
    keys: Vec<CacheKey>,
    data: Vec<f32>,
    index: HashMap<CacheKey, usize>,
}

impl FeatureCache {
    /// Assembles a cache from unsorted entries. Vectors are stored as f32.
    pub fn from_entries(
        extractor_name: &str,
        aggregation: AggregationKind,
        profile: DomainProfile,
        pca: Option<PcaModel>,
        mut entries: Vec<(CacheKey, Vec<f32>)>,
    ) -> Result<Self> {
        let Some(dim) = entries.first().map(|e| e.1.len()) else {
            return Err(Error::Build("no cache entries".into()));
        };
        if dim == 0 {
            return Err(Error::Build("feature dimension is zero".into()));
        }
        entries.sort_by_key(|e| e.0);
        let mut keys = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        for (key, v) in entries {
            if !key.is_valid() {
                return Err(Error::Build(format!("invalid key {key:?}")));
            }
            if keys.last() == Some(&key) {
                return Err(Error::Build(format!("duplicate key {key}")));
            }
            if v.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    actual: v.len(),
                });
            }
            keys.push(key);
            data.extend(v);
        }
        let header = CacheHeader {
            version: FORMAT_VERSION,
            feature_dim: dim,
            entry_count: keys.len() as u64,
            extractor_name: extractor_name.to_string(),
            aggregation,
            profile,
            pca,
        };
        if let Some(model) = &header.pca {
            model.validate()?;
            if model.output_dim != dim {
                return Err(Error::Shape {
                    expected: model.output_dim,
                    actual: dim,
                });
            }
        }
        Ok(Self::indexed(header, keys, data))
    }

    fn indexed(header: CacheHeader, keys: Vec<CacheKey>, data: Vec<f32>) -> Self {
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        Self {
            header,
            keys,
            data,
            index,
        }
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn feature_dim(&self) -> usize {
        self.header.feature_dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[CacheKey] {
        &self.keys
    }

    pub fn contains(&self, key: CacheKey) -> bool {
        self.index.contains_key(&key.canonical())
    }

    /// Distinct image ids, ascending.
    pub fn image_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.keys.iter().map(|k| k.image_id).collect();
        ids.dedup();
        ids
    }

    /// Stored f32 components for `key` (canonicalized first).
    pub fn get_raw(&self, key: CacheKey) -> Result<&[f32]> {
        let key = key.canonical();
        let i = *self.index.get(&key).ok_or(Error::NotFound(key))?;
        let dim = self.header.feature_dim;
        Ok(&self.data[i * dim..(i + 1) * dim])
    }

    pub fn get(&self, key: CacheKey) -> Result<FeatureVector> {
        FeatureVector::new(self.get_raw(key)?.iter().map(|&v| f64::from(v)).collect())
    }

    /// `sum_j w_j * get(key_j)` accumulated in place into a single buffer.
    pub fn accumulate_weighted(&self, image_id: u64, slots: &[WeightedSlot]) -> Result<FeatureVector> {
        let mut acc = vec![0.0f64; self.header.feature_dim];
        for &(op, magnitude, weight) in slots {
            let stored = self.get_raw(CacheKey::new(image_id, op, magnitude))?;
            for (a, &v) in acc.iter_mut().zip(stored) {
                *a += weight * f64::from(v);
            }
        }
        FeatureVector::new(acc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let dim = h.feature_dim;
        let mut out = Vec::with_capacity(64 + self.keys.len() * (RECORD_PREFIX + 4 * dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u64).to_le_bytes());
        let name = h.extractor_name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(h.aggregation.tag());
        out.push(h.profile.tag());
        match &h.pca {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                out.extend_from_slice(&(m.input_dim as u32).to_le_bytes());
                out.extend_from_slice(&(m.output_dim as u32).to_le_bytes());
                for v in m.mean.iter().chain(&m.components).chain(&m.whitening_scale) {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        for (key, values) in self.keys.iter().zip(self.data.chunks_exact(dim)) {
            out.extend_from_slice(&key.image_id.to_le_bytes());
            out.push(key.op_id);
            out.push(key.magnitude);
            out.extend_from_slice(&[0u8; 6]);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Strict reader: any structural or value inconsistency is an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(corrupt("feature_dim is zero"));
        }
        let entry_count = r.u64()?;
        let name_len = r.u16()? as usize;
        let extractor_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("extractor name is not UTF-8"))?
            .to_string();
        let agg_tag = r.u8()?;
        let aggregation = AggregationKind::from_tag(agg_tag)
            .ok_or_else(|| corrupt(format!("unknown aggregation tag {agg_tag}")))?;
        let profile_tag = r.u8()?;
        let profile = DomainProfile::from_tag(profile_tag)
            .ok_or_else(|| corrupt(format!("unknown profile tag {profile_tag}")))?;
        let pca = match r.u8()? {
            0 => None,
            1 => {
                let input_dim = r.u32()? as usize;
                let output_dim = r.u32()? as usize;
                if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
                    return Err(corrupt(format!("bad PCA dims {input_dim} -> {output_dim}")));
                }
                if output_dim != dim {
                    return Err(corrupt(format!(
                        "PCA output dim {output_dim} differs from feature_dim {dim}"
                    )));
                }
                let mean = r.f32s(input_dim)?;
                let components = r.f32s(
                    input_dim
                        .checked_mul(output_dim)
                        .ok_or_else(|| corrupt("PCA size overflow"))?,
                )?;
                let whitening_scale = r.f32s(output_dim)?;
                let model = PcaModel {
                    input_dim,
                    output_dim,
                    mean,
                    components,
                    whitening_scale,
                };
                model.validate().map_err(|e| corrupt(e.to_string()))?;
                Some(model)
            }
            other => return Err(corrupt(format!("pca_present flag {other}"))),
        };

        let record_len = RECORD_PREFIX + 4 * dim;
        let remaining = bytes.len() - r.pos;
        let expected = usize::try_from(entry_count)
            .ok()
            .and_then(|n| n.checked_mul(record_len))
            .ok_or_else(|| corrupt("entry_count overflows"))?;
        if remaining != expected {
            return Err(corrupt(format!(
                "entry_count {entry_count} needs {expected} record bytes, found {remaining}"
            )));
        }
        if entry_count == 0 {
            return Err(corrupt("cache has no entries"));
        }

        let n = entry_count as usize;
        let mut keys = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let key = CacheKey {
                image_id: r.u64()?,
                op_id: r.u8()?,
                magnitude: r.u8()?,
            };
            if r.take(6)?.iter().any(|&b| b != 0) {
                return Err(corrupt(format!("record {i}: non-zero padding")));
            }
            if !key.is_valid() {
                return Err(corrupt(format!(
                    "record {i}: invalid key (op {}, magnitude {})",
                    key.op_id, key.magnitude
                )));
            }
            if keys.last().is_some_and(|prev| *prev >= key) {
                return Err(corrupt(format!("record {i}: keys not strictly ascending")));
            }
            let start = data.len();
            for _ in 0..dim {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(corrupt(format!("record {i}: non-finite component")));
                }
                data.push(v);
            }
            let norm = l2_norm(&data[start..].iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(corrupt(format!("record {i}: norm {norm} is not 1")));
            }
            keys.push(key);
        }

        let header = CacheHeader {
            version,
            feature_dim: dim,
            entry_count,
            extractor_name,
            aggregation,
            profile,
            pca,
        };
        Ok(Self::indexed(header, keys, data))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Writes via a sibling temporary file renamed into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomically(path, &self.to_bytes())
    }
}

impl FeatureSource for FeatureCache {
    fn feature_dim(&self) -> usize {
        self.header.feature_dim
    }

    fn accumulate_weighted(&self, image_id: u64, slots: &[WeightedSlot]) -> Result<FeatureVector> {
        FeatureCache::accumulate_weighted(self, image_id, slots)
    }

    fn baseline(&self, image_id: u64) -> Result<FeatureVector> {
        self.get(CacheKey::baseline(image_id))
    }
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCache(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let v = self.f32()?;
                if v.is_finite() {
                    Ok(f64::from(v))
                } else {
                    Err(corrupt("non-finite PCA value"))
                }
            })
            .collect()
    }
}

/// `image_id<TAB>path` per line; relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageManifest {
    pub entries: Vec<(u64, PathBuf)>,
}

impl ImageManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (id, path) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("line {lineno}"), "expected image_id<TAB>path"))?;
            let id: u64 = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {lineno}"), format!("bad image id {id:?}")))?;
            if !seen.insert(id) {
                return Err(Error::parse(format!("line {lineno}"), format!("duplicate image id {id}")));
            }
            let path = PathBuf::from(path.trim());
            let path = if path.is_relative() { base_dir.join(path) } else { path };
            entries.push((id, path));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// How the whitening step is obtained during a build.
#[derive(Clone, Debug, PartialEq)]
pub enum PcaPlan {
    None,
    /// Fit on the pooled descriptors of the untransformed images.
    Fit { output_dim: usize, eigen_floor: f64 },
    Fixed(PcaModel),
}

impl PcaPlan {
    pub fn fit(output_dim: usize) -> Self {
        PcaPlan::Fit {
            output_dim,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildConfig {
    pub grid: Vec<TransformSpec>,
    pub descriptor: ExtractorDescriptor,
    pub aggregation: AggregationKind,
    pub profile: DomainProfile,
    pub pca: PcaPlan,
}

impl BuildConfig {
    pub fn full_grid(descriptor: ExtractorDescriptor, aggregation: AggregationKind, profile: DomainProfile) -> Self {
        Self {
            grid: TransformSpec::full_grid(),
            descriptor,
            aggregation,
            profile,
            pca: PcaPlan::None,
        }
    }
}

#[derive(Debug)]
pub struct BuildOutput {
    pub cache: FeatureCache,
    /// Transform records, excluding the per-image baseline records.
    pub grid_entries: usize,
    pub baseline_entries: usize,
    pub zero_norm_substitutions: usize,
}

/// Builds a cache in memory from decoded images.
pub fn build_cache_from_images(images: &[(u64, Image)], config: &BuildConfig) -> Result<BuildOutput> {
    if images.is_empty() {
        return Err(Error::Build("no images to cache".into()));
    }
    let grid: Vec<TransformSpec> = config
        .grid
        .iter()
        .map(|s| s.canonical())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if grid.is_empty() {
        return Err(Error::Build("transform grid is empty".into()));
    }
    let base = Pipeline::new(config.descriptor.clone(), config.aggregation, config.profile);
    let pool = worker_pool();

    let pca = match &config.pca {
        PcaPlan::None => None,
        PcaPlan::Fixed(model) => {
            model.validate()?;
            Some(model.clone())
        }
        PcaPlan::Fit {
            output_dim,
            eigen_floor,
        } => {
            let pooled = pool.install(|| {
                images
                    .par_iter()
                    .map(|(_, img)| base.pooled(img, None))
                    .collect::<Result<Vec<_>>>()
            })?;
            Some(pca_fit(&pooled, *output_dim, *eigen_floor)?)
        }
    };
    let pipeline = base.with_pca(pca.clone());

    let jobs: Vec<(u64, &Image, Option<TransformSpec>)> = images
        .iter()
        .flat_map(|(id, img)| {
            std::iter::once((*id, img, None)).chain(grid.iter().map(move |s| (*id, img, Some(*s))))
        })
        .collect();
    let described = pool.install(|| {
        jobs.par_iter()
            .map(|&(id, img, spec)| {
                let key = spec.map_or(CacheKey::baseline(id), |s| CacheKey::for_spec(id, s));
                pipeline.describe(img, spec).map(|d| (key, d))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let zero_norm_substitutions = described.iter().filter(|(_, d)| d.substituted).count();
    let entries = described
        .into_iter()
        .map(|(k, d)| (k, d.vector.values().iter().map(|&v| v as f32).collect()))
        .collect();
    let cache = FeatureCache::from_entries(
        &config.descriptor.name,
        config.aggregation,
        config.profile,
        pca,
        entries,
    )?;
    Ok(BuildOutput {
        cache,
        grid_entries: images.len() * grid.len(),
        baseline_entries: images.len(),
        zero_norm_substitutions,
    })
}

#[derive(Debug)]
pub struct BuildReport {
    pub header: CacheHeader,
    pub grid_entries: usize,
    pub baseline_entries: usize,
    pub zero_norm_substitutions: usize,
    /// Images that could not be read, with the reason.
    pub errors: Vec<(u64, PathBuf, String)>,
    /// The output file already held exactly these bytes.
    pub unchanged: bool,
}

/// Builds the cache for every readable manifest image and writes it to `path`.
/// Unreadable images are skipped and listed in `<path>.errors.tsv`.
pub fn build_cache(manifest: &ImageManifest, config: &BuildConfig, path: &Path) -> Result<BuildReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Build("image manifest is empty".into()));
    }
    let mut images = Vec::with_capacity(manifest.entries.len());
    let mut errors = Vec::new();
    for (id, image_path) in &manifest.entries {
        match Image::load(image_path) {
            Ok(img) => images.push((*id, img)),
            Err(e) => errors.push((*id, image_path.clone(), e.to_string())),
        }
    }
    let error_path = PathBuf::from(format!("{}.errors.tsv", path.display()));
    if errors.is_empty() {
        let _ = fs::remove_file(&error_path);
    } else {
        let text: String = errors
            .iter()
            .map(|(id, p, e)| format!("{id}\t{}\t{}\n", p.display(), e.replace(['\t', '\n'], " ")))
            .collect();
        fs::write(&error_path, text).map_err(|e| Error::io(&error_path, e))?;
    }
    if images.is_empty() {
        return Err(Error::Build(format!(
            "none of the {} manifest images could be read",
            manifest.entries.len()
        )));
    }

    let out = build_cache_from_images(&images, config)?;
    let bytes = out.cache.to_bytes();
    let unchanged = fs::read(path).is_ok_and(|existing| existing == bytes);
    if !unchanged {
        write_atomically(path, &bytes)?;
    }
    Ok(BuildReport {
        header: out.cache.header().clone(),
        grid_entries: out.grid_entries,
        baseline_entries: out.baseline_entries,
        zero_norm_substitutions: out.zero_norm_substitutions,
        errors,
        unchanged,
    })
}
