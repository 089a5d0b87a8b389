//! Feature extraction: turns an [`Image`] into a `W x H x C` activation map.
//!
//! Extractors are looked up by name through an [`ExtractorRegistry`]. The
//! registry ships with one extractor, `builtin-desk`: grayscale conversion, a
//! bank of 16 fixed 3x3 filters (eight compass edge kernels and eight seeded
//! random kernels), ReLU and 4x4 average pooling. It stands in for CNN
//! activations so the whole pipeline runs without a neural network.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagexform::Image;
use crate::util::seeded_rng;

pub const BUILTIN_DESK: &str = "builtin-desk";
pub const DESK_CHANNELS: usize = 16;
pub const DESK_POOL: usize = 4;

/// Activation tensor stored channel-major: `values[(c * height + y) * width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Parameter(format!(
                "feature map dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map value {bad}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Spatial plane of one channel, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.values[c * plane..(c + 1) * plane]
    }
}

/// Identifies an extractor and its configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractorDescriptor {
    pub name: String,
    pub channels: usize,
    pub version: u32,
    pub deterministic_seed: u64,
}

impl ExtractorDescriptor {
    pub fn builtin(seed: u64) -> Self {
        Self {
            name: BUILTIN_DESK.to_string(),
            channels: DESK_CHANNELS,
            version: 1,
            deterministic_seed: seed,
        }
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &Image, descriptor: &ExtractorDescriptor) -> Result<FeatureMap>;
}

/// Name-addressed set of extractors.
#[derive(Clone)]
pub struct ExtractorRegistry {
    extractors: BTreeMap<String, Arc<dyn FeatureExtractor>>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut registry = Self {
            extractors: BTreeMap::new(),
        };
        registry.register(BUILTIN_DESK, Arc::new(DeskExtractor));
        registry
    }
}

impl ExtractorRegistry {
    pub fn register(&mut self, name: &str, extractor: Arc<dyn FeatureExtractor>) {
        self.extractors.insert(name.to_string(), extractor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.extractors.keys().map(String::as_str)
    }

    pub fn extract(&self, image: &Image, descriptor: &ExtractorDescriptor) -> Result<FeatureMap> {
        let extractor = self.extractors.get(&descriptor.name).ok_or_else(|| {
            Error::Config(format!("unknown extractor {:?}", descriptor.name))
        })?;
        let map = extractor.extract(image, descriptor)?;
        if map.channels() != descriptor.channels {
            return Err(Error::Config(format!(
                "extractor {:?} produced {} channels, descriptor declares {}",
                descriptor.name,
                map.channels(),
                descriptor.channels
            )));
        }
        Ok(map)
    }
}

/// Extracts with the default registry.
pub fn extract(image: &Image, descriptor: &ExtractorDescriptor) -> Result<FeatureMap> {
    ExtractorRegistry::default().extract(image, descriptor)
}

struct DeskExtractor;

impl FeatureExtractor for DeskExtractor {
    fn extract(&self, image: &Image, descriptor: &ExtractorDescriptor) -> Result<FeatureMap> {
        if descriptor.channels != DESK_CHANNELS {
            return Err(Error::Config(format!(
                "{BUILTIN_DESK} has {DESK_CHANNELS} channels, descriptor asks for {}",
                descriptor.channels
            )));
        }
        Ok(builtin_desk_extract(image, descriptor.deterministic_seed))
    }
}

pub type Kernel = [[f64; 3]; 3];

/// The 16 desk filters for `seed`. Channels 0..8 are compass Sobel kernels
/// rotated in 45 degree steps starting from "top brighter"; channel 2 responds
/// to a brighter right side and channel 6 to a brighter left side. Channels
/// 8..16 are uniform in `[-1, 1]`.
pub fn desk_filter_bank(seed: u64) -> [Kernel; DESK_CHANNELS] {
    // Outer ring clockwise from the top-left corner.
    const RING: [(usize, usize); 8] = [
        (0, 0),
        (0, 1),
        (0, 2),
        (1, 2),
        (2, 2),
        (2, 1),
        (2, 0),
        (1, 0),
    ];
    const NORTH: [f64; 8] = [1.0, 2.0, 1.0, 0.0, -1.0, -2.0, -1.0, 0.0];

    let mut bank = [[[0.0; 3]; 3]; DESK_CHANNELS];
    for (k, kernel) in bank.iter_mut().take(8).enumerate() {
        for (p, &(r, c)) in RING.iter().enumerate() {
            kernel[r][c] = NORTH[(p + 8 - k) % 8];
        }
    }
    let mut rng = seeded_rng(seed);
    for kernel in bank.iter_mut().skip(8) {
        for v in kernel.iter_mut().flatten() {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    bank
}

/// Built-in extractor: luminance, 16 filters, ReLU, 4x4 average pooling.
pub fn builtin_desk_extract(image: &Image, seed: u64) -> FeatureMap {
    let bank = desk_filter_bank(seed);
    let (w, h) = (image.width() as usize, image.height() as usize);
    let gray: Vec<f64> = image
        .pixels()
        .chunks_exact(3)
        .map(|p| (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0)
        .collect();

    let pw = w.div_ceil(DESK_POOL);
    let ph = h.div_ceil(DESK_POOL);
    let mut values = vec![0.0; pw * ph * DESK_CHANNELS];
    let mut response = vec![0.0; w * h];

    // Pre-gather each pixel's edge-replicated 3x3 neighbourhood once.
    let mut patches = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut patch = [0.0; 9];
            for dy in 0..3 {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    patch[dy * 3 + dx] = gray[yy * w + xx];
                }
            }
            patches.push(patch);
        }
    }

    for (c, kernel) in bank.iter().enumerate() {
        let k: Vec<f64> = kernel.iter().flatten().copied().collect();
        for (r, patch) in response.iter_mut().zip(&patches) {
            let v: f64 = patch.iter().zip(&k).map(|(a, b)| a * b).sum();
            *r = v.max(0.0);
        }
        let plane = &mut values[c * pw * ph..(c + 1) * pw * ph];
        for py in 0..ph {
            for px in 0..pw {
                let (y0, y1) = (py * DESK_POOL, ((py + 1) * DESK_POOL).min(h));
                let (x0, x1) = (px * DESK_POOL, ((px + 1) * DESK_POOL).min(w));
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += response[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                plane[py * pw + px] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }

    FeatureMap {
        width: pw,
        height: ph,
        channels: DESK_CHANNELS,
        values,
    }
}
