//! The seventeen test-time image transformations and their magnitude grids.
//!
//! Each ranged operation maps a [`MagnitudeLevel`] in `1..=10` linearly onto
//! its value range, with level 1 at the low end and level 10 at the high end.
//! Geometric operations sample bilinearly. Point and blend operations follow
//! the usual imaging-library conventions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} RGB needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Integer luminance per pixel (ITU-R 601 weights).
    pub fn luma(&self) -> Vec<u8> {
        self.pixels
            .chunks_exact(3)
            .map(|p| luma_of(p[0], p[1], p[2]))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn luma_of(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .round()
        .clamp(0.0, 255.0) as u8
}

/// The transformation vocabulary, numbered 1 to 17.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TransformOp {
    Resize = 1,
    Rotate = 2,
    ShearX = 3,
    ShearY = 4,
    TranslateX = 5,
    TranslateY = 6,
    AutoContrast = 7,
    Invert = 8,
    Equalize = 9,
    Solarize = 10,
    Posterize = 11,
    Contrast = 12,
    Color = 13,
    Brightness = 14,
    Sharpness = 15,
    HorizontalFlip = 16,
    Contour = 17,
}

impl TransformOp {
    pub const COUNT: usize = 17;

    pub const ALL: [TransformOp; 17] = [
        TransformOp::Resize,
        TransformOp::Rotate,
        TransformOp::ShearX,
        TransformOp::ShearY,
        TransformOp::TranslateX,
        TransformOp::TranslateY,
        TransformOp::AutoContrast,
        TransformOp::Invert,
        TransformOp::Equalize,
        TransformOp::Solarize,
        TransformOp::Posterize,
        TransformOp::Contrast,
        TransformOp::Color,
        TransformOp::Brightness,
        TransformOp::Sharpness,
        TransformOp::HorizontalFlip,
        TransformOp::Contour,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Zero-based position, used as the controller's decision index.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1..=17 => Some(Self::ALL[id as usize - 1]),
            _ => None,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformOp::Resize => "Resize",
            TransformOp::Rotate => "Rotate",
            TransformOp::ShearX => "ShearX",
            TransformOp::ShearY => "ShearY",
            TransformOp::TranslateX => "TranslateX",
            TransformOp::TranslateY => "TranslateY",
            TransformOp::AutoContrast => "AutoContrast",
            TransformOp::Invert => "Invert",
            TransformOp::Equalize => "Equalize",
            TransformOp::Solarize => "Solarize",
            TransformOp::Posterize => "Posterize",
            TransformOp::Contrast => "Contrast",
            TransformOp::Color => "Color",
            TransformOp::Brightness => "Brightness",
            TransformOp::Sharpness => "Sharpness",
            TransformOp::HorizontalFlip => "HorizontalFlip",
            TransformOp::Contour => "Contour",
        }
    }

    /// Accepts the canonical names plus the British "Solarise" and the
    /// hyphenated "Horizontal-flip".
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "Solarise" => Some(TransformOp::Solarize),
            "Horizontal-flip" | "Horizontal-Flip" => Some(TransformOp::HorizontalFlip),
            _ => Self::ALL.iter().copied().find(|op| op.name() == name),
        }
    }

    pub fn requires_magnitude(self) -> bool {
        op_requires_magnitude(self)
    }

    /// Value range `[lo, hi]`, or `None` for the magnitude-free operations.
    pub fn range(self, profile: DomainProfile) -> Option<(f64, f64)> {
        use TransformOp::*;
        match self {
            Resize => {
                let (lo, hi) = profile.resize_range();
                Some((f64::from(lo), f64::from(hi)))
            }
            Rotate => Some((-180.0, 162.0)),
            ShearX | ShearY => Some((-0.3, 0.3)),
            TranslateX | TranslateY => Some((-0.45, 0.36)),
            Solarize => Some((0.0, 256.0)),
            Posterize => Some((1.0, 8.0)),
            Contrast | Color | Sharpness => Some((0.1, 1.9)),
            Brightness => Some((0.4, 1.9)),
            AutoContrast | Invert | Equalize | HorizontalFlip | Contour => None,
        }
    }
}

impl fmt::Display for TransformOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s).ok_or_else(|| Error::parse(s, "unknown transform name"))
    }
}

/// False exactly for AutoContrast, Invert, Equalize, HorizontalFlip and Contour.
pub fn op_requires_magnitude(op: TransformOp) -> bool {
    !matches!(
        op,
        TransformOp::AutoContrast
            | TransformOp::Invert
            | TransformOp::Equalize
            | TransformOp::HorizontalFlip
            | TransformOp::Contour
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MagnitudeLevel(u8);

impl MagnitudeLevel {
    pub const MIN: MagnitudeLevel = MagnitudeLevel(1);
    pub const MAX: MagnitudeLevel = MagnitudeLevel(10);
    pub const COUNT: usize = 10;

    pub fn new(level: u8) -> Result<Self> {
        if (1..=10).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::OutOfRange(format!(
                "magnitude level {level} not in 1..=10"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = MagnitudeLevel> {
        (1..=10).map(MagnitudeLevel)
    }
}

impl TryFrom<u8> for MagnitudeLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MagnitudeLevel> for u8 {
    fn from(m: MagnitudeLevel) -> u8 {
        m.0
    }
}

/// Retrieval domain; selects the Resize range and the default MAP cut-off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainProfile {
    Trademark,
    Landmark,
}

impl DomainProfile {
    pub fn resize_range(self) -> (u32, u32) {
        match self {
            DomainProfile::Trademark => (64, 352),
            DomainProfile::Landmark => (384, 1536),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainProfile::Trademark => "trademark",
            DomainProfile::Landmark => "landmark",
        }
    }

    /// MAP@K cut-off used for this domain.
    pub fn default_k(self) -> usize {
        match self {
            DomainProfile::Trademark => 100,
            DomainProfile::Landmark => 10,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            DomainProfile::Trademark => 0,
            DomainProfile::Landmark => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DomainProfile::Trademark),
            1 => Some(DomainProfile::Landmark),
            _ => None,
        }
    }
}

impl fmt::Display for DomainProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trademark" => Ok(DomainProfile::Trademark),
            "landmark" => Ok(DomainProfile::Landmark),
            _ => Err(Error::parse(s, "profile must be trademark or landmark")),
        }
    }
}

/// One operation at one magnitude level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransformSpec {
    pub op: TransformOp,
    pub magnitude: MagnitudeLevel,
}

impl TransformSpec {
    pub fn new(op: TransformOp, magnitude: MagnitudeLevel) -> Self {
        Self { op, magnitude }
    }

    /// Same spec with the magnitude pinned to 1 when the op ignores it.
    pub fn canonical(self) -> Self {
        if self.op.requires_magnitude() {
            self
        } else {
            Self {
                op: self.op,
                magnitude: MagnitudeLevel::MIN,
            }
        }
    }

    /// Every distinct canonical spec: 12 ranged ops at 10 levels plus the five
    /// magnitude-free ops once each.
    pub fn full_grid() -> Vec<TransformSpec> {
        let mut grid = Vec::with_capacity(125);
        for op in TransformOp::ALL {
            if op.requires_magnitude() {
                grid.extend(MagnitudeLevel::all().map(|m| TransformSpec::new(op, m)));
            } else {
                grid.push(TransformSpec::new(op, MagnitudeLevel::MIN));
            }
        }
        grid
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.op, self.magnitude.get())
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// `Op:level`, or a bare `Op` for level 1.
    fn from_str(s: &str) -> Result<Self> {
        let (name, level) = match s.trim().split_once(':') {
            Some((n, l)) => {
                let l: u8 = l
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(s, format!("invalid level {l:?}")))?;
                (n.trim(), l)
            }
            None => (s.trim(), 1),
        };
        let op: TransformOp = name.parse()?;
        Ok(TransformSpec::new(op, MagnitudeLevel::new(level)?))
    }
}

/// Real-valued parameter for `op` at `level`.
///
/// Resize values are rounded to whole pixels.
pub fn magnitude_value(op: TransformOp, level: MagnitudeLevel, profile: DomainProfile) -> Result<f64> {
    let (lo, hi) = op.range(profile).ok_or(Error::NoMagnitude { op: op.name() })?;
    let t = f64::from(level.get() - 1);
    let v = if level == MagnitudeLevel::MAX {
        hi
    } else {
        lo + t * (hi - lo) / 9.0
    };
    Ok(if op == TransformOp::Resize { v.round() } else { v })
}

/// Applies one transformation. Every op except Resize preserves the image size.
pub fn apply(spec: TransformSpec, image: &Image, profile: DomainProfile) -> Image {
    use TransformOp::*;
    let value = || magnitude_value(spec.op, spec.magnitude, profile).expect("ranged op");
    match spec.op {
        Resize => resize_longest_side(image, value() as u32),
        Rotate => rotate(image, value()),
        ShearX => {
            let m = value();
            warp(image, image.width, image.height, Border::Black, |x, y| (x + m * y, y))
        }
        ShearY => {
            let m = value();
            warp(image, image.width, image.height, Border::Black, |x, y| (x, y + m * x))
        }
        TranslateX => {
            let shift = value() * f64::from(image.width);
            warp(image, image.width, image.height, Border::Reflect, |x, y| (x + shift, y))
        }
        TranslateY => {
            let shift = value() * f64::from(image.height);
            warp(image, image.width, image.height, Border::Reflect, |x, y| (x, y + shift))
        }
        AutoContrast => autocontrast(image),
        Invert => map_bytes(image, |p| 255 - p),
        Equalize => equalize(image),
        Solarize => solarize(image, value()),
        Posterize => posterize(image, value().round().clamp(1.0, 8.0) as u32),
        Contrast => contrast(image, value()),
        Color => color(image, value()),
        Brightness => brightness(image, value()),
        Sharpness => sharpness(image, value()),
        HorizontalFlip => hflip(image),
        Contour => contour(image),
    }
}

fn map_bytes(image: &Image, f: impl Fn(u8) -> u8) -> Image {
    Image {
        width: image.width,
        height: image.height,
        pixels: image.pixels.iter().map(|&p| f(p)).collect(),
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Border {
    Black,
    Clamp,
    Reflect,
}

/// Mirror index into `0..n`, repeating the edge pixel (`-1 -> 0`).
fn reflect_index(i: i64, n: i64) -> i64 {
    let m = i.rem_euclid(2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn fetch(image: &Image, x: i64, y: i64, border: Border) -> Option<[u8; 3]> {
    let (w, h) = (i64::from(image.width), i64::from(image.height));
    let (x, y) = match border {
        Border::Black => {
            if x < 0 || y < 0 || x >= w || y >= h {
                return None;
            }
            (x, y)
        }
        Border::Clamp => (x.clamp(0, w - 1), y.clamp(0, h - 1)),
        Border::Reflect => (reflect_index(x, w), reflect_index(y, h)),
    };
    Some(image.pixel(x as u32, y as u32))
}

fn sample_bilinear(image: &Image, sx: f64, sy: f64, border: Border) -> [f64; 3] {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = [0.0; 3];
    for (dx, dy, w) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if w == 0.0 {
            continue;
        }
        if let Some(p) = fetch(image, x0 + dx, y0 + dy, border) {
            for c in 0..3 {
                out[c] += w * f64::from(p[c]);
            }
        }
    }
    out
}

/// Inverse-maps every output pixel index to a source position and samples it.
fn warp(
    image: &Image,
    out_w: u32,
    out_h: u32,
    border: Border,
    source: impl Fn(f64, f64) -> (f64, f64),
) -> Image {
    Image::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = source(f64::from(x), f64::from(y));
        sample_bilinear(image, sx, sy, border).map(to_u8)
    })
}

fn resize_longest_side(image: &Image, target: u32) -> Image {
    let target = target.max(1);
    let (w, h) = (image.width, image.height);
    let longest = w.max(h);
    let scale = f64::from(target) / f64::from(longest);
    let scaled = |side: u32| {
        if side == longest {
            target
        } else {
            ((f64::from(side) * scale).round() as u32).clamp(1, target)
        }
    };
    let (nw, nh) = (scaled(w), scaled(h));
    let sx = f64::from(w) / f64::from(nw);
    let sy = f64::from(h) / f64::from(nh);
    warp(image, nw, nh, Border::Clamp, |x, y| {
        ((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5)
    })
}

/// Counter-clockwise rotation about the image centre on the original canvas;
/// uncovered corners are black.
fn rotate(image: &Image, degrees: f64) -> Image {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = f64::from(image.width - 1) / 2.0;
    let cy = f64::from(image.height - 1) / 2.0;
    warp(image, image.width, image.height, Border::Black, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    })
}

fn per_channel_lut(image: &Image, luts: &[[u8; 256]; 3]) -> Image {
    let pixels = image
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| luts[i % 3][p as usize])
        .collect();
    Image {
        width: image.width,
        height: image.height,
        pixels,
    }
}

fn channel_histograms(image: &Image) -> [[u64; 256]; 3] {
    let mut hist = [[0u64; 256]; 3];
    for (i, &p) in image.pixels.iter().enumerate() {
        hist[i % 3][p as usize] += 1;
    }
    hist
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

fn autocontrast(image: &Image) -> Image {
    let hist = channel_histograms(image);
    let luts = hist.map(|h| {
        let lo = h.iter().position(|&n| n > 0).unwrap_or(0);
        let hi = h.iter().rposition(|&n| n > 0).unwrap_or(255);
        if hi <= lo {
            return identity_lut();
        }
        let scale = 255.0 / (hi - lo) as f64;
        std::array::from_fn(|i| to_u8((i as f64 - lo as f64) * scale))
    });
    per_channel_lut(image, &luts)
}

/// Histogram equalization with the step rule of the common imaging libraries.
fn equalize(image: &Image) -> Image {
    let hist = channel_histograms(image);
    let luts = hist.map(|h| {
        let nonzero: Vec<u64> = h.iter().copied().filter(|&n| n > 0).collect();
        if nonzero.len() <= 1 {
            return identity_lut();
        }
        let total: u64 = nonzero.iter().sum();
        let step = (total - nonzero[nonzero.len() - 1]) / 255;
        if step == 0 {
            return identity_lut();
        }
        let mut n = step / 2;
        let mut lut = [0u8; 256];
        for (i, slot) in lut.iter_mut().enumerate() {
            *slot = (n / step).min(255) as u8;
            n += h[i];
        }
        lut
    });
    per_channel_lut(image, &luts)
}

/// Inverts every sample strictly above `threshold`.
fn solarize(image: &Image, threshold: f64) -> Image {
    map_bytes(image, |p| if f64::from(p) > threshold { 255 - p } else { p })
}

fn posterize(image: &Image, bits: u32) -> Image {
    let mask = !((1u16 << (8 - bits)) - 1) as u8;
    map_bytes(image, |p| p & mask)
}

/// `degenerate + factor * (image - degenerate)`, per sample.
fn blend(image: &Image, degenerate: &[f64], factor: f64) -> Image {
    let pixels = image
        .pixels
        .iter()
        .zip(degenerate)
        .map(|(&p, &d)| to_u8(d + factor * (f64::from(p) - d)))
        .collect();
    Image {
        width: image.width,
        height: image.height,
        pixels,
    }
}

fn contrast(image: &Image, factor: f64) -> Image {
    let luma = image.luma();
    let mean = luma.iter().map(|&l| f64::from(l)).sum::<f64>() / luma.len() as f64;
    let gray = (mean + 0.5).floor();
    blend(image, &vec![gray; image.pixels.len()], factor)
}

fn color(image: &Image, factor: f64) -> Image {
    let degenerate: Vec<f64> = image
        .luma()
        .into_iter()
        .flat_map(|l| [f64::from(l); 3])
        .collect();
    blend(image, &degenerate, factor)
}

fn brightness(image: &Image, factor: f64) -> Image {
    blend(image, &vec![0.0; image.pixels.len()], factor)
}

/// Blend against a 3x3 Gaussian-smoothed copy; border pixels of the smoothed
/// copy are left as in the original.
fn sharpness(image: &Image, factor: f64) -> Image {
    let (w, h) = (image.width as usize, image.height as usize);
    let mut degenerate: Vec<f64> = image.pixels.iter().map(|&p| f64::from(p)).collect();
    const KERNEL: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ky, row) in KERNEL.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        let i = ((y + ky - 1) * w + (x + kx - 1)) * 3 + c;
                        acc += k * f64::from(image.pixels[i]);
                    }
                }
                degenerate[(y * w + x) * 3 + c] = (acc / 16.0).round();
            }
        }
    }
    blend(image, &degenerate, factor)
}

fn hflip(image: &Image) -> Image {
    let w = image.width;
    Image::from_fn(w, image.height, |x, y| image.pixel(w - 1 - x, y))
}

/// Laplacian edge response per channel (edge-replicated border), clamped to
/// the byte range and inverted so flat regions come out white.
fn contour(image: &Image) -> Image {
    let (w, h) = (i64::from(image.width), i64::from(image.height));
    Image::from_fn(image.width, image.height, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        let centre = image.pixel(x as u32, y as u32);
        let mut out = [0u8; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut edge = 8.0 * f64::from(centre[c]);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = (x + dx).clamp(0, w - 1) as u32;
                    let ny = (y + dy).clamp(0, h - 1) as u32;
                    edge -= f64::from(image.pixel(nx, ny)[c]);
                }
            }
            *slot = 255 - to_u8(edge);
        }
        out
    })
}
