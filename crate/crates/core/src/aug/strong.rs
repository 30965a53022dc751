//! Strong augmentation: a RandAugment-style family of fourteen image operations.
//!
//! Each op receives a signed level in `[-1, 1]`. Its absolute value is the
//! normalized magnitude; the sign picks the direction for geometric ops and
//! for the enhancement factors. Level 0 is the identity for every op except
//! `AutoContrast` and `Equalize`, which take no magnitude.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{clamp01, luma, to_u8, Image};
use super::weak::{mean_luma, uniform};
use super::AugError;

/// Mid-gray used for regions exposed by geometric ops.
pub const FILL_VALUE: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrongOp {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

impl StrongOp {
    pub const ALL: [StrongOp; 14] = [
        StrongOp::AutoContrast,
        StrongOp::Brightness,
        StrongOp::Color,
        StrongOp::Contrast,
        StrongOp::Equalize,
        StrongOp::Identity,
        StrongOp::Posterize,
        StrongOp::Rotate,
        StrongOp::Sharpness,
        StrongOp::ShearX,
        StrongOp::ShearY,
        StrongOp::Solarize,
        StrongOp::TranslateX,
        StrongOp::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrongOp::AutoContrast => "AutoContrast",
            StrongOp::Brightness => "Brightness",
            StrongOp::Color => "Color",
            StrongOp::Contrast => "Contrast",
            StrongOp::Equalize => "Equalize",
            StrongOp::Identity => "Identity",
            StrongOp::Posterize => "Posterize",
            StrongOp::Rotate => "Rotate",
            StrongOp::Sharpness => "Sharpness",
            StrongOp::ShearX => "ShearX",
            StrongOp::ShearY => "ShearY",
            StrongOp::Solarize => "Solarize",
            StrongOp::TranslateX => "TranslateX",
            StrongOp::TranslateY => "TranslateY",
        }
    }

    /// Applies the op at a signed normalized level in `[-1, 1]`.
    pub fn apply(self, img: &Image, level: f64, ranges: &OpRanges) -> Image {
        let level = level.clamp(-1.0, 1.0);
        let m = level.abs();
        match self {
            StrongOp::Identity => img.clone(),
            StrongOp::AutoContrast => autocontrast(img),
            StrongOp::Equalize => equalize(img),
            StrongOp::Brightness => {
                let f = enhance_factor(level, ranges) as f32;
                img.map(|v| v * f)
            }
            StrongOp::Color => {
                let f = enhance_factor(level, ranges) as f32;
                img.map_pixels(|p| {
                    let l = luma(p);
                    p.map(|v| blend(l, v, f))
                })
            }
            StrongOp::Contrast => {
                let f = enhance_factor(level, ranges) as f32;
                let mean = mean_luma(img);
                img.map(|v| blend(mean, v, f))
            }
            StrongOp::Sharpness => sharpness(img, enhance_factor(level, ranges) as f32),
            StrongOp::Posterize => {
                let bits = (8.0 - (8.0 - ranges.posterize_min_bits as f64) * m).round() as u32;
                posterize(img, bits)
            }
            StrongOp::Solarize => {
                if m <= 0.0 {
                    img.clone()
                } else {
                    let threshold = (1.0 - m) as f32;
                    img.map(|v| if v >= threshold { 1.0 - v } else { v })
                }
            }
            StrongOp::Rotate => rotate(img, level * ranges.max_rotate_deg, FILL_VALUE),
            StrongOp::ShearX => shear(img, level * ranges.max_shear, true),
            StrongOp::ShearY => shear(img, level * ranges.max_shear, false),
            StrongOp::TranslateX => {
                let dx = level * ranges.max_translate * img.width() as f64;
                img.warp_affine([1.0, 0.0, -dx, 0.0, 1.0, 0.0], FILL_VALUE)
            }
            StrongOp::TranslateY => {
                let dy = level * ranges.max_translate * img.height() as f64;
                img.warp_affine([1.0, 0.0, 0.0, 0.0, 1.0, -dy], FILL_VALUE)
            }
        }
    }
}

impl fmt::Display for StrongOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrongOp {
    type Err = AugError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrongOp::ALL
            .into_iter()
            .find(|op| op.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AugError::UnknownOp(s.to_string()))
    }
}

impl TryFrom<String> for StrongOp {
    type Error = AugError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StrongOp> for String {
    fn from(op: StrongOp) -> Self {
        op.name().to_string()
    }
}

/// Physical extent of each op at normalized magnitude 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpRanges {
    pub max_rotate_deg: f64,
    /// Shear coefficient (horizontal offset per row).
    pub max_shear: f64,
    /// Translation as a fraction of the image side.
    pub max_translate: f64,
    /// Deviation of the enhancement factor from 1 (factor in `1 ± max`).
    pub max_enhance: f64,
    /// Fewest bits kept by posterize.
    pub posterize_min_bits: u32,
}

impl Default for OpRanges {
    fn default() -> Self {
        Self {
            max_rotate_deg: 30.0,
            max_shear: 0.3,
            max_translate: 0.3,
            max_enhance: 0.9,
            posterize_min_bits: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrongAugSpec {
    /// Ops to sample from, uniformly and with replacement.
    pub op_family: Vec<StrongOp>,
    pub num_ops: usize,
    /// Normalized magnitude range, a sub-interval of `[0, 1]`.
    pub magnitude_range: (f64, f64),
    pub ranges: OpRanges,
}

impl Default for StrongAugSpec {
    fn default() -> Self {
        Self {
            op_family: StrongOp::ALL.to_vec(),
            num_ops: 5,
            magnitude_range: (0.0, 1.0),
            ranges: OpRanges::default(),
        }
    }
}

impl StrongAugSpec {
    /// Restricts sampling to one op, keeping the other defaults.
    pub fn only(op: StrongOp) -> Self {
        Self {
            op_family: vec![op],
            ..Self::default()
        }
    }

    /// Parses op names, rejecting unknown identifiers.
    pub fn with_op_names<S: AsRef<str>>(names: &[S]) -> Result<Self, AugError> {
        let op_family = names.iter().map(|n| n.as_ref().parse()).collect::<Result<Vec<_>, _>>()?;
        let spec = Self {
            op_family,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AugError> {
        if self.op_family.is_empty() {
            return Err(AugError::InvalidSpec("op_family must not be empty".into()));
        }
        for (i, op) in self.op_family.iter().enumerate() {
            if self.op_family[..i].contains(op) {
                return Err(AugError::InvalidSpec(format!("op {op} listed twice")));
            }
        }
        if self.num_ops == 0 {
            return Err(AugError::InvalidSpec("num_ops must be at least 1".into()));
        }
        let (lo, hi) = self.magnitude_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(AugError::InvalidSpec(format!(
                "magnitude_range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        let r = &self.ranges;
        if !(1..=8).contains(&r.posterize_min_bits) {
            return Err(AugError::InvalidSpec("posterize_min_bits must lie in 1..=8".into()));
        }
        if !(0.0..1.0).contains(&r.max_enhance) {
            return Err(AugError::InvalidSpec("max_enhance must lie in [0, 1)".into()));
        }
        if [r.max_rotate_deg, r.max_shear, r.max_translate].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AugError::InvalidSpec("geometric ranges must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Applies `num_ops` ops drawn uniformly with replacement from the family.
pub fn apply_strong<R: Rng + ?Sized>(img: &Image, spec: &StrongAugSpec, rng: &mut R) -> Result<Image, AugError> {
    spec.validate()?;
    let (lo, hi) = spec.magnitude_range;
    let mut out = img.clone();
    for _ in 0..spec.num_ops {
        let op = spec.op_family[rng.random_range(0..spec.op_family.len())];
        let magnitude = uniform(rng, lo, hi);
        let level = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        out = op.apply(&out, level, &spec.ranges);
    }
    Ok(out)
}

/// `(1 - f) * base + f * v`, exact at `f = 1`.
fn blend(base: f32, v: f32, f: f32) -> f32 {
    (1.0 - f) * base + f * v
}

fn enhance_factor(level: f64, ranges: &OpRanges) -> f64 {
    1.0 + level * ranges.max_enhance
}

fn autocontrast(img: &Image) -> Image {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in img.as_slice().chunks_exact(3) {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    img.map_pixels(|p| {
        let mut out = p;
        for c in 0..3 {
            if hi[c] > lo[c] {
                out[c] = (p[c] - lo[c]) / (hi[c] - lo[c]);
            }
        }
        out
    })
}

/// Per-channel histogram equalization on 8-bit levels, following the
/// PIL lookup-table construction.
fn equalize(img: &Image) -> Image {
    let mut luts = [[0u8; 256]; 3];
    for (c, lut) in luts.iter_mut().enumerate() {
        let mut hist = [0usize; 256];
        for p in img.as_slice().chunks_exact(3) {
            hist[to_u8(p[c]) as usize] += 1;
        }
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&h| h > 0).collect();
        let step = if nonzero.len() <= 1 {
            0
        } else {
            (nonzero.iter().sum::<usize>() - nonzero[nonzero.len() - 1]) / 255
        };
        if step == 0 {
            for (i, v) in lut.iter_mut().enumerate() {
                *v = i as u8;
            }
            continue;
        }
        let mut n = step / 2;
        for (i, v) in lut.iter_mut().enumerate() {
            *v = (n / step).min(255) as u8;
            n += hist[i];
        }
    }
    let data = img
        .as_slice()
        .chunks_exact(3)
        .flat_map(|p| {
            let mut out = [0.0f32; 3];
            for c in 0..3 {
                out[c] = luts[c][to_u8(p[c]) as usize] as f32 / 255.0;
            }
            out
        })
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

fn posterize(img: &Image, bits: u32) -> Image {
    if bits >= 8 {
        return img.clone();
    }
    let mask = 0xFFu8 << (8 - bits);
    img.map(|v| (to_u8(v) & mask) as f32 / 255.0)
}

/// Blends with a 3x3 smoothed copy; the one-pixel border is left untouched.
fn sharpness(img: &Image, factor: f32) -> Image {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return img.clone();
    }
    const KERNEL: [[f32; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]];
    let mut data = img.as_slice().to_vec();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ky, row) in KERNEL.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        acc += k * img.get(x + kx - 1, y + ky - 1, c);
                    }
                }
                let smooth = acc / 13.0;
                let orig = img.get(x, y, c);
                data[(y * w + x) * 3 + c] = clamp01(smooth + factor * (orig - smooth));
            }
        }
    }
    Image::from_raw(w, h, data)
}

/// Counter-clockwise rotation about the image center.
pub fn rotate(img: &Image, degrees: f64, fill: f32) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    // src = c + R(-theta) (dst - c) in y-down coordinates
    let inverse = [
        cos,
        -sin,
        cx - cos * cx + sin * cy,
        sin,
        cos,
        cy - sin * cx - cos * cy,
    ];
    img.warp_affine(inverse, fill)
}

fn shear(img: &Image, amount: f64, horizontal: bool) -> Image {
    if amount == 0.0 {
        return img.clone();
    }
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let inverse = if horizontal {
        [1.0, amount, -amount * cy, 0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0, amount, 1.0, -amount * cx]
    };
    img.warp_affine(inverse, FILL_VALUE)
}
