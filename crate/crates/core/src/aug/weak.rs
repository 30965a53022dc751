//! Weak augmentation: random resized crop, horizontal flip, color jitter and
//! random grayscale, composed in that order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{hsv_to_rgb, luma, rgb_to_hsv, Image};
use super::AugError;

/// Parameters of the weak pipeline. Each sub-transform fires independently
/// with its own probability; the crop always runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakAugSpec {
    /// Side length of the square output.
    pub output_size: usize,
    /// Area fraction range of the random crop.
    pub crop_scale_range: (f64, f64),
    /// Aspect-ratio range of the random crop.
    pub crop_ratio_range: (f64, f64),
    pub hflip_prob: f64,
    /// Brightness, contrast, saturation and hue magnitudes.
    pub jitter_strengths: JitterStrengths,
    pub jitter_prob: f64,
    pub grayscale_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterStrengths {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

impl Default for WeakAugSpec {
    fn default() -> Self {
        Self {
            output_size: 224,
            crop_scale_range: (0.2, 1.0),
            crop_ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter_strengths: JitterStrengths::default(),
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
        }
    }
}

impl WeakAugSpec {
    /// A spec whose only effect is resizing to `output_size`.
    pub fn identity(output_size: usize) -> Self {
        Self {
            output_size,
            crop_scale_range: (1.0, 1.0),
            hflip_prob: 0.0,
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugError> {
        let bad = |msg: String| Err(AugError::InvalidSpec(msg));
        if self.output_size == 0 {
            return bad("output_size must be positive".into());
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop_scale_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"));
        }
        let (rlo, rhi) = self.crop_ratio_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return bad(format!("crop_ratio_range must satisfy 0 < lo <= hi, got ({rlo}, {rhi})"));
        }
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let j = self.jitter_strengths;
        if [j.brightness, j.contrast, j.saturation].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("jitter strengths must be finite and non-negative".into());
        }
        if !(0.0..=0.5).contains(&j.hue) {
            return bad(format!("hue jitter must lie in [0, 0.5], got {}", j.hue));
        }
        Ok(())
    }
}

/// Runs the weak pipeline once, drawing every random choice from `rng`.
pub fn apply_weak<R: Rng + ?Sized>(img: &Image, spec: &WeakAugSpec, rng: &mut R) -> Result<Image, AugError> {
    spec.validate()?;
    if img.width() < 2 || img.height() < 2 {
        return Err(AugError::TooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let mut out = random_resized_crop(img, spec, rng);
    if rng.random_bool(spec.hflip_prob) {
        out = out.flip_horizontal();
    }
    if rng.random_bool(spec.jitter_prob) {
        out = color_jitter(&out, &spec.jitter_strengths, rng);
    }
    if rng.random_bool(spec.grayscale_prob) {
        out = out.grayscale();
    }
    Ok(out)
}

/// Crop box `(left, top, width, height)` in whole pixels. Ten attempts at a
/// random box, then a centered box clipped to the ratio range.
fn crop_box<R: Rng + ?Sized>(w: usize, h: usize, spec: &WeakAugSpec, rng: &mut R) -> (usize, usize, usize, usize) {
    let area = (w * h) as f64;
    let (slo, shi) = spec.crop_scale_range;
    let (rlo, rhi) = spec.crop_ratio_range;
    let (log_lo, log_hi) = (rlo.ln(), rhi.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, slo, shi);
        let ratio = uniform(rng, log_lo, log_hi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let left = rng.random_range(0..=w - cw);
            let top = rng.random_range(0..=h - ch);
            return (left, top, cw, ch);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (cw, ch) = if in_ratio < rlo {
        (w, ((w as f64 / rlo).round() as usize).clamp(1, h))
    } else if in_ratio > rhi {
        (((h as f64 * rhi).round() as usize).clamp(1, w), h)
    } else {
        (w, h)
    };
    ((w - cw) / 2, (h - ch) / 2, cw, ch)
}

fn random_resized_crop<R: Rng + ?Sized>(img: &Image, spec: &WeakAugSpec, rng: &mut R) -> Image {
    let (left, top, cw, ch) = crop_box(img.width(), img.height(), spec, rng);
    let size = spec.output_size;
    if (left, top, cw, ch) == (0, 0, img.width(), img.height()) {
        return img.resize(size, size);
    }
    img.resample_region(left as f64, top as f64, cw as f64, ch as f64, size, size)
}

#[derive(Clone, Copy)]
enum Jitter {
    Brightness(f32),
    Contrast(f32),
    Saturation(f32),
    Hue(f32),
}

/// Samples one factor per enabled component and applies them in a random order.
fn color_jitter<R: Rng + ?Sized>(img: &Image, s: &JitterStrengths, rng: &mut R) -> Image {
    let mut ops = Vec::with_capacity(4);
    if s.brightness > 0.0 {
        ops.push(Jitter::Brightness(uniform(rng, (1.0 - s.brightness).max(0.0), 1.0 + s.brightness) as f32));
    }
    if s.contrast > 0.0 {
        ops.push(Jitter::Contrast(uniform(rng, (1.0 - s.contrast).max(0.0), 1.0 + s.contrast) as f32));
    }
    if s.saturation > 0.0 {
        ops.push(Jitter::Saturation(uniform(rng, (1.0 - s.saturation).max(0.0), 1.0 + s.saturation) as f32));
    }
    if s.hue > 0.0 {
        ops.push(Jitter::Hue(uniform(rng, -s.hue, s.hue) as f32));
    }
    ops.shuffle(rng);
    let mut out = img.clone();
    for op in ops {
        out = match op {
            Jitter::Brightness(f) => out.map(|v| v * f),
            Jitter::Contrast(f) => {
                let mean = mean_luma(&out);
                out.map(|v| mean + f * (v - mean))
            }
            Jitter::Saturation(f) => out.map_pixels(|p| {
                let l = luma(p);
                p.map(|v| l + f * (v - l))
            }),
            Jitter::Hue(shift) => out.map_pixels(|p| {
                let [h, s, v] = rgb_to_hsv(p);
                hsv_to_rgb([h + shift, s, v])
            }),
        };
    }
    out
}

pub(crate) fn mean_luma(img: &Image) -> f32 {
    let n = (img.width() * img.height()) as f64;
    let total: f64 = img
        .as_slice()
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]) as f64)
        .sum();
    (total / n) as f32
}

/// Uniform draw on `[lo, hi]` that tolerates `lo == hi`.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn asymmetric(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            [x as f32 / w as f32, y as f32 / h as f32, ((x * 7 + y * 3) % 5) as f32 / 5.0]
        })
    }

    #[test]
    fn forced_flip_mirrors_exactly() {
        let img = asymmetric(4, 4);
        let spec = WeakAugSpec {
            hflip_prob: 1.0,
            ..WeakAugSpec::identity(4)
        };
        let out = apply_weak(&img, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out, img.flip_horizontal());
    }

    #[test]
    fn identity_spec_is_a_no_op_at_full_size() {
        let img = asymmetric(224, 224);
        let out = apply_weak(&img, &WeakAugSpec::identity(224), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let img = asymmetric(8, 8);
        let spec = WeakAugSpec::default();
        let a = apply_weak(&img, &spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = apply_weak(&img, &spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let bits = |i: &Image| i.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!((a.width(), a.height()), (224, 224));
    }

    #[test]
    fn rejects_tiny_images() {
        let img = Image::filled(1, 5, [0.5; 3]);
        let err = apply_weak(&img, &WeakAugSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, AugError::TooSmall { .. }));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = WeakAugSpec::default();
        spec.crop_scale_range = (0.0, 1.0);
        assert!(spec.validate().is_err());
        spec = WeakAugSpec::default();
        spec.crop_scale_range = (0.8, 0.5);
        assert!(spec.validate().is_err());
        spec = WeakAugSpec::default();
        spec.grayscale_prob = 1.2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn forced_grayscale_has_equal_channels() {
        let img = asymmetric(16, 16);
        let spec = WeakAugSpec {
            grayscale_prob: 1.0,
            ..WeakAugSpec::identity(16)
        };
        let out = apply_weak(&img, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for p in out.as_slice().chunks(3) {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn crop_box_stays_inside() {
        let spec = WeakAugSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let (l, t, w, h) = crop_box(37, 23, &spec, &mut rng);
            assert!(w >= 1 && h >= 1 && l + w <= 37 && t + h <= 23);
        }
    }
}
