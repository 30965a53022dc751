//! Desk-scale labeled image generator.
//!
//! Each class has a prototype made of a few colored Gaussian blobs over a
//! tinted background, with hues spread evenly around the color wheel. Images
//! are the prototype pulled toward mid-gray by `class_separation` plus
//! per-pixel Gaussian noise, so crops and color jitter keep the class readable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, EvalLabels};
use crate::aug::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    /// `(height, width)`.
    pub image_size: (usize, usize),
    /// Contrast of the class prototype against mid-gray.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 64,
            image_size: (32, 32),
            class_separation: 1.0,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.num_classes < 2 {
            return bad("synthetic num_classes must be at least 2");
        }
        if self.per_class < 8 {
            return bad("synthetic per_class must be at least 8");
        }
        if self.image_size.0 < 2 || self.image_size.1 < 2 {
            return bad("synthetic image_size must be at least 2x2");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
}

struct Prototype {
    color: [f64; 3],
    background: [f64; 3],
    blobs: Vec<Blob>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    crate::aug::hsv_to_rgb([h as f32, s as f32, v as f32]).map(f64::from)
}

fn prototype(class: usize, num_classes: usize, seed: u64) -> Prototype {
    let hue = class as f64 / num_classes as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(class as u64 + 1)));
    let blobs = (0..3)
        .map(|_| Blob {
            cx: rng.random_range(0.2..0.8),
            cy: rng.random_range(0.2..0.8),
            sigma: rng.random_range(0.15..0.25),
        })
        .collect();
    Prototype {
        color: hsv(hue, 0.9, 0.95),
        // alternate dark and light backgrounds so classes also differ in luma
        background: hsv(hue + 0.5 / num_classes as f64, 0.5, if class % 2 == 0 { 0.3 } else { 0.7 }),
        blobs,
    }
}

impl Prototype {
    fn render(&self, w: usize, h: usize, separation: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let fx = (x as f64 + 0.5) / w as f64;
                let fy = (y as f64 + 0.5) / h as f64;
                let field = self
                    .blobs
                    .iter()
                    .map(|b| (-((fx - b.cx).powi(2) + (fy - b.cy).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
                    .fold(0.0, f64::max);
                for c in 0..3 {
                    let v = field * self.color[c] + (1.0 - field) * self.background[c];
                    out.push(0.5 + separation * (v - 0.5));
                }
            }
        }
        out
    }
}

/// Generates `per_class * num_classes` images, class-major, with labels.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(spec.num_classes * spec.per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for class in 0..spec.num_classes {
        let proto = prototype(class, spec.num_classes, spec.seed).render(w, h, spec.class_separation);
        for _ in 0..spec.per_class {
            let data = proto
                .iter()
                .map(|&v| {
                    let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0) as f32
                })
                .collect();
            images.push(Image::new(w, h, data).expect("clamped synthetic pixels"));
            labels.push(class);
        }
    }
    let class_names = (0..spec.num_classes).map(|k| format!("class_{k}")).collect();
    Dataset::new(images, Some(EvalLabels::new(labels)), spec.num_classes, class_names)
}
