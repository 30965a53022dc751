//! Weak and strong augmentation pipelines and the three-view sampler.
//!
//! Everything here is pure given an explicit random source, so workers can
//! sample views concurrently as long as each owns its own generator.

mod image;
mod strong;
mod weak;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::image::{hsv_to_rgb, rgb_to_hsv, Image, CHANNELS};
pub use self::strong::{apply_strong, rotate, OpRanges, StrongAugSpec, StrongOp, FILL_VALUE};
pub use self::weak::{apply_weak, JitterStrengths, WeakAugSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("pixel value {0} is outside [0, 1]")]
    PixelOutOfRange(f32),
    #[error("image is {width}x{height}; at least 2x2 is required for cropping")]
    TooSmall { width: usize, height: usize },
    #[error("unknown strong augmentation op `{0}`")]
    UnknownOp(String),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
}

/// One strongly and two weakly augmented views of the same image.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTriple {
    /// View 1.
    pub strong: Image,
    /// View 2.
    pub weak_a: Image,
    /// View 3.
    pub weak_b: Image,
}

/// Which augmented views a training run consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Views 2 and 3.
    WeakWeak,
    /// Views 1 and 2.
    WeakStrong,
    /// All three views.
    #[default]
    WeakWeakStrong,
}

impl ViewMode {
    pub fn uses_strong(self) -> bool {
        !matches!(self, ViewMode::WeakWeak)
    }

    pub fn uses_second_weak(self) -> bool {
        !matches!(self, ViewMode::WeakStrong)
    }
}

/// Views of one image; absent entries were not requested by the [`ViewMode`].
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub strong: Option<Image>,
    pub weak_a: Image,
    pub weak_b: Option<Image>,
}

/// Samples the strong view and both weak views of `img`.
///
/// The strong view is the resized image passed through [`apply_strong`]; the
/// weak views are two independent runs of [`apply_weak`]. Output side length
/// is `weak.output_size`.
pub fn sample_views<R: Rng + ?Sized>(
    img: &Image,
    weak: &WeakAugSpec,
    strong: &StrongAugSpec,
    rng: &mut R,
) -> Result<ViewTriple, AugError> {
    let set = sample_view_set(img, weak, strong, ViewMode::WeakWeakStrong, rng)?;
    Ok(ViewTriple {
        strong: set.strong.expect("strong view requested"),
        weak_a: set.weak_a,
        weak_b: set.weak_b.expect("second weak view requested"),
    })
}

/// Like [`sample_views`] but only produces the views `mode` needs. Each view
/// draws from its own child generator, so the views that are produced do not
/// depend on which others were skipped.
pub fn sample_view_set<R: Rng + ?Sized>(
    img: &Image,
    weak: &WeakAugSpec,
    strong: &StrongAugSpec,
    mode: ViewMode,
    rng: &mut R,
) -> Result<ViewSet, AugError> {
    weak.validate()?;
    strong.validate()?;
    let seeds: [u64; 3] = [rng.next_u64(), rng.next_u64(), rng.next_u64()];
    let strong_view = if mode.uses_strong() {
        let resized = img.resize(weak.output_size, weak.output_size);
        Some(apply_strong(&resized, strong, &mut ChaCha8Rng::seed_from_u64(seeds[0]))?)
    } else {
        None
    };
    let weak_a = apply_weak(img, weak, &mut ChaCha8Rng::seed_from_u64(seeds[1]))?;
    let weak_b = if mode.uses_second_weak() {
        Some(apply_weak(img, weak, &mut ChaCha8Rng::seed_from_u64(seeds[2]))?)
    } else {
        None
    };
    Ok(ViewSet {
        strong: strong_view,
        weak_a,
        weak_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn natural(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let fx = x as f32 / w as f32;
            let fy = y as f32 / h as f32;
            [fx, (fx * fy * 6.0).sin() * 0.5 + 0.5, 1.0 - fy]
        })
    }

    #[test]
    fn stochasticity_off_gives_three_resized_copies() {
        let img = natural(40, 30);
        let triple = sample_views(
            &img,
            &WeakAugSpec::identity(224),
            &StrongAugSpec::only(StrongOp::Identity),
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        let resized = img.resize(224, 224);
        assert_eq!(triple.strong, resized);
        assert_eq!(triple.weak_a, resized);
        assert_eq!(triple.weak_b, resized);
    }

    #[test]
    fn fixed_seed_reproduces_triple() {
        let img = natural(32, 32);
        let run = |seed| {
            sample_views(
                &img,
                &WeakAugSpec::default(),
                &StrongAugSpec::default(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn weak_views_differ() {
        let img = natural(48, 48);
        let weak = WeakAugSpec {
            output_size: 32,
            ..WeakAugSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let collisions = (0..100)
            .filter(|_| {
                let t = sample_views(&img, &weak, &StrongAugSpec::default(), &mut rng).unwrap();
                t.weak_a == t.weak_b
            })
            .count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn weak_weak_mode_skips_strong_view() {
        let img = natural(16, 16);
        let set = sample_view_set(
            &img,
            &WeakAugSpec::default(),
            &StrongAugSpec::default(),
            ViewMode::WeakWeak,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(set.strong.is_none());
        assert!(set.weak_b.is_some());
    }

    #[test]
    fn partial_view_sets_match_full_triple() {
        let img = natural(20, 20);
        let (weak, strong) = (WeakAugSpec::default(), StrongAugSpec::default());
        let full = sample_views(&img, &weak, &strong, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ws = sample_view_set(&img, &weak, &strong, ViewMode::WeakStrong, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(ws.strong.unwrap(), full.strong);
        assert_eq!(ws.weak_a, full.weak_a);
        assert!(ws.weak_b.is_none());
    }
}
