//! RGB float image plus the resampling primitives shared by the augmentations.

use super::AugError;

/// Number of channels every [`Image`] carries. Grayscale inputs are promoted.
pub const CHANNELS: usize = 3;

/// Row-major, interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from interleaved RGB data, checking the size and that
    /// every value is finite and inside `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, AugError> {
        if width == 0 || height == 0 {
            return Err(AugError::EmptyImage);
        }
        if data.len() != width * height * CHANNELS {
            return Err(AugError::BufferSize {
                expected: width * height * CHANNELS,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(AugError::PixelOutOfRange(*bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Single-channel data promoted to three identical channels.
    pub fn from_gray(width: usize, height: usize, gray: &[f32]) -> Result<Self, AugError> {
        let data = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::from_raw(width, height, data)
    }

    /// Builds an image by evaluating `f(x, y)` per pixel. Values are clamped.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp01));
            }
        }
        Self::from_raw(width, height, data)
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, AugError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Trusted constructor for buffers produced by this module (already clamped).
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * CHANNELS);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every channel value and clamps the result.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        let data = self.data.iter().map(|&v| clamp01(f(v))).collect();
        Self::from_raw(self.width, self.height, data)
    }

    /// Applies `f` to every RGB pixel and clamps the result.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(CHANNELS) {
            data.extend(f([px[0], px[1], px[2]]).map(clamp01));
        }
        Self::from_raw(self.width, self.height, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend(self.pixel(x, y));
            }
        }
        Self::from_raw(self.width, self.height, data)
    }

    /// ITU-R 601 luma replicated over the three channels.
    pub fn grayscale(&self) -> Self {
        self.map_pixels(|p| {
            let l = luma(p);
            [l, l, l]
        })
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "image sizes differ");
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        total / self.data.len() as f64
    }

    /// 8-bit RGBA buffer, e.g. for a browser canvas or a PNG encoder.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.data
            .chunks_exact(CHANNELS)
            .flat_map(|p| [to_u8(p[0]), to_u8(p[1]), to_u8(p[2]), 255])
            .collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    /// Bilinear resize with half-pixel centers. Same-size resizes are exact copies.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        self.resample_region(0.0, 0.0, self.width as f64, self.height as f64, width, height)
    }

    /// Resamples the axis-aligned region `[left, left + w) x [top, top + h)`
    /// (in pixel-edge coordinates) onto an `out_w x out_h` grid.
    pub(crate) fn resample_region(
        &self,
        left: f64,
        top: f64,
        w: f64,
        h: f64,
        out_w: usize,
        out_h: usize,
    ) -> Self {
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let mut data = Vec::with_capacity(out_w * out_h * CHANNELS);
        for oy in 0..out_h {
            let fy = top + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let fx = left + (ox as f64 + 0.5) * sx - 0.5;
                data.extend(self.sample_clamped(fx, fy));
            }
        }
        Self::from_raw(out_w, out_h, data)
    }

    /// Bilinear sample with edge replication.
    fn sample_clamped(&self, fx: f64, fy: f64) -> [f32; 3] {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
            let bottom = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
            *o = clamp01(top * (1.0 - ay) + bottom * ay);
        }
        out
    }

    /// Inverse-mapped affine warp. `inverse` maps an output pixel center
    /// `(x, y)` to source coordinates `(a*x + b*y + c, d*x + e*y + f)`.
    /// Source samples that fall outside the image take the `fill` value.
    pub(crate) fn warp_affine(&self, inverse: [f64; 6], fill: f32) -> Self {
        let [a, b, c, d, e, f] = inverse;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = snap(a * x as f64 + b * y as f64 + c);
                let sy = snap(d * x as f64 + e * y as f64 + f);
                data.extend(self.sample_filled(sx, sy, fill));
            }
        }
        Self::from_raw(self.width, self.height, data)
    }

    fn sample_filled(&self, fx: f64, fy: f64, fill: f32) -> [f32; 3] {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = (fx - x0) as f32;
        let ay = (fy - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |x: i64, y: i64, c: usize| -> f32 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                fill
            } else {
                self.get(x as usize, y as usize, c)
            }
        };
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut v = at(x0, y0, c) * (1.0 - ax) * (1.0 - ay);
            if ax > 0.0 {
                v += at(x0 + 1, y0, c) * ax * (1.0 - ay);
            }
            if ay > 0.0 {
                v += at(x0, y0 + 1, c) * (1.0 - ax) * ay;
            }
            if ax > 0.0 && ay > 0.0 {
                v += at(x0 + 1, y0 + 1, c) * ax * ay;
            }
            *o = clamp01(v);
        }
        out
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

/// Rounds coordinates that are within float noise of an integer so that
/// exact rotations and translations stay exact permutations.
#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = (x + y * w) as f32 / (w * h) as f32;
            [v, 1.0 - v, 0.5]
        })
    }

    #[test]
    fn rejects_out_of_range_and_bad_sizes() {
        assert!(matches!(
            Image::new(1, 1, vec![0.0, 1.5, 0.0]),
            Err(AugError::PixelOutOfRange(_))
        ));
        assert!(matches!(
            Image::new(2, 1, vec![0.0; 3]),
            Err(AugError::BufferSize { .. })
        ));
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn same_size_resize_is_exact() {
        let img = ramp(7, 5);
        assert_eq!(img.resize(7, 5), img);
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let img = Image::filled(5, 9, [0.2, 0.4, 0.6]);
        let out = img.resize(13, 3);
        assert_eq!((out.width(), out.height()), (13, 3));
        for px in out.as_slice().chunks(3) {
            assert!((px[0] - 0.2).abs() < 1e-6);
            assert!((px[1] - 0.4).abs() < 1e-6);
            assert!((px[2] - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ramp(6, 4);
        assert_eq!(img.warp_affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 0.5), img);
    }

    #[test]
    fn warp_outside_takes_fill() {
        let img = ramp(4, 4);
        let out = img.warp_affine([1.0, 0.0, 100.0, 0.0, 1.0, 0.0], 0.5);
        assert!(out.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.1, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.0, 0.7, 0.2]] {
            let back = hsv_to_rgb(rgb_to_hsv(p));
            for c in 0..3 {
                assert!((back[c] - p[c]).abs() < 1e-5, "{p:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(5, 3);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 0), img.pixel(4, 0));
    }
}
