//! Real-valued frames, box-filter image pyramids and Gaussian-weighted patches.
//!
//! All sampling clamps to the image border, so every lookup on finite
//! coordinates is total.

use crate::error::{Error, Result};
use crate::point::Point;

/// A row-major, channel-interleaved raster of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidFrame(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!("non-finite sample at index {i}")));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a frame by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Frame::new(width, height, channels, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Frame::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Converts 8-bit interleaved samples once to reals.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Frame::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| f64::from(b)).collect(),
        )
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn pixel_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixel(x, y, c)
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Overwrites the axis-aligned block `[x0, x0+w) × [y0, y0+h)` (clipped to the frame).
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, value: f64) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                for c in 0..self.channels {
                    self.set_pixel(x, y, c, value);
                }
            }
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Bilinear sample of one channel; coordinates are clamped to the border.
    #[inline]
    pub fn sample_channel(&self, x: f64, y: f64, c: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.pixel(x0, y0, c) * (1.0 - fx) + self.pixel(x1, y0, c) * fx;
        let bottom = self.pixel(x0, y1, c) * (1.0 - fx) + self.pixel(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear sample of every channel at `p`, written into `out` (length = channels).
    pub fn sample_into(&self, p: Point, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.sample_channel(p.x, p.y, c);
        }
    }

    pub fn sample_bilinear(&self, p: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(p, &mut out);
        out
    }

    /// Halves the frame: each output pixel is the mean of a 2×2 block, with the
    /// last row/column replicated when the input dimension is odd.
    pub fn downsample(&self) -> Frame {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let (sy0, sy1) = (2 * y as isize, 2 * y as isize + 1);
            for x in 0..width {
                let (sx0, sx1) = (2 * x as isize, 2 * x as isize + 1);
                for c in 0..self.channels {
                    let sum = self.pixel_clamped(sx0, sy0, c)
                        + self.pixel_clamped(sx1, sy0, c)
                        + self.pixel_clamped(sx0, sy1, c)
                        + self.pixel_clamped(sx1, sy1, c);
                    data.push(sum * 0.25);
                }
            }
        }
        Frame {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    /// Returns the frame translated by `shift`: `out(p) = self(p - shift)`, bilinear, clamped.
    pub fn translated(&self, shift: Point) -> Frame {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = x as f64 - shift.x;
                let sy = y as f64 - shift.y;
                for c in 0..self.channels {
                    data.push(self.sample_channel(sx, sy, c));
                }
            }
        }
        Frame {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Level 0 is the original frame; level `L + 1` is level `L` downsampled.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<Frame>,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[Frame] {
        &self.levels
    }

    pub fn level(&self, level: usize) -> &Frame {
        &self.levels[level]
    }

    /// Index of the coarsest level (`L_m`).
    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn base(&self) -> &Frame {
        &self.levels[0]
    }

    pub fn total_pixels(&self) -> usize {
        self.levels.iter().map(Frame::pixel_count).sum()
    }
}

/// Builds `levels` downsampled levels above `frame`. Every level must be at
/// least `min_dim` pixels on each side (use `2w + 1` for LK patches).
pub fn build_pyramid(frame: &Frame, levels: usize, min_dim: usize) -> Result<ImagePyramid> {
    check_level(frame, 0, min_dim)?;
    let mut out = Vec::with_capacity(levels + 1);
    out.push(frame.clone());
    for level in 1..=levels {
        let next = out[level - 1].downsample();
        check_level(&next, level, min_dim)?;
        out.push(next);
    }
    Ok(ImagePyramid { levels: out })
}

fn check_level(frame: &Frame, level: usize, min_dim: usize) -> Result<()> {
    if frame.width < min_dim || frame.height < min_dim {
        return Err(Error::PyramidTooDeep {
            level,
            width: frame.width,
            height: frame.height,
            min: min_dim,
        });
    }
    Ok(())
}

/// A square window of `(2w+1)²` samples around a subpixel center, with
/// Gaussian weights `exp(-|offset|² / 2σ²)`.
///
/// Offsets are stored row-major: `dy` outer, `dx` inner, both from `-w` to `w`.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center: Point,
    pub half_size: usize,
    pub sigma: f64,
    pub weights: Vec<f64>,
    /// `channels` values per offset.
    pub values: Vec<f64>,
    pub channels: usize,
}

impl Patch {
    pub fn side(&self) -> usize {
        2 * self.half_size + 1
    }

    pub fn offsets(&self) -> impl Iterator<Item = Point> + '_ {
        window_offsets(self.half_size)
    }
}

pub(crate) fn window_offsets(half_size: usize) -> impl Iterator<Item = Point> {
    let w = half_size as isize;
    (-w..=w).flat_map(move |dy| (-w..=w).map(move |dx| Point::new(dx as f64, dy as f64)))
}

pub fn gaussian_weights(half_size: usize, sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    window_offsets(half_size)
        .map(|o| (-o.norm_sq() / denom).exp())
        .collect()
}

pub fn extract_patch(frame: &Frame, center: Point, half_size: usize, sigma: f64) -> Patch {
    let channels = frame.channels();
    let side = 2 * half_size + 1;
    let mut values = vec![0.0; side * side * channels];
    for (o, chunk) in window_offsets(half_size).zip(values.chunks_exact_mut(channels)) {
        frame.sample_into(center + o, chunk);
    }
    Patch {
        center,
        half_size,
        sigma,
        weights: gaussian_weights(half_size, sigma),
        values,
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, 1, |x, y, _| (x + w * y) as f64).unwrap()
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(Frame::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Frame::new(0, 2, 1, vec![]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn constant_image_halves_to_constant() {
        let f = Frame::constant(4, 4, 1, 7.0).unwrap();
        let p = build_pyramid(&f, 1, 1).unwrap();
        let l1 = p.level(1);
        assert_eq!((l1.width(), l1.height()), (2, 2));
        assert!(l1.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn two_by_two_block_mean() {
        let f = Frame::new(2, 2, 1, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let p = build_pyramid(&f, 1, 1).unwrap();
        assert_eq!(p.level(1).data(), &[3.0]);
    }

    #[test]
    fn ramp_level_two_matches_direct_block_means() {
        let f = ramp(8, 8);
        let p = build_pyramid(&f, 2, 1).unwrap();
        let l2 = p.level(2);
        assert_eq!((l2.width(), l2.height()), (2, 2));
        for by in 0..2 {
            for bx in 0..2 {
                let mut sum = 0.0;
                for y in 4 * by..4 * by + 4 {
                    for x in 4 * bx..4 * bx + 4 {
                        sum += f.pixel(x, y, 0);
                    }
                }
                assert!((l2.pixel(bx, by, 0) - sum / 16.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_edges_replicate() {
        let f = Frame::new(3, 1, 1, vec![1.0, 3.0, 5.0]).unwrap();
        let d = f.downsample();
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.data(), &[2.0, 5.0]);
    }

    #[test]
    fn too_deep_pyramid_is_rejected() {
        let f = Frame::constant(42, 42, 1, 1.0).unwrap();
        assert!(build_pyramid(&f, 1, 21).is_ok());
        match build_pyramid(&f, 2, 21) {
            Err(Error::PyramidTooDeep { level: 2, width: 11, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bilinear_basics() {
        let f = ramp(8, 8);
        assert_eq!(f.sample_bilinear(Point::new(3.0, 5.0)), vec![f.pixel(3, 5, 0)]);
        let g = Frame::new(2, 1, 1, vec![10.0, 20.0]).unwrap();
        assert_eq!(g.sample_channel(0.5, 0.0, 0), 15.0);
        assert_eq!(
            f.sample_bilinear(Point::new(-1.5, 2.0)),
            f.sample_bilinear(Point::new(0.0, 2.0))
        );
    }

    #[test]
    fn patch_weights() {
        let f = Frame::constant(9, 9, 3, 42.0).unwrap();
        let p = extract_patch(&f, Point::new(4.2, 3.7), 2, 1.5);
        assert_eq!(p.values.len(), 25 * 3);
        assert!(p.values.iter().all(|&v| (v - 42.0).abs() < 1e-12));

        let wide = gaussian_weights(3, 1e9);
        assert!(wide.iter().all(|&a| (a - 1.0).abs() < 1e-6));

        let w1 = gaussian_weights(1, 1.0);
        // center
        assert_eq!(w1[4], 1.0);
        // offset (1, 1) is the last entry
        assert!((w1[8] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w1[8] - 0.3679).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn weights_are_symmetric(w in 1usize..6, sigma in 0.3f64..20.0) {
            let a = gaussian_weights(w, sigma);
            let n = a.len();
            for i in 0..n {
                prop_assert_eq!(a[i], a[n - 1 - i]);
            }
        }

        #[test]
        fn bilinear_stays_within_neighbours(
            data in proptest::collection::vec(0.0f64..255.0, 36),
            x in 0.0f64..5.0,
            y in 0.0f64..5.0,
        ) {
            let f = Frame::new(6, 6, 1, data).unwrap();
            let p = build_pyramid(&f, 1, 1).unwrap();
            for (level, frame) in p.levels().iter().enumerate() {
                let s = (1u32 << level) as f64;
                let (px, py) = ((x / s).min((frame.width() - 1) as f64), (y / s).min((frame.height() - 1) as f64));
                let (x0, y0) = (px.floor() as usize, py.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(frame.width() - 1), (y0 + 1).min(frame.height() - 1));
                let n = [frame.pixel(x0, y0, 0), frame.pixel(x1, y0, 0), frame.pixel(x0, y1, 0), frame.pixel(x1, y1, 0)];
                let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = frame.sample_channel(px, py, 0);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }

        #[test]
        fn constant_patch_at_every_level(
            value in 0.0f64..255.0,
            x in 0.0f64..63.0,
            y in 0.0f64..63.0,
        ) {
            let f = Frame::constant(64, 64, 2, value).unwrap();
            let pyr = build_pyramid(&f, 3, 3).unwrap();
            for (level, frame) in pyr.levels().iter().enumerate() {
                let s = (1u32 << level) as f64;
                let patch = extract_patch(frame, Point::new(x / s, y / s), 1, 1.0);
                prop_assert!(patch.values.iter().all(|&v| (v - value).abs() < 1e-9));
            }
        }

        // Strict 4/3 bound when every level halves exactly.
        #[test]
        fn pyramid_is_less_than_four_thirds(bw in 21usize..50, bh in 21usize..50, levels in 0usize..4) {
            let (w, h) = (bw << levels, bh << levels);
            let f = Frame::constant(w, h, 1, 0.0).unwrap();
            let p = build_pyramid(&f, levels, 21).unwrap();
            prop_assert!((p.total_pixels() as f64) < 4.0 / 3.0 * (w * h) as f64);
        }

        // Ceil rounding on odd sides adds at most one row and column per level.
        #[test]
        fn odd_sides_exceed_four_thirds_by_at_most_the_rounding(w in 168usize..400, h in 168usize..400, levels in 0usize..4) {
            let f = Frame::constant(w, h, 1, 0.0).unwrap();
            let p = build_pyramid(&f, levels, 21).unwrap();
            let slack: f64 = (1..=levels).map(|l| (w + h) as f64 / (1 << l) as f64 + 1.0).sum();
            prop_assert!((p.total_pixels() as f64) < 4.0 / 3.0 * (w * h) as f64 + slack + 1.0);
        }
    }
}
