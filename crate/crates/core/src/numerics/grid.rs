use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape, Result};

/// An `height × width × channels` raster of reals, row-major, channel-last.
///
/// Pixel-domain grids hold values in `[0, 1]`; latent and feature grids are
/// unbounded. The container itself does not enforce either.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Stacks single-channel planes into one multi-channel grid.
    pub fn from_planes(planes: &[ImageGrid]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| invalid("cannot stack an empty plane list"))?;
        let (h, w) = (first.height, first.width);
        for p in planes {
            if p.channels != 1 || p.height != h || p.width != w {
                return Err(shape(format!(
                    "plane {}x{}x{} does not match {h}x{w}x1",
                    p.height, p.width, p.channels
                )));
            }
        }
        let c = planes.len();
        Ok(Self::from_fn(h, w, c, |y, x, ch| planes[ch].data[y * w + x]))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Copies channel `c` out as a single-channel grid.
    pub fn channel(&self, c: usize) -> Result<ImageGrid> {
        if c >= self.channels {
            return Err(invalid(format!(
                "channel {c} out of range for {} channels",
                self.channels
            )));
        }
        Ok(ImageGrid::from_fn(self.height, self.width, 1, |y, x, _| {
            self.get(y, x, c)
        }))
    }

    pub fn split_channels(&self) -> Vec<ImageGrid> {
        (0..self.channels)
            .map(|c| ImageGrid::from_fn(self.height, self.width, 1, |y, x, _| self.get(y, x, c)))
            .collect()
    }

    pub fn same_dims(&self, other: &ImageGrid) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_dims(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.ensure_same_dims(other, "zip_map")?;
        Ok(ImageGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamp01(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Root-mean-square difference between two equally shaped grids.
    pub fn rms_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_dims(other, "rms_diff")?;
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(crate::math::sqrt(s / self.data.len() as f64))
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Crops the window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageGrid> {
        if top + height > self.height || left + width > self.width {
            return Err(invalid(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(ImageGrid::from_fn(height, width, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        }))
    }

    /// Circularly shifts the grid by `(dy, dx)` pixels.
    pub fn roll(&self, dy: isize, dx: isize) -> ImageGrid {
        let (h, w) = (self.height as isize, self.width as isize);
        ImageGrid::from_fn(self.height, self.width, self.channels, |y, x, c| {
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            self.get(sy, sx, c)
        })
    }
}

/// Half-sample symmetric index reflection: `-1 -> 0`, `n -> n - 1`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(ImageGrid::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageGrid::from_vec(2, 2, 3, vec![0.0; 12]).is_ok());
    }

    #[test]
    fn channel_last_layout() {
        let g = ImageGrid::from_fn(2, 3, 2, |y, x, c| (y * 100 + x * 10 + c) as f64);
        assert_eq!(g.data()[g.index(1, 2, 1)], 121.0);
        assert_eq!(g.channel(1).unwrap().get(1, 2, 0), 121.0);
        assert_eq!(ImageGrid::from_planes(&g.split_channels()).unwrap(), g);
    }

    #[test]
    fn reflection_is_half_sample_symmetric() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect_index(-1, 1), 0);
    }

    #[test]
    fn roll_wraps() {
        let g = ImageGrid::from_fn(1, 4, 1, |_, x, _| x as f64);
        assert_eq!(g.roll(0, 1).data(), &[3.0, 0.0, 1.0, 2.0]);
    }
}
