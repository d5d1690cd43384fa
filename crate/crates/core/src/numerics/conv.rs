use alloc::format;
use alloc::vec::Vec;

use super::grid::{reflect_index, ImageGrid};
use crate::error::{invalid, Error, Result};

/// A small 2D real kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel2d {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || taps.len() != height * width {
            return Err(invalid(format!(
                "kernel {height}x{width} needs {} taps, got {}",
                height * width,
                taps.len()
            )));
        }
        Ok(Self {
            height,
            width,
            taps,
        })
    }

    /// The 1×1 kernel `[1]`.
    pub fn delta() -> Self {
        Self {
            height: 1,
            width: 1,
            taps: alloc::vec![1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.taps[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// How samples outside the image are synthesised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Zero,
    /// Half-sample symmetric reflection.
    Symmetric,
}

/// Same-size per-channel correlation with zero-padded borders.
pub fn conv2d_same(input: &ImageGrid, kernel: &Kernel2d) -> Result<ImageGrid> {
    conv2d_same_with(input, kernel, Border::Zero)
}

pub fn conv2d_same_with(input: &ImageGrid, kernel: &Kernel2d, border: Border) -> Result<ImageGrid> {
    if kernel.height % 2 == 0 || kernel.width % 2 == 0 {
        return Err(Error::EvenKernel {
            height: kernel.height,
            width: kernel.width,
        });
    }
    let (h, w, ch) = input.dims();
    let (ry, rx) = ((kernel.height / 2) as isize, (kernel.width / 2) as isize);
    let mut out = ImageGrid::zeros(h, w, ch);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for ky in 0..kernel.height {
                    let sy = y as isize + ky as isize - ry;
                    let sy = match border {
                        Border::Zero if sy < 0 || sy >= h as isize => continue,
                        Border::Zero => sy as usize,
                        Border::Symmetric => reflect_index(sy, h),
                    };
                    for kx in 0..kernel.width {
                        let sx = x as isize + kx as isize - rx;
                        let sx = match border {
                            Border::Zero if sx < 0 || sx >= w as isize => continue,
                            Border::Zero => sx as usize,
                            Border::Symmetric => reflect_index(sx, w),
                        };
                        acc += kernel.get(ky, kx) * input.get(sy, sx, c);
                    }
                }
                out.set(y, x, c, acc);
            }
        }
    }
    Ok(out)
}
