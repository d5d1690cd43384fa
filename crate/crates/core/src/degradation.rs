//! Synthetic low-resolution observations: blur, cubic downscale, noise.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::math;
use crate::numerics::{conv2d_same_with, reflect_index, Border, ImageGrid, Kernel2d};

/// Normalised isotropic Gaussian on a `size × size` grid.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Kernel2d> {
    if size % 2 == 0 {
        return Err(crate::Error::EvenKernel {
            height: size,
            width: size,
        });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as f64 - r;
            let dx = (i % size) as f64 - r;
            math::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    Kernel2d::new(size, size, taps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub kernel: Kernel2d,
    pub noise_sigma: f64,
    pub scale_factor: usize,
    pub rng_seed: u64,
}

impl DegradationSpec {
    pub fn new(kernel: Kernel2d, noise_sigma: f64, scale_factor: usize, rng_seed: u64) -> Result<Self> {
        let s = Self {
            kernel,
            noise_sigma,
            scale_factor,
            rng_seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Gaussian blur of the given sigma with a `2·⌈3σ⌉+1` support.
    pub fn gaussian(blur_sigma: f64, noise_sigma: f64, scale_factor: usize, rng_seed: u64) -> Result<Self> {
        let size = 2 * (math::floor(3.0 * blur_sigma) as usize + 1) + 1;
        Self::new(gaussian_kernel(blur_sigma, size)?, noise_sigma, scale_factor, rng_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.kernel.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("blur kernel sums to {}, not 1", self.kernel.sum())));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid("noise sigma must be finite and non-negative"));
        }
        if self.scale_factor == 0 {
            return Err(invalid("scale factor must be at least 1"));
        }
        Ok(())
    }
}

/// `x̃ = clamp(↓s(x ⊗ k) + n)`.
///
/// Blur uses symmetric borders. Dims not divisible by the scale factor are
/// first padded by symmetric reflection up to the next multiple. Noise is
/// drawn per pixel and channel in row-major, channel-last order from a
/// ChaCha8 stream seeded with `rng_seed`.
pub fn degrade(x: &ImageGrid, spec: &DegradationSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let blurred = conv2d_same_with(x, &spec.kernel, Border::Symmetric)?;
    let s = spec.scale_factor;
    let padded = pad_to_multiple(&blurred, s);
    let mut out = bicubic_resize(&padded, padded.height() / s, padded.width() / s)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        for v in out.data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * n;
        }
    }
    Ok(out.clamp01())
}

fn pad_to_multiple(x: &ImageGrid, s: usize) -> ImageGrid {
    let (h, w, c) = x.dims();
    let (hp, wp) = (h.div_ceil(s) * s, w.div_ceil(s) * s);
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    ImageGrid::from_fn(hp, wp, c, |y, xx, ch| {
        x.get(reflect_index(y as isize, h), reflect_index(xx as isize, w), ch)
    })
}

/// Catmull-Rom cubic (`a = −0.5`).
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample source indices and normalised weights along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    // Widen the kernel when shrinking so it also acts as the anti-alias filter.
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = math::floor(center - support) as isize + 1;
            let hi = math::floor(center + support) as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| (reflect_index(j, n_in), cubic_weight((j as f64 - center) / stretch)))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let s: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= s);
            taps
        })
        .collect()
}

/// Separable cubic resampling with half-pixel centres and symmetric edges.
pub fn bicubic_resize(image: &ImageGrid, out_h: usize, out_w: usize) -> Result<ImageGrid> {
    let (h, w, c) = image.dims();
    if out_h == 0 || out_w == 0 {
        return Err(invalid("output dims must be at least 1"));
    }
    if h == 0 || w == 0 {
        return Err(invalid("cannot resize an empty image"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(image.clone());
    }
    let tx = axis_taps(w, out_w);
    let ty = axis_taps(h, out_h);
    let mut rows = ImageGrid::zeros(h, out_w, c);
    for y in 0..h {
        for (x, taps) in tx.iter().enumerate() {
            for ch in 0..c {
                let v = taps.iter().map(|&(j, wt)| wt * image.get(y, j, ch)).sum();
                rows.set(y, x, ch, v);
            }
        }
    }
    let mut out = ImageGrid::zeros(out_h, out_w, c);
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..out_w {
            for ch in 0..c {
                let v = taps.iter().map(|&(j, wt)| wt * rows.get(j, x, ch)).sum();
                out.set(y, x, ch, v);
            }
        }
    }
    Ok(out)
}
