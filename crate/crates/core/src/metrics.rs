//! Full-reference quality metrics computed on BT.601 luma.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape, Result};
use crate::math;
use crate::numerics::ImageGrid;

/// Full-range BT.601 RGB → YCbCr, all channels in `[0, 1]` (chroma centred
/// on 0.5).
pub fn rgb_to_ycbcr(image: &ImageGrid) -> Result<ImageGrid> {
    if image.channels() != 3 {
        return Err(invalid(format!(
            "YCbCr conversion needs 3 channels, got {}",
            image.channels()
        )));
    }
    Ok(ImageGrid::from_fn(image.height(), image.width(), 3, |y, x, c| {
        let (r, g, b) = (image.get(y, x, 0), image.get(y, x, 1), image.get(y, x, 2));
        match c {
            0 => 0.299 * r + 0.587 * g + 0.114 * b,
            1 => 0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
            _ => 0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
        }
    }))
}

/// Luma plane of an RGB image; single-channel input is taken as luma already.
pub fn luma(image: &ImageGrid) -> Result<ImageGrid> {
    match image.channels() {
        1 => Ok(image.clone()),
        3 => Ok(ImageGrid::from_fn(image.height(), image.width(), 1, |y, x, _| {
            0.299 * image.get(y, x, 0) + 0.587 * image.get(y, x, 1) + 0.114 * image.get(y, x, 2)
        })),
        c => Err(invalid(format!("luma needs 1 or 3 channels, got {c}"))),
    }
}

fn luma_pair(a: &ImageGrid, b: &ImageGrid) -> Result<(ImageGrid, ImageGrid)> {
    a.ensure_same_dims(b, "metric inputs")?;
    Ok((luma(a)?, luma(b)?))
}

/// `10·log10(1 / MSE)` on luma. Identical inputs give `f64::INFINITY`.
pub fn psnr_y(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    let (ya, yb) = luma_pair(a, b)?;
    if ya.data().is_empty() {
        return Err(invalid("empty image"));
    }
    let mse = ya
        .data()
        .iter()
        .zip(yb.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / ya.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * math::log10(mse))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-region filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity on luma with an 11-tap Gaussian window
/// (σ = 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, over the valid region.
pub fn ssim_y(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    let (ya, yb) = luma_pair(a, b)?;
    let (h, w) = (ya.height(), ya.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (pa, pb) = (ya.data(), yb.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        pa.iter().zip(pb).map(|(&p, &q)| f(p, q)).collect()
    };
    let mu_a = filter_valid(pa, h, w, &k);
    let mu_b = filter_valid(pb, h, w, &k);
    let aa = filter_valid(&prod(&|p, _| p * p), h, w, &k);
    let bb = filter_valid(&prod(&|_, q| q * q), h, w, &k);
    let ab = filter_valid(&prod(&|p, q| p * q), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr_y: f64,
    pub ssim_y: f64,
}

/// Per-image rows plus corpus means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, reference: &ImageGrid, test: &ImageGrid) -> Result<&MetricRow> {
        let row = MetricRow {
            name: name.into(),
            psnr_y: psnr_y(reference, test)?,
            ssim_y: ssim_y(reference, test)?,
        };
        self.rows.push(row);
        Ok(self.rows.last().expect("just pushed"))
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_y))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_y))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return f64::NAN;
    }
    it.sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_rgb(rng: &mut impl Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    /// Independent SSIM: explicit window sums at every valid position.
    fn ssim_oracle(a: &ImageGrid, b: &ImageGrid) -> f64 {
        let ya = luma(a).unwrap();
        let yb = luma(b).unwrap();
        let mut g = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dy * dy + dx * dx) / 4.5).exp();
                s += *v;
            }
        }
        let (h, w) = (ya.height(), ya.width());
        let mut total = 0.0;
        let mut count = 0.0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i][j] / s;
                        let p = ya.get(y + i, x + j, 0);
                        let q = yb.get(y + i, x + j, 0);
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                let (c1, c2) = (1e-4, 9e-4);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ycbcr_examples() {
        let px = |r, g, b| rgb_to_ycbcr(&ImageGrid::from_vec(1, 1, 3, vec![r, g, b]).unwrap()).unwrap();
        assert!((px(1.0, 1.0, 1.0).get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(px(0.0, 0.0, 0.0).get(0, 0, 0), 0.0);
        assert_eq!(px(1.0, 0.0, 0.0).get(0, 0, 0), 0.299);
        let white = px(1.0, 1.0, 1.0);
        assert!((white.get(0, 0, 1) - 0.5).abs() < 1e-12 && (white.get(0, 0, 2) - 0.5).abs() < 1e-12);
        assert!(rgb_to_ycbcr(&ImageGrid::zeros(2, 2, 1)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = ImageGrid::filled(4, 4, 1, 0.5);
        assert_eq!(psnr_y(&a, &a).unwrap(), f64::INFINITY);
        let b = ImageGrid::filled(4, 4, 1, 0.6);
        assert!((psnr_y(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr_y(&a, &ImageGrid::zeros(4, 5, 1)).is_err());
    }

    #[test]
    fn psnr_matches_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let (a, b) = (rand_rgb(&mut rng, 9, 7), rand_rgb(&mut rng, 9, 7));
        let mut se = 0.0;
        for y in 0..9 {
            for x in 0..7 {
                let ya = 0.299 * a.get(y, x, 0) + 0.587 * a.get(y, x, 1) + 0.114 * a.get(y, x, 2);
                let yb = 0.299 * b.get(y, x, 0) + 0.587 * b.get(y, x, 1) + 0.114 * b.get(y, x, 2);
                se += (ya - yb) * (ya - yb);
            }
        }
        let expect = 10.0 * (63.0 / se).log10();
        assert!((psnr_y(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert_eq!(psnr_y(&a, &b).unwrap(), psnr_y(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_sign_and_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let a = rand_rgb(&mut rng, 16, 14);
        assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let board = ImageGrid::from_fn(16, 16, 1, |y, x, _| ((y + x) % 2) as f64);
        let inv = board.map(|v| 1.0 - v);
        assert!(ssim_y(&board, &inv).unwrap() < 0.0);
        for _ in 0..10 {
            let a = rand_rgb(&mut rng, 15, 13);
            let mut b = a.clone();
            for v in b.data_mut() {
                *v = (*v + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0);
            }
            let s = ssim_y(&a, &b).unwrap();
            assert!((s - ssim_oracle(&a, &b)).abs() < 1e-6);
            assert!((s - ssim_y(&b, &a).unwrap()).abs() < 1e-12);
            assert!(s < 1.0);
        }
        assert!(ssim_y(&ImageGrid::zeros(10, 20, 1), &ImageGrid::zeros(10, 20, 1)).is_err());
    }

    #[test]
    fn psnr_falls_with_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let a = rand_rgb(&mut rng, 16, 16).map(|v| 0.25 + 0.5 * v);
        let noise: Vec<f64> = (0..a.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let mut b = a.clone();
            b.data_mut().iter_mut().zip(&noise).for_each(|(v, n)| *v += amp * n);
            let p = psnr_y(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn report_means() {
        let a = ImageGrid::filled(12, 12, 1, 0.5);
        let b = ImageGrid::filled(12, 12, 1, 0.6);
        let mut r = MetricReport::default();
        r.push("x", &a, &b).unwrap();
        r.push("y", &a, &b).unwrap();
        assert!((r.mean_psnr() - 20.0).abs() < 1e-9);
        assert!(r.mean_ssim() <= 1.0);
    }
}
