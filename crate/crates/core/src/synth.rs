//! Procedural RGB test images: flat-colored shapes and striped patches on
//! a smooth background.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::numerics::ImageGrid;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
    Stripes { cy: f64, cx: f64, r: f64, freq: f64, angle: f64 },
}

impl Shape {
    /// Coverage in `[0, 1]`, with a one-pixel soft edge.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let edge = |d: f64| (0.5 - d).clamp(0.0, 1.0);
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => {
                let d = (y0 - y).max(y - y1).max(x0 - x).max(x - x1);
                edge(d)
            }
            Shape::Disc { cy, cx, r } => edge(math::hypot(y - cy, x - cx) - r),
            Shape::Stripes { cy, cx, r, .. } => edge(math::hypot(y - cy, x - cx) - r),
        }
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()].map(|v| 0.1 + 0.8 * v)
}

/// One `size × size × 3` image, fully determined by `seed`.
pub fn synth_image(size: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle = rng.random::<f64>() * core::f64::consts::TAU;
    let (ga, gb) = (math::cos(angle), math::sin(angle));
    let n = rng.random_range(3..7);
    let mut shapes: Vec<(Shape, [f64; 3], [f64; 3])> = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = rng.random_range(0..3);
        let (cy, cx) = (rng.random::<f64>() * s, rng.random::<f64>() * s);
        let r = s * (0.08 + 0.22 * rng.random::<f64>());
        let shape = match kind {
            0 => {
                let (hy, hx) = (r * (0.4 + rng.random::<f64>()), r * (0.4 + rng.random::<f64>()));
                Shape::Rect {
                    y0: cy - hy,
                    x0: cx - hx,
                    y1: cy + hy,
                    x1: cx + hx,
                }
            }
            1 => Shape::Disc { cy, cx, r },
            _ => Shape::Stripes {
                cy,
                cx,
                r,
                freq: 0.08 + 0.12 * rng.random::<f64>(),
                angle: rng.random::<f64>() * core::f64::consts::PI,
            },
        };
        shapes.push((shape, color(&mut rng), color(&mut rng)));
    }
    ImageGrid::from_fn(size, size, 3, |y, x, c| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let u = ((ga * xf + gb * yf) / s).clamp(-1.0, 1.0) * 0.5 + 0.5;
        let mut v = c0[c] * (1.0 - u) + c1[c] * u;
        for (shape, fill, alt) in &shapes {
            let a = shape.coverage(yf, xf);
            if a <= 0.0 {
                continue;
            }
            let col = match *shape {
                Shape::Stripes { freq, angle, .. } => {
                    let p = xf * math::cos(angle) + yf * math::sin(angle);
                    let m = 0.5 + 0.5 * math::sin(core::f64::consts::TAU * freq * p);
                    fill[c] * m + alt[c] * (1.0 - m)
                }
                _ => fill[c],
            };
            v = v * (1.0 - a) + col * a;
        }
        v.clamp(0.0, 1.0)
    })
}

/// `count` images with seeds `seed, seed + 1, …`.
pub fn synth_corpus(count: usize, size: usize, seed: u64) -> Vec<ImageGrid> {
    (0..count).map(|i| synth_image(size, seed.wrapping_add(i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_image(48, 5);
        assert_eq!(a, synth_image(48, 5));
        assert_ne!(a, synth_image(48, 6));
        assert_eq!(a.dims(), (48, 48, 3));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn images_are_not_flat() {
        for img in synth_corpus(8, 32, 100) {
            let m = img.mean();
            let var = img.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / img.data().len() as f64;
            assert!(var > 1e-4);
        }
    }
}
