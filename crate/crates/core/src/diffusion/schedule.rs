use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math;
use crate::numerics::ImageGrid;

/// Linear β schedule and its cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `ᾱ_t / (1 − ᾱ_t)`.
    pub fn snr(&self, t: usize) -> f64 {
        let a = self.alpha_bars[t];
        a / (1.0 - a)
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.timesteps() {
            return Err(invalid(format!("timestep {t} outside [0, {})", self.timesteps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule bounds are valid")
    }
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(invalid("schedule needs at least one timestep"));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..timesteps)
        .map(|t| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * t as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut acc = 1.0;
    let alpha_bars = alphas
        .iter()
        .map(|a| {
            acc *= a;
            acc
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// `z_t = √ᾱ_t · z0 + √(1 − ᾱ_t) · ε`.
pub fn q_sample(z0: &ImageGrid, t: usize, eps: &ImageGrid, schedule: &NoiseSchedule) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (math::sqrt(a), math::sqrt(1.0 - a));
    z0.zip_map(eps, |x, e| sa * x + sn * e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_endpoints() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for t in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t as f64 / 999.0);
        }
        assert!((s.alpha_bar(999) - prod).abs() < 1e-15);
        assert!((s.alpha_bar(999) - 4.0e-5).abs() < 0.1e-5);
        assert!(s.alpha_bar(0) > 0.99);
        assert!(s.alpha_bar(999) < 0.05);
        assert!(s.betas.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bars.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0 - 1e-4);
    }

    #[test]
    fn snr_strictly_decreasing() {
        for t in [10, 100, 1000] {
            let s = make_schedule(t, 1e-4, 0.02).unwrap();
            assert!((1..t).all(|i| s.snr(i) < s.snr(i - 1)));
        }
    }

    #[test]
    fn invalid_bounds() {
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn q_sample_branches() {
        let s = NoiseSchedule::default();
        let z0 = ImageGrid::from_fn(4, 4, 4, |y, x, c| (y + x + c) as f64 * 0.1);
        let zero = ImageGrid::zeros(4, 4, 4);
        let zt = q_sample(&z0, 300, &zero, &s).unwrap();
        assert_eq!(zt, z0.map(|v| s.alpha_bar(300).sqrt() * v));
        let eps = z0.map(|v| 1.0 - v);
        let zt = q_sample(&zero, 999, &eps, &s).unwrap();
        let k = (1.0 - s.alpha_bar(999)).sqrt();
        assert!(zt.max_abs_diff(&eps.map(|v| k * v)).unwrap() < 1e-15);
        assert!(q_sample(&z0, 1000, &eps, &s).is_err());
        assert!(q_sample(&z0, 1, &ImageGrid::zeros(4, 4, 3), &s).is_err());
    }
}
