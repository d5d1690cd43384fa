use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::numerics::ImageGrid;

/// Anything that predicts the injected noise at timestep `t`.
pub trait Denoiser {
    fn predict_eps(&self, z_t: &ImageGrid, t: usize) -> Result<ImageGrid>;
}

impl<F> Denoiser for F
where
    F: Fn(&ImageGrid, usize) -> Result<ImageGrid>,
{
    fn predict_eps(&self, z_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        self(z_t, t)
    }
}

/// Wraps a denoiser so its implied `ẑ_0` is clamped to `[−bound, bound]`;
/// the returned ε is re-derived from the clamped estimate.
#[derive(Debug, Clone)]
pub struct ClampedX0<'a, D> {
    pub inner: D,
    pub bound: f64,
    pub schedule: &'a NoiseSchedule,
}

impl<D: Denoiser> Denoiser for ClampedX0<'_, D> {
    fn predict_eps(&self, z_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        let eps = self.inner.predict_eps(z_t, t)?;
        let ab = self.schedule.alpha_bar(t);
        let (sa, sn) = (math::sqrt(ab), math::sqrt(1.0 - ab));
        let bound = self.bound;
        let x0 = z_t.zip_map(&eps, |z, e| ((z - sn * e) / sa).clamp(-bound, bound))?;
        z_t.zip_map(&x0, |z, x| (z - sa * x) / sn)
    }
}

/// Standard normal grid drawn in row-major, channel-last order.
pub fn gaussian_grid(h: usize, w: usize, c: usize, rng: &mut impl rand::Rng) -> ImageGrid {
    let mut g = ImageGrid::zeros(h, w, c);
    for v in g.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    g
}

/// Posterior variance `β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`, zero at `t = 0`.
pub fn posterior_variance(schedule: &NoiseSchedule, t: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    (1.0 - schedule.alpha_bars[t - 1]) / (1.0 - schedule.alpha_bars[t]) * schedule.betas[t]
}

/// One ancestral update `z_t → z_{t−1}`. `noise` is ignored at `t = 0`.
pub fn ddpm_step(
    z_t: &ImageGrid,
    eps: &ImageGrid,
    t: usize,
    schedule: &NoiseSchedule,
    noise: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let (a, ab, b) = (schedule.alphas[t], schedule.alpha_bars[t], schedule.betas[t]);
    let k = b / math::sqrt(1.0 - ab);
    let inv = 1.0 / math::sqrt(a);
    let mean = z_t.zip_map(eps, |z, e| inv * (z - k * e))?;
    match (t, noise) {
        (0, _) | (_, None) => Ok(mean),
        (_, Some(n)) => {
            let sigma = math::sqrt(posterior_variance(schedule, t));
            mean.zip_map(n, |m, n| m + sigma * n)
        }
    }
}

/// One generalised update `z_t → z_{t_prev}`; `t_prev == None` jumps to
/// the clean estimate with `ᾱ = 1`.
pub fn ddim_step(
    z_t: &ImageGrid,
    eps: &ImageGrid,
    t: usize,
    t_prev: Option<usize>,
    eta: f64,
    schedule: &NoiseSchedule,
    noise: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bars[t];
    let ab_prev = match t_prev {
        Some(p) if p >= t => return Err(invalid(format!("previous timestep {p} is not before {t}"))),
        Some(p) => schedule.alpha_bars[p],
        None => 1.0,
    };
    let sigma = ddim_sigma(ab, ab_prev, eta);
    let (sa, sn) = (math::sqrt(ab), math::sqrt(1.0 - ab));
    let (pa, pn) = (math::sqrt(ab_prev), math::sqrt((1.0 - ab_prev - sigma * sigma).max(0.0)));
    let x0 = z_t.zip_map(eps, |z, e| (z - sn * e) / sa)?;
    let mut out = x0.zip_map(eps, |x, e| pa * x + pn * e)?;
    if let (Some(n), true) = (noise, sigma > 0.0) {
        out = out.zip_map(n, |o, n| o + sigma * n)?;
    }
    Ok(out)
}

fn ddim_sigma(ab: f64, ab_prev: f64, eta: f64) -> f64 {
    eta * math::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
}

/// The uniform-stride subsequence `τ_i = ⌊(i + 1) · T / S⌋ − 1`, ascending.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(invalid(format!("steps {steps} outside [1, {timesteps}]")));
    }
    Ok((0..steps).map(|i| (i + 1) * timesteps / steps - 1).collect())
}

fn check_finite(z: &ImageGrid, step: usize, timestep: usize) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteStep { step, timestep })
    }
}

/// Full `T`-step ancestral sampling from seeded `z_T ~ N(0, I)`.
pub fn ddpm_sample(
    model: &impl Denoiser,
    dims: (usize, usize, usize),
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<ImageGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = dims;
    let mut z = gaussian_grid(h, w, c, &mut rng);
    for (step, t) in (0..schedule.timesteps()).rev().enumerate() {
        let eps = model.predict_eps(&z, t)?;
        let noise = (t > 0).then(|| gaussian_grid(h, w, c, &mut rng));
        z = ddpm_step(&z, &eps, t, schedule, noise.as_ref())?;
        check_finite(&z, step, t)?;
    }
    Ok(z)
}

/// `steps`-step DDIM sampling from seeded `z_T ~ N(0, I)`; `eta = 0` is
/// deterministic given the initial noise.
pub fn ddim_sample(
    model: &impl Denoiser,
    dims: (usize, usize, usize),
    schedule: &NoiseSchedule,
    steps: usize,
    eta: f64,
    seed: u64,
) -> Result<ImageGrid> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta {eta} must be finite and nonnegative")));
    }
    let taus = ddim_timesteps(schedule.timesteps(), steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = dims;
    let mut z = gaussian_grid(h, w, c, &mut rng);
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let prev = i.checked_sub(1).map(|j| taus[j]);
        let eps = model.predict_eps(&z, t)?;
        let noise = (eta > 0.0 && prev.is_some()).then(|| gaussian_grid(h, w, c, &mut rng));
        z = ddim_step(&z, &eps, t, prev, eta, schedule, noise.as_ref())?;
        check_finite(&z, taus.len() - 1 - i, t)?;
    }
    Ok(z)
}
