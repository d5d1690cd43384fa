use alloc::vec::Vec;

use rand::Rng;

use super::sampler::{gaussian_grid, Denoiser};
use super::schedule::{q_sample, NoiseSchedule};
use crate::conditioning::{encode_condition, fuse_embeddings, time_embedding, CondEncoder, EMBED_DIM};
use crate::degradation::bicubic_resize;
use crate::error::{invalid, shape, Error, Result};
use crate::networks::{unet_forward, vae_encode, Autoencoder, Cx, UNet};
use crate::numerics::{AdamW, ImageGrid, ParamId, ParamStore, Tape, Tensor};
use crate::quave::{quave_embed, QuaveModel};

pub const UNET_GROUP: u8 = 0;
pub const COND_GROUP: u8 = 1;

/// Frozen-model inputs for one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionExample {
    /// `E(x_hr)`.
    pub z0: ImageGrid,
    /// `E(bicubic↑(x_lr))`.
    pub z_lr: ImageGrid,
    /// Wavelet embedding of `x_lr`.
    pub quave_emb: Vec<f64>,
}

/// Encodes one `(x_hr, x_lr)` pair with the frozen autoencoder and
/// wavelet embedder.
pub fn prepare_example(
    ae: &Autoencoder,
    ae_store: &ParamStore,
    quave: &QuaveModel,
    quave_store: &ParamStore,
    x_hr: &ImageGrid,
    x_lr: &ImageGrid,
) -> Result<DiffusionExample> {
    if !ae_store.is_fully_frozen() {
        return Err(Error::Frozen("autoencoder must be frozen before diffusion training".into()));
    }
    if !quave_store.is_fully_frozen() {
        return Err(Error::Frozen("wavelet embedder must be frozen before diffusion training".into()));
    }
    let z0 = vae_encode(ae, ae_store, x_hr)?;
    let z_lr = lr_latent(ae, ae_store, x_lr, x_hr.height(), x_hr.width())?;
    let quave_emb = quave_embed(quave, quave_store, x_lr)?;
    Ok(DiffusionExample { z0, z_lr, quave_emb })
}

/// `E(bicubic↑(x_lr))` at the target resolution.
pub fn lr_latent(ae: &Autoencoder, ae_store: &ParamStore, x_lr: &ImageGrid, height: usize, width: usize) -> Result<ImageGrid> {
    vae_encode(ae, ae_store, &bicubic_resize(x_lr, height, width)?)
}

/// The trainable half of the latent denoiser: `ε_θ` with its adapter and
/// the conditioning encoder `δ_θ`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserParts<'a> {
    pub unet: &'a UNet,
    pub unet_store: &'a ParamStore,
    pub cond: &'a CondEncoder,
    pub cond_store: &'a ParamStore,
}

/// One noised sample with its target.
#[derive(Debug, Clone)]
pub struct NoisedSample<'a> {
    pub example: &'a DiffusionExample,
    pub t: usize,
    pub eps: ImageGrid,
}

/// `‖ε − ε_θ(z_t, δ_θ(c, t, z))‖²` averaged over the batch, with gradients
/// for the denoiser store (group 0) and the conditioning store (group 1).
#[allow(clippy::type_complexity)]
pub fn diffusion_loss_and_grads(
    parts: DenoiserParts,
    samples: &[NoisedSample],
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<(ParamId, Vec<f64>)>, Vec<(ParamId, Vec<f64>)>)> {
    if samples.is_empty() {
        return Err(invalid("empty batch"));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut gu: Vec<(ParamId, Vec<f64>)> = Vec::new();
    let mut gc: Vec<(ParamId, Vec<f64>)> = Vec::new();
    let t_dim = parts.unet.config.time_dim;
    for s in samples {
        let ex = s.example;
        if ex.z0.dims() != ex.z_lr.dims() || ex.z0.dims() != s.eps.dims() {
            return Err(shape("latent, conditioning latent and noise must agree"));
        }
        let z_t = q_sample(&ex.z0, s.t, &s.eps, schedule)?;
        let b = fuse_embeddings(&ex.quave_emb, &time_embedding(s.t, EMBED_DIM, schedule.timesteps())?)?;
        let code = time_embedding(s.t, t_dim, schedule.timesteps())?;
        let target = Tensor::from_grid(&s.eps);

        let mut tape = Tape::new();
        let zl = tape.input(Tensor::from_grid(&ex.z_lr));
        let bv = tape.input(Tensor::vector(b));
        let sft = parts
            .cond
            .forward(&mut Cx::new(&mut tape, parts.cond_store, COND_GROUP), zl, bv)?;
        let zt = tape.input(Tensor::from_grid(&z_t));
        let tv = tape.input(Tensor::vector(code));
        let out = parts
            .unet
            .forward(&mut Cx::new(&mut tape, parts.unet_store, UNET_GROUP), zt, tv, Some(&sft))?;
        let loss = tape.mse(out.eps, &target)?;
        total += scale * tape.scalar(loss);
        let g = tape.backward(loss, scale)?;
        merge(&mut gu, g.for_group(UNET_GROUP));
        merge(&mut gc, g.for_group(COND_GROUP));
    }
    Ok((total, gu, gc))
}

fn merge(acc: &mut Vec<(ParamId, Vec<f64>)>, add: Vec<(ParamId, Vec<f64>)>) {
    for (id, g) in add {
        match acc.iter_mut().find(|(i, _)| *i == id) {
            Some((_, a)) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
            None => acc.push((id, g)),
        }
    }
}

/// One optimisation step: uniform `t`, `ε ~ N(0, I)`, AdamW on the
/// trainable entries of both stores. Returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    unet: &UNet,
    unet_store: &mut ParamStore,
    cond: &CondEncoder,
    cond_store: &mut ParamStore,
    batch: &[DiffusionExample],
    schedule: &NoiseSchedule,
    opt: &AdamW,
    rng: &mut impl Rng,
) -> Result<f64> {
    if !unet_store.has_trainable() && !cond_store.has_trainable() {
        return Err(Error::Frozen("denoiser adapter and conditioning encoder".into()));
    }
    let samples: Vec<NoisedSample> = batch
        .iter()
        .map(|ex| {
            let t = rng.random_range(0..schedule.timesteps());
            let (h, w, c) = ex.z0.dims();
            NoisedSample {
                example: ex,
                t,
                eps: gaussian_grid(h, w, c, rng),
            }
        })
        .collect();
    let parts = DenoiserParts {
        unet,
        unet_store,
        cond,
        cond_store,
    };
    let (loss, gu, gc) = diffusion_loss_and_grads(parts, &samples, schedule)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("diffusion loss".into()));
    }
    for (store, g) in [(&mut *unet_store, gu), (&mut *cond_store, gc)] {
        store.zero_grad();
        store.accumulate(&g, 1.0)?;
        if store.has_trainable() {
            opt.step(store)?;
        }
    }
    Ok(loss)
}

/// `ε_θ(z_t, δ_θ(c, t, z_lr))` for a fixed conditioning input.
#[derive(Debug, Clone)]
pub struct ConditionedDenoiser<'a> {
    pub parts: DenoiserParts<'a>,
    pub z_lr: ImageGrid,
    pub quave_emb: Vec<f64>,
    pub timesteps: usize,
}

impl Denoiser for ConditionedDenoiser<'_> {
    fn predict_eps(&self, z_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        let b = fuse_embeddings(&self.quave_emb, &time_embedding(t, EMBED_DIM, self.timesteps)?)?;
        let bundle = encode_condition(self.parts.cond, self.parts.cond_store, &self.z_lr, &b)?;
        let code = time_embedding(t, self.parts.unet.config.time_dim, self.timesteps)?;
        unet_forward(self.parts.unet, self.parts.unet_store, z_t, &code, Some(&bundle.sft))
    }
}
