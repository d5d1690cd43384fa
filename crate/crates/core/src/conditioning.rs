//! The time- and wavelet-aware conditioning encoder `δ_θ`.
//!
//! `δ_θ` reads the low-resolution latent through a trunk that mirrors the
//! denoiser's encoder. The fused vector `b = quave ⊕ time` is projected once
//! and added per channel inside every trunk block. Each scale ends in a pair
//! of heads that emit the `(γ, β)` maps consumed by the denoiser's hooks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, shape, Result};
use crate::math;
use crate::networks::{Conv, Cx, Init, Linear, ResBlock, SftMaps, SftVars, UNetConfig, LATENT_CHANNELS};
use crate::numerics::{ImageGrid, ParamStore, Tape, Tensor, Var};

pub const EMBED_DIM: usize = 512;
pub const B_DIM: usize = 2 * EMBED_DIM;

/// Sinusoidal code of timestep `t`: `dim / 2` sines followed by `dim / 2`
/// cosines at frequencies `10000^(−i / (dim/2))`.
pub fn time_embedding(t: usize, dim: usize, timesteps: usize) -> Result<Vec<f64>> {
    if t >= timesteps {
        return Err(invalid(format!("timestep {t} outside [0, {timesteps})")));
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(invalid(format!("embedding size {dim} must be even and positive")));
    }
    let half = dim / 2;
    let freq = |i: usize| math::exp(-math::ln(10000.0) * i as f64 / half as f64);
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| math::sin(t as f64 * freq(i))));
    out.extend((0..half).map(|i| math::cos(t as f64 * freq(i))));
    Ok(out)
}

/// `b = quave_emb ⊕ time_emb`.
pub fn fuse_embeddings(quave_emb: &[f64], time_emb: &[f64]) -> Result<Vec<f64>> {
    if quave_emb.len() != EMBED_DIM || time_emb.len() != EMBED_DIM {
        return Err(shape(format!(
            "expected two {EMBED_DIM}-vectors, got {} and {}",
            quave_emb.len(),
            time_emb.len()
        )));
    }
    let mut b = Vec::with_capacity(B_DIM);
    b.extend_from_slice(quave_emb);
    b.extend_from_slice(time_emb);
    Ok(b)
}

/// `γ ⊙ F + β`.
pub fn sft_modulate(f: &ImageGrid, gamma: &ImageGrid, beta: &ImageGrid) -> Result<ImageGrid> {
    f.ensure_same_dims(gamma, "sft gamma")?;
    f.ensure_same_dims(beta, "sft beta")?;
    let data = f
        .data()
        .iter()
        .zip(gamma.data().iter().zip(beta.data()))
        .map(|(x, (g, b))| g * x + b)
        .collect();
    ImageGrid::from_vec(f.height(), f.width(), f.channels(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub b: Vec<f64>,
    /// One pair per denoiser hook, coarse to fine.
    pub sft: Vec<SftMaps>,
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    gamma: Conv,
    beta: Conv,
}

/// `δ_θ(c, t, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondEncoder {
    pub channels: [usize; 3],
    pub hidden: usize,
    b_proj: Linear,
    conv_in: Conv,
    blocks: [ResBlock; 3],
    downs: [Conv; 2],
    /// Coarse to fine, matching the hook order.
    heads: [Head; 3],
}

impl CondEncoder {
    pub fn new(store: &mut ParamStore, unet: &UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_hidden(store, unet, 256, rng)
    }

    pub fn with_hidden(store: &mut ParamStore, unet: &UNetConfig, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let [c0, c1, c2] = unet.channels;
        let he = Init::He(1.0);
        let e = Some(hidden);
        let mut head = |name: &str, c: usize| -> Result<Head> {
            let gamma = Conv::new(store, &format!("{name}.gamma"), c, c, 3, 1, Init::Zero, rng)?;
            let beta = Conv::new(store, &format!("{name}.beta"), c, c, 3, 1, Init::Zero, rng)?;
            store.entry_mut(gamma.b).value.iter_mut().for_each(|v| *v = 1.0);
            Ok(Head { gamma, beta })
        };
        let heads = [head("head.0", c2)?, head("head.1", c1)?, head("head.2", c0)?];
        Ok(Self {
            channels: unet.channels,
            hidden,
            b_proj: Linear::new(store, "b_proj", B_DIM, hidden, he, rng)?,
            conv_in: Conv::new(store, "conv_in", LATENT_CHANNELS, c0, 3, 1, he, rng)?,
            blocks: [
                ResBlock::new(store, "block.0", c0, c0, e, rng)?,
                ResBlock::new(store, "block.1", c1, c1, e, rng)?,
                ResBlock::new(store, "block.2", c2, c2, e, rng)?,
            ],
            downs: [
                Conv::new(store, "down.0", c0, c1, 3, 2, he, rng)?,
                Conv::new(store, "down.1", c1, c2, 3, 2, he, rng)?,
            ],
            heads,
        })
    }

    /// Modulation pairs for the denoiser hooks, coarse to fine.
    pub fn forward(&self, cx: &mut Cx, z_lr: Var, b: Var) -> Result<Vec<SftVars>> {
        let s = cx.tape.shape(z_lr);
        if s.c != LATENT_CHANNELS || s.h % 4 != 0 || s.w % 4 != 0 || s.h == 0 || s.w == 0 {
            return Err(shape(format!("conditioning latent {s:?} is not a valid latent")));
        }
        if cx.tape.shape(b).len() != B_DIM {
            return Err(shape(format!("b must have {B_DIM} entries")));
        }
        let e = self.b_proj.forward(cx, b)?;
        let e = Some(cx.tape.silu(e));
        let h = self.conv_in.forward(cx, z_lr)?;
        let f0 = self.blocks[0].forward(cx, h, e)?;
        let h = self.downs[0].forward(cx, f0)?;
        let f1 = self.blocks[1].forward(cx, h, e)?;
        let h = self.downs[1].forward(cx, f1)?;
        let f2 = self.blocks[2].forward(cx, h, e)?;
        [f2, f1, f0]
            .into_iter()
            .zip(&self.heads)
            .map(|(f, head)| {
                let a = cx.tape.silu(f);
                Ok(SftVars {
                    gamma: head.gamma.forward(cx, a)?,
                    beta: head.beta.forward(cx, a)?,
                })
            })
            .collect()
    }
}

/// Runs `δ_θ` on one low-resolution latent and fused vector.
pub fn encode_condition(
    model: &CondEncoder,
    store: &ParamStore,
    z_lr: &ImageGrid,
    b: &[f64],
) -> Result<ConditioningBundle> {
    let mut tape = Tape::inference();
    let z = tape.input(Tensor::from_grid(z_lr));
    let bv = tape.input(Tensor::vector(b.to_vec()));
    let pairs = model.forward(&mut Cx::new(&mut tape, store, 0), z, bv)?;
    let sft = pairs
        .iter()
        .map(|p| SftMaps {
            gamma: tape.value(p.gamma).to_grid(),
            beta: tape.value(p.beta).to_grid(),
        })
        .collect();
    Ok(ConditioningBundle { b: b.to_vec(), sft })
}

/// `mean|γ − 1| + mean|β|` over every hook, for each timestep in `t_list`.
pub fn conditioning_strength_probe(
    model: &CondEncoder,
    store: &ParamStore,
    z_lr: &ImageGrid,
    quave_emb: &[f64],
    schedule: &NoiseSchedule,
    t_list: &[usize],
) -> Result<Vec<f64>> {
    t_list
        .iter()
        .map(|&t| {
            let te = time_embedding(t, EMBED_DIM, schedule.timesteps())?;
            let b = fuse_embeddings(quave_emb, &te)?;
            let bundle = encode_condition(model, store, z_lr, &b)?;
            let (mut g, mut bt, mut n) = (0.0, 0.0, 0usize);
            for m in &bundle.sft {
                g += m.gamma.data().iter().map(|v| (v - 1.0).abs()).sum::<f64>();
                bt += m.beta.data().iter().map(|v| v.abs()).sum::<f64>();
                n += m.gamma.data().len();
            }
            Ok((g + bt) / n.max(1) as f64)
        })
        .collect()
}
