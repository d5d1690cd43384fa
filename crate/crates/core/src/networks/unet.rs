use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::autoencoder::LATENT_CHANNELS;
use super::layers::{Conv, Cx, GroupNorm, Init, Linear, ResBlock};
use crate::error::{shape, Result};
use crate::numerics::{ImageGrid, ParamStore, Shape, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Widths at latent resolution, `/2` and `/4`.
    pub channels: [usize; 3],
    /// Size of the sinusoidal timestep code fed to the time MLP.
    pub time_dim: usize,
    /// Width of the time MLP.
    pub temb_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: [32, 32, 64],
            time_dim: 512,
            temb_dim: 128,
        }
    }
}

/// Latent noise predictor `ε_θ(z_t, t)`.
///
/// Three resolutions with one residual block each on both paths, skip
/// concatenation, and one SFT hook after every decoder block. The output
/// head (`out.*`) is the trainable adapter; everything else is the frozen
/// backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    time1: Linear,
    time2: Linear,
    conv_in: Conv,
    down_blocks: [ResBlock; 3],
    downs: [Conv; 2],
    mid: ResBlock,
    up_blocks: [ResBlock; 3],
    ups: [Conv; 2],
    out_norm: GroupNorm,
    out_conv: Conv,
}

/// Spatial feature modulation for one hook: `γ ⊙ F + β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SftVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone)]
pub struct UNetOutput {
    pub eps: Var,
    /// Skip activations, fine to coarse.
    pub encoder_feats: Vec<Var>,
    /// Decoder block outputs before modulation, coarse to fine.
    pub decoder_feats: Vec<Var>,
}

/// One `(γ, β)` pair as `h × w × C` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct SftMaps {
    pub gamma: ImageGrid,
    pub beta: ImageGrid,
}

pub const ADAPTER_PREFIX: &str = "out.";

impl UNet {
    pub fn new(store: &mut ParamStore, config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        let [c0, c1, c2] = config.channels;
        let te = Some(config.temb_dim);
        let he = Init::He(1.0);
        Ok(Self {
            config,
            time1: Linear::new(store, "time.1", config.time_dim, config.temb_dim, he, rng)?,
            time2: Linear::new(store, "time.2", config.temb_dim, config.temb_dim, he, rng)?,
            conv_in: Conv::new(store, "conv_in", LATENT_CHANNELS, c0, 3, 1, he, rng)?,
            down_blocks: [
                ResBlock::new(store, "down.0", c0, c0, te, rng)?,
                ResBlock::new(store, "down.1", c1, c1, te, rng)?,
                ResBlock::new(store, "down.2", c2, c2, te, rng)?,
            ],
            downs: [
                Conv::new(store, "downsample.0", c0, c1, 3, 2, he, rng)?,
                Conv::new(store, "downsample.1", c1, c2, 3, 2, he, rng)?,
            ],
            mid: ResBlock::new(store, "mid", c2, c2, te, rng)?,
            up_blocks: [
                ResBlock::new(store, "up.0", 2 * c2, c2, te, rng)?,
                ResBlock::new(store, "up.1", 2 * c1, c1, te, rng)?,
                ResBlock::new(store, "up.2", c1 + c0, c0, te, rng)?,
            ],
            ups: [
                Conv::new(store, "upsample.0", c2, c1, 3, 1, he, rng)?,
                Conv::new(store, "upsample.1", c1, c1, 3, 1, he, rng)?,
            ],
            out_norm: GroupNorm::new(store, "out.norm", c0)?,
            out_conv: Conv::new(store, "out.conv", c0, LATENT_CHANNELS, 3, 1, Init::Zero, rng)?,
        })
    }

    /// Freezes the backbone and leaves only the adapter head trainable.
    pub fn freeze_backbone(store: &mut ParamStore) {
        let ids: Vec<_> = store
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.name.starts_with(ADAPTER_PREFIX)))
            .collect();
        for (i, adapter) in ids {
            store.set_frozen(crate::numerics::ParamId(i), !adapter);
        }
    }

    /// Feature shapes at the SFT hooks for an `h × w` latent, coarse to fine.
    pub fn hook_shapes(&self, h: usize, w: usize) -> Result<Vec<Shape>> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(shape(format!("latent dims {h}x{w} must be positive multiples of 4")));
        }
        let [c0, c1, c2] = self.config.channels;
        Ok([(c2, 4), (c1, 2), (c0, 1)]
            .iter()
            .map(|&(c, f)| Shape::new(c, h / f, w / f))
            .collect())
    }

    /// `t_code` is the sinusoidal timestep code of length `time_dim`.
    /// With `sft == None` the hooks are skipped.
    pub fn forward(&self, cx: &mut Cx, z_t: Var, t_code: Var, sft: Option<&[SftVars]>) -> Result<UNetOutput> {
        let s = cx.tape.shape(z_t);
        if s.c != LATENT_CHANNELS {
            return Err(shape(format!("denoiser expects {LATENT_CHANNELS} channels, got {}", s.c)));
        }
        let hooks = self.hook_shapes(s.h, s.w)?;
        if let Some(sft) = sft {
            if sft.len() != hooks.len() {
                return Err(shape(format!(
                    "{} modulation pairs for {} hooks",
                    sft.len(),
                    hooks.len()
                )));
            }
            for (pair, want) in sft.iter().zip(&hooks) {
                for v in [pair.gamma, pair.beta] {
                    if cx.tape.shape(v) != *want {
                        return Err(shape(format!(
                            "modulation map {:?} for hook {want:?}",
                            cx.tape.shape(v)
                        )));
                    }
                }
            }
        }
        if cx.tape.shape(t_code).len() != self.config.time_dim {
            return Err(shape("timestep code length"));
        }

        let e = self.time1.forward(cx, t_code)?;
        let e = cx.tape.silu(e);
        let e = self.time2.forward(cx, e)?;
        let emb = Some(cx.tape.silu(e));

        let h = self.conv_in.forward(cx, z_t)?;
        let h0 = self.down_blocks[0].forward(cx, h, emb)?;
        let h = self.downs[0].forward(cx, h0)?;
        let h1 = self.down_blocks[1].forward(cx, h, emb)?;
        let h = self.downs[1].forward(cx, h1)?;
        let h2 = self.down_blocks[2].forward(cx, h, emb)?;
        let mut h = self.mid.forward(cx, h2, emb)?;

        let skips = [h2, h1, h0];
        let mut decoder_feats = Vec::with_capacity(3);
        for (i, block) in self.up_blocks.iter().enumerate() {
            if i > 0 {
                let u = cx.tape.upsample2x(h);
                h = self.ups[i - 1].forward(cx, u)?;
            }
            let cat = cx.tape.concat(h, skips[i])?;
            h = block.forward(cx, cat, emb)?;
            decoder_feats.push(h);
            if let Some(sft) = sft {
                h = cx.tape.affine(h, sft[i].gamma, sft[i].beta)?;
            }
        }
        let h = self.out_norm.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let eps = self.out_conv.forward(cx, h)?;
        Ok(UNetOutput {
            eps,
            encoder_feats: alloc::vec![h0, h1, h2],
            decoder_feats,
        })
    }
}

/// Inference-mode `ε_θ(z_t, t)` on grids. `sft == None` runs the
/// unconditioned path.
pub fn unet_forward(
    model: &UNet,
    store: &ParamStore,
    z_t: &ImageGrid,
    t_code: &[f64],
    sft: Option<&[SftMaps]>,
) -> Result<ImageGrid> {
    let mut tape = Tape::inference();
    let z = tape.input(Tensor::from_grid(z_t));
    let t = tape.input(Tensor::vector(t_code.to_vec()));
    let pairs: Option<Vec<SftVars>> = sft.map(|maps| {
        maps.iter()
            .map(|m| SftVars {
                gamma: tape.input(Tensor::from_grid(&m.gamma)),
                beta: tape.input(Tensor::from_grid(&m.beta)),
            })
            .collect()
    });
    let mut cx = Cx::new(&mut tape, store, 0);
    let out = model.forward(&mut cx, z, t, pairs.as_deref())?;
    let eps = tape.value(out.eps);
    if !eps.is_finite() {
        return Err(crate::error::Error::NonFinite("denoiser output".into()));
    }
    Ok(eps.to_grid())
}
