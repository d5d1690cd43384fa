use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Conv, Cx, Init};
use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{AdamW, ImageGrid, ParamStore, Shape, Tape, Tensor, Var};

pub const LATENT_CHANNELS: usize = 4;
/// Spatial reduction between image and latent.
pub const LATENT_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AutoencoderConfig {
    /// Feature widths at full and half/quarter resolution.
    pub widths: [usize; 2],
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { widths: [16, 32] }
    }
}

/// Convolutional autoencoder, image `3 × H × W` ↔ latent `4 × H/4 × W/4`.
///
/// Encoder: full-res conv, two stride-2 convs, a refinement conv and a
/// linear projection to the latent. The decoder mirrors it with nearest
/// upsampling. Decoder features at `H/2` and `H` are the CFW fusion points.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    enc_in: Conv,
    enc_down1: Conv,
    enc_down2: Conv,
    enc_mid: Conv,
    enc_out: Conv,
    dec_in: Conv,
    dec_mid: Conv,
    dec_up1: Conv,
    dec_up2: Conv,
    dec_out: Conv,
}

/// Encoder activations at the CFW fusion scales, coarse to fine
/// (`H/2`, then `H`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatures {
    pub maps: Vec<Tensor>,
}

/// The CFW fusion branch `C`: two 3×3 convolutions (hidden width `2c`) per
/// fusion scale over the concatenated `(F_e, F_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CfwModule {
    pub scales: Vec<(Conv, Conv)>,
}

impl CfwModule {
    pub fn new(store: &mut ParamStore, ae: &AutoencoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let [c1, c2] = ae.widths;
        let scales = [c2, c1]
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Ok((
                    Conv::new(store, &format!("cfw.{i}.conv1"), 2 * c, 2 * c, 3, 1, Init::He(1.0), rng)?,
                    Conv::new(store, &format!("cfw.{i}.conv2"), 2 * c, c, 3, 1, Init::He(0.1), rng)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales })
    }

    /// `C(F_e, F_d)` at fusion scale `i`.
    pub fn correction(&self, cx: &mut Cx, i: usize, fe: Var, fd: Var) -> Result<Var> {
        let (c1, c2) = self
            .scales
            .get(i)
            .ok_or_else(|| invalid(format!("no CFW fusion scale {i}")))?;
        let cat = cx.tape.concat(fe, fd)?;
        let h = c1.forward(cx, cat)?;
        let h = cx.tape.silu(h);
        c2.forward(cx, h)
    }
}

/// Decoder-side fusion inputs for one decode pass.
pub struct Fusion<'a> {
    pub module: &'a CfwModule,
    pub store: &'a ParamStore,
    pub group: u8,
    /// Encoder features on the same tape, coarse to fine.
    pub features: &'a [Var],
    pub w: f64,
}

/// Decoder activations at the fusion scales, before and after fusion.
#[derive(Debug, Clone, Default)]
pub struct DecodeTrace {
    pub pre_fusion: Vec<Var>,
    pub post_fusion: Vec<Var>,
}

impl Autoencoder {
    pub fn new(store: &mut ParamStore, config: AutoencoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let [c1, c2] = config.widths;
        let he = Init::He(1.0);
        Ok(Self {
            config,
            enc_in: Conv::new(store, "enc.in", 3, c1, 3, 1, he, rng)?,
            enc_down1: Conv::new(store, "enc.down1", c1, c2, 3, 2, he, rng)?,
            enc_down2: Conv::new(store, "enc.down2", c2, c2, 3, 2, he, rng)?,
            enc_mid: Conv::new(store, "enc.mid", c2, c2, 3, 1, he, rng)?,
            enc_out: Conv::new(store, "enc.out", c2, LATENT_CHANNELS, 3, 1, Init::He(0.5), rng)?,
            dec_in: Conv::new(store, "dec.in", LATENT_CHANNELS, c2, 3, 1, he, rng)?,
            dec_mid: Conv::new(store, "dec.mid", c2, c2, 3, 1, he, rng)?,
            dec_up1: Conv::new(store, "dec.up1", c2, c2, 3, 1, he, rng)?,
            dec_up2: Conv::new(store, "dec.up2", c2, c1, 3, 1, he, rng)?,
            dec_out: Conv::new(store, "dec.out", c1, 3, 3, 1, Init::He(0.5), rng)?,
        })
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> Result<Shape> {
        if height % LATENT_FACTOR != 0 || width % LATENT_FACTOR != 0 || height == 0 || width == 0 {
            return Err(shape(format!(
                "image dims {height}x{width} must be positive multiples of {LATENT_FACTOR}"
            )));
        }
        Ok(Shape::new(LATENT_CHANNELS, height / LATENT_FACTOR, width / LATENT_FACTOR))
    }

    /// Returns the latent and the encoder features at `H/2` and `H`.
    pub fn encode_tape(&self, cx: &mut Cx, x: Var) -> Result<(Var, [Var; 2])> {
        let s = cx.tape.shape(x);
        if s.c != 3 {
            return Err(shape(format!("encoder expects 3 channels, got {}", s.c)));
        }
        self.latent_shape(s.h, s.w)?;
        let h = self.enc_in.forward(cx, x)?;
        let f0 = cx.tape.silu(h);
        let h = self.enc_down1.forward(cx, f0)?;
        let f1 = cx.tape.silu(h);
        let h = self.enc_down2.forward(cx, f1)?;
        let h = cx.tape.silu(h);
        let h = self.enc_mid.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let z = self.enc_out.forward(cx, h)?;
        Ok((z, [f1, f0]))
    }

    /// Linear (unclamped) reconstruction, optionally fused with encoder
    /// features. `w == 0` skips the fusion branch entirely.
    pub fn decode_tape(&self, cx: &mut Cx, z: Var, fusion: Option<&Fusion>) -> Result<(Var, DecodeTrace)> {
        let s = cx.tape.shape(z);
        if s.c != LATENT_CHANNELS {
            return Err(shape(format!(
                "decoder expects {LATENT_CHANNELS} latent channels, got {}",
                s.c
            )));
        }
        let fusion = fusion.filter(|f| f.w != 0.0);
        if let Some(f) = fusion {
            if f.features.len() != 2 || f.module.scales.len() != 2 {
                return Err(invalid("CFW fusion needs features and convs for 2 scales"));
            }
        }
        let mut trace = DecodeTrace::default();
        let h = self.dec_in.forward(cx, z)?;
        let h = cx.tape.silu(h);
        let h = self.dec_mid.forward(cx, h)?;
        let mut h = cx.tape.silu(h);
        for (i, conv) in [&self.dec_up1, &self.dec_up2].into_iter().enumerate() {
            let u = cx.tape.upsample2x(h);
            let u = conv.forward(cx, u)?;
            let fd = cx.tape.silu(u);
            trace.pre_fusion.push(fd);
            h = match fusion {
                Some(f) => {
                    let mut fcx = Cx::new(cx.tape, f.store, f.group);
                    let c = f.module.correction(&mut fcx, i, f.features[i], fd)?;
                    let c = cx.tape.scale(c, f.w);
                    cx.tape.add(fd, c)?
                }
                None => fd,
            };
            trace.post_fusion.push(h);
        }
        let out = self.dec_out.forward(cx, h)?;
        Ok((out, trace))
    }
}

fn image_tensor(x: &ImageGrid) -> Result<Tensor> {
    if x.channels() != 3 {
        return Err(shape(format!("expected an RGB image, got {} channels", x.channels())));
    }
    Ok(Tensor::from_grid(x))
}

/// `z = E(x)` as an `H/4 × W/4 × 4` grid.
pub fn vae_encode(model: &Autoencoder, store: &ParamStore, x: &ImageGrid) -> Result<ImageGrid> {
    let mut tape = Tape::inference();
    let mut cx = Cx::new(&mut tape, store, 0);
    let xv = cx.tape.input(image_tensor(x)?);
    let (z, _) = model.encode_tape(&mut cx, xv)?;
    Ok(tape.value(z).to_grid())
}

/// Encoder features of `x` at the CFW fusion scales.
pub fn vae_features(model: &Autoencoder, store: &ParamStore, x: &ImageGrid) -> Result<EncoderFeatures> {
    let mut tape = Tape::inference();
    let mut cx = Cx::new(&mut tape, store, 0);
    let xv = cx.tape.input(image_tensor(x)?);
    let (_, feats) = model.encode_tape(&mut cx, xv)?;
    Ok(EncoderFeatures {
        maps: feats.iter().map(|&f| tape.value(f).clone()).collect(),
    })
}

/// `D(z)` clamped to `[0, 1]`, with CFW fusion `F_d + w·C(F_e, F_d)` at
/// each fusion scale when `w > 0`.
pub fn vae_decode(
    model: &Autoencoder,
    store: &ParamStore,
    z: &ImageGrid,
    encoder_feats: Option<&EncoderFeatures>,
    cfw: Option<(&CfwModule, &ParamStore)>,
    w: f64,
) -> Result<ImageGrid> {
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid(format!("CFW coefficient {w} outside [0, 1]")));
    }
    let mut tape = Tape::inference();
    let zv = tape.input(Tensor::from_grid(z));
    let out = if w == 0.0 {
        let mut cx = Cx::new(&mut tape, store, 0);
        model.decode_tape(&mut cx, zv, None)?.0
    } else {
        let feats = encoder_feats.ok_or_else(|| invalid("CFW with w > 0 needs encoder features"))?;
        let (module, cfw_store) = cfw.ok_or_else(|| invalid("CFW with w > 0 needs a fusion module"))?;
        let fv: Vec<Var> = feats.maps.iter().map(|m| tape.input(m.clone())).collect();
        let fusion = Fusion {
            module,
            store: cfw_store,
            group: 1,
            features: &fv,
            w,
        };
        let mut cx = Cx::new(&mut tape, store, 0);
        model.decode_tape(&mut cx, zv, Some(&fusion))?.0
    };
    Ok(tape.value(out).to_grid().clamp01())
}

/// Batch-mean reconstruction MSE and its gradient for the autoencoder.
pub fn vae_loss_and_grads(
    model: &Autoencoder,
    store: &ParamStore,
    batch: &[ImageGrid],
) -> Result<(f64, Vec<(crate::numerics::ParamId, Vec<f64>)>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut total = 0.0;
    let mut grads: Vec<(crate::numerics::ParamId, Vec<f64>)> = Vec::new();
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let target = image_tensor(x)?;
        let mut tape = Tape::new();
        let mut cx = Cx::new(&mut tape, store, 0);
        let xv = cx.tape.input(target.clone());
        let (z, _) = model.encode_tape(&mut cx, xv)?;
        let (out, _) = model.decode_tape(&mut cx, z, None)?;
        let loss = tape.mse(out, &target)?;
        total += scale * tape.scalar(loss);
        for (id, g) in tape.backward(loss, scale)?.for_group(0) {
            match grads.iter_mut().find(|(i, _)| *i == id) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => grads.push((id, g)),
            }
        }
    }
    Ok((total, grads))
}

/// One AdamW step on the reconstruction loss; returns the pre-step loss.
pub fn vae_pretrain_step(
    model: &Autoencoder,
    store: &mut ParamStore,
    batch: &[ImageGrid],
    opt: &AdamW,
) -> Result<f64> {
    if !store.has_trainable() {
        return Err(Error::Frozen("autoencoder".into()));
    }
    let (loss, grads) = vae_loss_and_grads(model, store, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("autoencoder loss".into()));
    }
    store.zero_grad();
    store.accumulate(&grads, 1.0)?;
    opt.step(store)?;
    Ok(loss)
}

/// One CFW training window: a latent, the encoder features of the
/// upsampled low-resolution image at the fusion scales, and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct CfwExample {
    pub z: Tensor,
    pub features: Vec<Tensor>,
    pub target: Tensor,
}

impl CfwExample {
    /// Cuts the `size × size` image window at `(top, left)` (multiples of
    /// the latent factor) out of full-image inputs.
    pub fn window(
        z: &ImageGrid,
        features: &EncoderFeatures,
        target: &ImageGrid,
        top: usize,
        left: usize,
        size: usize,
    ) -> Result<Self> {
        let f = LATENT_FACTOR;
        if top % f != 0 || left % f != 0 || size % f != 0 || size == 0 {
            return Err(invalid(format!("window must be aligned to multiples of {f}")));
        }
        if features.maps.len() != 2 {
            return Err(invalid("expected features at two fusion scales"));
        }
        Ok(Self {
            z: Tensor::from_grid(z).crop(top / f, left / f, size / f, size / f)?,
            features: alloc::vec![
                features.maps[0].crop(top / 2, left / 2, size / 2, size / 2)?,
                features.maps[1].crop(top, left, size, size)?,
            ],
            target: Tensor::from_grid(target).crop(top, left, size, size)?,
        })
    }
}

/// Batch-mean MSE of the fused decoding against the targets, with
/// gradients for the CFW store only.
pub fn cfw_loss_and_grads(
    ae: &Autoencoder,
    ae_store: &ParamStore,
    cfw: &CfwModule,
    cfw_store: &ParamStore,
    batch: &[CfwExample],
    w: f64,
) -> Result<(f64, Vec<(crate::numerics::ParamId, Vec<f64>)>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: Vec<(crate::numerics::ParamId, Vec<f64>)> = Vec::new();
    for ex in batch {
        let mut tape = Tape::new();
        let z = tape.input(ex.z.clone());
        let feats: Vec<Var> = ex.features.iter().map(|f| tape.input(f.clone())).collect();
        let fusion = Fusion {
            module: cfw,
            store: cfw_store,
            group: 1,
            features: &feats,
            w,
        };
        let (out, _) = ae.decode_tape(&mut Cx::new(&mut tape, ae_store, 0), z, Some(&fusion))?;
        let loss = tape.mse(out, &ex.target)?;
        total += scale * tape.scalar(loss);
        for (id, g) in tape.backward(loss, scale)?.for_group(1) {
            match grads.iter_mut().find(|(i, _)| *i == id) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => grads.push((id, g)),
            }
        }
    }
    Ok((total, grads))
}

/// One AdamW step on the CFW branch with the autoencoder frozen.
pub fn cfw_train_step(
    ae: &Autoencoder,
    ae_store: &ParamStore,
    cfw: &CfwModule,
    cfw_store: &mut ParamStore,
    batch: &[CfwExample],
    w: f64,
    opt: &AdamW,
) -> Result<f64> {
    if !ae_store.is_fully_frozen() {
        return Err(Error::Frozen("autoencoder must be frozen while fitting CFW".into()));
    }
    if !cfw_store.has_trainable() {
        return Err(Error::Frozen("CFW".into()));
    }
    if !(w > 0.0 && w <= 1.0) {
        return Err(invalid(format!("CFW coefficient {w} must be in (0, 1]")));
    }
    let (loss, grads) = cfw_loss_and_grads(ae, ae_store, cfw, cfw_store, batch, w)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("CFW loss".into()));
    }
    cfw_store.zero_grad();
    cfw_store.accumulate(&grads, 1.0)?;
    opt.step(cfw_store)?;
    Ok(loss)
}
