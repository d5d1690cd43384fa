//! Learned sub-band selection over the 16 QWT planes of a low-resolution
//! image, producing the wavelet half of the conditioning vector.
//!
//! Each plane is weighted by a softmax gate before a small strided
//! convolutional encoder. Pretraining reconstructs the input luma from the
//! pooled embedding alone, so the gates concentrate on planes that carry
//! information about the image.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, shape, Error, Result};
use crate::metrics::luma;
use crate::networks::{Conv, Cx, Init, Linear};
use crate::numerics::{AdamW, ImageGrid, ParamId, ParamStore, Shape, Tape, Tensor, Var};
use crate::qwt::{qwt_forward, qwt_planes};

pub const NUM_PLANES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuaveConfig {
    pub embed_dim: usize,
    pub widths: [usize; 2],
    /// Side length of the luma patches used for pretraining; a multiple of 8.
    pub patch: usize,
}

impl Default for QuaveConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            widths: [32, 64],
            patch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuaveModel {
    pub config: QuaveConfig,
    pub gate_logits: ParamId,
    enc1: Conv,
    enc2: Conv,
    proj: Linear,
    dec_fc: Linear,
    dec: [Conv; 3],
}

impl QuaveModel {
    pub fn new(store: &mut ParamStore, config: QuaveConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.patch == 0 || config.patch % 8 != 0 || config.embed_dim == 0 {
            return Err(invalid("pretraining patch must be a positive multiple of 8"));
        }
        let [c1, c2] = config.widths;
        let he = Init::He(1.0);
        let s = config.patch / 8;
        Ok(Self {
            config,
            gate_logits: store.add_filled("gates.logits", &[NUM_PLANES], 0.0)?,
            enc1: Conv::new(store, "enc.1", NUM_PLANES, c1, 3, 2, he, rng)?,
            enc2: Conv::new(store, "enc.2", c1, c2, 3, 2, he, rng)?,
            proj: Linear::new(store, "proj", c2, config.embed_dim, he, rng)?,
            dec_fc: Linear::new(store, "dec.fc", config.embed_dim, c2 * s * s, Init::He(0.5), rng)?,
            dec: [
                Conv::new(store, "dec.1", c2, c1, 3, 1, he, rng)?,
                Conv::new(store, "dec.2", c1, c1 / 2, 3, 1, he, rng)?,
                Conv::new(store, "dec.3", c1 / 2, 1, 3, 1, Init::He(0.5), rng)?,
            ],
        })
    }

    fn embed_tape(&self, cx: &mut Cx, planes: Var) -> Result<Var> {
        let g = cx.p(self.gate_logits);
        let g = cx.tape.softmax(g);
        let g = cx.tape.scale(g, NUM_PLANES as f64);
        let h = cx.tape.scale_channels(planes, g)?;
        let h = self.enc1.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = self.enc2.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = cx.tape.global_avg_pool(h);
        self.proj.forward(cx, h)
    }

    fn reconstruct_tape(&self, cx: &mut Cx, emb: Var) -> Result<Var> {
        let s = self.config.patch / 8;
        let h = self.dec_fc.forward(cx, emb)?;
        let mut h = cx.tape.reshape(h, Shape::new(self.config.widths[1], s, s))?;
        for (i, conv) in self.dec.iter().enumerate() {
            h = cx.tape.upsample2x(h);
            h = conv.forward(cx, h)?;
            if i < 2 {
                h = cx.tape.silu(h);
            }
        }
        Ok(h)
    }
}

/// Softmax of the gate logits.
pub fn quave_gates(model: &QuaveModel, store: &ParamStore) -> Vec<f64> {
    let logits = store.value(model.gate_logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| crate::math::exp(v - max)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Level-1 QWT planes of the luma, as a `16 × h × w` tensor.
pub fn quave_planes(image: &ImageGrid) -> Result<Tensor> {
    if image.height() < 8 || image.width() < 8 {
        return Err(shape(format!(
            "image {}x{} is smaller than 8x8",
            image.height(),
            image.width()
        )));
    }
    let y = luma(image)?;
    Ok(Tensor::from_grid(&qwt_planes(&qwt_forward(&y, 1)?, 1)?))
}

pub fn quave_embed(model: &QuaveModel, store: &ParamStore, image: &ImageGrid) -> Result<Vec<f64>> {
    let planes = quave_planes(image)?;
    let mut tape = Tape::inference();
    let p = tape.input(planes);
    let e = model.embed_tape(&mut Cx::new(&mut tape, store, 0), p)?;
    let out = tape.value(e);
    if !out.is_finite() {
        return Err(Error::NonFinite("wavelet embedding".into()));
    }
    Ok(out.data.clone())
}

/// Embeds each image independently.
pub fn quave_embed_batch(model: &QuaveModel, store: &ParamStore, images: &[ImageGrid]) -> Result<Vec<Vec<f64>>> {
    images.iter().map(|x| quave_embed(model, store, x)).collect()
}

/// Batch-mean luma reconstruction MSE and its gradient.
pub fn quave_loss_and_grads(
    model: &QuaveModel,
    store: &ParamStore,
    batch: &[ImageGrid],
) -> Result<(f64, Vec<(ParamId, Vec<f64>)>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let p = model.config.patch;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: Vec<(ParamId, Vec<f64>)> = Vec::new();
    for x in batch {
        if x.height() != p || x.width() != p {
            return Err(shape(format!(
                "pretraining patches must be {p}x{p}, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        let target = Tensor::from_grid(&luma(x)?);
        let planes = quave_planes(x)?;
        let mut tape = Tape::new();
        let mut cx = Cx::new(&mut tape, store, 0);
        let pv = cx.tape.input(planes);
        let e = model.embed_tape(&mut cx, pv)?;
        let out = model.reconstruct_tape(&mut cx, e)?;
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

/// One AdamW step on the gated reconstruction loss; returns the pre-step loss.
pub fn quave_pretrain_step(
    model: &QuaveModel,
    store: &mut ParamStore,
    batch: &[ImageGrid],
    opt: &AdamW,
) -> Result<f64> {
    if !store.has_trainable() {
        return Err(Error::Frozen("wavelet embedder".into()));
    }
    let (loss, grads) = quave_loss_and_grads(model, store, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("wavelet embedder loss".into()));
    }
    store.zero_grad();
    store.accumulate(&grads, 1.0)?;
    opt.step(store)?;
    Ok(loss)
}
