//! Reverse-mode gradient accumulation over the small, fixed set of
//! operations the networks are built from.
//!
//! Every forward pass records its nodes on a [`Tape`]. Parameters enter the
//! tape as copies tagged with a `(group, ParamId)` key so that a single pass
//! can mix several [`ParamStore`]s (e.g. the conditioning encoder and the
//! denoiser). Frozen entries enter as constants and receive no gradient.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Shape, Tensor};
use crate::error::{invalid, shape, Result};
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Identifies a parameter across the stores bound to one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub group: u8,
    pub id: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        // normalised input and per-group reciprocal std, kept for backward
        xhat: Box<[f64]>,
        rstd: Box<[f64]>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    AddChannelVec {
        x: Var,
        v: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Affine {
        f: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample2x(Var),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    Softmax(Var),
    Reshape(Var),
    Mse {
        x: Var,
        target: Box<[f64]>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of the tape's loss with respect to its trainable parameters.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub entries: Vec<(ParamKey, Vec<f64>)>,
}

impl Gradients {
    /// Gradients addressed to one store, merged per parameter.
    pub fn for_group(&self, group: u8) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for (key, g) in &self.entries {
            if key.group != group {
                continue;
            }
            if let Some((_, acc)) = out.iter_mut().find(|(id, _)| *id == key.id) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            } else {
                out.push((key.id, g.clone()));
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inference: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that treats every parameter as a constant.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter entry. Frozen entries become constants.
    pub fn param(&mut self, store: &ParamStore, group: u8, id: ParamId) -> Var {
        let e = store.entry(id);
        let value = Tensor::vector(e.value.clone());
        if self.inference || e.frozen {
            self.push(value, Op::Leaf, false)
        } else {
            self.push(value, Op::Param(ParamKey { group, id }), true)
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x);
        if xs.c != spec.cin {
            return Err(shape(format!(
                "conv expects {} input channels, got {}",
                spec.cin, xs.c
            )));
        }
        if self.value(w).data.len() != spec.cout * spec.cin * spec.kernel * spec.kernel {
            return Err(shape("conv weight size does not match spec"));
        }
        if let Some(b) = b {
            if self.value(b).data.len() != spec.cout {
                return Err(shape("conv bias size does not match spec"));
            }
        }
        if xs.h + 2 * spec.pad < spec.kernel || xs.w + 2 * spec.pad < spec.kernel {
            return Err(shape(format!("conv input {xs:?} smaller than kernel")));
        }
        let (ho, wo) = spec.output_hw(xs.h, xs.w);
        let p = ho * wo;
        let kk = spec.cin * spec.kernel * spec.kernel;
        let mut out = vec![0.0; spec.cout * p];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            if spec.is_pointwise() {
                gemm(spec.cout, kk, p, 1.0, wv, false, xv, false, 0.0, &mut out);
            } else {
                let col = im2col(xv, xs, spec, ho, wo);
                gemm(spec.cout, kk, p, 1.0, wv, false, &col, false, 0.0, &mut out);
            }
            if let Some(b) = b {
                let bv = &self.value(b).data;
                for (co, row) in out.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            Tensor {
                shape: Shape::new(spec.cout, ho, wo),
                data: out,
            },
            Op::Conv { x, w, b, spec },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "add")?;
        let data = zip(&self.value(a).data, &self.value(b).data, |p, q| p + q);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor {
                shape: self.shape(a),
                data,
            },
            Op::Add(a, b),
            needs,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "mul")?;
        let data = zip(&self.value(a).data, &self.value(b).data, |p, q| p * q);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor {
                shape: self.shape(a),
                data,
            },
            Op::Mul(a, b),
            needs,
        ))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data.iter().map(|v| v * s).collect();
        let needs = self.ng(x);
        self.push(
            Tensor {
                shape: self.shape(x),
                data,
            },
            Op::Scale(x, s),
            needs,
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data
            .iter()
            .map(|&v| v * math::sigmoid(v))
            .collect();
        let needs = self.ng(x);
        self.push(
            Tensor {
                shape: self.shape(x),
                data,
            },
            Op::Silu(x),
            needs,
        )
    }

    /// Group normalisation over `(channels / groups) × H × W` blocks.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let s = self.shape(x);
        if groups == 0 || s.c % groups != 0 {
            return Err(invalid(format!("{} channels not divisible into {groups} groups", s.c)));
        }
        if self.value(gamma).data.len() != s.c || self.value(beta).data.len() != s.c {
            return Err(shape("group norm affine size mismatch"));
        }
        let per = s.c / groups * s.plane();
        let xv = &self.value(x).data;
        let gv = &self.value(gamma).data;
        let bv = &self.value(beta).data;
        let mut xhat = vec![0.0; s.len()];
        let mut rstd = vec![0.0; groups];
        let mut out = vec![0.0; s.len()];
        for g in 0..groups {
            let block = &xv[g * per..(g + 1) * per];
            let mean = block.iter().sum::<f64>() / per as f64;
            let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let r = 1.0 / math::sqrt(var + EPS);
            rstd[g] = r;
            for (i, &v) in block.iter().enumerate() {
                let idx = g * per + i;
                let c = idx / s.plane();
                let n = (v - mean) * r;
                xhat[idx] = n;
                out[idx] = n * gv[c] + bv[c];
            }
        }
        let needs = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor { shape: s, data: out },
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat: xhat.into_boxed_slice(),
                rstd: rstd.into_boxed_slice(),
            },
            needs,
        ))
    }

    /// `y = W x + b` with `W` stored row-major as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.shape(x).len();
        let m = self.value(b).data.len();
        if self.value(w).data.len() != m * n {
            return Err(shape(format!(
                "linear weight has {} values, expected {m}x{n}",
                self.value(w).data.len()
            )));
        }
        let mut out = self.value(b).data.clone();
        gemm(m, n, 1, 1.0, &self.value(w).data, false, &self.value(x).data, false, 1.0, &mut out);
        let needs = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::vector(out), Op::Linear { x, w, b }, needs))
    }

    /// Adds `v[c]` to every pixel of channel `c`.
    pub fn add_channel_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        let s = self.shape(x);
        if self.value(v).data.len() != s.c {
            return Err(shape(format!(
                "channel vector has {} entries for {} channels",
                self.value(v).data.len(),
                s.c
            )));
        }
        let mut data = self.value(x).data.clone();
        let vv = &self.value(v).data;
        for (c, plane) in data.chunks_mut(s.plane()).enumerate() {
            plane.iter_mut().for_each(|p| *p += vv[c]);
        }
        let needs = self.ng(x) || self.ng(v);
        Ok(self.push(Tensor { shape: s, data }, Op::AddChannelVec { x, v }, needs))
    }

    /// Multiplies channel `c` by `s[c]`.
    pub fn scale_channels(&mut self, x: Var, sv: Var) -> Result<Var> {
        let s = self.shape(x);
        if self.value(sv).data.len() != s.c {
            return Err(shape("channel scale size mismatch"));
        }
        let mut data = self.value(x).data.clone();
        let k = &self.value(sv).data;
        for (c, plane) in data.chunks_mut(s.plane()).enumerate() {
            plane.iter_mut().for_each(|p| *p *= k[c]);
        }
        let needs = self.ng(x) || self.ng(sv);
        Ok(self.push(Tensor { shape: s, data }, Op::ScaleChannels { x, s: sv }, needs))
    }

    /// Elementwise `gamma ⊙ f + beta`.
    pub fn affine(&mut self, f: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.same(f, gamma, "affine gamma")?;
        self.same(f, beta, "affine beta")?;
        let fv = &self.value(f).data;
        let gv = &self.value(gamma).data;
        let bv = &self.value(beta).data;
        let data = (0..fv.len()).map(|i| gv[i] * fv[i] + bv[i]).collect();
        let needs = self.ng(f) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor {
                shape: self.shape(f),
                data,
            },
            Op::Affine { f, gamma, beta },
            needs,
        ))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (h2, w2) = (s.h * 2, s.w * 2);
        let xv = &self.value(x).data;
        let mut data = vec![0.0; s.c * h2 * w2];
        for c in 0..s.c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    data[c * h2 * w2 + y * w2 + xx] = xv[c * s.plane() + (y / 2) * s.w + xx / 2];
                }
            }
        }
        let needs = self.ng(x);
        self.push(
            Tensor {
                shape: Shape::new(s.c, h2, w2),
                data,
            },
            Op::Upsample2x(x),
            needs,
        )
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.h != sb.h || sa.w != sb.w {
            return Err(shape(format!("concat {sa:?} with {sb:?}")));
        }
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor {
                shape: Shape::new(sa.c + sb.c, sa.h, sa.w),
                data,
            },
            Op::Concat(a, b),
            needs,
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let n = s.plane().max(1) as f64;
        let data = self
            .value(x)
            .data
            .chunks(s.plane().max(1))
            .map(|p| p.iter().sum::<f64>() / n)
            .collect();
        let needs = self.ng(x);
        self.push(Tensor::vector(data), Op::GlobalAvgPool(x), needs)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.value(x).data;
        let max = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| math::exp(v - max)).collect();
        let z: f64 = e.iter().sum();
        let data = e.into_iter().map(|v| v / z).collect();
        let needs = self.ng(x);
        self.push(Tensor::vector(data), Op::Softmax(x), needs)
    }

    pub fn reshape(&mut self, x: Var, s: Shape) -> Result<Var> {
        if self.shape(x).len() != s.len() {
            return Err(shape(format!("cannot reshape {:?} to {s:?}", self.shape(x))));
        }
        let data = self.value(x).data.clone();
        let needs = self.ng(x);
        Ok(self.push(Tensor { shape: s, data }, Op::Reshape(x), needs))
    }

    /// Mean squared error against a constant target; yields a scalar.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        if self.shape(x) != target.shape {
            return Err(shape(format!(
                "mse prediction {:?} vs target {:?}",
                self.shape(x),
                target.shape
            )));
        }
        let n = target.data.len().max(1) as f64;
        let loss = self
            .value(x)
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let needs = self.ng(x);
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::Mse {
                x,
                target: target.data.clone().into_boxed_slice(),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let needs = self.ng(x);
        self.push(Tensor::vector(vec![s]), Op::Sum(x), needs)
    }

    fn same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )))
        }
    }

    /// Back-propagates from the scalar `loss`, scaled by `seed`.
    pub fn backward(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.shape(loss).len() != 1 {
            return Err(shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![seed]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(key) => out.entries.push((*key, g)),
                Op::Conv { x, w, b, spec } => {
                    self.conv_backward(&mut grads, &g, *x, *w, *b, *spec);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).zip(bv).for_each(|((d, g), q)| *d += g * q)
                    });
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(&g).zip(av).for_each(|((d, g), p)| *d += g * p)
                    });
                }
                Op::Scale(x, s) => {
                    self.acc(&mut grads, *x, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += g * s));
                }
                Op::Silu(x) => {
                    let xv = &self.value(*x).data;
                    self.acc(&mut grads, *x, |d| {
                        for ((d, g), &v) in d.iter_mut().zip(&g).zip(xv) {
                            let sg = math::sigmoid(v);
                            *d += g * sg * (1.0 + v * (1.0 - sg));
                        }
                    });
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    xhat,
                    rstd,
                } => {
                    let s = self.shape(*x);
                    let plane = s.plane();
                    let gv = &self.value(*gamma).data;
                    self.acc(&mut grads, *gamma, |d| {
                        for (idx, (&gi, &xh)) in g.iter().zip(xhat.iter()).enumerate() {
                            d[idx / plane] += gi * xh;
                        }
                    });
                    self.acc(&mut grads, *beta, |d| {
                        for (idx, &gi) in g.iter().enumerate() {
                            d[idx / plane] += gi;
                        }
                    });
                    if self.ng(*x) {
                        let per = s.c / groups * plane;
                        let n = per as f64;
                        self.acc(&mut grads, *x, |d| {
                            for grp in 0..*groups {
                                let range = grp * per..(grp + 1) * per;
                                let mut sum_dxh = 0.0;
                                let mut sum_dxh_xh = 0.0;
                                for idx in range.clone() {
                                    let dxh = g[idx] * gv[idx / plane];
                                    sum_dxh += dxh;
                                    sum_dxh_xh += dxh * xhat[idx];
                                }
                                let r = rstd[grp];
                                for idx in range {
                                    let dxh = g[idx] * gv[idx / plane];
                                    d[idx] += r / n * (n * dxh - sum_dxh - xhat[idx] * sum_dxh_xh);
                                }
                            }
                        });
                    }
                }
                Op::Linear { x, w, b } => {
                    let n = self.shape(*x).len();
                    let m = g.len();
                    let xv = &self.value(*x).data;
                    let wv = &self.value(*w).data;
                    self.acc(&mut grads, *w, |d| gemm(m, 1, n, 1.0, &g, false, xv, false, 1.0, d));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                    self.acc(&mut grads, *x, |d| gemm(n, m, 1, 1.0, wv, true, &g, false, 1.0, d));
                }
                Op::AddChannelVec { x, v } => {
                    let plane = self.shape(*x).plane();
                    self.acc(&mut grads, *x, |d| add_into(d, &g));
                    self.acc(&mut grads, *v, |d| {
                        for (c, p) in g.chunks(plane).enumerate() {
                            d[c] += p.iter().sum::<f64>();
                        }
                    });
                }
                Op::ScaleChannels { x, s } => {
                    let plane = self.shape(*x).plane();
                    let xv = &self.value(*x).data;
                    let sv = &self.value(*s).data;
                    self.acc(&mut grads, *x, |d| {
                        for (idx, (d, gi)) in d.iter_mut().zip(&g).enumerate() {
                            *d += gi * sv[idx / plane];
                        }
                    });
                    self.acc(&mut grads, *s, |d| {
                        for (idx, (gi, xi)) in g.iter().zip(xv).enumerate() {
                            d[idx / plane] += gi * xi;
                        }
                    });
                }
                Op::Affine { f, gamma, beta } => {
                    let fv = &self.value(*f).data;
                    let gv = &self.value(*gamma).data;
                    self.acc(&mut grads, *f, |d| {
                        d.iter_mut().zip(&g).zip(gv).for_each(|((d, g), q)| *d += g * q)
                    });
                    self.acc(&mut grads, *gamma, |d| {
                        d.iter_mut().zip(&g).zip(fv).for_each(|((d, g), p)| *d += g * p)
                    });
                    self.acc(&mut grads, *beta, |d| add_into(d, &g));
                }
                Op::Upsample2x(x) => {
                    let s = self.shape(*x);
                    let (h2, w2) = (s.h * 2, s.w * 2);
                    self.acc(&mut grads, *x, |d| {
                        for c in 0..s.c {
                            for y in 0..h2 {
                                for xx in 0..w2 {
                                    d[c * s.plane() + (y / 2) * s.w + xx / 2] +=
                                        g[c * h2 * w2 + y * w2 + xx];
                                }
                            }
                        }
                    });
                }
                Op::Concat(a, b) => {
                    let na = self.shape(*a).len();
                    self.acc(&mut grads, *a, |d| add_into(d, &g[..na]));
                    self.acc(&mut grads, *b, |d| add_into(d, &g[na..]));
                }
                Op::GlobalAvgPool(x) => {
                    let plane = self.shape(*x).plane().max(1);
                    let n = plane as f64;
                    self.acc(&mut grads, *x, |d| {
                        for (idx, d) in d.iter_mut().enumerate() {
                            *d += g[idx / plane] / n;
                        }
                    });
                }
                Op::Softmax(x) => {
                    let y = &node.value.data;
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    self.acc(&mut grads, *x, |d| {
                        for ((d, gi), yi) in d.iter_mut().zip(&g).zip(y) {
                            *d += yi * (gi - dot);
                        }
                    });
                }
                Op::Reshape(x) => self.acc(&mut grads, *x, |d| add_into(d, &g)),
                Op::Mse { x, target } => {
                    let xv = &self.value(*x).data;
                    let k = 2.0 * g[0] / target.len().max(1) as f64;
                    self.acc(&mut grads, *x, |d| {
                        for ((d, a), b) in d.iter_mut().zip(xv).zip(target.iter()) {
                            *d += k * (a - b);
                        }
                    });
                }
                Op::Sum(x) => {
                    self.acc(&mut grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0]));
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.data.len()]);
        f(slot);
    }

    fn conv_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    ) {
        let xs = self.shape(x);
        let (ho, wo) = spec.output_hw(xs.h, xs.w);
        let p = ho * wo;
        let kk = spec.cin * spec.kernel * spec.kernel;
        let xv = &self.value(x).data;
        if let Some(b) = b {
            self.acc(grads, b, |d| {
                for (co, row) in g.chunks(p).enumerate() {
                    d[co] += row.iter().sum::<f64>();
                }
            });
        }
        let pointwise = spec.is_pointwise();
        if self.ng(w) {
            self.acc(grads, w, |d| {
                if pointwise {
                    gemm(spec.cout, p, kk, 1.0, g, false, xv, true, 1.0, d);
                } else {
                    let col = im2col(xv, xs, spec, ho, wo);
                    gemm(spec.cout, p, kk, 1.0, g, false, &col, true, 1.0, d);
                }
            });
        }
        if self.ng(x) {
            let wv = &self.value(w).data;
            self.acc(grads, x, |d| {
                if pointwise {
                    gemm(kk, spec.cout, p, 1.0, wv, true, g, false, 1.0, d);
                } else {
                    let mut dcol = vec![0.0; kk * p];
                    gemm(kk, spec.cout, p, 1.0, wv, true, g, false, 0.0, &mut dcol);
                    col2im_add(&dcol, d, xs, spec, ho, wo);
                }
            });
        }
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect()
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

fn im2col(x: &[f64], xs: Shape, spec: ConvSpec, ho: usize, wo: usize) -> Vec<f64> {
    let k = spec.kernel;
    let p = ho * wo;
    let mut col = vec![0.0; spec.cin * k * k * p];
    for ci in 0..spec.cin {
        let plane = &x[ci * xs.plane()..(ci + 1) * xs.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * xs.w..][..xs.w];
                    let dst = &mut row[oy * wo..][..wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < xs.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add(col: &[f64], dx: &mut [f64], xs: Shape, spec: ConvSpec, ho: usize, wo: usize) {
    let k = spec.kernel;
    let p = ho * wo;
    for ci in 0..spec.cin {
        let plane = &mut dx[ci * xs.plane()..(ci + 1) * xs.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * xs.w..][..xs.w];
                    for (ox, &v) in row[oy * wo..][..wo].iter().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < xs.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
