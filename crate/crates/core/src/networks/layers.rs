use alloc::format;
use alloc::vec;

use rand::Rng;

use crate::error::Result;
use crate::math;
use crate::numerics::{ConvSpec, ParamId, ParamStore, Tape, Var};

/// A tape bound to one parameter store.
pub struct Cx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub group: u8,
}

impl<'a> Cx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, group: u8) -> Self {
        Self { tape, store, group }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, self.group, id)
    }
}

/// Weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal scaled by the given gain.
    He(f64),
    Zero,
}

fn weights(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut impl Rng,
) -> Result<ParamId> {
    match init {
        Init::He(gain) => {
            let std = gain * math::sqrt(2.0 / fan_in as f64);
            store.add_normal(name, shape, std, rng)
        }
        Init::Zero => store.add_filled(name, shape, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl Conv {
    /// `kernel × kernel` convolution with "same" padding (`kernel / 2`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = weights(
            store,
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            cin * kernel * kernel,
            init,
            rng,
        )?;
        let b = store.add_filled(&format!("{name}.bias"), &[cout], 0.0)?;
        Ok(Self {
            w,
            b,
            spec: ConvSpec {
                cin,
                cout,
                kernel,
                stride,
                pad: kernel / 2,
            },
        })
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        cx.tape.conv2d(x, w, Some(b), self.spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = weights(store, &format!("{name}.weight"), &[dout, din], din, init, rng)?;
        let b = store.add_filled(&format!("{name}.bias"), &[dout], 0.0)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        cx.tape.linear(x, w, b)
    }
}

/// Group normalisation with groups of 8 channels (one group below 8).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let groups = if channels % 8 == 0 { channels / 8 } else { 1 };
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), &[channels], vec![1.0; channels])?,
            beta: store.add_filled(&format!("{name}.beta"), &[channels], 0.0)?,
            groups,
        })
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let g = cx.p(self.gamma);
        let b = cx.p(self.beta);
        cx.tape.group_norm(x, g, b, self.groups)
    }
}

/// Pre-activation residual block with optional per-channel embedding
/// injection between its two convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub norm1: GroupNorm,
    pub conv1: Conv,
    pub emb: Option<Linear>,
    pub norm2: GroupNorm,
    pub conv2: Conv,
    pub skip: Option<Conv>,
}

impl ResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), cin)?,
            conv1: Conv::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, Init::He(1.0), rng)?,
            emb: emb_dim
                .map(|d| Linear::new(store, &format!("{name}.emb"), d, cout, Init::He(0.5), rng))
                .transpose()?,
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), cout)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, Init::He(0.5), rng)?,
            skip: (cin != cout)
                .then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1, 1, Init::He(0.5), rng))
                .transpose()?,
        })
    }

    /// `emb` must already be activated; it is projected to one value per
    /// output channel and added after the first convolution.
    pub fn forward(&self, cx: &mut Cx, x: Var, emb: Option<Var>) -> Result<Var> {
        let h = self.norm1.forward(cx, x)?;
        let h = cx.tape.silu(h);
        let mut h = self.conv1.forward(cx, h)?;
        if let (Some(proj), Some(e)) = (&self.emb, emb) {
            let v = proj.forward(cx, e)?;
            h = cx.tape.add_channel_vec(h, v)?;
        }
        let h = self.norm2.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = self.conv2.forward(cx, h)?;
        let skip = match &self.skip {
            Some(c) => c.forward(cx, x)?,
            None => x,
        };
        cx.tape.add(skip, h)
    }
}
