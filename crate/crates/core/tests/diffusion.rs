use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resqu_core::conditioning::{CondEncoder, EMBED_DIM};
use resqu_core::diffusion::*;
use resqu_core::networks::*;
use resqu_core::numerics::*;
use resqu_core::quave::{QuaveConfig, QuaveModel};
use resqu_core::synth::synth_image;
use resqu_core::Error;

fn tiny_cfg() -> UNetConfig {
    UNetConfig {
        channels: [8, 8, 16],
        time_dim: 8,
        temb_dim: 8,
    }
}

fn random_grid(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let mut g = ImageGrid::zeros(h, w, c);
    for v in g.data_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    g
}

fn example(h: usize, rng: &mut ChaCha8Rng) -> DiffusionExample {
    DiffusionExample {
        z0: random_grid(h, h, 4, rng),
        z_lr: random_grid(h, h, 4, rng),
        quave_emb: (0..EMBED_DIM).map(|_| rng.random::<f64>() - 0.5).collect(),
    }
}

struct Models {
    unet: UNet,
    us: ParamStore,
    cond: CondEncoder,
    cs: ParamStore,
}

fn models(seed: u64) -> Models {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut us = ParamStore::new();
    let unet = UNet::new(&mut us, tiny_cfg(), &mut rng).unwrap();
    UNet::freeze_backbone(&mut us);
    let mut cs = ParamStore::new();
    let cond = CondEncoder::with_hidden(&mut cs, &unet.config, 8, &mut rng).unwrap();
    Models { unet, us, cond, cs }
}

#[test]
fn zero_learning_rate_keeps_every_parameter() {
    let mut m = models(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = vec![example(8, &mut rng), example(8, &mut rng)];
    let (u0, c0) = (m.us.clone(), m.cs.clone());
    let sched = make_schedule(100, 1e-4, 0.02).unwrap();
    let loss = train_step(&m.unet, &mut m.us, &m.cond, &mut m.cs, &batch, &sched, &AdamW::with_lr(0.0), &mut rng).unwrap();
    assert!(loss.is_finite());
    for (a, b) in m.us.entries().iter().chain(m.cs.entries()).zip(u0.entries().iter().chain(c0.entries())) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn training_only_touches_adapter_and_conditioning() {
    let mut m = models(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = vec![example(8, &mut rng)];
    let u0 = m.us.clone();
    let sched = make_schedule(100, 1e-4, 0.02).unwrap();
    for _ in 0..3 {
        train_step(&m.unet, &mut m.us, &m.cond, &mut m.cs, &batch, &sched, &AdamW::with_lr(1e-3), &mut rng).unwrap();
    }
    let mut adapter_moved = false;
    for (a, b) in m.us.entries().iter().zip(u0.entries()) {
        if a.name.starts_with(ADAPTER_PREFIX) {
            adapter_moved |= a.value != b.value;
        } else {
            assert_eq!(a.value, b.value, "backbone entry {} moved", a.name);
        }
    }
    assert!(adapter_moved);
}

#[test]
fn fully_frozen_training_is_rejected() {
    let mut m = models(5);
    m.us.freeze_all();
    m.cs.freeze_all();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = vec![example(8, &mut rng)];
    let sched = make_schedule(100, 1e-4, 0.02).unwrap();
    let r = train_step(&m.unet, &mut m.us, &m.cond, &mut m.cs, &batch, &sched, &AdamW::default(), &mut rng);
    assert!(matches!(r, Err(Error::Frozen(_))));
    assert!(train_step(&m.unet, &mut models(5).us, &m.cond, &mut models(5).cs, &[], &sched, &AdamW::default(), &mut rng).is_err());
}

#[test]
fn objective_gradients_match_finite_differences() {
    let mut m = models(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for e in 0..m.us.len() {
        m.us.set_frozen(ParamId(e), false);
    }
    for name in ["out.conv.weight", "head.0.beta.weight", "head.1.gamma.weight", "head.2.beta.weight"] {
        let store = if name.starts_with("out") { &mut m.us } else { &mut m.cs };
        let id = store.id(name).unwrap();
        for v in store.entry_mut(id).value.iter_mut() {
            *v = 0.5 * (rng.random::<f64>() - 0.5);
        }
    }
    let sched = make_schedule(100, 1e-4, 0.02).unwrap();
    let exs = [example(4, &mut rng), example(4, &mut rng)];
    let samples: Vec<NoisedSample> = exs
        .iter()
        .enumerate()
        .map(|(i, ex)| NoisedSample {
            example: ex,
            t: 20 + 50 * i,
            eps: random_grid(4, 4, 4, &mut rng),
        })
        .collect();
    let (unet, cond) = (m.unet.clone(), m.cond.clone());
    let report = grad_check(
        &mut [&mut m.us, &mut m.cs],
        |s| {
            let parts = DenoiserParts {
                unet: &unet,
                unet_store: s[0],
                cond: &cond,
                cond_store: s[1],
            };
            let (l, gu, gc) = diffusion_loss_and_grads(parts, &samples, &sched)?;
            Ok((l, vec![gu, gc]))
        },
        GradCheckOptions {
            step: 1e-5,
            max_per_entry: Some(3),
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn examples_require_frozen_encoders() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut vs = ParamStore::new();
    let ae = Autoencoder::new(&mut vs, AutoencoderConfig { widths: [4, 8] }, &mut rng).unwrap();
    let mut qs = ParamStore::new();
    let qcfg = QuaveConfig {
        embed_dim: EMBED_DIM,
        widths: [8, 16],
        patch: 8,
    };
    let qm = QuaveModel::new(&mut qs, qcfg, &mut rng).unwrap();
    let hr = synth_image(32, 1);
    let lr = synth_image(8, 2);
    assert!(matches!(prepare_example(&ae, &vs, &qm, &qs, &hr, &lr), Err(Error::Frozen(_))));
    vs.freeze_all();
    assert!(matches!(prepare_example(&ae, &vs, &qm, &qs, &hr, &lr), Err(Error::Frozen(_))));
    qs.freeze_all();
    let ex = prepare_example(&ae, &vs, &qm, &qs, &hr, &lr).unwrap();
    assert_eq!(ex.z0.dims(), (8, 8, 4));
    assert_eq!(ex.z_lr.dims(), (8, 8, 4));
    assert_eq!(ex.quave_emb.len(), EMBED_DIM);
}

#[test]
fn conditioned_sampling_is_seed_deterministic() {
    let m = models(10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ex = example(8, &mut rng);
    let sched = make_schedule(50, 1e-4, 0.02).unwrap();
    let den = ConditionedDenoiser {
        parts: DenoiserParts {
            unet: &m.unet,
            unet_store: &m.us,
            cond: &m.cond,
            cond_store: &m.cs,
        },
        z_lr: ex.z_lr.clone(),
        quave_emb: ex.quave_emb.clone(),
        timesteps: 50,
    };
    let a = ddim_sample(&den, (8, 8, 4), &sched, 5, 0.0, 3).unwrap();
    assert_eq!(a, ddim_sample(&den, (8, 8, 4), &sched, 5, 0.0, 3).unwrap());
    let b = ddpm_sample(&den, (8, 8, 4), &sched, 3).unwrap();
    assert_eq!(b, ddpm_sample(&den, (8, 8, 4), &sched, 3).unwrap());
}

proptest! {
    #[test]
    fn q_sample_is_linear(seed in any::<u64>(), t in 0usize..1000, a in -2.0f64..2.0) {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (z1, z2) = (random_grid(3, 3, 4, &mut rng), random_grid(3, 3, 4, &mut rng));
        let (e1, e2) = (random_grid(3, 3, 4, &mut rng), random_grid(3, 3, 4, &mut rng));
        let mix = |p: &ImageGrid, q: &ImageGrid| p.zip_map(q, |x, y| x + a * y).unwrap();
        let lhs = q_sample(&mix(&z1, &z2), t, &mix(&e1, &e2), &s).unwrap();
        let rhs = mix(&q_sample(&z1, t, &e1, &s).unwrap(), &q_sample(&z2, t, &e2, &s).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        prop_assert_eq!(lhs.dims(), z1.dims());
        // Formula recomputation.
        let ab = s.alpha_bars[t];
        let want = z1.zip_map(&e1, |z, e| ab.sqrt() * z + (1.0 - ab).sqrt() * e).unwrap();
        prop_assert!(q_sample(&z1, t, &e1, &s).unwrap().max_abs_diff(&want).unwrap() < 1e-12);
    }
}
