use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resqu_core::networks::*;
use resqu_core::numerics::*;
use resqu_core::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageGrid {
    let mut r = rng(seed);
    let mut g = ImageGrid::zeros(h, w, c);
    for v in g.data_mut() {
        *v = r.random::<f64>();
    }
    g
}

fn random_tensor(s: Shape, scale: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(s, (0..s.len()).map(|_| scale * (r.random::<f64>() - 0.5)).collect()).unwrap()
}

fn tiny_ae(store: &mut ParamStore, seed: u64) -> Autoencoder {
    Autoencoder::new(store, AutoencoderConfig { widths: [4, 8] }, &mut rng(seed)).unwrap()
}

fn tiny_unet(store: &mut ParamStore, seed: u64) -> UNet {
    let cfg = UNetConfig {
        channels: [8, 8, 16],
        time_dim: 8,
        temb_dim: 8,
    };
    UNet::new(store, cfg, &mut rng(seed)).unwrap()
}

/// Plain loop: zero padding, stride 1, weights `[cout][cin][k][k]`.
fn conv_oracle(x: &Tensor, w: &[f64], b: &[f64], cout: usize, k: usize) -> Tensor {
    let Shape { c, h, w: wd } = x.shape;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(Shape::new(cout, h, wd));
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[o];
                for i in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w[((o * c + i) * k + ky) * k + kx] * x.data[i * h * wd + sy as usize * wd + sx as usize];
                        }
                    }
                }
                out.data[o * h * wd + y * wd + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn encode_shape_and_determinism() {
    let mut store = ParamStore::new();
    let ae = Autoencoder::new(&mut store, AutoencoderConfig::default(), &mut rng(1)).unwrap();
    let x = random_image(64, 64, 3, 2);
    let z = vae_encode(&ae, &store, &x).unwrap();
    assert_eq!(z.dims(), (16, 16, 4));
    assert_eq!(z, vae_encode(&ae, &store, &x).unwrap());
    let y = vae_decode(&ae, &store, &z, None, None, 0.0).unwrap();
    assert_eq!(y.dims(), (64, 64, 3));
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn encode_rejects_indivisible_dims() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 1);
    let x = random_image(30, 32, 3, 2);
    assert!(matches!(vae_encode(&ae, &store, &x), Err(Error::ShapeMismatch(_))));
}

#[test]
fn cfw_zero_weight_is_plain_decoding() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 3);
    let mut cstore = ParamStore::new();
    let cfw = CfwModule::new(&mut cstore, &ae.config, &mut rng(4)).unwrap();
    let x = random_image(16, 16, 3, 5);
    let z = vae_encode(&ae, &store, &x).unwrap();
    let feats = vae_features(&ae, &store, &random_image(16, 16, 3, 6)).unwrap();
    let plain = vae_decode(&ae, &store, &z, None, None, 0.0).unwrap();
    let fused0 = vae_decode(&ae, &store, &z, Some(&feats), Some((&cfw, &cstore)), 0.0).unwrap();
    assert_eq!(plain.data(), fused0.data());
    let fused1 = vae_decode(&ae, &store, &z, Some(&feats), Some((&cfw, &cstore)), 1.0).unwrap();
    assert!(plain.rms_diff(&fused1).unwrap() > 0.0);
}

#[test]
fn cfw_requires_features_when_enabled() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 3);
    let mut cstore = ParamStore::new();
    let cfw = CfwModule::new(&mut cstore, &ae.config, &mut rng(4)).unwrap();
    let z = ImageGrid::filled(4, 4, 4, 0.1);
    assert!(vae_decode(&ae, &store, &z, None, Some((&cfw, &cstore)), 0.5).is_err());
    let feats = vae_features(&ae, &store, &random_image(16, 16, 3, 6)).unwrap();
    assert!(vae_decode(&ae, &store, &z, Some(&feats), None, 0.5).is_err());
    assert!(vae_decode(&ae, &store, &z, Some(&feats), Some((&cfw, &cstore)), 1.5).is_err());
}

#[test]
fn cfw_fusion_law_matches_loop_oracle() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 7);
    let mut cstore = ParamStore::new();
    let cfw = CfwModule::new(&mut cstore, &ae.config, &mut rng(8)).unwrap();
    let w = 0.37;
    let mut tape = Tape::inference();
    let x = tape.input(Tensor::from_grid(&random_image(16, 16, 3, 9)));
    let (z, feats) = {
        let mut cx = Cx::new(&mut tape, &store, 0);
        ae.encode_tape(&mut cx, x).unwrap()
    };
    let fusion = Fusion {
        module: &cfw,
        store: &cstore,
        group: 1,
        features: &feats,
        w,
    };
    let (_, trace) = {
        let mut cx = Cx::new(&mut tape, &store, 0);
        ae.decode_tape(&mut cx, z, Some(&fusion)).unwrap()
    };
    for scale in 0..2 {
        let fe = tape.value(feats[scale]);
        let fd = tape.value(trace.pre_fusion[scale]);
        let mut cat = fe.clone();
        cat.data.extend_from_slice(&fd.data);
        cat.shape = Shape::new(fe.shape.c + fd.shape.c, fd.shape.h, fd.shape.w);
        let (c1, c2) = &cfw.scales[scale];
        let c = fd.shape.c;
        let mut h = conv_oracle(&cat, cstore.value(c1.w), cstore.value(c1.b), 2 * c, 3);
        h.data.iter_mut().for_each(|v| *v /= 1.0 + (-*v).exp());
        let corr = conv_oracle(&h, cstore.value(c2.w), cstore.value(c2.b), c, 3);
        let got = tape.value(trace.post_fusion[scale]);
        let worst = got
            .data
            .iter()
            .zip(fd.data.iter().zip(&corr.data))
            .map(|(g, (d, k))| (g - (d + w * k)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "scale {scale}: {worst:e}");
    }
}

#[test]
fn vae_zero_lr_leaves_params_unchanged() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 10);
    let before = store.clone();
    let batch = [random_image(8, 8, 3, 11)];
    let loss = vae_pretrain_step(&ae, &mut store, &batch, &AdamW::with_lr(0.0)).unwrap();
    assert!(loss.is_finite());
    for (a, b) in store.entries().iter().zip(before.entries()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn vae_frozen_training_is_rejected() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 10);
    store.freeze_all();
    let batch = [random_image(8, 8, 3, 11)];
    let r = vae_pretrain_step(&ae, &mut store, &batch, &AdamW::default());
    assert!(matches!(r, Err(Error::Frozen(_))));
}

#[test]
fn vae_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 12);
    let batch = [random_image(8, 8, 3, 13), random_image(8, 8, 3, 14)];
    let report = grad_check(
        &mut [&mut store],
        |s| {
            let (l, g) = vae_loss_and_grads(&ae, s[0], &batch)?;
            Ok((l, vec![g]))
        },
        GradCheckOptions {
            step: 1e-5,
            max_per_entry: Some(6),
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn cfw_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let ae = tiny_ae(&mut store, 15);
    store.freeze_all();
    let mut cstore = ParamStore::new();
    let cfw = CfwModule::new(&mut cstore, &ae.config, &mut rng(16)).unwrap();
    let x = Tensor::from_grid(&random_image(8, 8, 3, 17));
    let target = random_tensor(Shape::new(3, 8, 8), 1.0, 18);
    let report = grad_check(
        &mut [&mut cstore],
        |s| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let (z, feats) = ae.encode_tape(&mut Cx::new(&mut tape, &store, 0), xv)?;
            let fusion = Fusion {
                module: &cfw,
                store: s[0],
                group: 1,
                features: &feats,
                w: 0.8,
            };
            let (out, _) = ae.decode_tape(&mut Cx::new(&mut tape, &store, 0), z, Some(&fusion))?;
            let loss = tape.mse(out, &target)?;
            let g = tape.backward(loss, 1.0)?;
            assert!(g.for_group(0).is_empty());
            Ok((tape.scalar(loss), vec![g.for_group(1)]))
        },
        GradCheckOptions {
            step: 1e-5,
            max_per_entry: Some(8),
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn vae_loss_halves_within_1k_steps() {
    let mut store = ParamStore::new();
    let ae = Autoencoder::new(&mut store, AutoencoderConfig::default(), &mut rng(19)).unwrap();
    let corpus: Vec<ImageGrid> = (0..8)
        .map(|i| {
            let (fx, fy, ph) = (0.2 + 0.05 * i as f64, 0.1 + 0.03 * i as f64, i as f64);
            ImageGrid::from_fn(16, 16, 3, |y, x, c| {
                0.5 + 0.4 * ((fx * x as f64 + fy * y as f64 + ph + c as f64).sin())
            })
        })
        .collect();
    let opt = AdamW::with_lr(2e-3);
    let first = vae_loss_and_grads(&ae, &store, &corpus).unwrap().0;
    for step in 0..1000 {
        let b = [corpus[step % 8].clone(), corpus[(step + 3) % 8].clone()];
        vae_pretrain_step(&ae, &mut store, &b, &opt).unwrap();
    }
    let last = vae_loss_and_grads(&ae, &store, &corpus).unwrap().0;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

fn unet_inputs(tape: &mut Tape, cfg: &UNetConfig, h: usize, seed: u64) -> (Var, Var) {
    let z = tape.input(random_tensor(Shape::new(4, h, h), 2.0, seed));
    let t = tape.input(random_tensor(Shape::vector(cfg.time_dim), 2.0, seed + 1));
    (z, t)
}

fn sft_inputs(tape: &mut Tape, net: &UNet, h: usize, gamma: f64, beta: f64) -> Vec<SftVars> {
    net.hook_shapes(h, h)
        .unwrap()
        .into_iter()
        .map(|s| SftVars {
            gamma: tape.input(Tensor::filled(s, gamma)),
            beta: tape.input(Tensor::filled(s, beta)),
        })
        .collect()
}

#[test]
fn unet_output_shape_and_identity_modulation() {
    let mut store = ParamStore::new();
    let net = UNet::new(&mut store, UNetConfig::default(), &mut rng(20)).unwrap();
    // Break the zero-initialised head so outputs are informative.
    let head = store.id("out.conv.weight").unwrap();
    let n = store.entry(head).len();
    store.entry_mut(head).value = random_tensor(Shape::vector(n), 0.2, 21).data;
    let z = random_image(16, 16, 4, 22);
    let t: Vec<f64> = (0..512).map(|i| (i as f64 * 0.01).sin()).collect();
    let plain = unet_forward(&net, &store, &z, &t, None).unwrap();
    assert_eq!(plain.dims(), z.dims());
    let identity: Vec<SftMaps> = net
        .hook_shapes(16, 16)
        .unwrap()
        .iter()
        .map(|s| SftMaps {
            gamma: ImageGrid::filled(s.h, s.w, s.c, 1.0),
            beta: ImageGrid::filled(s.h, s.w, s.c, 0.0),
        })
        .collect();
    let cond = unet_forward(&net, &store, &z, &t, Some(&identity)).unwrap();
    assert_eq!(plain.data(), cond.data());

    let mut bumped = identity.clone();
    bumped[1].beta.set(3, 4, 5, 0.25);
    let moved = unet_forward(&net, &store, &z, &t, Some(&bumped)).unwrap();
    assert!(plain.rms_diff(&moved).unwrap() > 0.0);

    assert!(matches!(
        unet_forward(&net, &store, &z, &t, Some(&identity[..2])),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn modulation_only_affects_later_activations() {
    let mut store = ParamStore::new();
    let net = tiny_unet(&mut store, 23);
    let cfg = net.config;
    let run = |hook: Option<usize>| {
        let mut tape = Tape::inference();
        let (z, t) = unet_inputs(&mut tape, &cfg, 8, 24);
        let mut sft = sft_inputs(&mut tape, &net, 8, 1.0, 0.0);
        if let Some(k) = hook {
            let s = tape.shape(sft[k].beta);
            sft[k].beta = tape.input(Tensor::filled(s, 0.3));
        }
        let out = net.forward(&mut Cx::new(&mut tape, &store, 0), z, t, Some(&sft)).unwrap();
        let enc: Vec<Tensor> = out.encoder_feats.iter().map(|&v| tape.value(v).clone()).collect();
        let dec: Vec<Tensor> = out.decoder_feats.iter().map(|&v| tape.value(v).clone()).collect();
        (enc, dec)
    };
    let (enc0, dec0) = run(None);
    for k in 0..3 {
        let (enc, dec) = run(Some(k));
        assert_eq!(enc, enc0);
        for j in 0..=k {
            assert_eq!(dec[j], dec0[j], "hook {k} leaked into decoder block {j}");
        }
        for j in k + 1..3 {
            assert_ne!(dec[j], dec0[j]);
        }
    }
}

#[test]
fn unet_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let net = tiny_unet(&mut store, 25);
    let head = store.id("out.conv.weight").unwrap();
    let n = store.entry(head).len();
    store.entry_mut(head).value = random_tensor(Shape::vector(n), 0.5, 26).data;
    let cfg = net.config;
    let target = random_tensor(Shape::new(4, 4, 4), 1.0, 27);
    let report = grad_check(
        &mut [&mut store],
        |s| {
            let mut tape = Tape::new();
            let (z, t) = unet_inputs(&mut tape, &cfg, 4, 28);
            let mut sft = sft_inputs(&mut tape, &net, 4, 1.0, 0.0);
            for (i, p) in sft.iter_mut().enumerate() {
                let sh = tape.shape(p.gamma);
                p.gamma = tape.input(random_tensor(sh, 1.0, 40 + i as u64));
                p.beta = tape.input(random_tensor(sh, 1.0, 50 + i as u64));
            }
            let out = net.forward(&mut Cx::new(&mut tape, s[0], 0), z, t, Some(&sft))?;
            let loss = tape.mse(out.eps, &target)?;
            Ok((tape.scalar(loss), vec![tape.backward(loss, 1.0)?.for_group(0)]))
        },
        GradCheckOptions {
            step: 1e-5,
            max_per_entry: Some(4),
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn freezing_backbone_leaves_only_the_head() {
    let mut store = ParamStore::new();
    let _net = tiny_unet(&mut store, 29);
    UNet::freeze_backbone(&mut store);
    for e in store.entries() {
        assert_eq!(e.frozen, !e.name.starts_with(ADAPTER_PREFIX), "{}", e.name);
    }
    assert!(store.has_trainable());
}
