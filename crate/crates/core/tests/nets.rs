use diffcoder_core::graph::Graph;
use diffcoder_core::nn::{count_params, solve_width_for_budget, Arch, Model, ModelSpec};
use diffcoder_core::schedule::{make_schedule, ScheduleKind};
use diffcoder_core::train::{diffusion_loss_graph, vae_loss_graph, DiffusionDraws};
use diffcoder_core::{Error, FlowField, Parameterization, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Layer-wise parameter arithmetic, written independently of the builders.
fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn conv_block(cin: usize, cout: usize, tdim: Option<usize>) -> usize {
    conv(cin, cout, 3) + cout + tdim.map_or(0, |t| t * 2 * cout + 2 * cout)
}

fn res_block(cin: usize, cout: usize, tdim: Option<usize>) -> usize {
    conv_block(cin, cout, tdim) + conv_block(cout, cout, tdim) + if cin != cout { conv(cin, cout, 1) } else { 0 }
}

fn attention(c: usize, ctx: usize) -> usize {
    c + 2 * conv(c, c, 1) + 2 * conv(ctx, c, 1)
}

fn oracle_count(arch: Arch, s: &ModelSpec) -> usize {
    let d = s.depth;
    let ch: Vec<usize> = (0..d).map(|l| (s.base_width * s.width_mult[l]).min(s.max_width)).collect();
    let enc_out = match arch {
        Arch::DiffCoder => s.latent_channels,
        Arch::Vae => 2 * s.latent_channels,
    };
    let mut enc = conv(1, ch[0], 3);
    let mut cin = ch[0];
    for &c in &ch {
        enc += res_block(cin, c, None) + res_block(c, c, None);
        cin = c;
    }
    if s.attention.encoder {
        enc += attention(ch[d - 1], ch[d - 1]);
    }
    enc += conv(ch[d - 1], enc_out, 2);
    let dec = match arch {
        Arch::Vae => {
            let mut n = conv(s.latent_channels, ch[d - 1], 3);
            let mut cin = ch[d - 1];
            if s.attention.decoder {
                n += attention(cin, cin);
            }
            for l in (0..d).rev() {
                n += res_block(cin, ch[l], None) + res_block(ch[l], ch[l], None);
                cin = ch[l];
            }
            n + conv(cin, 1, 3)
        }
        Arch::DiffCoder => {
            let t = s.time_embed_dim;
            let tt = Some(t);
            let mut n = 2 * (t * t + t) + conv(1 + s.latent_channels, ch[0], 3);
            let mut cin = ch[0];
            for &c in &ch {
                n += res_block(cin, c, tt) + res_block(c, c, tt);
                cin = c;
            }
            n += 2 * res_block(cin, cin, tt);
            if s.attention.decoder {
                n += attention(cin, cin) + attention(cin, s.latent_channels);
            }
            for l in (0..d).rev() {
                n += res_block(cin + ch[l], ch[l], tt) + res_block(ch[l], ch[l], tt);
                cin = ch[l];
            }
            n + conv(cin, 1, 3)
        }
    };
    enc + dec
}

fn random_field(n: usize, h: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(&[n, 1, h, h], (0..n * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn builder_counts_match_layerwise_oracle() {
    for arch in [Arch::DiffCoder, Arch::Vae] {
        for depth in 1..=4 {
            for bw in [4, 6, 10] {
                for (enc, dec) in [(false, false), (true, false), (false, true), (true, true)] {
                    let mut s = ModelSpec::new(depth, bw).with_attention(enc, dec);
                    s.max_width = 3 * bw;
                    let built = Model::<f32>::build(arch, s.clone(), 0).unwrap().num_params();
                    assert_eq!(built, oracle_count(arch, &s), "{arch} {s:?}");
                    assert_eq!(count_params(arch, &s).unwrap(), built);
                }
            }
        }
    }
}

#[test]
fn solver_hits_budget_and_is_monotone() {
    for arch in [Arch::DiffCoder, Arch::Vae] {
        for depth in [2, 3, 4] {
            let mut prev = 0;
            for budget in [100_000usize, 200_000, 400_000, 800_000] {
                let s = solve_width_for_budget(budget, depth, arch).unwrap();
                let n = oracle_count(arch, &s) as f64;
                assert!((n / budget as f64 - 1.0).abs() <= 0.1, "{arch} d{depth} {budget}: {n}");
                assert!(s.base_width > prev);
                assert_eq!(s.base_width % 2, 0);
                prev = s.base_width;
                assert_eq!(solve_width_for_budget(budget, depth, arch).unwrap(), s);
            }
        }
    }
    assert!(matches!(solve_width_for_budget(1000, 3, Arch::DiffCoder), Err(Error::Budget { .. })));
}

#[test]
fn latent_shapes_follow_the_depth_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for depth in [2, 3, 4] {
        for h in [32, 64] {
            let spec = ModelSpec::new(depth, 4);
            let m = Model::<f32>::build(Arch::DiffCoder, spec.clone(), 3).unwrap();
            let x = random_field(1, h, &mut rng).cast::<f32>();
            let z = m.encode_batch(&x).unwrap();
            assert_eq!(z.shape(), [1, 1, h >> depth, h >> depth]);
            let pred = m.unet_forward(&x, &[10], &z).unwrap();
            assert_eq!(pred.values.len(), h * h);
            assert_eq!(pred.parameterization, Parameterization::V);
            let vae = Model::<f32>::build(Arch::Vae, spec, 3).unwrap();
            assert_eq!(vae.vae_reconstruct(&x).unwrap().shape(), x.shape());
        }
    }
    let spec = ModelSpec::new(4, 4);
    assert_eq!(spec.latent_shape(256, 256).unwrap(), (16, 16));
    assert_eq!(ModelSpec::new(3, 4).latent_shape(256, 256).unwrap(), (32, 32));
    let m = Model::<f32>::build(Arch::DiffCoder, spec, 0).unwrap();
    let bad = Tensor::<f32>::zeros(&[1, 1, 48, 48]);
    assert!(matches!(m.encode_batch(&bad), Err(Error::Divisibility { side: 48, depth: 4 })));
}

#[test]
fn encoder_is_deterministic_and_shift_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = Model::<f64>::build(Arch::DiffCoder, ModelSpec::new(2, 4), 9).unwrap();
    let x = random_field(1, 32, &mut rng);
    let f = FlowField::new(32, 32, x.data().to_vec()).unwrap();
    let z1 = m.encode(&f).unwrap();
    let z2 = m.encode(&f).unwrap();
    assert_eq!(z1, z2);
    assert_eq!(z1.shape(), (8, 8, 1));
    assert_eq!(m.encode(&f.roll(32, 0)).unwrap(), z1);
    // A shift by a multiple of the reduction factor shifts the latent.
    let shifted = m.encode(&f.roll(8, 4)).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let a = shifted.at(0, (i + 2) % 8, (j + 1) % 8);
            assert!((a - z1.at(0, i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_flags_control_module_count() {
    let s = ModelSpec::new(2, 4);
    assert_eq!(Model::<f32>::build(Arch::DiffCoder, s.clone(), 0).unwrap().attention_modules(), 0);
    let m = Model::<f32>::build(Arch::DiffCoder, s.with_attention(true, true), 0).unwrap();
    assert_eq!(m.attention_modules(), 3);
}

#[test]
fn unet_is_deterministic_and_time_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = Model::<f32>::build(Arch::DiffCoder, ModelSpec::new(2, 4).with_attention(false, true), 5).unwrap();
    let x = random_field(1, 16, &mut rng).cast::<f32>();
    let z = m.encode_batch(&x).unwrap();
    let a = m.unet_forward(&x, &[100], &z).unwrap();
    let b = m.unet_forward(&x, &[100], &z).unwrap();
    let c = m.unet_forward(&x, &[700], &z).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.values, c.values);
    assert!(m.unet_forward(&x, &[1, 2], &z).is_err());
}

#[test]
fn vae_eval_is_deterministic_and_sampling_varies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = Model::<f64>::build(Arch::Vae, ModelSpec::new(2, 4), 5).unwrap();
    let x = random_field(2, 16, &mut rng);
    let a = m.vae_reconstruct(&x).unwrap();
    assert_eq!(a, m.vae_reconstruct(&x).unwrap());
    let (s, mu, logvar) = m.vae_forward(&x, Some(&mut rng)).unwrap();
    assert_eq!(mu.shape(), [2, 1, 4, 4]);
    assert_eq!(logvar.shape(), mu.shape());
    assert_ne!(s, a);
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences on `count` randomly chosen scalar weights.
fn check_gradients(model: &Model<f64>, count: usize, seed: u64, loss: impl Fn(&Model<f64>, bool) -> (f64, Option<Vec<Option<Vec<f64>>>>)) {
    let (_, grads) = loss(model, true);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store().ids().collect();
    let h = 1e-4;
    let mut checked = 0;
    while checked < count {
        let id = ids[rng.gen_range(0..ids.len())];
        let Some(g) = &grads[id.index()] else { continue };
        let i = rng.gen_range(0..g.len());
        let mut plus = model.clone();
        plus.store_mut().tensor_mut(id).data_mut()[i] += h;
        let mut minus = model.clone();
        minus.store_mut().tensor_mut(id).data_mut()[i] -= h;
        let fd = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
        let gap = relative_gap(g[i], fd);
        assert!(gap < 1e-3, "{}[{i}]: analytic {} vs numeric {fd} ({gap:e})", model.store().name(id), g[i]);
        checked += 1;
    }
}

#[test]
fn unet_output_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = Model::<f64>::build(Arch::DiffCoder, ModelSpec::new(2, 4).with_attention(true, true), 6).unwrap();
    let x = random_field(2, 16, &mut rng);
    let z = Tensor::new(&[2, 1, 4, 4], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    check_gradients(&m, 24, 7, |m, grad| {
        let mut g = if grad { Graph::new(m.store()) } else { Graph::inference(m.store()) };
        let xv = g.input(x.clone());
        let zv = g.input(z.clone());
        let out = m.unet_graph(&mut g, xv, &[3, 400], zv);
        let loss = g.weighted_mse(out, vec![0.0; 512], vec![1.0, 1.0]);
        let v = g.value(loss).item();
        (v, grad.then(|| g.backward(loss).into_params()))
    });
}

#[test]
fn diffusion_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = Model::<f64>::build(Arch::DiffCoder, ModelSpec::new(2, 4), 8).unwrap();
    let sched = make_schedule(ScheduleKind::Sigmoid, 1000, -15.0, 15.0).unwrap();
    let x = random_field(2, 16, &mut rng);
    let draws = DiffusionDraws::<f64> { timesteps: vec![350, 800], noise: random_field(2, 16, &mut rng) };
    check_gradients(&m, 24, 9, |m, grad| {
        let mut g = if grad { Graph::new(m.store()) } else { Graph::inference(m.store()) };
        let loss = diffusion_loss_graph(m, &mut g, &x, &draws, &sched).unwrap();
        let v = g.value(loss).item();
        (v, grad.then(|| g.backward(loss).into_params()))
    });
}

#[test]
fn vae_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = Model::<f64>::build(Arch::Vae, ModelSpec::new(2, 4).with_attention(true, true), 10).unwrap();
    let x = random_field(2, 16, &mut rng);
    let xi = Tensor::new(&[2, 1, 4, 4], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    check_gradients(&m, 24, 11, |m, grad| {
        let mut g = if grad { Graph::new(m.store()) } else { Graph::inference(m.store()) };
        let (loss, _, _) = vae_loss_graph(m, &mut g, &x, xi.clone(), 0.3).unwrap();
        let v = g.value(loss).item();
        (v, grad.then(|| g.backward(loss).into_params()))
    });
}
