//! Acceptance gate: runs every acceptance criterion at its stated tolerance
//! and prints one PASS/FAIL line per criterion. Criterion 9 is stochastic
//! and soft: its line is printed either way and its artifacts are kept under
//! the target directory, but it does not decide the exit status.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use diffcoder::checkpoint::{load_checkpoint, save_checkpoint};
use diffcoder::cli::{cmd_mosaic, generate_dataset, GenDataArgs, MosaicArgs};
use diffcoder::eval::{evaluate_checkpoint, write_report, EvalOptions, EvalReport, MODEL};
use diffcoder::fit::{fit, FINAL};
use diffcoder_core::graph::Graph;
use diffcoder_core::metrics::{
    energy_spectrum, evaluate, highfreq_spectral_error, rel_l2,
};
use diffcoder_core::nn::{solve_width_for_budget, Arch, Model, ModelSpec};
use diffcoder_core::sampler::{ddim_sample_from, Denoiser};
use diffcoder_core::schedule::{convert_prediction, forward_sample, make_schedule, v_target, NoiseSchedule};
use diffcoder_core::train::{diffusion_loss_graph, vae_loss_graph, DiffusionDraws, TrainConfig};
use diffcoder_core::{DenoiserPrediction, FlowField, Parameterization, ScheduleKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn sigmoid_schedule() -> NoiseSchedule {
    make_schedule(ScheduleKind::Sigmoid, 1000, -15.0, 15.0).unwrap()
}

fn criterion_1() -> Check {
    let s = sigmoid_schedule();
    let ab = s.alpha_bars();
    ensure((2..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)), || "alpha_bar is not strictly decreasing".into())?;
    let mid = s.alpha_bar(500);
    ensure((mid - 0.5).abs() <= 1e-12, || format!("alpha_bar(T/2) = {mid}"))?;
    // 1 − ᾱ is taken from the stored complement, which is checked against
    // the naive difference in absolute terms; the naive difference itself
    // loses ~7 digits next to t = 1.
    let (mut worst, mut worst_exp, mut worst_abs) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=1000 {
        let (a, c) = (s.alpha_bar(t), s.one_minus_alpha_bar(t));
        worst_abs = worst_abs.max((c - (1.0 - a)).abs());
        let direct = a / c;
        worst = worst.max((s.snr(t) - direct).abs() / direct);
        let lambda = (1.0 - t as f64 / 1000.0) * 15.0 + (t as f64 / 1000.0) * -15.0;
        worst_exp = worst_exp.max((s.snr(t) - lambda.exp()).abs() / lambda.exp());
    }
    ensure(worst_abs <= 1e-15, || format!("1 - alpha_bar complement off by {worst_abs:e}"))?;
    ensure(worst <= 1e-12, || format!("SNR mismatch {worst:e}"))?;
    ensure(worst_exp <= 1e-12, || format!("SNR differs from exp(lambda) by {worst_exp:e}"))?;
    Ok(format!(
        "{} entries, alpha_bar(500) = {mid}, SNR vs alpha_bar/(1-alpha_bar) {worst:.1e}, vs exp(lambda) {worst_exp:.1e}",
        ab.len()
    ))
}

fn criterion_2() -> Check {
    let s = sigmoid_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ts: Vec<usize> = (0..20).map(|i| 1 + i * 999 / 19).collect();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x0 = normals(256, &mut rng);
        let eps = normals(256, &mut rng);
        for &t in &ts {
            let x_t = forward_sample(&x0, t, &eps, &s).unwrap();
            let v = v_target(&x0, &eps, t, &s).unwrap();
            let preds = [
                DenoiserPrediction::new(v.clone(), Parameterization::V),
                DenoiserPrediction::new(eps.clone(), Parameterization::Epsilon),
                DenoiserPrediction::new(x0.clone(), Parameterization::X0),
            ];
            for p in &preds {
                let (xh, eh) = convert_prediction(p, &x_t, t, &s).map_err(|e| e.to_string())?;
                worst = worst.max(rel(&xh, &x0)).max(rel(&eh, &eps));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("worst relative error {worst:e}"))?;
    Ok(format!("1000 fields x 20 timesteps x 3 parameterizations, worst relative error {worst:.1e}"))
}

/// Answers with the exact velocity implied by the known clean field.
struct Oracle<'a> {
    x0: &'a [f64],
    sched: &'a NoiseSchedule,
}

impl Denoiser<f64> for Oracle<'_> {
    fn predict(&mut self, x_t: &[f64], t: usize) -> diffcoder_core::Result<DenoiserPrediction<f64>> {
        let (a, s) = self.sched.coefficients(t)?;
        let eps: Vec<f64> = x_t.iter().zip(self.x0).map(|(x, x0)| (x - a * x0) / s).collect();
        Ok(DenoiserPrediction::new(v_target(self.x0, &eps, t, self.sched)?, Parameterization::V))
    }
}

fn criterion_3() -> Check {
    let s = sigmoid_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = normals(64 * 64, &mut rng);
    let x_t = normals(64 * 64, &mut rng);
    let mut out = String::new();
    for steps in [1, 5, 20, 1000] {
        let x = ddim_sample_from(&mut Oracle { x0: &x0, sched: &s }, x_t.clone(), &s, steps).map_err(|e| e.to_string())?;
        let r = rel(&x, &x0);
        ensure(r <= 1e-5, || format!("steps {steps}: relative error {r:e}"))?;
        let _ = write!(out, "steps {steps}: {r:.1e}; ");
    }
    Ok(out.trim_end_matches("; ").into())
}

fn criterion_4() -> Check {
    let s = sigmoid_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = [1.3, -0.6, 0.0];
    let n = 10_000usize;
    let mut worst = 0.0f64;
    for t in [1, 100, 500, 800, 1000] {
        let mut draws = vec![Vec::with_capacity(n); x0.len()];
        for _ in 0..n {
            let x = forward_sample(&x0, t, &normals(x0.len(), &mut rng), &s).unwrap();
            for (d, v) in draws.iter_mut().zip(x) {
                d.push(v);
            }
        }
        for (d, &x) in draws.iter().zip(&x0) {
            let (mean, var) = (s.alpha_bar(t).sqrt() * x, s.one_minus_alpha_bar(t));
            let nf = n as f64;
            let m = d.iter().sum::<f64>() / nf;
            let v = d.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (nf - 1.0);
            let zm = (m - mean).abs() / (var / nf).sqrt();
            let zv = (v - var).abs() / (var * (2.0 / (nf - 1.0)).sqrt());
            ensure(zm <= 3.0 && zv <= 3.0, || format!("t = {t}: mean z {zm:.2}, variance z {zv:.2}"))?;
            worst = worst.max(zm).max(zv);
        }
    }
    Ok(format!("10^4 draws at 5 timesteps, largest deviation {worst:.2} sigma"))
}

fn gradient_gap(model: &Model<f64>, count: usize, seed: u64, loss: impl Fn(&Model<f64>, bool) -> (f64, Option<Vec<Option<Vec<f64>>>>)) -> Result<f64, String> {
    let grads = loss(model, true).1.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store().ids().collect();
    let h = 1e-4;
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < count {
        let id = ids[rng.gen_range(0..ids.len())];
        let Some(g) = &grads[id.index()] else { continue };
        let i = rng.gen_range(0..g.len());
        let mut plus = model.clone();
        plus.store_mut().tensor_mut(id).data_mut()[i] += h;
        let mut minus = model.clone();
        minus.store_mut().tensor_mut(id).data_mut()[i] -= h;
        let fd = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
        let gap = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-8);
        ensure(gap < 1e-3, || format!("{}[{i}]: analytic {} vs numeric {fd}", model.store().name(id), g[i]))?;
        worst = worst.max(gap);
        checked += 1;
    }
    Ok(worst)
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sched = sigmoid_schedule();
    let field = |rng: &mut ChaCha8Rng| Tensor::new(&[2, 1, 16, 16], normals(512, rng));
    let diff = Model::<f64>::build(Arch::DiffCoder, ModelSpec::new(2, 4), 8).unwrap();
    let vae = Model::<f64>::build(Arch::Vae, ModelSpec::new(2, 4).with_attention(true, true), 10).unwrap();
    ensure(diff.num_params() <= 50_000 && vae.num_params() <= 50_000, || "toy models exceed 50K parameters".into())?;
    let x = field(&mut rng);
    let draws = DiffusionDraws::<f64> { timesteps: vec![350, 800], noise: field(&mut rng) };
    let gd = gradient_gap(&diff, 24, 9, |m, grad| {
        let mut g = if grad { Graph::new(m.store()) } else { Graph::inference(m.store()) };
        let loss = diffusion_loss_graph(m, &mut g, &x, &draws, &sched).unwrap();
        let v = g.value(loss).item();
        (v, grad.then(|| g.backward(loss).into_params()))
    })?;
    let xi = Tensor::new(&[2, 1, 4, 4], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let gv = gradient_gap(&vae, 24, 11, |m, grad| {
        let mut g = if grad { Graph::new(m.store()) } else { Graph::inference(m.store()) };
        let (loss, _, _) = vae_loss_graph(m, &mut g, &x, xi.clone(), 0.3).unwrap();
        let v = g.value(loss).item();
        (v, grad.then(|| g.backward(loss).into_params()))
    })?;
    Ok(format!(
        "24 weights per loss; diffusion ({} params) worst gap {gd:.1e}, VAE ({} params) worst gap {gv:.1e}",
        diff.num_params(),
        vae.num_params()
    ))
}

fn criterion_6() -> Check {
    for (n, k0, amp) in [(32usize, 3usize, 1.7), (64, 10, 0.4), (16, 7, 2.0)] {
        let f = FlowField::from_fn(n, n, |_, j| amp * (k0 as f64 * 2.0 * PI * j as f64 / n as f64).cos());
        let e = energy_spectrum(&f).map_err(|e| e.to_string())?;
        let oracle = oracles::spectrum(f.values(), n, n);
        let frac = e.at(k0) / e.total();
        ensure(frac >= 1.0 - 1e-10, || format!("n {n}, k0 {k0}: shell fraction {frac}"))?;
        let gap = (e.at(k0) - oracle[k0 - 1]).abs() / oracle[k0 - 1];
        ensure(gap <= 1e-8, || format!("n {n}, k0 {k0}: oracle gap {gap:e}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let f = FlowField::from_fn(32, 32, |_, _| rng.gen_range(-1.0..1.0));
        let total = energy_spectrum(&f).map_err(|e| e.to_string())?.total();
        let ke = oracles::kinetic_energy(f.values(), 32, 32);
        worst = worst.max((total - ke).abs() / ke);
    }
    ensure(worst <= 1e-4, || format!("Parseval gap {worst:e}"))?;
    Ok(format!("single modes matched; Parseval on 1000 fields, worst relative gap {worst:.1e}"))
}

/// Scales every shell of `f` by `gain(k)` through the oracle transform pair.
fn scale_shells(f: &FlowField, gain: impl Fn(usize) -> f64) -> FlowField {
    let n = f.height();
    let mut c = oracles::dft2(f.values(), n, n);
    for ky in 0..n {
        for kx in 0..n {
            let (a, b) = (oracles::signed(kx, n), oracles::signed(ky, n));
            if a == 0 && b == 0 {
                continue;
            }
            let k = ((((a * a + b * b) as f64).sqrt() + 0.5).floor() as usize).min(n / 2);
            c[ky * n + kx] *= gain(k);
        }
    }
    FlowField::new(n, n, oracles::idft2(&c, n, n).iter().map(|z| z.re).collect()).unwrap()
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = FlowField::from_fn(32, 32, |_, _| rng.gen_range(-1.0..1.0));
    let e = |r: diffcoder_core::Result<f64>| r.map_err(|e| e.to_string());
    ensure(e(rel_l2(&x, &x))? == 0.0, || "rel_l2(x, x) != 0".into())?;
    ensure(e(rel_l2(&FlowField::zeros(32, 32), &x))? == 1.0, || "rel_l2(0, x) != 1".into())?;
    ensure(e(rel_l2(&x.map(|v| 2.0 * v), &x))? == 1.0, || "rel_l2(2x, x) != 1".into())?;
    let m = evaluate(&x, &x).map_err(|e| e.to_string())?;
    ensure(m.spectral == 0.0 && m.spectral_high == 0.0, || format!("spectral errors on identical inputs: {m:?}"))?;
    // k_max = 16, so the lower 75% of shells is k <= 12.
    let rec = FlowField::from_fn(32, 32, |_, _| rng.gen_range(-1.0..1.0));
    let base = e(highfreq_spectral_error(&rec, &x))?;
    let mut worst = 0.0f64;
    for g in [0.3, 2.0, 7.5] {
        let moved = scale_shells(&rec, |k| if k <= 12 { g } else { 1.0 });
        worst = worst.max((e(highfreq_spectral_error(&moved, &x))? - base).abs() / base);
    }
    ensure(worst <= 1e-9, || format!("high band moved by {worst:e} under low-shell perturbations"))?;
    Ok(format!("identities exact; high-band change under low-shell perturbations {worst:.1e}"))
}

fn criterion_8() -> Check {
    let mut lines = Vec::new();
    for arch in [Arch::Vae, Arch::DiffCoder] {
        for budget in [100_000usize, 200_000, 400_000] {
            for depth in [2usize, 3, 4] {
                let spec = solve_width_for_budget(budget, depth, arch).map_err(|e| e.to_string())?;
                let model = Model::<f32>::build(arch, spec.clone(), 0).map_err(|e| e.to_string())?;
                let n = model.num_params();
                let dev = (n as f64 - budget as f64) / budget as f64;
                ensure(dev.abs() <= 0.1, || format!("{arch} {budget} depth {depth}: {n} parameters"))?;
                let x = Tensor::new(&[1, 1, 64, 64], vec![0.25f32; 64 * 64]);
                let z = model.encode_batch(&x).map_err(|e| e.to_string())?;
                let side = 64 >> depth;
                ensure(z.shape()[0] == 1 && z.shape()[2..] == [side, side], || format!("latent shape {:?}", z.shape()))?;
                lines.push(format!("{arch}/{budget}/d{depth}: {:+.1}%", 100.0 * dev));
            }
        }
    }
    let spec = solve_width_for_budget(100_000, 3, Arch::DiffCoder).map_err(|e| e.to_string())?;
    let model = Model::<f32>::build(Arch::DiffCoder, spec, 0).map_err(|e| e.to_string())?;
    let z = model.encode_batch(&Tensor::new(&[1, 1, 256, 256], vec![0.5f32; 256 * 256])).map_err(|e| e.to_string())?;
    ensure(z.shape()[2..] == [32, 32], || format!("256x256 at depth 3 gives {:?}", z.shape()))?;
    let ratio = (256 * 256) / (z.shape()[2] * z.shape()[3]);
    ensure(ratio == 64, || format!("compression {ratio}x"))?;
    Ok(format!("{}; 256x256 depth 3 -> 32x32 ({ratio}x)", lines.join(", ")))
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffcoder"));
    c.env_remove("DIFFCODER_CACHE");
    c
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.into_iter().map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap())).collect()
}

fn criterion_10(root: &Path) -> Check {
    let _ = fs::remove_dir_all(root);
    let gen = |name: &str| -> Result<PathBuf, String> {
        let out = root.join(name);
        run_ok(bin().args(["gen-data", "--grid", "32", "--traj", "6", "--frames", "4", "--seed", "11", "--out"]).arg(&out))?;
        Ok(out)
    };
    let (a, b) = (gen("data_a")?, gen("data_b")?);
    ensure(dir_bytes(&a) == dir_bytes(&b), || "datasets differ".into())?;
    let train = |arch: &str, name: &str| -> Result<PathBuf, String> {
        let out = root.join(name);
        run_ok(
            bin()
                .args(["train", "--arch", arch, "--size", "100K", "--depth", "2", "--epochs", "2", "--batch-size", "4"])
                .args(["--seed", "3", "--quiet", "--data"])
                .arg(&a)
                .arg("--out")
                .arg(&out),
        )?;
        Ok(out.join(FINAL))
    };
    for arch in ["diffcoder", "vae"] {
        let (c1, c2) = (train(arch, &format!("{arch}_1"))?, train(arch, &format!("{arch}_2"))?);
        ensure(dir_bytes(&c1) == dir_bytes(&c2), || format!("{arch} checkpoints differ"))?;
        let (model, meta) = load_checkpoint(&c1).map_err(|e| e.to_string())?;
        let copy = root.join(format!("{arch}_copy"));
        save_checkpoint(&model, &meta, &copy).map_err(|e| e.to_string())?;
        ensure(dir_bytes(&copy) == dir_bytes(&c1), || format!("{arch} re-save differs"))?;
        let (again, _) = load_checkpoint(&copy).map_err(|e| e.to_string())?;
        let x = Tensor::new(&[2, 1, 32, 32], (0..2048).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect());
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let same = match model.arch() {
            Arch::DiffCoder => {
                let z = model.encode_batch(&x).map_err(|e| e.to_string())?;
                let p = model.unet_forward(&x, &[5, 600], &z).map_err(|e| e.to_string())?;
                let q = again.unet_forward(&x, &[5, 600], &again.encode_batch(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
                bits(&p.values) == bits(&q.values)
            }
            Arch::Vae => {
                bits(model.vae_reconstruct(&x).map_err(|e| e.to_string())?.data())
                    == bits(again.vae_reconstruct(&x).map_err(|e| e.to_string())?.data())
            }
        };
        ensure(same, || format!("{arch} forward pass changed after save/load"))?;
    }
    Ok("gen-data and train reruns byte-identical; save/load/forward bitwise-stable for both architectures".into())
}

const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const DESK_RATIO: f64 = 0.8;

fn desk_seed(root: &Path, seed: u64, log: &mut String) -> Result<(f64, f64), String> {
    let dir = root.join(format!("seed{seed}"));
    let args = GenDataArgs {
        grid: 64,
        traj: 48,
        frames: 16,
        slope: -3.0,
        forcing_k: 4,
        seed,
        test: Some(8),
        out: dir.join("data"),
    };
    let ds = generate_dataset(&args).map_err(|e| e.to_string())?;
    diffcoder::dataset_io::write_dataset(&ds, &args.out).map_err(|e| e.to_string())?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for arch in [Arch::Vae, Arch::DiffCoder] {
        let spec = solve_width_for_budget(100_000, 4, arch).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let run = dir.join(arch.to_string());
        let started = Instant::now();
        fit(arch, &spec, &cfg, &ds, &run, false).map_err(|e| format!("{arch}: {e}"))?;
        let trained = started.elapsed();
        let (model, meta) = load_checkpoint(&run.join(FINAL)).map_err(|e| e.to_string())?;
        let (report, recon) = evaluate_checkpoint(&model, &meta, &ds, &EvalOptions { seed, ..EvalOptions::default() })
            .map_err(|e| e.to_string())?;
        let eval_dir = run.join("eval");
        write_report(&eval_dir, &report, &recon).map_err(|e| e.to_string())?;
        let args = MosaicArgs { eval: eval_dir.clone(), data: args.out.clone(), out: eval_dir.join("mosaics"), percentiles: vec![40.0, 60.0] };
        cmd_mosaic(&args).map_err(|e| e.to_string())?;
        let m = report.method(MODEL).unwrap().mean;
        let _ = writeln!(
            log,
            "seed {seed} {arch}: {} params, trained in {:.0} s, rel_l2 {:.4}, spectral {:.4}, spectral_high {:.4}",
            report.num_params,
            trained.as_secs_f64(),
            m.rel_l2,
            m.spectral,
            m.spectral_high
        );
        reports.push(report);
    }
    let base = reports[0].method("bicubic").unwrap().mean;
    let _ = writeln!(
        log,
        "seed {seed} bicubic: rel_l2 {:.4}, spectral {:.4}, spectral_high {:.4}",
        base.rel_l2, base.spectral, base.spectral_high
    );
    Ok((reports[0].method(MODEL).unwrap().mean.spectral_high, reports[1].method(MODEL).unwrap().mean.spectral_high))
}

fn criterion_9(root: &Path) -> Check {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let mut log = String::new();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in DESK_SEEDS {
        let (vae, diff) = desk_seed(root, seed, &mut log)?;
        let ok = diff <= DESK_RATIO * vae;
        wins += ok as usize;
        let _ = writeln!(log, "seed {seed}: VAE {vae:.4}, DiffCoder {diff:.4}, ratio {:.3} ({})", diff / vae, if ok { "win" } else { "loss" });
        parts.push(format!("seed {seed}: {vae:.4} -> {diff:.4} ({:.2}x)", diff / vae));
        fs::write(root.join("summary.txt"), &log).map_err(|e| e.to_string())?;
    }
    let detail = format!("{}; {wins}/3 seeds at or below {DESK_RATIO}x; artifacts in {}", parts.join(", "), root.display());
    if wins >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Gate {
    hard_failures: usize,
    only: Vec<usize>,
}

impl Gate {
    fn run(&mut self, n: usize, name: &str, limit: Duration, hard: bool, f: impl FnOnce() -> Check) {
        if !self.only.is_empty() && !self.only.contains(&n) {
            return;
        }
        let started = Instant::now();
        let result = f();
        let elapsed = started.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.is_ok() && in_time;
        let detail = match &result {
            Ok(d) | Err(d) => d.clone(),
        };
        let timing = format!("{:.1} s of {} s allowed", elapsed.as_secs_f64(), limit.as_secs());
        let tag = if hard { "" } else { " (soft)" };
        println!("criterion {n} {name}{tag}: {} | {detail} | {timing}", if pass { "PASS" } else { "FAIL" });
        let _ = std::io::stdout().flush();
        if !pass && hard {
            self.hard_failures += 1;
        }
    }
}

fn main() {
    // Numeric arguments select criteria (`cargo test --test acceptance -- 1 7`);
    // anything else, such as libtest flags, is ignored.
    let only = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut gate = Gate { hard_failures: 0, only };
    let secs = Duration::from_secs;
    gate.run(1, "schedule correctness", secs(1), true, criterion_1);
    gate.run(2, "parameterization algebra", secs(10), true, criterion_2);
    gate.run(3, "DDIM oracle exactness", secs(30), true, criterion_3);
    gate.run(4, "forward-marginal Monte Carlo", secs(60), true, criterion_4);
    gate.run(5, "gradient check", secs(300), true, criterion_5);
    gate.run(6, "spectrum correctness", secs(120), true, criterion_6);
    gate.run(7, "metric identities", secs(60), true, criterion_7);
    gate.run(8, "shape and budget grid", secs(120), true, criterion_8);
    gate.run(10, "determinism and persistence", secs(600), true, || criterion_10(&root.join("criterion10")));
    gate.run(9, "desk-scale trend", secs(2 * 3600), false, || criterion_9(&root.join("criterion9")));
    if gate.hard_failures > 0 {
        println!("{} hard acceptance criteria failed", gate.hard_failures);
        std::process::exit(1);
    }
}
