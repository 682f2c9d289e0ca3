//! Training objectives: the weighted v-prediction diffusion loss with joint
//! encoder training, and the VAE evidence lower bound.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::nn::{reparameterize, standard_normal_tensor, Arch, Model};
use crate::real::Real;
use crate::schedule::{loss_weight, NoiseSchedule, ScheduleConfig, ScheduleKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrPolicy {
    OneCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub lr_policy: LrPolicy,
    pub weight_decay: f64,
    pub timesteps: usize,
    pub schedule_kind: ScheduleKind,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub ddim_steps: usize,
    pub seed: u64,
    pub kl_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            epochs: 10,
            batch_size: 16,
            max_lr: 5e-4,
            lr_policy: LrPolicy::OneCycle,
            weight_decay: 0.01,
            timesteps: s.timesteps,
            schedule_kind: s.kind,
            lambda_min: s.lambda_min,
            lambda_max: s.lambda_max,
            ddim_steps: 20,
            seed: 0,
            kl_weight: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Invalid(m.into()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1");
        }
        if !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return fail("max_lr must be positive");
        }
        if self.ddim_steps < 1 || self.ddim_steps > self.timesteps {
            return fail("ddim_steps must lie in 1..=T");
        }
        if !(self.kl_weight >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("weights must be non-negative");
        }
        self.schedule().build().map(|_| ())
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            kind: self.schedule_kind,
            timesteps: self.timesteps,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
        }
    }
}

fn check_batch<T: Real>(x: &Tensor<T>) -> Result<usize> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 || s[0] == 0 {
        return Err(shape_err(["n>0", "1", "h", "w"], s));
    }
    Ok(s[0])
}

/// Random draws of one diffusion step: a timestep per sample and the noise.
#[derive(Debug, Clone)]
pub struct DiffusionDraws<T> {
    pub timesteps: Vec<usize>,
    pub noise: Tensor<T>,
}

impl<T: Real> DiffusionDraws<T> {
    pub fn sample<R: Rng + ?Sized>(shape: &[usize], sched: &NoiseSchedule, rng: &mut R) -> Self {
        let timesteps = (0..shape[0]).map(|_| rng.gen_range(1..=sched.timesteps())).collect();
        Self { timesteps, noise: standard_normal_tensor::<T, R>(shape, rng) }
    }
}

/// Builds the diffusion loss `mean_i w_{t_i} · mean_p (v̂ − v)²` on `g`.
/// The latent comes from the encoder on the same tape, so gradients reach
/// both the encoder and the U-Net.
pub fn diffusion_loss_graph<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    x0: &Tensor<T>,
    draws: &DiffusionDraws<T>,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let n = check_batch(x0)?;
    if draws.noise.shape() != x0.shape() || draws.timesteps.len() != n {
        return Err(shape_err(x0.shape(), draws.noise.shape()));
    }
    if model.arch() != Arch::DiffCoder {
        return Err(Error::Spec("diffusion loss needs a DiffCoder model".into()));
    }
    let per = x0.numel() / n;
    let mut x_t = Vec::with_capacity(x0.numel());
    let mut target = Vec::with_capacity(x0.numel());
    let mut weights = Vec::with_capacity(n);
    for (i, &t) in draws.timesteps.iter().enumerate() {
        let (a, s) = sched.coefficients(t)?;
        let (a, s) = (T::from_f64_lossy(a), T::from_f64_lossy(s));
        let xs = &x0.data()[i * per..(i + 1) * per];
        let es = &draws.noise.data()[i * per..(i + 1) * per];
        x_t.extend(xs.iter().zip(es).map(|(&x, &e)| a * x + s * e));
        target.extend(xs.iter().zip(es).map(|(&x, &e)| a * e - s * x));
        weights.push(T::from_f64_lossy(loss_weight(sched, t)?));
    }
    let xv = g.input(x0.clone());
    let z = model.latent_graph(g, xv);
    let xt = g.input(Tensor::new(x0.shape(), x_t));
    let v_hat = model.unet_graph(g, xt, &draws.timesteps, z);
    Ok(g.weighted_mse(v_hat, target, weights))
}

/// One diffusion training step: draws `(t, ε)` per sample, returns the loss
/// and the gradients of every parameter.
pub fn diffusion_training_step<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    batch: &Tensor<T>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, Gradients<T>)> {
    check_batch(batch)?;
    let draws = DiffusionDraws::sample(batch.shape(), sched, rng);
    let mut g = Graph::new(model.store());
    let loss = diffusion_loss_graph(model, &mut g, batch, &draws, sched)?;
    let value = g.value(loss).item().to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite(alloc::format!("diffusion loss {value}")));
    }
    Ok((value, g.backward(loss)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLosses {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Builds the ELBO terms on `g` given the reparameterization noise `xi`.
/// Returns `(loss, recon, kl)` with `loss = recon + kl_weight · kl`.
pub fn vae_loss_graph<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    x: &Tensor<T>,
    xi: Tensor<T>,
    kl_weight: f64,
) -> Result<(Var, Var, Var)> {
    let n = check_batch(x)?;
    if model.arch() != Arch::Vae {
        return Err(Error::Spec("ELBO needs a VAE model".into()));
    }
    let xv = g.input(x.clone());
    let (mu, logvar) = model.posterior_graph(g, xv);
    if xi.shape() != g.shape(mu) {
        return Err(shape_err(g.shape(mu), xi.shape()));
    }
    let z = reparameterize(g, mu, logvar, xi);
    let x_hat = model.vae_decode_graph(g, z);
    let recon = g.weighted_mse(x_hat, x.data().to_vec(), alloc::vec![T::one(); n]);
    let kl = g.kl_divergence(mu, logvar);
    let scaled = g.scale(kl, T::from_f64_lossy(kl_weight));
    let loss = g.add(recon, scaled);
    Ok((loss, recon, kl))
}

pub fn vae_training_step<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    batch: &Tensor<T>,
    kl_weight: f64,
    rng: &mut R,
) -> Result<(VaeLosses, Gradients<T>)> {
    check_batch(batch)?;
    let (n, _, h, w) = batch.dims4();
    let (zh, zw) = model.spec().latent_shape(h, w)?;
    let xi = standard_normal_tensor::<T, R>(&[n, model.spec().latent_channels, zh, zw], rng);
    let mut g = Graph::new(model.store());
    let (loss, recon, kl) = vae_loss_graph(model, &mut g, batch, xi, kl_weight)?;
    let item = |v: Var, g: &Graph<'_, T>| g.value(v).item().to_f64_lossy();
    let out = VaeLosses { loss: item(loss, &g), recon: item(recon, &g), kl: item(kl, &g) };
    if !out.loss.is_finite() {
        return Err(Error::NonFinite(alloc::format!("VAE loss {}", out.loss)));
    }
    Ok((out, g.backward(loss)))
}

/// Mean squared error between two equally shaped batches, for validation.
pub fn mse<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    s / a.len().max(1) as f64
}
