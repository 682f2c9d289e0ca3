//! Deterministic DDIM sampling (η = 0) with a v-predicting U-Net or any
//! other denoiser.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::field::{FlowField, LatentField};
use crate::nn::{standard_normal_tensor, Model};
use crate::real::Real;
use crate::schedule::{convert_prediction, DenoiserPrediction, NoiseSchedule};
use crate::tensor::Tensor;

/// Anything that maps a noisy state at timestep `t` to a prediction of the
/// same length.
pub trait Denoiser<T> {
    fn predict(&mut self, x_t: &[T], t: usize) -> Result<DenoiserPrediction<T>>;
}

/// A model's U-Net conditioned on a fixed batch of latents.
pub struct UNetDenoiser<'a, T: Real> {
    model: &'a Model<T>,
    z: &'a Tensor<T>,
    shape: [usize; 4],
}

impl<'a, T: Real> UNetDenoiser<'a, T> {
    /// `z` is `[n, latent, h, w]`; states are `[n, 1, H, W]` flattened.
    pub fn new(model: &'a Model<T>, z: &'a Tensor<T>) -> Result<Self> {
        let s = z.shape();
        if s.len() != 4 {
            return Err(shape_err(["n", "latent", "h", "w"], s));
        }
        let f = model.spec().reduction();
        Ok(Self { model, z, shape: [s[0], 1, s[2] * f, s[3] * f] })
    }

    pub fn state_shape(&self) -> [usize; 4] {
        self.shape
    }
}

impl<T: Real> Denoiser<T> for UNetDenoiser<'_, T> {
    fn predict(&mut self, x_t: &[T], t: usize) -> Result<DenoiserPrediction<T>> {
        let x = Tensor::new(&self.shape, x_t.to_vec());
        let ts = alloc::vec![t; self.shape[0]];
        self.model.unet_forward(&x, &ts, self.z)
    }
}

/// Visited timesteps `t_i = T − ⌊i·T/steps⌋` for `i = 0..steps`: starts at
/// `T`, strictly decreasing, and equal to `T, T−1, …, 1` when `steps = T`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::Invalid(alloc::format!("DDIM steps {steps} outside 1..={total}")));
    }
    Ok((0..steps).map(|i| total - i * total / steps).collect())
}

/// Runs the DDIM reverse process from `x_T`. Each visited step predicts
/// `(x̂₀, ε̂)` and moves to the next visited timestep; the last step takes
/// `ᾱ_prev = 1` and returns `x̂₀` itself.
pub fn ddim_sample_from<T: Real, D: Denoiser<T> + ?Sized>(
    denoiser: &mut D,
    x_t: Vec<T>,
    sched: &NoiseSchedule,
    steps: usize,
) -> Result<Vec<T>> {
    let ts = ddim_timesteps(sched.timesteps(), steps)?;
    let mut x = x_t;
    for (i, &t) in ts.iter().enumerate() {
        let pred = denoiser.predict(&x, t)?;
        if pred.values.len() != x.len() {
            return Err(shape_err(x.len(), pred.values.len()));
        }
        // ε̂ from the conversion equals (x_t − √ᾱ_t x̂₀)/√(1−ᾱ_t) without the
        // division, which is ill-conditioned near t = 0.
        let (x0, eps) = convert_prediction(&pred, &x, t, sched)?;
        x = match ts.get(i + 1) {
            None => x0,
            Some(&prev) => {
                let a = T::from_f64_lossy(Float::sqrt(sched.alpha_bar(prev)));
                let s = T::from_f64_lossy(Float::sqrt(sched.one_minus_alpha_bar(prev)));
                x0.iter().zip(&eps).map(|(&x0, &e)| a * x0 + s * e).collect()
            }
        };
    }
    Ok(x)
}

/// Decodes a batch of latents `[n, latent, h, w]` into fields
/// `[n, 1, H, W]`, starting from `x_T ~ N(0, I)` drawn from `rng`.
pub fn ddim_sample_batch<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    z: &Tensor<T>,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let mut d = UNetDenoiser::new(model, z)?;
    let shape = d.state_shape();
    ddim_timesteps(sched.timesteps(), steps)?;
    let x_t = standard_normal_tensor::<T, R>(&shape, rng).into_data();
    let out = ddim_sample_from(&mut d, x_t, sched, steps)?;
    Ok(Tensor::new(&shape, out))
}

/// Single-field convenience wrapper around [`ddim_sample_batch`].
pub fn ddim_sample<T: Real, R: Rng + ?Sized>(
    z: &LatentField,
    model: &Model<T>,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
) -> Result<FlowField> {
    let zt = Tensor::new(
        &[1, z.channels, z.height, z.width],
        z.values.iter().map(|&v| T::from_f64_lossy(v)).collect(),
    );
    let out = ddim_sample_batch(model, &zt, sched, steps, rng)?;
    let (_, _, h, w) = out.dims4();
    FlowField::new(h, w, out.data().iter().map(|v| v.to_f64_lossy()).collect())
}
