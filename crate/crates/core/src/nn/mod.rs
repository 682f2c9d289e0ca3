//! Network definitions: layers, the encoder / VAE / U-Net builders, and the
//! parameter-budget width solver.

pub mod layers;
pub mod models;
pub mod params;
pub mod spec;

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::field::{FlowField, LatentField};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::schedule::{DenoiserPrediction, Parameterization};
use crate::tensor::Tensor;

pub use models::{Encoder, UNet, VaeDecoder};
pub use params::{Init, ParamId, ParamStore};
pub use spec::{Arch, AttentionConfig, ModelSpec};

#[derive(Debug, Clone)]
pub enum Decoder {
    Vae(VaeDecoder),
    UNet(UNet),
}

/// A full model: shared encoder architecture plus either the mirrored VAE
/// decoder or the conditional U-Net, with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    arch: Arch,
    spec: ModelSpec,
    store: ParamStore<T>,
    encoder: Encoder,
    decoder: Decoder,
}

fn build_modules<T: Real>(arch: Arch, spec: &ModelSpec, store: &mut ParamStore<T>) -> (Encoder, Decoder) {
    match arch {
        Arch::DiffCoder => {
            let enc = Encoder::build(spec, store, "encoder", spec.latent_channels);
            let dec = UNet::build(spec, store, "unet");
            (enc, Decoder::UNet(dec))
        }
        Arch::Vae => {
            let enc = Encoder::build(spec, store, "encoder", 2 * spec.latent_channels);
            let dec = VaeDecoder::build(spec, store, "decoder");
            (enc, Decoder::Vae(dec))
        }
    }
}

/// Exact trainable-parameter count of `arch` under `spec`, without
/// allocating any weights.
pub fn count_params(arch: Arch, spec: &ModelSpec) -> Result<usize> {
    spec.validate()?;
    let mut store = ParamStore::<f32>::counting();
    build_modules(arch, spec, &mut store);
    Ok(store.num_params())
}

/// Fraction of the budget that the base width alone is allowed to consume;
/// the channel cap then closes the remaining gap.
const BASE_SHARE: f64 = 0.5;
const BUDGET_TOLERANCE: f64 = 0.1;
const MAX_BASE_WIDTH: usize = 512;

/// Picks the widths of an attention-free model of `depth` levels whose
/// total parameter count lies within ±10% of `budget`.
///
/// The base width is the largest even width whose uncapped-doubling model
/// at `max_width = base_width` stays under half the budget; the channel cap
/// is then searched over even values up to `8 · base_width` for the count
/// closest to the budget. Base width is monotone in the budget by
/// construction.
pub fn solve_width_for_budget(budget: usize, depth: usize, arch: Arch) -> Result<ModelSpec> {
    let unreachable = |reason: &str| Error::Budget { budget, reason: reason.into() };
    if budget < 100_000 {
        return Err(unreachable("budgets below 100000 parameters are not supported"));
    }
    let count = |b: usize, cap: usize| -> Result<usize> {
        let mut spec = ModelSpec::new(depth, b);
        spec.max_width = cap;
        count_params(arch, &spec)
    };
    let target = budget as f64;
    let mut base = None;
    let mut b = 4;
    while b <= MAX_BASE_WIDTH {
        if count(b, b)? as f64 > BASE_SHARE * target {
            break;
        }
        base = Some(b);
        b += 2;
    }
    let b = base.ok_or_else(|| unreachable("even the narrowest model exceeds the budget"))?;
    let top = 8 * b;
    let mut best: Option<(f64, usize)> = None;
    let mut cap = b;
    while cap <= top {
        let n = count(b, cap)? as f64;
        let dev = (n - target).abs() / target;
        if best.map_or(true, |(d, _)| dev < d) {
            best = Some((dev, cap));
        }
        if n > target {
            break;
        }
        cap += 2;
    }
    match best {
        Some((dev, cap)) if dev <= BUDGET_TOLERANCE => {
            let mut spec = ModelSpec::new(depth, b);
            spec.max_width = cap;
            spec.param_budget = budget;
            Ok(spec)
        }
        _ => Err(unreachable("no channel cap brings the count within 10% of the budget")),
    }
}

fn check_field_batch<T: Real>(spec: &ModelSpec, x: &Tensor<T>, channels: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(shape_err(["n", "channels", "h", "w"], s));
    }
    spec.check_input(s[2], s[3])?;
    Ok((s[0], s[2], s[3]))
}

impl<T: Real> Model<T> {
    pub fn build(arch: Arch, spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed);
        let (encoder, decoder) = build_modules(arch, &spec, &mut store);
        Ok(Self { arch, spec, store, encoder, decoder })
    }

    /// Rebuilds the module structure of `arch`/`spec` around existing
    /// parameters, checking every name and shape.
    pub fn from_store(arch: Arch, spec: ModelSpec, store: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let mut layout = ParamStore::<T>::counting();
        let (encoder, decoder) = build_modules(arch, &spec, &mut layout);
        if layout.len() != store.len() {
            return Err(Error::Spec(alloc::format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                store.len()
            )));
        }
        for id in layout.ids() {
            if layout.name(id) != store.name(id) || layout.tensor(id).shape() != store.tensor(id).shape() {
                return Err(Error::Spec(alloc::format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    store.name(id),
                    store.tensor(id).shape(),
                    layout.name(id),
                    layout.tensor(id).shape()
                )));
            }
        }
        Ok(Self { arch, spec, store, encoder, decoder })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn attention_modules(&self) -> usize {
        self.encoder.attention_modules()
            + match &self.decoder {
                Decoder::UNet(u) => u.attention_modules(),
                Decoder::Vae(d) => d.attention_modules(),
            }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            spec: self.spec.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Raw encoder output: the latent for DiffCoder, `[mu, logvar]`
    /// stacked on channels for the VAE.
    pub fn encoder_graph(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        self.encoder.forward(g, x)
    }

    /// Deterministic latent: the encoder output for DiffCoder, the
    /// posterior mean for the VAE.
    pub fn latent_graph(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.encoder.forward(g, x);
        match self.arch {
            Arch::DiffCoder => h,
            Arch::Vae => g.slice_channels(h, 0, self.spec.latent_channels),
        }
    }

    /// VAE posterior `(mu, logvar)`.
    pub fn posterior_graph(&self, g: &mut Graph<'_, T>, x: Var) -> (Var, Var) {
        let h = self.encoder.forward(g, x);
        let c = self.spec.latent_channels;
        (g.slice_channels(h, 0, c), g.slice_channels(h, c, c))
    }

    /// VAE decoder. Panics for a DiffCoder model.
    pub fn vae_decode_graph(&self, g: &mut Graph<'_, T>, z: Var) -> Var {
        match &self.decoder {
            Decoder::Vae(d) => d.forward(g, z),
            Decoder::UNet(_) => panic!("vae_decode_graph on a DiffCoder model"),
        }
    }

    /// U-Net velocity prediction. Panics for a VAE model.
    pub fn unet_graph(&self, g: &mut Graph<'_, T>, x_t: Var, timesteps: &[usize], z: Var) -> Var {
        match &self.decoder {
            Decoder::UNet(u) => u.forward(g, x_t, timesteps, z),
            Decoder::Vae(_) => panic!("unet_graph on a VAE model"),
        }
    }

    /// Latents for a `[n, 1, H, W]` batch, shape `[n, latent, h, w]`.
    pub fn encode_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_field_batch(&self.spec, x, 1)?;
        let mut g = Graph::inference(&self.store);
        let xv = g.input(x.clone());
        let z = self.latent_graph(&mut g, xv);
        Ok(g.value(z).clone())
    }

    pub fn encode(&self, x: &FlowField) -> Result<LatentField> {
        let (h, w) = x.shape();
        let data = x.values().iter().map(|&v| T::from_f64_lossy(v)).collect();
        let z = self.encode_batch(&Tensor::new(&[1, 1, h, w], data))?;
        let (_, c, zh, zw) = z.dims4();
        Ok(LatentField {
            channels: c,
            height: zh,
            width: zw,
            values: z.data().iter().map(|v| v.to_f64_lossy()).collect(),
            source_grid: (h, w),
        })
    }

    /// Velocity prediction for a batch of noisy fields `[n, 1, H, W]`, one
    /// timestep per sample, latents `[n, latent, h, w]`.
    pub fn unet_forward(&self, x_t: &Tensor<T>, timesteps: &[usize], z: &Tensor<T>) -> Result<DenoiserPrediction<T>> {
        if !matches!(self.decoder, Decoder::UNet(_)) {
            return Err(Error::Spec("model has no U-Net".into()));
        }
        let (n, h, w) = check_field_batch(&self.spec, x_t, 1)?;
        let (zh, zw) = self.spec.latent_shape(h, w)?;
        let expect = [n, self.spec.latent_channels, zh, zw];
        if z.shape() != expect {
            return Err(shape_err(expect, z.shape()));
        }
        if timesteps.len() != n {
            return Err(shape_err(n, timesteps.len()));
        }
        let mut g = Graph::inference(&self.store);
        let xv = g.input(x_t.clone());
        let zv = g.input(z.clone());
        let out = self.unet_graph(&mut g, xv, timesteps, zv);
        Ok(DenoiserPrediction::new(g.value(out).data().to_vec(), Parameterization::V))
    }

    /// VAE pass returning `(x_hat, mu, logvar)`. With `rng = None` the
    /// decoder sees `z = mu`; otherwise `z = mu + exp(logvar / 2) · xi`.
    pub fn vae_forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        rng: Option<&mut R>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if !matches!(self.decoder, Decoder::Vae(_)) {
            return Err(Error::Spec("model has no VAE decoder".into()));
        }
        check_field_batch(&self.spec, x, 1)?;
        let mut g = Graph::inference(&self.store);
        let xv = g.input(x.clone());
        let (mu, logvar) = self.posterior_graph(&mut g, xv);
        let z = match rng {
            None => mu,
            Some(rng) => {
                let xi = standard_normal_tensor(g.shape(mu), rng);
                reparameterize(&mut g, mu, logvar, xi)
            }
        };
        let xh = self.vae_decode_graph(&mut g, z);
        Ok((g.value(xh).clone(), g.value(mu).clone(), g.value(logvar).clone()))
    }

    /// Deterministic VAE reconstruction through the posterior mean.
    pub fn vae_reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.vae_forward::<rand_chacha::ChaCha8Rng>(x, None).map(|r| r.0)
    }
}

pub(crate) fn standard_normal_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape, data)
}

/// `mu + exp(logvar / 2) · xi` on the tape.
pub fn reparameterize<T: Real>(g: &mut Graph<'_, T>, mu: Var, logvar: Var, xi: Tensor<T>) -> Var {
    let half = g.scale(logvar, T::from_f64_lossy(0.5));
    let std = g.exp(half);
    let xi = g.input(xi);
    let noise = g.mul(std, xi);
    g.add(mu, noise)
}
