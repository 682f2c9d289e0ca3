//! Building blocks shared by the encoder, the VAE decoder and the U-Net.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::graph::{Graph, Var};
use crate::nn::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-6;

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / Float::sqrt(fan_in as f64)
}

/// Convolution with circular padding `k / 2` (or none for strided patches).
#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::strided(store, name, cin, cout, k, 1, k / 2)
    }

    pub fn strided<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = fan_in_bound(cin * k * k);
        let w = store.add(format!("{name}.weight"), &[cout, cin, k, k], Init::Uniform(bound));
        let b = store.add(format!("{name}.bias"), &[cout], Init::Uniform(bound));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Self {
        let bound = fan_in_bound(cin);
        let w = store.add(format!("{name}.weight"), &[cout, cin], Init::Uniform(bound));
        let b = store.add(format!("{name}.bias"), &[cout], Init::Uniform(bound));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }
}

/// Convolution, RMS normalization, optional timestep modulation, SiLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv,
    gain: ParamId,
    time: Option<Linear>,
}

impl ConvBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        time_dim: Option<usize>,
    ) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), cin, cout, 3);
        let gain = store.add(format!("{name}.norm.gain"), &[cout], Init::Ones);
        let time = time_dim.map(|d| Linear::new(store, &format!("{name}.time"), d, 2 * cout));
        Self { conv, gain, time }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, temb: Option<Var>) -> Var {
        let h = self.conv.forward(g, x);
        let gain = g.param(self.gain);
        let mut h = g.rms_norm(h, gain, T::from_f64_lossy(NORM_EPS));
        if let (Some(time), Some(temb)) = (&self.time, temb) {
            let ss = time.forward(g, temb);
            h = g.modulate(h, ss);
        }
        g.silu(h)
    }
}

/// Two convolution blocks with a residual connection (1×1 projection when
/// the channel count changes).
#[derive(Debug, Clone)]
pub struct ResBlock {
    first: ConvBlock,
    second: ConvBlock,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        time_dim: Option<usize>,
    ) -> Self {
        let first = ConvBlock::new(store, &format!("{name}.block1"), cin, cout, time_dim);
        let second = ConvBlock::new(store, &format!("{name}.block2"), cout, cout, time_dim);
        let skip = (cin != cout).then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1));
        Self { first, second, skip }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, temb: Option<Var>) -> Var {
        let h = self.first.forward(g, x, temb);
        let h = self.second.forward(g, h, temb);
        let r = match &self.skip {
            Some(s) => s.forward(g, x),
            None => x,
        };
        g.add(h, r)
    }
}

/// Single-head attention with a residual connection. Keys and values come
/// from the block input (self-attention) or from a conditioning field
/// (cross-attention).
#[derive(Debug, Clone)]
pub struct Attention {
    gain: ParamId,
    q: Conv,
    k: Conv,
    v: Conv,
    out: Conv,
}

impl Attention {
    /// `context_channels = None` builds self-attention.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, context_channels: Option<usize>) -> Self {
        let kv_in = context_channels.unwrap_or(channels);
        let gain = store.add(format!("{name}.norm.gain"), &[channels], Init::Ones);
        Self {
            gain,
            q: Conv::new(store, &format!("{name}.q"), channels, channels, 1),
            k: Conv::new(store, &format!("{name}.k"), kv_in, channels, 1),
            v: Conv::new(store, &format!("{name}.v"), kv_in, channels, 1),
            out: Conv::new(store, &format!("{name}.out"), channels, channels, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, context: Option<Var>) -> Var {
        let gain = g.param(self.gain);
        let n = g.rms_norm(x, gain, T::from_f64_lossy(NORM_EPS));
        let src = context.unwrap_or(n);
        let q = self.q.forward(g, n);
        let k = self.k.forward(g, src);
        let v = self.v.forward(g, src);
        let a = g.attention(q, k, v);
        let o = self.out.forward(g, a);
        g.add(x, o)
    }
}

/// Sinusoidal features of the integer timestep followed by a two-layer MLP.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    dim: usize,
    l1: Linear,
    l2: Linear,
}

pub fn sinusoidal_features<T: Real>(timesteps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(timesteps.len() * dim);
    for &t in timesteps {
        let row_start = data.len();
        for i in 0..half {
            let freq = Float::exp(-Float::ln(10_000.0f64) * i as f64 / half as f64);
            data.push(T::from_f64_lossy(Float::sin(t as f64 * freq)));
        }
        for i in 0..half {
            let freq = Float::exp(-Float::ln(10_000.0f64) * i as f64 / half as f64);
            data.push(T::from_f64_lossy(Float::cos(t as f64 * freq)));
        }
        data.resize(row_start + dim, T::zero());
    }
    Tensor::new(&[timesteps.len(), dim], data)
}

impl TimeEmbedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            dim,
            l1: Linear::new(store, &format!("{name}.l1"), dim, dim),
            l2: Linear::new(store, &format!("{name}.l2"), dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, timesteps: &[usize]) -> Var {
        let f = g.input(sinusoidal_features(timesteps, self.dim));
        let h = self.l1.forward(g, f);
        let h = g.silu(h);
        let h = self.l2.forward(g, h);
        g.silu(h)
    }
}
