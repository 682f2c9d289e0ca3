//! The encoder, the VAE decoder and the conditional U-Net.

use alloc::format;
use alloc::vec::Vec;

use crate::graph::{Graph, Var};
use crate::nn::layers::{Attention, Conv, ResBlock, TimeEmbedding};
use crate::nn::params::ParamStore;
use crate::nn::spec::ModelSpec;
use crate::real::Real;

#[derive(Debug, Clone)]
struct Level {
    blocks: [ResBlock; 2],
    attn: Option<Attention>,
}

/// Stacked E-Layers (two ResNet blocks, then 2× average-pool downsampling
/// except after the last) and a stride-2 2×2 projection to `out_channels`.
#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Conv,
    layers: Vec<Level>,
    proj: Conv,
    out_channels: usize,
}

impl Encoder {
    pub fn build<T: Real>(spec: &ModelSpec, store: &mut ParamStore<T>, name: &str, out_channels: usize) -> Self {
        let stem = Conv::new(store, &format!("{name}.stem"), 1, spec.channels(0), 3);
        let mut layers = Vec::with_capacity(spec.depth);
        let mut cin = spec.channels(0);
        for l in 0..spec.depth {
            let c = spec.channels(l);
            let blocks = [
                ResBlock::new(store, &format!("{name}.layer{l}.res0"), cin, c, None),
                ResBlock::new(store, &format!("{name}.layer{l}.res1"), c, c, None),
            ];
            let attn = (spec.attention.encoder && l + 1 == spec.depth)
                .then(|| Attention::new(store, &format!("{name}.layer{l}.attn"), c, None));
            layers.push(Level { blocks, attn });
            cin = c;
        }
        let proj = Conv::strided(store, &format!("{name}.proj"), cin, out_channels, 2, 2, 0);
        Self { stem, layers, proj, out_channels }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// `[n, 1, H, W]` to `[n, out_channels, H / 2^d, W / 2^d]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = self.stem.forward(g, x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            for b in &layer.blocks {
                h = b.forward(g, h, None);
            }
            if let Some(a) = &layer.attn {
                h = a.forward(g, h, None);
            }
            if l < last {
                h = g.avg_pool2(h);
            }
        }
        self.proj.forward(g, h)
    }
}

/// Mirror of the encoder: 2× upsampling and a convolution out of the
/// latent, then D-Layers of two ResNet blocks and a 2× nearest upsampling
/// (except the last), and a convolutional head back to one channel.
#[derive(Debug, Clone)]
pub struct VaeDecoder {
    input: Conv,
    layers: Vec<Level>,
    head: Conv,
}

impl VaeDecoder {
    pub fn build<T: Real>(spec: &ModelSpec, store: &mut ParamStore<T>, name: &str) -> Self {
        let d = spec.depth;
        let mut cin = spec.channels(d - 1);
        let input = Conv::new(store, &format!("{name}.input"), spec.latent_channels, cin, 3);
        let mut layers = Vec::with_capacity(d);
        for l in (0..d).rev() {
            let c = spec.channels(l);
            let attn = (spec.attention.decoder && l + 1 == d)
                .then(|| Attention::new(store, &format!("{name}.layer{l}.attn"), cin, None));
            let blocks = [
                ResBlock::new(store, &format!("{name}.layer{l}.res0"), cin, c, None),
                ResBlock::new(store, &format!("{name}.layer{l}.res1"), c, c, None),
            ];
            layers.push(Level { blocks, attn });
            cin = c;
        }
        let head = Conv::new(store, &format!("{name}.head"), cin, 1, 3);
        Self { input, layers, head }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Var {
        let h = g.upsample(z, 2);
        let mut h = self.input.forward(g, h);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(a) = &layer.attn {
                h = a.forward(g, h, None);
            }
            for b in &layer.blocks {
                h = b.forward(g, h, None);
            }
            if i < last {
                h = g.upsample(h, 2);
            }
        }
        self.head.forward(g, h)
    }
}

/// Conditional U-Net predicting the velocity target.
///
/// The latent is upsampled (nearest) to full resolution and concatenated to
/// the noisy field. Every convolution block is modulated by a projection of
/// the timestep embedding. With decoder attention enabled the bottleneck
/// gets self-attention and cross-attention to the latent tokens.
#[derive(Debug, Clone)]
pub struct UNet {
    time: TimeEmbedding,
    stem: Conv,
    down: Vec<[ResBlock; 2]>,
    mid: [ResBlock; 2],
    mid_self: Option<Attention>,
    mid_cross: Option<Attention>,
    up: Vec<[ResBlock; 2]>,
    head: Conv,
    reduction: usize,
}

impl UNet {
    pub fn build<T: Real>(spec: &ModelSpec, store: &mut ParamStore<T>, name: &str) -> Self {
        let d = spec.depth;
        let td = spec.time_embed_dim;
        let t = Some(td);
        let time = TimeEmbedding::new(store, &format!("{name}.time"), td);
        let stem = Conv::new(store, &format!("{name}.stem"), 1 + spec.latent_channels, spec.channels(0), 3);
        let mut down = Vec::with_capacity(d);
        let mut cin = spec.channels(0);
        for l in 0..d {
            let c = spec.channels(l);
            down.push([
                ResBlock::new(store, &format!("{name}.down{l}.res0"), cin, c, t),
                ResBlock::new(store, &format!("{name}.down{l}.res1"), c, c, t),
            ]);
            cin = c;
        }
        let mid = [
            ResBlock::new(store, &format!("{name}.mid.res0"), cin, cin, t),
            ResBlock::new(store, &format!("{name}.mid.res1"), cin, cin, t),
        ];
        let (mid_self, mid_cross) = if spec.attention.decoder {
            (
                Some(Attention::new(store, &format!("{name}.mid.self_attn"), cin, None)),
                Some(Attention::new(store, &format!("{name}.mid.cross_attn"), cin, Some(spec.latent_channels))),
            )
        } else {
            (None, None)
        };
        let mut up = Vec::with_capacity(d);
        for l in (0..d).rev() {
            let c = spec.channels(l);
            up.push([
                ResBlock::new(store, &format!("{name}.up{l}.res0"), cin + c, c, t),
                ResBlock::new(store, &format!("{name}.up{l}.res1"), c, c, t),
            ]);
            cin = c;
        }
        let head = Conv::new(store, &format!("{name}.head"), cin, 1, 3);
        Self { time, stem, down, mid, mid_self, mid_cross, up, head, reduction: spec.reduction() }
    }

    pub fn attention_modules(&self) -> usize {
        usize::from(self.mid_self.is_some()) + usize::from(self.mid_cross.is_some())
    }

    /// `x_t` is `[n, 1, H, W]`, `z` is `[n, latent, H / 2^d, W / 2^d]`, one
    /// timestep per sample.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x_t: Var, timesteps: &[usize], z: Var) -> Var {
        let temb = Some(self.time.forward(g, timesteps));
        let zu = g.upsample(z, self.reduction);
        let inp = g.concat(x_t, zu);
        let mut h = self.stem.forward(g, inp);
        let mut skips = Vec::with_capacity(self.down.len());
        let last = self.down.len() - 1;
        for (l, blocks) in self.down.iter().enumerate() {
            for b in blocks {
                h = b.forward(g, h, temb);
            }
            skips.push(h);
            if l < last {
                h = g.avg_pool2(h);
            }
        }
        h = self.mid[0].forward(g, h, temb);
        if let Some(a) = &self.mid_self {
            h = a.forward(g, h, None);
        }
        if let Some(a) = &self.mid_cross {
            h = a.forward(g, h, Some(z));
        }
        h = self.mid[1].forward(g, h, temb);
        for (i, blocks) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            h = g.concat(h, skip);
            for b in blocks {
                h = b.forward(g, h, temb);
            }
            if i < last {
                h = g.upsample(h, 2);
            }
        }
        self.head.forward(g, h)
    }
}

impl Encoder {
    pub fn attention_modules(&self) -> usize {
        self.layers.iter().filter(|l| l.attn.is_some()).count()
    }
}

impl VaeDecoder {
    pub fn attention_modules(&self) -> usize {
        self.layers.iter().filter(|l| l.attn.is_some()).count()
    }
}
