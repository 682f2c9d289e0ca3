use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_reducible, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Vae,
    #[serde(rename = "diffcoder")]
    DiffCoder,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Self::Vae),
            "diffcoder" => Ok(Self::DiffCoder),
            other => Err(Error::Invalid(alloc::format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vae => "vae",
            Self::DiffCoder => "diffcoder",
        })
    }
}

/// Where attention modules are placed: the encoder's last layer, and the
/// decoder / U-Net bottleneck.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub encoder: bool,
    pub decoder: bool,
}

/// Architecture hyperparameters shared by the VAE and DiffCoder builders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of encoder layers; the latent side is `side / 2^depth`.
    pub depth: usize,
    pub base_width: usize,
    /// Channel multiplier per level, applied to `base_width`.
    pub width_mult: Vec<usize>,
    /// Cap on the channel count of any level.
    pub max_width: usize,
    pub attention: AttentionConfig,
    pub param_budget: usize,
    pub latent_channels: usize,
    pub time_embed_dim: usize,
}

impl ModelSpec {
    /// Channels double per level, capped at `8 · base_width`, no attention,
    /// one latent channel and a `4 · base_width` timestep embedding.
    pub fn new(depth: usize, base_width: usize) -> Self {
        Self {
            depth,
            base_width,
            width_mult: (0..depth).map(|l| 1usize << l.min(8)).collect(),
            max_width: 8 * base_width,
            attention: AttentionConfig::default(),
            param_budget: 0,
            latent_channels: 1,
            time_embed_dim: 4 * base_width,
        }
    }

    pub fn with_attention(mut self, encoder: bool, decoder: bool) -> Self {
        self.attention = AttentionConfig { encoder, decoder };
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        (self.base_width * self.width_mult[level]).min(self.max_width)
    }

    /// Spatial reduction factor `2^depth` per axis.
    pub fn reduction(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Spec(m.into()));
        if self.depth < 1 || self.depth > 8 {
            return fail("depth must be in 1..=8");
        }
        if self.base_width < 4 {
            return fail("base_width must be at least 4");
        }
        if self.latent_channels < 1 {
            return fail("latent_channels must be at least 1");
        }
        if self.width_mult.len() != self.depth || self.width_mult.contains(&0) {
            return fail("width_mult needs one positive multiplier per level");
        }
        if self.max_width < self.base_width {
            return fail("max_width below base_width");
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return fail("time_embed_dim must be even and at least 2");
        }
        Ok(())
    }

    /// Checks that an `h × w` input is a power-of-two grid that can be
    /// halved `depth` times.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        check_reducible(h, self.depth)?;
        check_reducible(w, self.depth)
    }

    pub fn latent_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check_input(h, w)?;
        Ok((h / self.reduction(), w / self.reduction()))
    }
}
