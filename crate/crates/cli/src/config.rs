//! Training-configuration overrides shared by command-line flags and
//! matrix config files.

use clap::Args;
use diffcoder_core::train::TrainConfig;
use diffcoder_core::ScheduleKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    s.parse().map_err(|e: diffcoder_core::Error| e.to_string())
}

impl TrainOverrides {
    /// The default configuration with every set field replaced.
    pub fn apply(&self, seed: u64) -> TrainConfig {
        let mut c = TrainConfig { seed, ..TrainConfig::default() };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(
            epochs => epochs,
            batch_size => batch_size,
            max_lr => max_lr,
            weight_decay => weight_decay,
            timesteps => timesteps,
            schedule => schedule_kind,
            lambda_min => lambda_min,
            lambda_max => lambda_max,
            ddim_steps => ddim_steps,
            kl_weight => kl_weight
        );
        c
    }
}

/// Parses a parameter budget such as `100000`, `100K`, `1.5M`.
pub fn parse_budget(s: &str) -> Result<usize, String> {
    let t = s.trim();
    let (num, mult) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('m' | 'M') => (&t[..t.len() - 1], 1e6),
        _ => (t, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| format!("invalid parameter budget `{s}`"))?;
    let n = v * mult;
    if !(n >= 1.0) || !n.is_finite() || n.fract() != 0.0 {
        return Err(format!("invalid parameter budget `{s}`"));
    }
    Ok(n as usize)
}
