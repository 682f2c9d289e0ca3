//! Discrete-time noise schedules and the closed-form algebra around them:
//! forward noising, the velocity target, conversions between the three
//! denoiser parameterizations, and the truncated-SNR loss weight.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Bounds outside which a division by `sqrt(alpha_bar)` or `sqrt(1 - alpha_bar)`
/// is refused.
pub const DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Sigmoid,
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Schedule(alloc::format!("unknown schedule kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sigmoid => "sigmoid",
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Everything needed to rebuild a [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub timesteps: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Sigmoid, timesteps: 1000, lambda_min: -15.0, lambda_max: 15.0 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.timesteps, self.lambda_min, self.lambda_max)
    }
}

/// Tabulated cumulative signal coefficients `alpha_bar[t]`, `t = 0..=T`.
///
/// `t = 0` is the clean-data end. Both `alpha_bar` and `1 - alpha_bar` are
/// stored so that neither end of the range loses precision to cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

/// Builds a schedule with `timesteps` steps.
///
/// For [`ScheduleKind::Sigmoid`] the log-SNR runs linearly from `lambda_max`
/// at `t = 0` to `lambda_min` at `t = T`. The linear (`beta` from 1e-4 to 0.02)
/// and cosine (offset 0.008, `beta` clipped at 0.999) schedules ignore the
/// lambda range.
pub fn make_schedule(
    kind: ScheduleKind,
    timesteps: usize,
    lambda_min: f64,
    lambda_max: f64,
) -> Result<NoiseSchedule> {
    if timesteps < 1 {
        return Err(Error::Schedule("timestep count must be at least 1".into()));
    }
    let n = timesteps;
    let (alpha_bar, one_minus_alpha_bar): (Vec<f64>, Vec<f64>) = match kind {
        ScheduleKind::Sigmoid => {
            if !(lambda_min < lambda_max) || !lambda_min.is_finite() || !lambda_max.is_finite() {
                return Err(Error::Schedule(alloc::format!(
                    "need finite lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
                )));
            }
            (0..=n)
                .map(|t| {
                    let s = t as f64 / n as f64;
                    let lambda = (1.0 - s) * lambda_max + s * lambda_min;
                    (sigmoid(lambda), sigmoid(-lambda))
                })
                .unzip()
        }
        ScheduleKind::Linear => {
            let (lo, hi) = (1e-4, 0.02);
            let betas = (1..=n).map(|t| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * (t - 1) as f64 / (n - 1) as f64
                }
            });
            cumulative(betas)
        }
        ScheduleKind::Cosine => {
            let offset = 0.008;
            let f = |t: usize| {
                let c = Float::cos((t as f64 / n as f64 + offset) / (1.0 + offset) * core::f64::consts::FRAC_PI_2);
                c * c
            };
            let betas = (1..=n).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, 0.999));
            cumulative(betas)
        }
    };
    Ok(NoiseSchedule {
        config: ScheduleConfig { kind, timesteps, lambda_min, lambda_max },
        alpha_bar,
        one_minus_alpha_bar,
    })
}

fn cumulative(betas: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<f64>) {
    let mut ab = alloc::vec![1.0];
    let mut om = alloc::vec![0.0];
    let mut prod = 1.0;
    for beta in betas {
        prod *= 1.0 - beta;
        ab.push(prod);
        om.push(1.0 - prod);
    }
    (ab, om)
}

impl NoiseSchedule {
    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn kind(&self) -> ScheduleKind {
        self.config.kind
    }

    /// `T`, the number of discrete steps.
    pub fn timesteps(&self) -> usize {
        self.config.timesteps
    }

    /// `alpha_bar[t]` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn snr(&self, t: usize) -> f64 {
        self.alpha_bar[t] / self.one_minus_alpha_bar[t]
    }

    pub fn log_snr(&self, t: usize) -> f64 {
        Float::ln(self.alpha_bar[t]) - Float::ln(self.one_minus_alpha_bar[t])
    }

    /// Per-step variance `beta_t = 1 - alpha_bar[t] / alpha_bar[t-1]`, `t ≥ 1`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.timesteps() {
            return Err(Error::TimestepRange { t, max: self.timesteps() });
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at a valid training timestep.
    pub fn coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        Ok((Float::sqrt(self.alpha_bar[t]), Float::sqrt(self.one_minus_alpha_bar[t])))
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(shape_err(a.len(), b.len()));
    }
    Ok(())
}

/// `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`.
pub fn forward_sample<T: Real>(x0: &[T], t: usize, eps: &[T], sched: &NoiseSchedule) -> Result<Vec<T>> {
    check_len(x0, eps)?;
    let (a, s) = sched.coefficients(t)?;
    let (a, s) = (T::from_f64_lossy(a), T::from_f64_lossy(s));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + s * e).collect())
}

/// `v = sqrt(ab) eps - sqrt(1 - ab) x0`.
pub fn v_target<T: Real>(x0: &[T], eps: &[T], t: usize, sched: &NoiseSchedule) -> Result<Vec<T>> {
    check_len(x0, eps)?;
    let (a, s) = sched.coefficients(t)?;
    let (a, s) = (T::from_f64_lossy(a), T::from_f64_lossy(s));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * e - s * x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Epsilon,
    X0,
    V,
}

/// A raw network output together with what it is meant to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserPrediction<T> {
    pub values: Vec<T>,
    pub parameterization: Parameterization,
}

impl<T> DenoiserPrediction<T> {
    pub fn new(values: Vec<T>, parameterization: Parameterization) -> Self {
        Self { values, parameterization }
    }
}

/// Recovers `(x0_hat, eps_hat)` from any parameterization.
pub fn convert_prediction<T: Real>(
    pred: &DenoiserPrediction<T>,
    x_t: &[T],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<(Vec<T>, Vec<T>)> {
    check_len(&pred.values, x_t)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let omab = sched.one_minus_alpha_bar(t);
    let (a, s) = (T::from_f64_lossy(Float::sqrt(ab)), T::from_f64_lossy(Float::sqrt(omab)));
    let p = &pred.values;
    let out = match pred.parameterization {
        Parameterization::V => (
            p.iter().zip(x_t).map(|(&v, &x)| a * x - s * v).collect(),
            p.iter().zip(x_t).map(|(&v, &x)| a * v + s * x).collect(),
        ),
        Parameterization::Epsilon => {
            if ab < DEGENERATE_EPS {
                return Err(Error::DegenerateTimestep { t, alpha_bar: ab });
            }
            let x0 = p.iter().zip(x_t).map(|(&e, &x)| (x - s * e) / a).collect();
            (x0, p.clone())
        }
        Parameterization::X0 => {
            if omab < DEGENERATE_EPS {
                return Err(Error::DegenerateTimestep { t, alpha_bar: ab });
            }
            let eps = p.iter().zip(x_t).map(|(&x0, &x)| (x - a * x0) / s).collect();
            (p.clone(), eps)
        }
    };
    Ok(out)
}

/// Truncated-SNR weight `max(SNR(t), 1)`.
pub fn loss_weight(sched: &NoiseSchedule, t: usize) -> Result<f64> {
    sched.check_t(t)?;
    Ok(sched.snr(t).max(1.0))
}
