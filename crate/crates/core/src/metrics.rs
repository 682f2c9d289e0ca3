//! Reconstruction metrics: relative L2 error of the vorticity, and relative
//! errors of the log kinetic-energy spectrum over all shells and over the top
//! quarter of shells. Also the interpolation baselines the learned
//! compressors are compared against.

use alloc::vec::Vec;
use core::ops::RangeInclusive;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{check_reducible, shape_err, Error, Result};
use crate::fft::{fourier_coefficients, wavenumber};
use crate::field::FlowField;

/// Floor applied to shell energies before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Shell-binned kinetic energy `E(k)`, `k = 1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpectrum {
    pub k: Vec<usize>,
    pub energy: Vec<f64>,
    /// Number of Fourier modes binned into each shell.
    pub modes: Vec<usize>,
}

impl EnergySpectrum {
    pub fn k_max(&self) -> usize {
        self.k.len()
    }

    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// `E(k)` for a 1-based shell index.
    pub fn at(&self, k: usize) -> f64 {
        self.energy[k - 1]
    }
}

/// Shell index of a nonzero integer wavevector: `|κ|` rounded, with every
/// mode beyond `k_max` (the grid corners) folded into the last shell so that
/// the shells partition all nonzero modes.
pub fn shell_index(kx: i64, ky: i64, k_max: usize) -> usize {
    let r = Float::sqrt((kx * kx + ky * ky) as f64);
    (Float::round(r) as usize).clamp(1, k_max)
}

/// Kinetic-energy spectrum of a periodic vorticity field on `[0, 2π)²`.
///
/// With `ω = -∇²ψ`, `u = ∂ψ/∂y`, `v = -∂ψ/∂x` and Fourier-series coefficients
/// `ω̂`, each mode contributes `½ |ω̂(κ)|² / |κ|²`; the spectrum therefore sums
/// to the domain-averaged kinetic energy `½ ⟨u² + v²⟩`. The mean mode carries
/// no velocity and is excluded.
pub fn energy_spectrum(omega: &FlowField) -> Result<EnergySpectrum> {
    let (h, w) = omega.shape();
    if omega.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vorticity".into()));
    }
    let k_max = h.min(w) / 2;
    if k_max == 0 {
        return Err(Error::Grid(alloc::format!("{h}x{w} grid too small for a spectrum")));
    }
    let coeffs = fourier_coefficients(omega.values(), h, w)?;
    let mut energy = alloc::vec![0.0; k_max];
    let mut modes = alloc::vec![0usize; k_max];
    for i in 0..h {
        let ky = wavenumber(i, h);
        for j in 0..w {
            let kx = wavenumber(j, w);
            if kx == 0 && ky == 0 {
                continue;
            }
            let k2 = (kx * kx + ky * ky) as f64;
            let s = shell_index(kx, ky, k_max) - 1;
            energy[s] += 0.5 * coeffs[i * w + j].norm_sqr() / k2;
            modes[s] += 1;
        }
    }
    Ok(EnergySpectrum { k: (1..=k_max).collect(), energy, modes })
}

fn check_pair(rec: &FlowField, gt: &FlowField) -> Result<()> {
    if rec.shape() != gt.shape() {
        return Err(shape_err(gt.shape(), rec.shape()));
    }
    Ok(())
}

/// `‖rec − gt‖₂ / ‖gt‖₂` over the flattened fields.
pub fn rel_l2(rec: &FlowField, gt: &FlowField) -> Result<f64> {
    check_pair(rec, gt)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&r, &g) in rec.values().iter().zip(gt.values()) {
        num += (r - g) * (r - g);
        den += g * g;
    }
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(Float::sqrt(num) / Float::sqrt(den))
}

/// Relative L2 error of floored log energies over the 1-based shells in `shells`.
pub fn log_spectrum_error(e_rec: &[f64], e_gt: &[f64], shells: RangeInclusive<usize>) -> Result<f64> {
    if e_rec.len() != e_gt.len() {
        return Err(shape_err(e_gt.len(), e_rec.len()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in shells {
        let lr = Float::ln(e_rec[k - 1].max(LOG_FLOOR));
        let lg = Float::ln(e_gt[k - 1].max(LOG_FLOOR));
        num += (lr - lg) * (lr - lg);
        den += lg * lg;
    }
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(Float::sqrt(num) / Float::sqrt(den))
}

/// Shells in the top quarter of the wavenumber range:
/// `ceil(0.75 k_max) + 1 ..= k_max`.
pub fn high_shells(k_max: usize) -> RangeInclusive<usize> {
    let lo = (3 * k_max).div_ceil(4) + 1;
    lo.min(k_max)..=k_max
}

pub fn spectral_error(rec: &FlowField, gt: &FlowField) -> Result<f64> {
    check_pair(rec, gt)?;
    let (er, eg) = (energy_spectrum(rec)?, energy_spectrum(gt)?);
    log_spectrum_error(&er.energy, &eg.energy, 1..=eg.k_max())
}

pub fn highfreq_spectral_error(rec: &FlowField, gt: &FlowField) -> Result<f64> {
    check_pair(rec, gt)?;
    let (er, eg) = (energy_spectrum(rec)?, energy_spectrum(gt)?);
    log_spectrum_error(&er.energy, &eg.energy, high_shells(eg.k_max()))
}

/// The three per-sample metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub rel_l2: f64,
    pub spectral: f64,
    pub spectral_high: f64,
}

pub fn evaluate(rec: &FlowField, gt: &FlowField) -> Result<MetricTriple> {
    check_pair(rec, gt)?;
    let (er, eg) = (energy_spectrum(rec)?, energy_spectrum(gt)?);
    Ok(MetricTriple {
        rel_l2: rel_l2(rec, gt)?,
        spectral: log_spectrum_error(&er.energy, &eg.energy, 1..=eg.k_max())?,
        spectral_high: log_spectrum_error(&er.energy, &eg.energy, high_shells(eg.k_max()))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    Bilinear,
    Bicubic,
}

impl FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(Error::Invalid(alloc::format!("unknown interpolation `{other}`"))),
        }
    }
}

/// Block-average `field` by `factor` in each direction.
pub fn area_downsample(field: &FlowField, factor: usize) -> Result<FlowField> {
    let (h, w) = field.shape();
    if !factor.is_power_of_two() {
        return Err(Error::Invalid(alloc::format!("downsampling factor {factor} is not a power of two")));
    }
    for side in [h, w] {
        check_reducible(side, factor.trailing_zeros() as usize)?;
    }
    let (ch, cw) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    Ok(FlowField::from_fn(ch, cw, |i, j| {
        let mut acc = 0.0;
        for di in 0..factor {
            for dj in 0..factor {
                acc += field.at(i * factor + di, j * factor + dj);
            }
        }
        acc * inv
    }))
}

// Keys cubic convolution kernel, a = -0.5.
fn cubic_weight(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Periodic upsampling of a coarse field by `factor` with cell-centred
/// sample positions.
pub fn periodic_upsample(coarse: &FlowField, factor: usize, method: InterpMethod) -> FlowField {
    let (ch, cw) = coarse.shape();
    let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
    let pos = |p: usize| (p as f64 + 0.5) / factor as f64 - 0.5;
    FlowField::from_fn(ch * factor, cw * factor, |i, j| {
        let (y, x) = (pos(i), pos(j));
        let (y0, x0) = (Float::floor(y), Float::floor(x));
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as i64, x0 as i64);
        match method {
            InterpMethod::Bilinear => {
                let v = |di: i64, dj: i64| coarse.at(wrap(y0 + di, ch), wrap(x0 + dj, cw));
                (1.0 - fy) * ((1.0 - fx) * v(0, 0) + fx * v(0, 1)) + fy * ((1.0 - fx) * v(1, 0) + fx * v(1, 1))
            }
            InterpMethod::Bicubic => {
                let wy: [f64; 4] = core::array::from_fn(|m| cubic_weight(fy - (m as f64 - 1.0)));
                let wx: [f64; 4] = core::array::from_fn(|m| cubic_weight(fx - (m as f64 - 1.0)));
                let mut acc = 0.0;
                for (m, wym) in wy.iter().enumerate() {
                    let row = wrap(y0 + m as i64 - 1, ch);
                    let mut racc = 0.0;
                    for (n, wxn) in wx.iter().enumerate() {
                        racc += wxn * coarse.at(row, wrap(x0 + n as i64 - 1, cw));
                    }
                    acc += wym * racc;
                }
                acc
            }
        }
    })
}

/// Area-average down by `2^depth`, then interpolate back to full size.
pub fn interp_baseline(gt: &FlowField, depth: usize, method: InterpMethod) -> Result<FlowField> {
    let factor = 1usize << depth;
    let (h, w) = gt.shape();
    for side in [h, w] {
        check_reducible(side, depth)?;
    }
    if depth == 0 {
        return Ok(gt.clone());
    }
    let coarse = area_downsample(gt, factor)?;
    Ok(periodic_upsample(&coarse, factor, method))
}
