//! In-memory datasets of vorticity trajectories, normalization, splitting,
//! and the spectrum-controlled synthetic surrogate generator.
//!
//! The surrogate is not a flow solver: frames are random-phase Fourier
//! series with a prescribed energy-spectrum slope whose phases drift in time.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, is_pow2, wavenumber};
use crate::field::FlowField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::Split(alloc::format!("unknown split `{other}`"))),
        }
    }
}

/// Global scalar statistics used for standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// One sequence of frames, stored as `f32` frame-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub split: Split,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Trajectory {
    pub fn frame(&self, idx: usize, grid: (usize, usize)) -> &[f32] {
        let n = grid.0 * grid.1;
        &self.data[idx * n..(idx + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub trajectories: Vec<Trajectory>,
    /// Statistics of the training split, once computed.
    pub norm_stats: Option<NormStats>,
    /// Whether `trajectories` currently hold standardized values.
    pub normalized: bool,
}

pub fn check_grid(height: usize, width: usize) -> Result<()> {
    for side in [height, width] {
        if !is_pow2(side) || side < 16 {
            return Err(Error::Grid(alloc::format!("side {side} is not a power of two of at least 16")));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(height: usize, width: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        check_grid(height, width)?;
        let n = height * width;
        for t in &trajectories {
            if t.frames == 0 || t.data.len() != t.frames * n {
                return Err(crate::error::shape_err(t.frames * n, t.data.len()));
            }
        }
        let mut ids: Vec<usize> = trajectories.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Split("duplicate trajectory id".into()));
        }
        Ok(Self { height, width, trajectories, norm_stats: None, normalized: false })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames).sum()
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    /// A copy holding only the trajectories of `split`.
    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            trajectories: self.of_split(split).cloned().collect(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            height: self.height,
            width: self.width,
            trajectories: Vec::new(),
            norm_stats: self.norm_stats,
            normalized: self.normalized,
        }
    }

    /// All frames of `split` as flow fields, trajectory by trajectory.
    pub fn fields(&self, split: Split) -> Vec<FlowField> {
        let grid = self.grid();
        self.of_split(split)
            .flat_map(|t| (0..t.frames).map(move |f| (t, f)))
            .map(|(t, f)| FlowField::from_fn(grid.0, grid.1, |i, j| t.frame(f, grid)[i * grid.1 + j] as f64))
            .collect()
    }
}

/// Mean and standard deviation over every value of the training split.
pub fn train_stats(ds: &Dataset) -> Result<NormStats> {
    let (mut n, mut sum) = (0usize, 0.0f64);
    for t in ds.of_split(Split::Train) {
        n += t.data.len();
        sum += t.data.iter().map(|&v| v as f64).sum::<f64>();
    }
    if n == 0 {
        return Err(Error::Split("no training trajectories to compute statistics from".into()));
    }
    let mean = sum / n as f64;
    let var = ds
        .of_split(Split::Train)
        .flat_map(|t| t.data.iter())
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = Float::sqrt(var);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(NormStats { mean, std })
}

/// Standardizes every trajectory with the training split's global mean and
/// standard deviation.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    if ds.normalized {
        return Ok(ds.clone());
    }
    let stats = train_stats(ds)?;
    Ok(apply_stats(ds, stats))
}

/// Standardizes with externally supplied statistics, e.g. those recorded
/// in a checkpoint.
pub fn apply_stats(ds: &Dataset, stats: NormStats) -> Dataset {
    let mut out = ds.clone();
    for t in &mut out.trajectories {
        for v in &mut t.data {
            *v = stats.apply(*v as f64) as f32;
        }
    }
    out.norm_stats = Some(stats);
    out.normalized = true;
    out
}

pub fn denormalize(ds: &Dataset) -> Result<Dataset> {
    let stats = ds.norm_stats.ok_or_else(|| Error::Invalid("dataset has no normalization statistics".into()))?;
    let mut out = ds.clone();
    if ds.normalized {
        for t in &mut out.trajectories {
            for v in &mut t.data {
                *v = stats.invert(*v as f64) as f32;
            }
        }
    }
    out.normalized = false;
    Ok(out)
}

/// Assigns `n_train` trajectories to the training split and the rest to the
/// test split, uniformly at random under `seed`. Whole trajectories move
/// together; frames are never split.
pub fn split_dataset(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(alloc::format!("n_train = {n_train} must lie in 1..{n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize], split: Split| Dataset {
        trajectories: idx
            .iter()
            .map(|&i| Trajectory { split, ..ds.trajectories[i].clone() })
            .collect(),
        ..ds.clone_empty()
    };
    Ok((pick(&train_idx, Split::Train), pick(&test_idx, Split::Test)))
}

/// Recombines a split pair into one dataset with per-trajectory labels,
/// ordered by trajectory id.
pub fn merge_splits(train: &Dataset, test: &Dataset) -> Result<Dataset> {
    if train.grid() != test.grid() {
        return Err(Error::Grid("split grids differ".into()));
    }
    let mut all: Vec<Trajectory> = train.trajectories.iter().chain(&test.trajectories).cloned().collect();
    all.sort_by_key(|t| t.id);
    let mut ds = Dataset::new(train.height, train.width, all)?;
    ds.norm_stats = train.norm_stats;
    ds.normalized = train.normalized;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub grid: usize,
    /// Requested log-log slope of the energy spectrum `E(k)`.
    pub spectrum_slope: f64,
    pub forcing_wavenumber: usize,
    /// Amplitude of the forcing mode relative to the envelope at its shell.
    pub forcing_gain: f64,
    /// Phase advance per frame scale, radians.
    pub drift: f64,
}

impl SynthParams {
    pub fn new(grid: usize, spectrum_slope: f64, forcing_wavenumber: usize) -> Self {
        Self { grid, spectrum_slope, forcing_wavenumber, forcing_gain: 4.0, drift: 0.35 }
    }

    fn validate(&self) -> Result<()> {
        check_grid(self.grid, self.grid)?;
        if !(self.spectrum_slope < 0.0) {
            return Err(Error::Invalid("spectrum slope must be negative".into()));
        }
        if self.forcing_wavenumber == 0 || self.forcing_wavenumber > self.grid / 2 {
            return Err(Error::Invalid("forcing wavenumber outside 1..=grid/2".into()));
        }
        Ok(())
    }
}

/// Random per-mode state of one trajectory: a phase and a drift rate for
/// every mode in the upper half plane.
struct ModeState {
    phase: Vec<f64>,
    rate: Vec<f64>,
}

fn mode_state(p: &SynthParams, rng: &mut ChaCha8Rng) -> ModeState {
    let n = p.grid * p.grid;
    let mut phase = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    for _ in 0..n {
        phase.push(rng.gen_range(0.0..2.0 * PI));
        rate.push(rng.gen_range(-1.0..1.0));
    }
    ModeState { phase, rate }
}

/// Whether `(kx, ky)` is the canonical member of its conjugate pair.
fn is_canonical(kx: i64, ky: i64) -> bool {
    ky > 0 || (ky == 0 && kx > 0)
}

/// Per-mode vorticity amplitude. A shell of radius `k` holds about `2πk`
/// modes and each contributes `|ω̂|²/(2k²)`, so `|ω̂| ∝ k^((s+1)/2)` gives
/// `E(k) ∝ k^s`.
fn amplitude(p: &SynthParams, kx: i64, ky: i64) -> f64 {
    let k2 = (kx * kx + ky * ky) as f64;
    let k = Float::sqrt(k2);
    let mut a = Float::powf(k, (p.spectrum_slope + 1.0) / 2.0);
    let kf = p.forcing_wavenumber as i64;
    if kx == 0 && ky.abs() == kf {
        a *= p.forcing_gain;
    }
    a
}

fn frame_complex(p: &SynthParams, st: &ModeState, frame: usize) -> Vec<Complex64> {
    let n = p.grid;
    let nyq = (n / 2) as i64;
    let mut spec = alloc::vec![Complex64::new(0.0, 0.0); n * n];
    for iy in 0..n {
        let ky = wavenumber(iy, n);
        for ix in 0..n {
            let kx = wavenumber(ix, n);
            // Nyquist rows and columns have no distinct conjugate partner.
            if kx == nyq || ky == nyq || !is_canonical(kx, ky) {
                continue;
            }
            let idx = iy * n + ix;
            let kmag = Float::sqrt((kx * kx + ky * ky) as f64);
            let theta = st.phase[idx] + frame as f64 * p.drift * st.rate[idx] * Float::sqrt(kmag);
            let c = Complex64::from_polar(amplitude(p, kx, ky), theta);
            spec[idx] = c;
            let cy = (n - iy) % n;
            let cx = (n - ix) % n;
            spec[cy * n + cx] = c.conj();
        }
    }
    fft2_inplace(&mut spec, n, n, true);
    spec
}

/// One synthetic frame before the cast to real values. The imaginary parts
/// are round-off only.
pub fn synth_frame_complex(p: &SynthParams, seed: u64, trajectory: usize, frame: usize) -> Result<Vec<Complex64>> {
    p.validate()?;
    let st = mode_state(p, &mut trajectory_rng(seed, trajectory));
    Ok(frame_complex(p, &st, frame))
}

fn trajectory_rng(seed: u64, trajectory: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory as u64 + 1);
    rng
}

/// Generates `n_traj` trajectories of `frames` frames each, all labelled as
/// training data and unnormalized.
pub fn synth_generate(
    grid: usize,
    n_traj: usize,
    frames: usize,
    spectrum_slope: f64,
    forcing_wavenumber: usize,
    seed: u64,
) -> Result<Dataset> {
    synth_generate_with(&SynthParams::new(grid, spectrum_slope, forcing_wavenumber), n_traj, frames, seed)
}

pub fn synth_generate_with(p: &SynthParams, n_traj: usize, frames: usize, seed: u64) -> Result<Dataset> {
    p.validate()?;
    if n_traj == 0 || frames == 0 {
        return Err(Error::Invalid("need at least one trajectory and one frame".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for id in 0..n_traj {
        let st = mode_state(p, &mut trajectory_rng(seed, id));
        let mut data = Vec::with_capacity(frames * p.grid * p.grid);
        for f in 0..frames {
            data.extend(frame_complex(p, &st, f).iter().map(|c| c.re as f32));
        }
        trajectories.push(Trajectory { id, split: Split::Train, frames, data });
    }
    Dataset::new(p.grid, p.grid, trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let traj = (0..n)
            .map(|id| Trajectory {
                id,
                split: Split::Train,
                frames: 2,
                data: (0..512).map(|i| (i as f32 * 0.01 + id as f32).sin()).collect(),
            })
            .collect();
        Dataset::new(16, 16, traj).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds = toy(120);
        let (a, b) = split_dataset(&ds, 100, 3).unwrap();
        assert_eq!((a.len(), b.len()), (100, 20));
        let (a2, _) = split_dataset(&ds, 100, 3).unwrap();
        assert_eq!(a, a2);
        assert!(split_dataset(&ds, 120, 3).is_err());
        assert!(split_dataset(&ds, 0, 3).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let ds = toy(30);
        let (a, b) = split_dataset(&ds, 17, 9).unwrap();
        for t in &a.trajectories {
            assert!(b.trajectories.iter().all(|u| u.id != t.id));
        }
        let merged = merge_splits(&a, &b).unwrap();
        assert_eq!(merged.len(), 30);
        assert_eq!(merged.of_split(Split::Test).count(), 13);
    }

    #[test]
    fn constant_data_has_zero_variance() {
        let mut ds = toy(2);
        for t in &mut ds.trajectories {
            t.data.iter_mut().for_each(|v| *v = 3.0);
        }
        assert_eq!(normalize(&ds), Err(Error::ZeroVariance));
    }

    #[test]
    fn stats_ignore_test_split() {
        let ds = toy(4);
        let (train, mut test) = split_dataset(&ds, 2, 0).unwrap();
        for t in &mut test.trajectories {
            t.data.iter_mut().for_each(|v| *v += 100.0);
        }
        let merged = merge_splits(&train, &test).unwrap();
        assert_eq!(train_stats(&merged).unwrap(), train_stats(&train).unwrap());
    }

    #[test]
    fn synth_rejects_bad_grid() {
        assert!(synth_generate(48, 1, 1, -3.0, 4, 0).is_err());
        assert!(synth_generate(8, 1, 1, -3.0, 2, 0).is_err());
        assert!(synth_generate(32, 1, 1, 1.0, 4, 0).is_err());
    }

    #[test]
    fn frames_change_over_time() {
        let ds = synth_generate(16, 1, 2, -3.0, 2, 5).unwrap();
        let t = &ds.trajectories[0];
        assert_ne!(t.frame(0, (16, 16)), t.frame(1, (16, 16)));
    }
}
