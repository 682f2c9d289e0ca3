//! Test-split evaluation of a checkpoint against both interpolation
//! baselines, and the JSON report it produces.

use std::fs;
use std::path::Path;

use diffcoder_core::data::{Dataset, Split};
use diffcoder_core::metrics::{evaluate, interp_baseline, InterpMethod, MetricTriple};
use diffcoder_core::nn::{Arch, Model, ModelSpec};
use diffcoder_core::sampler::ddim_sample_batch;
use diffcoder_core::{FlowField, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointMeta;
use crate::dataset_io::{read_versioned, write_json};
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "diffcoder-eval-v1";
pub const REPORT: &str = "report.json";
pub const RECONSTRUCTIONS: &str = "reconstructions.f32";
pub const MODEL: &str = "model";
pub const BILINEAR: &str = "bilinear";
pub const BICUBIC: &str = "bicubic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rel_l2: f64,
    pub spectral: f64,
    pub spectral_high: f64,
}

impl From<MetricTriple> for Metrics {
    fn from(m: MetricTriple) -> Self {
        Self { rel_l2: m.rel_l2, spectral: m.spectral, spectral_high: m.spectral_high }
    }
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics { rel_l2: sum(|m| m.rel_l2), spectral: sum(|m| m.spectral), spectral_high: sum(|m| m.spectral_high) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub index: usize,
    pub trajectory: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub mean: Metrics,
    pub per_sample: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub arch: Arch,
    pub spec: ModelSpec,
    pub num_params: usize,
    pub grid: (usize, usize),
    pub depth: usize,
    pub epoch: usize,
    pub ddim_steps: usize,
    pub seed: u64,
    pub identity: bool,
    pub samples: Vec<SampleRef>,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Defaults to the checkpoint's training configuration.
    pub ddim_steps: Option<usize>,
    pub seed: u64,
    pub batch_size: usize,
    /// Debug mode: the "reconstruction" is the ground truth itself.
    pub identity: bool,
    /// Evaluate only the first `limit` test frames.
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { ddim_steps: None, seed: 0, batch_size: 16, identity: false, limit: None }
    }
}

/// Test frames of `ds` in trajectory order, as raw values.
pub fn test_samples(ds: &Dataset, limit: Option<usize>) -> (Vec<SampleRef>, Vec<Vec<f32>>) {
    let grid = ds.grid();
    let mut refs = Vec::new();
    let mut frames = Vec::new();
    for t in ds.of_split(Split::Test) {
        for f in 0..t.frames {
            refs.push(SampleRef { index: refs.len(), trajectory: t.id, frame: f });
            frames.push(t.frame(f, grid).to_vec());
        }
    }
    if let Some(n) = limit {
        refs.truncate(n);
        frames.truncate(n);
    }
    (refs, frames)
}

/// Reconstructs standardized frames: DDIM decoding of the encoder latent
/// for DiffCoder, the posterior-mean decoding for the VAE.
pub fn reconstruct_batch(model: &Model<f32>, meta: &CheckpointMeta, x: &Tensor<f32>, steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    Ok(match model.arch() {
        Arch::DiffCoder => {
            let z = model.encode_batch(x)?;
            let sched = meta.train.schedule().build()?;
            ddim_sample_batch(model, &z, &sched, steps, rng)?
        }
        Arch::Vae => model.vae_reconstruct(x)?,
    })
}

/// Evaluates the model and both baselines on the test split of `ds`
/// (raw values). Returns the report and the raw reconstructions,
/// frame after frame.
pub fn evaluate_checkpoint(
    model: &Model<f32>,
    meta: &CheckpointMeta,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<f32>)> {
    if ds.grid() != meta.grid {
        return Err(Error::Mismatch(format!(
            "dataset grid {:?} differs from the checkpoint's training grid {:?}",
            ds.grid(),
            meta.grid
        )));
    }
    if ds.normalized {
        return Err(Error::Invalid("evaluation expects raw (unstandardized) data".into()));
    }
    let (h, w) = meta.grid;
    let steps = opts.ddim_steps.unwrap_or(meta.train.ddim_steps);
    let (samples, frames) = test_samples(ds, opts.limit);
    if samples.is_empty() {
        return Err(Error::Invalid("dataset has no test frames".into()));
    }
    let stats = meta.norm_stats;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut recon: Vec<f32> = Vec::with_capacity(frames.len() * h * w);
    for chunk in frames.chunks(opts.batch_size.max(1)) {
        if opts.identity {
            chunk.iter().for_each(|f| recon.extend_from_slice(f));
            continue;
        }
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        for f in chunk {
            data.extend(f.iter().map(|&v| stats.apply(v as f64) as f32));
        }
        let x = Tensor::new(&[chunk.len(), 1, h, w], data);
        let out = reconstruct_batch(model, meta, &x, steps, &mut rng)?;
        recon.extend(out.data().iter().map(|&v| stats.invert(v as f64) as f32));
    }

    let depth = meta.spec.depth;
    let mut per: [Vec<Metrics>; 3] = Default::default();
    for (i, f) in frames.iter().enumerate() {
        let gt = FlowField::from_f32(h, w, f)?;
        let rec = FlowField::from_f32(h, w, &recon[i * h * w..(i + 1) * h * w])?;
        per[0].push(evaluate(&rec, &gt)?.into());
        for (k, method) in [InterpMethod::Bilinear, InterpMethod::Bicubic].into_iter().enumerate() {
            let b = interp_baseline(&gt, depth, method)?;
            per[k + 1].push(evaluate(&b, &gt)?.into());
        }
    }
    let methods = [MODEL, BILINEAR, BICUBIC]
        .into_iter()
        .zip(per)
        .map(|(name, per_sample)| MethodReport { method: name.into(), mean: Metrics::mean(&per_sample), per_sample })
        .collect();
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        arch: meta.arch,
        spec: meta.spec.clone(),
        num_params: model.num_params(),
        grid: meta.grid,
        depth,
        epoch: meta.epoch,
        ddim_steps: steps,
        seed: opts.seed,
        identity: opts.identity,
        samples,
        methods,
    };
    Ok((report, recon))
}

pub fn write_report(dir: &Path, report: &EvalReport, recon: &[f32]) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_json(&dir.join(REPORT), report)?;
    let path = dir.join(RECONSTRUCTIONS);
    let bytes: Vec<u8> = recon.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&path, bytes).map_err(Error::io(&path))
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    read_versioned(&dir.join(REPORT), "evaluation report", REPORT_FORMAT)
}

pub fn read_reconstructions(dir: &Path, report: &EvalReport) -> Result<Vec<f32>> {
    let path = dir.join(RECONSTRUCTIONS);
    if !path.is_file() {
        return Err(Error::Missing { what: "reconstructions", path });
    }
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    let expected = (report.samples.len() * report.grid.0 * report.grid.1 * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::ByteCount { path, expected, found: bytes.len() as u64 });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
