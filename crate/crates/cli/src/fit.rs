//! The training loop: AdamW under the one-cycle policy, per-step logging,
//! per-epoch checkpoints, best-by-validation selection and a divergence
//! guard.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use diffcoder_core::data::{apply_stats, train_stats, Dataset, Split};
use diffcoder_core::graph::Graph;
use diffcoder_core::nn::{Arch, Model, ModelSpec};
use diffcoder_core::optim::{AdamW, AdamWConfig, OneCycle};
use diffcoder_core::schedule::NoiseSchedule;
use diffcoder_core::train::{
    diffusion_loss_graph, diffusion_training_step, vae_loss_graph, vae_training_step, DiffusionDraws, TrainConfig,
};
use diffcoder_core::{Error as CoreError, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::dataset_io::write_json;
use crate::error::{Error, Result};

pub const TRAIN_LOG: &str = "train.log";
pub const FIT_SUMMARY: &str = "fit_summary.json";
pub const BEST: &str = "best";
pub const FINAL: &str = "final";

/// A loss more than this multiple of the running median counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// Steps observed before the median-based guard is armed.
const GUARD_WARMUP: usize = 8;
/// Fraction of training trajectories held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

const TRAIN_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub arch: Arch,
    pub spec: ModelSpec,
    pub num_params: usize,
    pub train_trajectories: Vec<usize>,
    pub val_trajectories: Vec<usize>,
    pub total_steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn epoch_dir(epoch: usize) -> String {
    format!("epoch_{epoch:02}")
}

/// Holds out the last `VALIDATION_FRACTION` of the training trajectories
/// (at least one when there are two or more).
pub fn validation_split(train_ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = train_ids.len();
    let n_val = if n < 2 { 0 } else { ((n as f64 * VALIDATION_FRACTION).round() as usize).max(1) };
    (train_ids[..n - n_val].to_vec(), train_ids[n - n_val..].to_vec())
}

/// Standardizes `ds` with its recorded statistics, or with statistics of
/// its training split when none are recorded.
pub fn standardized(ds: &Dataset) -> Result<Dataset> {
    if ds.normalized {
        return Ok(ds.clone());
    }
    let stats = match ds.norm_stats {
        Some(s) => s,
        None => train_stats(ds)?,
    };
    Ok(apply_stats(ds, stats))
}

fn frames_of(ds: &Dataset, ids: &[usize]) -> Vec<Vec<f32>> {
    let grid = ds.grid();
    ds.trajectories
        .iter()
        .filter(|t| ids.contains(&t.id))
        .flat_map(|t| (0..t.frames).map(move |f| t.frame(f, grid).to_vec()))
        .collect()
}

fn batch_tensor(frames: &[Vec<f32>], idx: &[usize], grid: (usize, usize)) -> Tensor<f32> {
    let mut data = Vec::with_capacity(idx.len() * grid.0 * grid.1);
    for &i in idx {
        data.extend_from_slice(&frames[i]);
    }
    Tensor::new(&[idx.len(), 1, grid.0, grid.1], data)
}

/// Median of a sorted, non-empty slice.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

struct Guard {
    sorted: Vec<f64>,
}

impl Guard {
    fn check(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged { step, reason: format!("loss is {loss}") });
        }
        if self.sorted.len() >= GUARD_WARMUP {
            let m = median(&self.sorted);
            if loss > DIVERGENCE_FACTOR * m {
                return Err(Error::Diverged {
                    step,
                    reason: format!("loss {loss:e} exceeds {DIVERGENCE_FACTOR}x the running median {m:e}"),
                });
            }
        }
        let at = self.sorted.partition_point(|&v| v < loss);
        self.sorted.insert(at, loss);
        Ok(())
    }
}

fn diverged(step: usize, e: CoreError) -> Error {
    match e {
        CoreError::NonFinite(reason) => Error::Diverged { step, reason },
        other => other.into(),
    }
}

/// Mean validation loss under draws that are identical in every epoch.
fn validation_loss(
    model: &Model<f32>,
    frames: &[Vec<f32>],
    grid: (usize, usize),
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(VALIDATION_STREAM);
    let (mut total, mut count) = (0.0, 0usize);
    let order: Vec<usize> = (0..frames.len()).collect();
    for idx in order.chunks(cfg.batch_size) {
        let x = batch_tensor(frames, idx, grid);
        let mut g = Graph::inference(model.store());
        let loss = match model.arch() {
            Arch::DiffCoder => {
                let draws = DiffusionDraws::sample(x.shape(), sched, &mut rng);
                diffusion_loss_graph(model, &mut g, &x, &draws, sched)?
            }
            Arch::Vae => {
                let (zh, zw) = model.spec().latent_shape(grid.0, grid.1)?;
                let shape = [idx.len(), model.spec().latent_channels, zh, zw];
                let xi = (0..shape.iter().product()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
                vae_loss_graph(model, &mut g, &x, Tensor::new(&shape, xi), cfg.kl_weight)?.0
            }
        };
        total += g.value(loss).item() as f64 * idx.len() as f64;
        count += idx.len();
    }
    Ok(total / count as f64)
}

/// Trains `arch`/`spec` on the training split of `ds` and writes the log,
/// per-epoch checkpoints, `best`, `final` and a summary under `out`.
/// On divergence the run stops with an error and the checkpoints written
/// so far are kept.
pub fn fit(arch: Arch, spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset, out: &Path, progress: bool) -> Result<FitSummary> {
    cfg.validate()?;
    let sched = cfg.schedule().build()?;
    let grid = ds.grid();
    spec.check_input(grid.0, grid.1)?;
    let ds = standardized(ds)?;
    let stats = ds.norm_stats.expect("standardized datasets carry statistics");

    let train_ids: Vec<usize> = ds.of_split(Split::Train).map(|t| t.id).collect();
    if train_ids.is_empty() {
        return Err(Error::Invalid("dataset has no training trajectories".into()));
    }
    let (fit_ids, val_ids) = validation_split(&train_ids);
    let train_frames = frames_of(&ds, &fit_ids);
    let val_frames = frames_of(&ds, &val_ids);

    let mut model = Model::<f32>::build(arch, spec.clone(), cfg.seed)?;
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, model.store());
    let steps_per_epoch = train_frames.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let policy = OneCycle::new(cfg.max_lr, total_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);

    fs::create_dir_all(out).map_err(Error::io(out))?;
    let log_path = out.join(TRAIN_LOG);
    let file = fs::File::create(&log_path).map_err(Error::io(&log_path))?;
    let mut log = BufWriter::new(file);
    let header = match arch {
        Arch::DiffCoder => "step,epoch,lr,loss",
        Arch::Vae => "step,epoch,lr,loss,recon,kl",
    };
    writeln!(log, "{header}").map_err(Error::io(&log_path))?;

    let mut summary = FitSummary {
        arch,
        spec: spec.clone(),
        num_params: model.num_params(),
        train_trajectories: fit_ids,
        val_trajectories: val_ids,
        total_steps,
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut guard = Guard { sorted: Vec::new() };
    let mut best = f64::INFINITY;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let lr = policy.lr(step);
            let x = batch_tensor(&train_frames, idx, grid);
            let (loss, extra, grads) = match arch {
                Arch::DiffCoder => {
                    let (l, g) = diffusion_training_step(&model, &x, &sched, &mut rng).map_err(|e| diverged(step, e))?;
                    (l, String::new(), g)
                }
                Arch::Vae => {
                    let (l, g) = vae_training_step(&model, &x, cfg.kl_weight, &mut rng).map_err(|e| diverged(step, e))?;
                    (l.loss, format!(",{:e},{:e}", l.recon, l.kl), g)
                }
            };
            writeln!(log, "{step},{epoch},{lr:e},{loss:e}{extra}").map_err(Error::io(&log_path))?;
            if let Err(e) = guard.check(step, loss) {
                log.flush().map_err(Error::io(&log_path))?;
                return Err(e);
            }
            opt.step(model.store_mut(), &grads.into_params(), lr);
            epoch_loss += loss;
            step += 1;
        }
        log.flush().map_err(Error::io(&log_path))?;
        let train_loss = epoch_loss / steps_per_epoch as f64;
        let val_loss = if val_frames.is_empty() {
            train_loss
        } else {
            validation_loss(&model, &val_frames, grid, cfg, &sched)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { step, reason: format!("validation loss is {val_loss}") });
        }
        let meta = CheckpointMeta {
            arch,
            spec: spec.clone(),
            train: cfg.clone(),
            grid,
            norm_stats: stats,
            epoch,
            step,
            val_loss: Some(val_loss),
        };
        save_checkpoint(&model, &meta, &out.join(epoch_dir(epoch)))?;
        if val_loss < best {
            best = val_loss;
            summary.best_epoch = epoch;
            save_checkpoint(&model, &meta, &out.join(BEST))?;
        }
        if epoch == cfg.epochs {
            save_checkpoint(&model, &meta, &out.join(FINAL))?;
        }
        if progress {
            eprintln!("epoch {epoch}/{}: train loss {train_loss:.4e}, validation loss {val_loss:.4e}", cfg.epochs);
        }
        summary.epochs.push(EpochRecord { epoch, steps: step, train_loss, val_loss });
        write_json(&out.join(FIT_SUMMARY), &summary)?;
    }
    Ok(summary)
}

/// Directory of the final checkpoint written by [`fit`].
pub fn final_checkpoint(out: &Path) -> PathBuf {
    out.join(FINAL)
}
