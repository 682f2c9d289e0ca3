//! Command-line entry points. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffcoder_core::data::{merge_splits, split_dataset, synth_generate, train_stats, Dataset};
use diffcoder_core::metrics::{interp_baseline, InterpMethod};
use diffcoder_core::nn::{solve_width_for_budget, Arch};
use diffcoder_core::FlowField;

use crate::checkpoint::{is_checkpoint, load_checkpoint};
use crate::config::{parse_budget, TrainOverrides};
use crate::dataset_io::{read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, read_reconstructions, read_report, write_report, EvalOptions, EvalReport, BICUBIC, BILINEAR, MODEL};
use crate::fit::{fit, FINAL};
use crate::matrix::{run_matrix, ExperimentMatrix};
use crate::mosaic::{mosaic_file_name, render_mosaic, save_png, select_percentiles, MosaicInput};

/// Root directory for relative dataset paths, when set.
pub const CACHE_ENV: &str = "DIFFCODER_CACHE";

#[derive(Debug, Parser)]
#[command(name = "diffcoder", version, about = "Diffusion-decoder autoencoders for turbulent vorticity fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic surrogate dataset with a train/test split.
    GenData(GenDataArgs),
    /// Train a VAE or DiffCoder model at a parameter budget.
    Train(TrainArgs),
    /// Evaluate a checkpoint and both interpolation baselines on the test split.
    Eval(EvalArgs),
    /// Run train + eval over an experiment matrix and write comparison tables.
    Matrix(MatrixArgs),
    /// Render mosaics for samples at spectral-error percentiles.
    Mosaic(MosaicArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 64, value_parser = parse_grid)]
    pub grid: usize,
    #[arg(long, default_value_t = 48)]
    pub traj: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub slope: f64,
    #[arg(long = "forcing-k", default_value_t = 4)]
    pub forcing_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test trajectories; defaults to one sixth of `--traj` (at least one).
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    pub arch: Arch,
    /// Parameter budget, e.g. 100000 or 100K.
    #[arg(long, value_parser = parse_budget)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attention in the encoder's last layer.
    #[arg(long)]
    pub attn_enc: bool,
    /// Attention in the decoder / U-Net bottleneck.
    #[arg(long)]
    pub attn_dec: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a training output directory holding `final`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Debug: pass the ground truth through as the reconstruction.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    /// TOML matrix config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MosaicArgs {
    /// Evaluation output directory.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 1.., default_values_t = [40.0, 60.0], value_parser = parse_percentile)]
    pub percentiles: Vec<f64>,
}

fn parse_grid(s: &str) -> std::result::Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("invalid grid `{s}`"))?;
    if !n.is_power_of_two() || n < 16 {
        return Err(format!("grid {n} is not a power of two of at least 16"));
    }
    Ok(n)
}

fn parse_arch(s: &str) -> std::result::Result<Arch, String> {
    s.parse().map_err(|e: diffcoder_core::Error| e.to_string())
}

fn parse_percentile(s: &str) -> std::result::Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("invalid percentile `{s}`"))?;
    if !(0.0..=100.0).contains(&p) {
        return Err(format!("percentile {p} outside 0..=100"));
    }
    Ok(p)
}

/// Resolves a relative dataset path under `DIFFCODER_CACHE` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Synthetic dataset with a seeded trajectory split and training-split
/// statistics recorded (values stay raw).
pub fn generate_dataset(args: &GenDataArgs) -> Result<Dataset> {
    let ds = synth_generate(args.grid, args.traj, args.frames, args.slope, args.forcing_k, args.seed)?;
    let n_test = args.test.unwrap_or((args.traj / 6).max(1));
    let n_train = args
        .traj
        .checked_sub(n_test)
        .ok_or_else(|| Error::Invalid(format!("--test {n_test} exceeds --traj {}", args.traj)))?;
    let (train, test) = split_dataset(&ds, n_train, args.seed)?;
    let mut merged = merge_splits(&train, &test)?;
    merged.norm_stats = Some(train_stats(&merged)?);
    Ok(merged)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let ds = generate_dataset(args)?;
    let out = resolve_data_path(&args.out);
    write_dataset(&ds, &out)?;
    println!("wrote {} trajectories to {}", ds.len(), out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let spec = solve_width_for_budget(args.size, args.depth, args.arch)?.with_attention(args.attn_enc, args.attn_dec);
    let data = resolve_data_path(&args.data);
    let ds = read_dataset(&data)?;
    let cfg = args.overrides.apply(args.seed);
    let summary = fit(args.arch, &spec, &cfg, &ds, &args.out, !args.quiet)?;
    println!(
        "trained {} with {} parameters for {} steps; best epoch {}; checkpoints in {}",
        args.arch,
        summary.num_params,
        summary.total_steps,
        summary.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn print_means(report: &EvalReport) {
    for m in &report.methods {
        println!(
            "{:<9} rel_l2 {:.4}  spectral {:.4}  spectral_high {:.4}",
            m.method, m.mean.rel_l2, m.mean.spectral, m.mean.spectral_high
        );
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = if !is_checkpoint(&args.ckpt) && is_checkpoint(&args.ckpt.join(FINAL)) {
        args.ckpt.join(FINAL)
    } else {
        args.ckpt.clone()
    };
    let (model, meta) = load_checkpoint(&ckpt)?;
    let ds = read_dataset(&resolve_data_path(&args.data))?;
    let opts = EvalOptions {
        ddim_steps: args.ddim_steps,
        seed: args.seed,
        batch_size: args.batch_size,
        identity: args.identity,
        limit: args.limit,
    };
    let (report, recon) = evaluate_checkpoint(&model, &meta, &ds, &opts)?;
    write_report(&args.out, &report, &recon)?;
    print_means(&report);
    Ok(())
}

pub fn cmd_matrix(args: &MatrixArgs) -> Result<()> {
    let m = ExperimentMatrix::read(&args.config)?;
    let ds = read_dataset(&resolve_data_path(&m.data))?;
    let outcome = run_matrix(&m, &ds, &args.out, args.jobs, !args.quiet)?;
    let failed = outcome.statuses.iter().filter(|s| s.error.is_some()).count();
    println!("{} cells, {failed} failed; tables in {}", outcome.statuses.len(), args.out.display());
    if failed > 0 {
        return Err(Error::CellsFailed { failed, total: outcome.statuses.len() });
    }
    Ok(())
}

/// Renders one mosaic per percentile and returns the written paths.
pub fn cmd_mosaic(args: &MosaicArgs) -> Result<Vec<PathBuf>> {
    let report = read_report(&args.eval)?;
    let recon = read_reconstructions(&args.eval, &report)?;
    let ds = read_dataset(&resolve_data_path(&args.data))?;
    if ds.grid() != report.grid {
        return Err(Error::Mismatch(format!("dataset grid {:?} differs from the report's {:?}", ds.grid(), report.grid)));
    }
    let method = |name: &str| {
        report.method(name).ok_or_else(|| Error::Invalid(format!("report lacks method `{name}`")))
    };
    let (model, bil, bic) = (method(MODEL)?, method(BILINEAR)?, method(BICUBIC)?);
    let errors: Vec<f64> = model.per_sample.iter().map(|m| m.spectral).collect();
    let picks = select_percentiles(&errors, &args.percentiles)?;
    std::fs::create_dir_all(&args.out).map_err(Error::io(&args.out))?;
    let (h, w) = report.grid;
    let mut written = Vec::new();
    for (&p, &i) in args.percentiles.iter().zip(&picks) {
        let s = report.samples[i];
        let traj = ds
            .trajectories
            .iter()
            .find(|t| t.id == s.trajectory)
            .ok_or_else(|| Error::Mismatch(format!("trajectory {} not in dataset", s.trajectory)))?;
        let gt = FlowField::from_f32(h, w, traj.frame(s.frame, (h, w)))?;
        let rec = FlowField::from_f32(h, w, &recon[i * h * w..(i + 1) * h * w])?;
        let bl = interp_baseline(&gt, report.depth, InterpMethod::Bilinear)?;
        let bc = interp_baseline(&gt, report.depth, InterpMethod::Bicubic)?;
        let img = render_mosaic(&MosaicInput {
            gt: &gt,
            model: &rec,
            bilinear: &bl,
            bicubic: &bc,
            metrics: [model.per_sample[i], bil.per_sample[i], bic.per_sample[i]],
        })?;
        written.push(save_png(&img, &args.out.join(mosaic_file_name(p, i)))?);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Mosaic(a) => cmd_mosaic(a).map(|_| ()),
    }
}

/// Parses `args` and runs the command, mapping outcomes to exit codes.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
