//! Experiment matrices over sizes × depths × architectures × attention
//! placements × seeds, and the comparison tables they produce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use diffcoder_core::data::Dataset;
use diffcoder_core::nn::{solve_width_for_budget, Arch, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{is_checkpoint, load_checkpoint_expecting};
use crate::config::{parse_budget, TrainOverrides};
use crate::dataset_io::write_json;
use crate::error::{Error, Result};
use crate::eval::{evaluate_checkpoint, read_report, write_report, EvalOptions, EvalReport, Metrics, MODEL, REPORT};
use crate::fit::{final_checkpoint, fit};

pub const TABLES_TXT: &str = "tables.txt";
pub const TABLES_CSV: &str = "tables.csv";
pub const STATUS: &str = "matrix.json";
pub const CELLS: &str = "cells";
pub const EVAL_DIR: &str = "eval";

/// A parameter budget written as an integer or as text such as `"100K"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Count(usize),
    Text(String),
}

impl Budget {
    pub fn resolve(&self) -> Result<usize> {
        match self {
            Budget::Count(n) => Ok(*n),
            Budget::Text(s) => parse_budget(s).map_err(Error::Invalid),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub ddim_steps: Option<usize>,
    pub limit: Option<usize>,
}

fn default_archs() -> Vec<Arch> {
    vec![Arch::Vae, Arch::DiffCoder]
}

fn default_attention() -> Vec<(bool, bool)> {
    vec![(false, false)]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// The matrix config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    /// Dataset directory.
    pub data: PathBuf,
    pub sizes: Vec<Budget>,
    pub depths: Vec<usize>,
    #[serde(default = "default_archs")]
    pub archs: Vec<Arch>,
    /// `(encoder, decoder)` attention placements.
    #[serde(default = "default_attention")]
    pub attention: Vec<(bool, bool)>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub arch: Arch,
    pub size: usize,
    pub depth: usize,
    pub attention: (bool, bool),
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        let (e, d) = self.attention;
        format!("{}-n{}-d{}-att{}{}-s{}", self.arch, self.size, self.depth, e as u8, d as u8, self.seed)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let (e, d) = self.attention;
        Ok(solve_width_for_budget(self.size, self.depth, self.arch)?.with_attention(e, d))
    }
}

impl ExperimentMatrix {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("matrix config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing { what: "matrix config", path: path.to_path_buf() });
        }
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text)
    }

    /// Every cell, after checking that the axes are non-empty and that each
    /// cell's budget is solvable.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.sizes.is_empty()
            || self.depths.is_empty()
            || self.archs.is_empty()
            || self.attention.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::Invalid("matrix axes must be non-empty".into()));
        }
        let mut cells = Vec::new();
        for size in &self.sizes {
            let size = size.resolve()?;
            for &depth in &self.depths {
                for &attention in &self.attention {
                    for &arch in &self.archs {
                        for &seed in &self.seeds {
                            let cell = Cell { arch, size, depth, attention, seed };
                            cell.spec()?;
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub cell: Cell,
    pub id: String,
    /// `trained`, `resumed` (checkpoint found), `skipped` (report found) or `failed`.
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOutcome {
    pub statuses: Vec<CellStatus>,
    pub reports: Vec<(Cell, EvalReport)>,
}

/// Trains (unless a final checkpoint exists) and evaluates one cell.
pub fn run_cell(m: &ExperimentMatrix, cell: &Cell, ds: &Dataset, dir: &Path, progress: bool) -> Result<(String, EvalReport)> {
    let spec = cell.spec()?;
    let eval_dir = dir.join(EVAL_DIR);
    let ckpt = final_checkpoint(dir);
    if is_checkpoint(&ckpt) && eval_dir.join(REPORT).is_file() {
        return Ok(("skipped".into(), read_report(&eval_dir)?));
    }
    let status = if is_checkpoint(&ckpt) {
        "resumed"
    } else {
        let cfg = m.train.apply(cell.seed);
        fit(cell.arch, &spec, &cfg, ds, dir, progress)?;
        "trained"
    };
    let (model, meta) = load_checkpoint_expecting(&ckpt, cell.arch, &spec)?;
    let opts = EvalOptions { ddim_steps: m.eval.ddim_steps, seed: cell.seed, limit: m.eval.limit, ..EvalOptions::default() };
    let (report, recon) = evaluate_checkpoint(&model, &meta, ds, &opts)?;
    write_report(&eval_dir, &report, &recon)?;
    Ok((status.into(), report))
}

/// Runs every cell with up to `jobs` cells at a time. Failed cells are
/// recorded and the rest continue; tables cover the cells that finished.
pub fn run_matrix(m: &ExperimentMatrix, ds: &Dataset, out: &Path, jobs: usize, progress: bool) -> Result<MatrixOutcome> {
    let cells = m.cells()?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(String, EvalReport)>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let id = cell.id();
                if progress {
                    eprintln!("[{}/{}] {id}", i + 1, cells.len());
                }
                let r = run_cell(m, cell, ds, &out.join(CELLS).join(&id), progress);
                if progress {
                    if let Err(e) = &r {
                        eprintln!("cell {id} failed: {e}");
                    }
                }
                results.lock().expect("matrix worker panicked")[i] = Some(r);
            });
        }
    });
    let mut statuses = Vec::new();
    let mut reports = Vec::new();
    for (cell, r) in cells.iter().zip(results.into_inner().expect("matrix worker panicked")) {
        let r = r.expect("every cell is visited");
        let (status, error) = match r {
            Ok((status, report)) => {
                reports.push((cell.clone(), report));
                (status, None)
            }
            Err(e) => ("failed".into(), Some(e.to_string())),
        };
        statuses.push(CellStatus { cell: cell.clone(), id: cell.id(), status, error });
    }
    let outcome = MatrixOutcome { statuses, reports };
    write_json(&out.join(STATUS), &outcome.statuses)?;
    let tables = Tables::build(&outcome.reports);
    let txt = out.join(TABLES_TXT);
    fs::write(&txt, tables.text()).map_err(Error::io(&txt))?;
    let csv = out.join(TABLES_CSV);
    fs::write(&csv, tables.csv()).map_err(Error::io(&csv))?;
    Ok(outcome)
}

/// `Δ% = 100 · (ε_diff − ε_vae) / ε_vae`.
pub fn delta_percent(vae: f64, diff: f64) -> f64 {
    100.0 * (diff - vae) / vae
}

/// Renders `VAE → Diff (±Δ%)` with four decimals and a one-decimal change.
pub fn format_comparison(vae: f64, diff: f64) -> String {
    let d = (delta_percent(vae, diff) * 10.0).round() / 10.0;
    let sign = if d < 0.0 { '-' } else { '+' };
    format!("{vae:.4} → {diff:.4} ({sign}{:.1}%)", d.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricKind {
    RelL2,
    Spectral,
    SpectralHigh,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::RelL2, MetricKind::Spectral, MetricKind::SpectralHigh];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::RelL2 => "rel_l2",
            MetricKind::Spectral => "spectral",
            MetricKind::SpectralHigh => "spectral_high",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricKind::RelL2 => "Relative L2 vorticity error",
            MetricKind::Spectral => "Energy-spectrum error",
            MetricKind::SpectralHigh => "High-frequency energy-spectrum error",
        }
    }

    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            MetricKind::RelL2 => m.rel_l2,
            MetricKind::Spectral => m.spectral,
            MetricKind::SpectralHigh => m.spectral_high,
        }
    }
}

type GroupKey = ((bool, bool), usize, usize);

/// Per (attention, size, depth): the model's aggregate metrics per seed for
/// each architecture.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    cells: BTreeMap<GroupKey, BTreeMap<u64, (Option<Metrics>, Option<Metrics>)>>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Tables {
    pub fn build(reports: &[(Cell, EvalReport)]) -> Self {
        let mut t = Tables::default();
        for (cell, report) in reports {
            let Some(model) = report.method(MODEL) else { continue };
            let entry = t
                .cells
                .entry((cell.attention, cell.size, cell.depth))
                .or_default()
                .entry(cell.seed)
                .or_default();
            match cell.arch {
                Arch::Vae => entry.0 = Some(model.mean),
                Arch::DiffCoder => entry.1 = Some(model.mean),
            }
        }
        t
    }

    /// Seed-averaged `(vae, diff)` values of one cell, when both exist.
    pub fn pair(&self, key: GroupKey, metric: MetricKind) -> Option<(f64, f64)> {
        let seeds = self.cells.get(&key)?;
        let both: Vec<(Metrics, Metrics)> = seeds.values().filter_map(|(v, d)| Some(((*v)?, (*d)?))).collect();
        let vae = mean_of(both.iter().map(|(v, _)| metric.of(v)))?;
        let diff = mean_of(both.iter().map(|(_, d)| metric.of(d)))?;
        Some((vae, diff))
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let attn: Vec<(bool, bool)> = {
            let mut a: Vec<_> = self.cells.keys().map(|k| k.0).collect();
            a.dedup();
            a
        };
        for metric in MetricKind::ALL {
            for &a in &attn {
                let keys: Vec<GroupKey> = self.cells.keys().copied().filter(|k| k.0 == a).collect();
                let mut sizes: Vec<usize> = keys.iter().map(|k| k.1).collect();
                sizes.dedup();
                let mut depths: Vec<usize> = keys.iter().map(|k| k.2).collect();
                depths.sort_unstable();
                depths.dedup();
                let _ = writeln!(
                    out,
                    "{} ({}), encoder attention {}, decoder attention {}: VAE → Diff (Δ%)",
                    metric.title(),
                    metric.name(),
                    a.0,
                    a.1
                );
                let rows: Vec<Vec<String>> = sizes
                    .iter()
                    .map(|&s| {
                        let mut row = vec![s.to_string()];
                        for &d in &depths {
                            row.push(self.pair((a, s, d), metric).map_or("n/a".into(), |(v, f)| format_comparison(v, f)));
                        }
                        row
                    })
                    .collect();
                let mut header = vec!["size".to_string()];
                header.extend(depths.iter().map(|d| format!("depth {d}")));
                let widths: Vec<usize> = (0..header.len())
                    .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
                    .collect();
                let line = |cells: &[String]| {
                    cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect::<Vec<_>>().join(" | ")
                };
                let _ = writeln!(out, "{}", line(&header).trim_end());
                let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
                for r in &rows {
                    let _ = writeln!(out, "{}", line(r).trim_end());
                }
                out.push('\n');
            }
        }
        out
    }

    /// One record per metric, attention placement, size, depth and seed,
    /// plus a `mean` record per cell.
    pub fn csv(&self) -> String {
        let mut out = String::from("metric,enc_attn,dec_attn,size,depth,seed,vae,diff,delta_pct\n");
        for metric in MetricKind::ALL {
            for (&key @ ((e, d), size, depth), seeds) in &self.cells {
                let mut row = |seed: &str, v: Option<f64>, f: Option<f64>| {
                    let show = |x: Option<f64>| x.map_or(String::new(), |x| x.to_string());
                    let delta = v.zip(f).map(|(v, f)| delta_percent(v, f));
                    let _ = writeln!(
                        out,
                        "{},{e},{d},{size},{depth},{seed},{},{},{}",
                        metric.name(),
                        show(v),
                        show(f),
                        show(delta)
                    );
                };
                for (seed, (v, f)) in seeds {
                    row(&seed.to_string(), v.map(|m| metric.of(&m)), f.map(|m| metric.of(&m)));
                }
                let (v, f) = self.pair(key, metric).unzip();
                row("mean", v, f);
            }
        }
        out
    }
}
