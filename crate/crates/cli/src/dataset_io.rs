//! On-disk dataset format: one raw little-endian f32 file per trajectory
//! (frame-major, row-major) and a JSON manifest.

use std::fs;
use std::path::Path;

use diffcoder_core::data::{Dataset, NormStats, Split, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "diffcoder-ds-v1";
pub const MANIFEST: &str = "manifest.json";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    height: usize,
    width: usize,
    dtype: String,
    normalized: bool,
    norm_stats: Option<NormStats>,
    trajectories: Vec<Entry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    id: usize,
    split: Split,
    frames: usize,
    file: String,
}

fn traj_file(id: usize) -> String {
    format!("traj_{id:04}.f32")
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Invalid("refusing to write an empty dataset".into()));
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut entries = Vec::with_capacity(ds.len());
    for t in &ds.trajectories {
        let file = traj_file(t.id);
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(Error::io(&path))?;
        entries.push(Entry { id: t.id, split: t.split, frames: t.frames, file });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        height: ds.height,
        width: ds.width,
        dtype: DTYPE.into(),
        normalized: ds.normalized,
        norm_stats: ds.norm_stats,
        trajectories: entries,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let m: Manifest = read_versioned(&path, "dataset manifest", DATASET_FORMAT)?;
    if m.dtype != DTYPE {
        return Err(Error::Format {
            what: "dataset manifest",
            path,
            msg: format!("unsupported dtype `{}`", m.dtype),
        });
    }
    let per_frame = m.height * m.width;
    let mut trajectories = Vec::with_capacity(m.trajectories.len());
    for e in &m.trajectories {
        let fpath = dir.join(&e.file);
        if !fpath.is_file() {
            return Err(Error::Missing { what: "trajectory file", path: fpath });
        }
        let bytes = fs::read(&fpath).map_err(Error::io(&fpath))?;
        let expected = (e.frames * per_frame * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::ByteCount { path: fpath, expected, found: bytes.len() as u64 });
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        trajectories.push(Trajectory { id: e.id, split: e.split, frames: e.frames, data });
    }
    let mut ds = Dataset::new(m.height, m.width, trajectories)?;
    ds.norm_stats = m.norm_stats;
    ds.normalized = m.normalized;
    Ok(ds)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// Reads a JSON manifest after checking its `format` tag, so an unknown
/// version is reported as such rather than as a missing field.
pub(crate) fn read_versioned<T: for<'de> Deserialize<'de>>(
    path: &Path,
    what: &'static str,
    expected: &'static str,
) -> Result<T> {
    if !path.is_file() {
        return Err(Error::Missing { what, path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let bad = |msg: String| Error::Format { what, path: path.to_path_buf(), msg };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        None => return Err(bad("missing field `format`".into())),
        Some(f) if f != expected => {
            return Err(Error::Version { path: path.to_path_buf(), found: f.into(), expected })
        }
        Some(_) => {}
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}
