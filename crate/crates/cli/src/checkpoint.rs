//! Checkpoint directories: a JSON manifest with the model spec, training
//! configuration, normalization statistics and a tensor index, plus one
//! raw little-endian f32 weight file.

use std::fs;
use std::path::Path;

use diffcoder_core::data::NormStats;
use diffcoder_core::nn::params::{Init, ParamStore};
use diffcoder_core::nn::{Arch, Model, ModelSpec};
use diffcoder_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{read_versioned, write_json, MANIFEST};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "diffcoder-ckpt-v1";
pub const WEIGHTS: &str = "weights.f32";

/// Everything a checkpoint records besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub grid: (usize, usize),
    pub norm_stats: NormStats,
    pub epoch: usize,
    pub step: usize,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    #[serde(flatten)]
    meta: CheckpointMeta,
    num_params: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save_checkpoint(model: &Model<f32>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    if meta.arch != model.arch() || &meta.spec != model.spec() {
        return Err(Error::Mismatch("checkpoint metadata does not describe the model".into()));
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let store = model.store();
    let mut tensors = Vec::with_capacity(store.len());
    let mut bytes = Vec::with_capacity(store.num_params() * 4);
    let mut offset = 0;
    for id in store.ids() {
        let t = store.tensor(id);
        tensors.push(TensorEntry { name: store.name(id).into(), shape: t.shape().to_vec(), offset });
        bytes.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        offset += t.numel();
    }
    let wpath = dir.join(WEIGHTS);
    fs::write(&wpath, bytes).map_err(Error::io(&wpath))?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        meta: meta.clone(),
        num_params: offset,
        tensors,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let mpath = dir.join(MANIFEST);
    let m: Manifest = read_versioned(&mpath, "checkpoint manifest", CHECKPOINT_FORMAT)?;
    let wpath = dir.join(WEIGHTS);
    if !wpath.is_file() {
        return Err(Error::Missing { what: "checkpoint weights", path: wpath });
    }
    let bytes = fs::read(&wpath).map_err(Error::io(&wpath))?;
    let expected = (m.num_params * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::ByteCount { path: wpath, expected, found: bytes.len() as u64 });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut store = ParamStore::<f32>::new(0);
    let mut cursor = 0;
    for e in &m.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != cursor || cursor + n > values.len() {
            return Err(Error::Format {
                what: "checkpoint manifest",
                path: mpath,
                msg: format!("tensor `{}` has an inconsistent offset", e.name),
            });
        }
        let id = store.add(e.name.clone(), &e.shape, Init::Zeros);
        store.tensor_mut(id).data_mut().copy_from_slice(&values[cursor..cursor + n]);
        cursor += n;
    }
    if cursor != values.len() {
        return Err(Error::Format {
            what: "checkpoint manifest",
            path: mpath,
            msg: format!("tensor index covers {cursor} of {} values", values.len()),
        });
    }
    let model = Model::from_store(m.meta.arch, m.meta.spec.clone(), store)?;
    Ok((model, m.meta))
}

/// Loads a checkpoint and checks that it was built for `arch`/`spec`.
pub fn load_checkpoint_expecting(dir: &Path, arch: Arch, spec: &ModelSpec) -> Result<(Model<f32>, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(dir)?;
    if meta.arch != arch || &meta.spec != spec {
        return Err(Error::Mismatch(format!(
            "checkpoint holds {} with base width {} at depth {}, expected {} with base width {} at depth {}",
            meta.arch, meta.spec.base_width, meta.spec.depth, arch, spec.base_width, spec.depth
        )));
    }
    Ok((model, meta))
}

pub fn is_checkpoint(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file() && dir.join(WEIGHTS).is_file()
}
