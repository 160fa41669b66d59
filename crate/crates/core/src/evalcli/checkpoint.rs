//! Binary checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "KGCK" | version u16 | model kind u8 | meta_len u32 | meta JSON
//! | n_params u32 | per param: name_len u16, name, partition u8, rows u32, cols u32, f64 data
//! | has_optimizer u8 | [step u64 | per param: m f64 data, v f64 data]
//! ```
//!
//! Generator bank matrices are ordinary parameters (`skew.*`, `selfadj.*`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind, Scaler};
use crate::netcore::{ParamStore, Partition, Tensor};
use crate::systems::dataset::Reader;
use crate::systems::SystemKind;
use crate::trainer::{OptimizerState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub system: SystemKind,
    /// Header hash of the dataset the model was trained on.
    pub dataset_hash: String,
    /// Snapshots per model step, shared by training windows and evaluation.
    pub window_stride: usize,
    pub epoch: usize,
    pub val_loss: f64,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    scaler: Scaler,
    train: TrainConfig,
    system: SystemKind,
    dataset_hash: String,
    window_stride: usize,
    epoch: usize,
    val_loss: f64,
}

fn put_f64s(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f64s(r: &mut Reader<'_>, n: usize) -> Result<Vec<f64>> {
    let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("length 8")))
        .collect())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            model: self.model.config().clone(),
            scaler: self.model.scaler().clone(),
            train: self.train.clone(),
            system: self.system,
            dataset_hash: self.dataset_hash.clone(),
            window_stride: self.window_stride,
            epoch: self.epoch,
            val_loss: self.val_loss,
        };
        let json = serde_json::to_vec(&meta)?;
        let store = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.model.kind().code());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for (_, p) in store.iter() {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(p.partition.code());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            put_f64s(&mut out, &p.value);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                opt.check_shapes(store)?;
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader {
            buf,
            pos: 0,
            what: "checkpoint",
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?)?;
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        if meta.model.kind != kind {
            return Err(Error::Format(format!(
                "checkpoint header says {kind}, metadata says {}",
                meta.model.kind
            )));
        }
        let n_params = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let partition = Partition::from_code(r.u8()?)?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = get_f64s(&mut r, rows * cols)?;
            store.insert(&name, partition, Tensor::new(rows, cols, data)?)?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(store.len());
                let mut v = Vec::with_capacity(store.len());
                for (_, p) in store.iter() {
                    let (rows, cols) = (p.value.rows(), p.value.cols());
                    m.push(Tensor::new(rows, cols, get_f64s(&mut r, rows * cols)?)?);
                    v.push(Tensor::new(rows, cols, get_f64s(&mut r, rows * cols)?)?);
                }
                Some(OptimizerState { step, m, v })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        let model = Model::from_parts(meta.model, meta.scaler, store)?;
        Ok(Self {
            model,
            train: meta.train,
            system: meta.system,
            dataset_hash: meta.dataset_hash,
            window_stride: meta.window_stride,
            epoch: meta.epoch,
            val_loss: meta.val_loss,
            optimizer,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
