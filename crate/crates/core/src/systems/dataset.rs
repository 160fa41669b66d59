//! Binary dataset files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "KGDS" | version u16 | kind u8 | state_dim u32 | snapshot_count u32 | n_traj u32
//! | dt_sample f64 | master_seed u64 | n_train u32 | n_val u32
//! | param0 f64 | param1 f64 | param2 f64 | integrator_dt f64
//! | burn_in kind u8 | burn_in value f64 | resampled u32
//! | f32 payload [n_traj, snapshot_count, state_dim]
//! | u64 seeds [n_traj]
//! ```
//!
//! A JSON sidecar at `<path>.json` mirrors the header.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{BurnIn, Splits, SystemKind, SystemParams, SystemSpec, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::netcore::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"KGDS";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 * 3 + 8 + 8 + 4 * 2 + 8 * 4 + 1 + 8 + 4;

fn header_bytes(ds: &TrajectoryDataset) -> Vec<u8> {
    let spec = &ds.system;
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(DATASET_MAGIC);
    h.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    h.push(spec.kind().code());
    h.extend_from_slice(&(spec.state_dim() as u32).to_le_bytes());
    h.extend_from_slice(&(spec.snapshot_count as u32).to_le_bytes());
    h.extend_from_slice(&(ds.trajectories.len() as u32).to_le_bytes());
    h.extend_from_slice(&spec.dt_sample.to_le_bytes());
    h.extend_from_slice(&ds.master_seed.to_le_bytes());
    h.extend_from_slice(&(ds.splits.train.len() as u32).to_le_bytes());
    h.extend_from_slice(&(ds.splits.val.len() as u32).to_le_bytes());
    for v in spec.header_reals() {
        h.extend_from_slice(&v.to_le_bytes());
    }
    let (tag, value) = match spec.burn_in {
        BurnIn::None => (0u8, 0.0),
        BurnIn::Time(t) => (1, t),
        BurnIn::Steps(n) => (2, n as f64),
    };
    h.push(tag);
    h.extend_from_slice(&value.to_le_bytes());
    h.extend_from_slice(&(ds.resampled as u32).to_le_bytes());
    debug_assert_eq!(h.len(), HEADER_LEN);
    h
}

/// Hex SHA-256 of the dataset header.
pub fn dataset_hash(ds: &TrajectoryDataset) -> String {
    hex::encode(Sha256::digest(header_bytes(ds)))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn contiguous(splits: &Splits, n: usize) -> bool {
    let seq = splits.train.iter().chain(&splits.val).chain(&splits.test);
    seq.clone().count() == n && seq.enumerate().all(|(i, &j)| i == j)
}

pub fn save_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    let n = ds.trajectories.len();
    if !contiguous(&ds.splits, n) {
        return Err(Error::InvalidInput("dataset splits must be contiguous train/val/test ranges".into()));
    }
    let (t, d) = (ds.system.snapshot_count, ds.system.state_dim());
    let header = header_bytes(ds);
    let mut buf = header.clone();
    buf.reserve(n * t * d * 4 + n * 8);
    for traj in &ds.trajectories {
        if traj.states.shape() != [t, d] {
            return Err(Error::Shape(format!("trajectory has shape {:?}, expected [{t}, {d}]", traj.states.shape())));
        }
        for &v in traj.states.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for traj in &ds.trajectories {
        buf.extend_from_slice(&traj.seed.to_le_bytes());
    }
    fs::write(path, &buf)?;

    let sidecar = json!({
        "format": "KGDS",
        "version": DATASET_VERSION,
        "system": ds.system.kind().name(),
        "params": ds.system.params,
        "state_dim": d,
        "snapshot_count": t,
        "n_traj": n,
        "dt_sample": ds.system.dt_sample,
        "integrator_dt": ds.system.integrator_dt,
        "burn_in": ds.system.burn_in,
        "master_seed": ds.master_seed,
        "n_train": ds.splits.train.len(),
        "n_val": ds.splits.val.len(),
        "n_test": ds.splits.test.len(),
        "resampled": ds.resampled,
        "header_sha256": hex::encode(Sha256::digest(&header)),
    });
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

/// Little-endian cursor over a byte buffer; `what` names the file kind in errors.
pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("{} file is truncated", self.what)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("length 2")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length 4")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length 8")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("length 8")))
    }
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0, what: "dataset" };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset file (bad magic)", path.display())));
    }
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let kind = SystemKind::from_code(r.u8()?)?;
    let d = r.u32()? as usize;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    let dt_sample = r.f64()?;
    let master_seed = r.u64()?;
    let n_train = r.u32()? as usize;
    let n_val = r.u32()? as usize;
    let reals = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let burn_in = match (r.u8()?, r.f64()?) {
        (0, _) => BurnIn::None,
        (1, v) => BurnIn::Time(v),
        (2, v) => BurnIn::Steps(v as usize),
        (tag, _) => return Err(Error::Format(format!("unknown burn-in tag {tag}"))),
    };
    let resampled = r.u32()? as usize;
    if n_train + n_val > n {
        return Err(Error::Format("split sizes exceed trajectory count".into()));
    }
    let params = match kind {
        SystemKind::Pendulum => SystemParams::Pendulum,
        SystemKind::Lorenz63 => SystemParams::Lorenz63 {
            sigma: reals[0],
            rho: reals[1],
            beta: reals[2],
        },
        SystemKind::Lorenz96 => SystemParams::Lorenz96 {
            k: reals[0] as usize,
            forcing: reals[1],
        },
        SystemKind::Ks => SystemParams::Ks {
            length: reals[0],
            n: reals[1] as usize,
        },
    };
    let system = SystemSpec {
        params,
        integrator_dt: reals[3],
        dt_sample,
        snapshot_count: t,
        burn_in,
    };
    if system.state_dim() != d {
        return Err(Error::Format(format!(
            "header state_dim {d} disagrees with {kind} parameters"
        )));
    }
    let expected = HEADER_LEN + n * t * d * 4 + n * 8;
    if buf.len() != expected {
        return Err(Error::Format(format!(
            "dataset file has {} bytes, header implies {expected}",
            buf.len()
        )));
    }
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = r.take(t * d * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("length 4")) as f64)
            .collect();
        states.push(Tensor::new(t, d, data)?);
    }
    let mut trajectories = Vec::with_capacity(n);
    for s in states {
        if !s.is_finite() {
            return Err(Error::Format("dataset contains non-finite values".into()));
        }
        trajectories.push(Trajectory {
            states: s,
            dt_sample,
            seed: r.u64()?,
        });
    }
    Ok(TrajectoryDataset {
        system,
        trajectories,
        splits: Splits::contiguous(n_train, n_val, n),
        master_seed,
        resampled,
    })
}
