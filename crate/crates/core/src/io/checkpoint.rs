use std::collections::HashMap;
use std::fs;
use std::path::Path;

use mn_autodiff::Matrix;

use super::{io_err, IoError};
use crate::contrastive::TrainConfig;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::graph::HeteroGraph;

const MAGIC: &[u8; 4] = b"MNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A parameter tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedTensor {
    pub name: String,
    pub value: Matrix,
    pub m: Matrix,
    pub v: Matrix,
}

/// Training state on disk.
///
/// Layout, all integers little-endian:
///
/// ```text
/// "MNCK" | version u32 | config_len u64 | config JSON
/// epoch u64 | adam_step u64 | tensor_count u64
/// per tensor: name_len u32 | name | rows u64 | cols u64 | value | m | v
/// ```
///
/// where `value`, `m` and `v` are `rows * cols` row-major f64 each.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam_step: u64,
    pub tensors: Vec<SavedTensor>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, params: &EncoderParams, epoch: usize) -> Self {
        let store = params.store();
        Self {
            config: config.clone(),
            epoch,
            adam_step: store.step_count(),
            tensors: store
                .iter()
                .map(|p| SavedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    m: p.m.clone(),
                    v: p.v.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters for `g` under the stored encoder config.
    pub fn restore(&self, g: &HeteroGraph) -> Result<EncoderParams, IoError> {
        self.restore_with(g, &self.config.encoder)
    }

    /// Rebuilds parameters for `g` under `cfg`. Every model tensor must be
    /// present with the same shape, and no checkpoint tensor may be left over.
    pub fn restore_with(&self, g: &HeteroGraph, cfg: &EncoderConfig) -> Result<EncoderParams, IoError> {
        let mut params = EncoderParams::init(g, cfg, 0)?;
        let mut saved: HashMap<&str, &SavedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let store = params.store_mut();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let t = saved
                .remove(p.name.as_str())
                .ok_or_else(|| IoError::MissingTensor(p.name.clone()))?;
            if t.value.shape() != p.value.shape() {
                return Err(IoError::TensorShape {
                    name: p.name.clone(),
                    got: t.value.shape(),
                    want: p.value.shape(),
                });
            }
            p.value = t.value.clone();
            p.m = t.m.clone();
            p.v = t.v.clone();
        }
        if let Some(t) = self.tensors.iter().find(|t| saved.contains_key(t.name.as_str())) {
            return Err(IoError::UnexpectedTensor(t.name.clone()));
        }
        store.set_step_count(self.adam_step);
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
            for m in [&t.value, &t.m, &t.v] {
                for x in m.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, IoError> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(IoError::Magic {
                path: path.to_path_buf(),
                what: "checkpoint",
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(IoError::Version {
                path: path.to_path_buf(),
                got: version,
                want: CHECKPOINT_VERSION,
            });
        }
        let len = r.len()?;
        let config: TrainConfig = serde_json::from_slice(r.take(len)?).map_err(|e| r.invalid(format!("config: {e}")))?;
        let epoch = r.len()?;
        let adam_step = r.u64()?;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.invalid("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.len()?;
            let cols = r.len()?;
            let mut mats = Vec::with_capacity(3);
            for _ in 0..3 {
                let n = rows.checked_mul(cols).ok_or_else(|| r.invalid(format!("tensor `{name}` size overflows")))?;
                let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                mats.push(Matrix::from_vec(rows, cols, data).expect("sized"));
            }
            let v = mats.pop().unwrap();
            let m = mats.pop().unwrap();
            let value = mats.pop().unwrap();
            tensors.push(SavedTensor { name, value, m, v });
        }
        if r.pos != bytes.len() {
            return Err(r.invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            epoch,
            adam_step,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn invalid(&self, msg: String) -> IoError {
        IoError::Invalid {
            path: self.path.to_path_buf(),
            msg,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.invalid(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, IoError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.invalid(format!("length {v} too large")))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), IoError> {
    fs::write(path, ckpt.to_bytes()).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes, path)
}
