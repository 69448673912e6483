//! Binary checkpoint: magic, format version, a JSON header, then raw
//! little-endian `f64` blocks for parameters, buffers and Adam moments, in
//! header order. Encoding is a pure function of the contents, so
//! save, load, save reproduces the file byte for byte.

use std::path::Path;

use fspnet_core::optim::Moments;
use fspnet_core::{Adam, Fspnet, ParamStore, SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"FSPNETCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: &str, t: &Tensor<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn tensor(&self) -> Result<Tensor<f64>> {
        Ok(Tensor::new(self.shape.clone(), self.data.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Training-data stream (shuffles and flips), positioned to resume.
    pub rng: SeededRng,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
    pub adam_step: u64,
    /// `(m, v)` per parameter, in parameter order.
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    epoch: usize,
    step: u64,
    rng: SeededRng,
    adam_step: u64,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn corrupt(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

fn mismatch(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl Checkpoint {
    pub fn capture(
        config: &ModelConfig,
        store: &ParamStore<f64>,
        adam: &Adam<f64>,
        epoch: usize,
        step: u64,
        rng: &SeededRng,
    ) -> Self {
        Self {
            config: config.clone(),
            epoch,
            step,
            rng: rng.clone(),
            params: store
                .params()
                .iter()
                .map(|p| NamedTensor::new(&p.name, &p.tensor))
                .collect(),
            buffers: store
                .buffers()
                .iter()
                .map(|b| NamedTensor::new(&b.name, &b.tensor))
                .collect(),
            adam_step: adam.step,
            moments: adam
                .moments
                .iter()
                .map(|m| (m.m.data().to_vec(), m.v.data().to_vec()))
                .collect(),
        }
    }

    /// Rebuilds the model for the stored config and loads every tensor.
    /// Names, order and shapes must match the freshly built model.
    pub fn restore(&self) -> Result<(Fspnet, ParamStore<f64>, Adam<f64>)> {
        let mut store = ParamStore::new();
        let model = Fspnet::new(&self.config.model(), &mut store, &mut SeededRng::new(0))?;
        self.load_into(&mut store)?;
        let mut adam = Adam::new(&store);
        adam.step = self.adam_step;
        for ((slot, (m, v)), p) in adam.moments.iter_mut().zip(&self.moments).zip(store.params()) {
            let shape = p.tensor.shape().to_vec();
            *slot = Moments {
                m: Tensor::new(shape.clone(), m.clone()).map_err(|_| mismatch("optimizer state has wrong size"))?,
                v: Tensor::new(shape, v.clone()).map_err(|_| mismatch("optimizer state has wrong size"))?,
            };
        }
        Ok((model, store, adam))
    }

    /// Copies parameters and buffers into a store built for the same config.
    pub fn load_into(&self, store: &mut ParamStore<f64>) -> Result<()> {
        let names: Vec<(&str, &[usize])> = store
            .params()
            .iter()
            .map(|p| (p.name.as_str(), p.tensor.shape()))
            .collect();
        let ours: Vec<(&str, &[usize])> = self
            .params
            .iter()
            .map(|p| (p.name.as_str(), p.shape.as_slice()))
            .collect();
        if names != ours || self.moments.len() != self.params.len() {
            let first = names
                .iter()
                .zip(&ours)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!(": model has {a:?}, checkpoint has {b:?}"))
                .unwrap_or_else(|| format!(": model has {} tensors, checkpoint {}", names.len(), ours.len()));
            return Err(mismatch(format!("checkpoint does not match the model{first}")));
        }
        for p in &self.params {
            store.set(&p.name, p.tensor()?).map_err(|e| mismatch(e.to_string()))?;
        }
        if self.buffers.len() != store.buffers().len() {
            return Err(mismatch("checkpoint buffers do not match the model"));
        }
        for b in &self.buffers {
            store
                .set_buffer_by_name(&b.name, b.tensor()?)
                .map_err(|e| mismatch(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = |ts: &[NamedTensor]| {
            ts.iter()
                .map(|t| Entry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect()
        };
        let header = Header {
            config: self.config.to_text(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            adam_step: self.adam_step,
            params: entries(&self.params),
            buffers: entries(&self.buffers),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blocks = self
            .params
            .iter()
            .chain(&self.buffers)
            .map(|t| &t.data)
            .chain(self.moments.iter().flat_map(|(m, v)| [m, v]));
        for block in blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(e.to_string()))?;
        let config = ModelConfig::parse(&header.config)?;
        let mut read = |entries: &[Entry]| -> Result<Vec<NamedTensor>> {
            entries
                .iter()
                .map(|e| {
                    Ok(NamedTensor {
                        name: e.name.clone(),
                        shape: e.shape.clone(),
                        data: r.floats(e.shape.iter().product())?,
                    })
                })
                .collect()
        };
        let params = read(&header.params)?;
        let buffers = read(&header.buffers)?;
        let moments = params
            .iter()
            .map(|p| Ok((r.floats(p.data.len())?, r.floats(p.data.len())?)))
            .collect::<Result<_>>()?;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after the last tensor"));
        }
        Ok(Self {
            config,
            epoch: header.epoch,
            step: header.step,
            rng: header.rng,
            params,
            buffers,
            adam_step: header.adam_step,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("file is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
