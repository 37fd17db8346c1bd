//! Binary `HSC1` checkpoints: a JSON header (model configuration, seeds,
//! normalisation statistics, schedule progress) followed by named `f32`
//! tensors for the parameters and the optimizer moments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshio::Cursor;
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{ParamAccess, Tensor2};

use super::norm::NormStats;
use super::optim::{AdamW, AdamWConfig};
use super::trainer::{Progress, Seeds, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSC1";

const MOMENT_PREFIX: [&str; 2] = ["adam.m.", "adam.v."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seeds: Seeds,
    pub stats: NormStats,
    pub progress: Progress,
    pub optimizer: AdamWConfig,
    pub optimizer_step: u64,
    /// Mask ratio of every phase of the schedule that produced the weights.
    pub mask_ratios: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor2<f32>)>,
}

impl Checkpoint {
    pub fn from_trainer<T: Scalar>(trainer: &Trainer<T>, mask_ratios: Vec<f64>) -> Self {
        let header = CheckpointHeader {
            model: trainer.model.config.clone(),
            seeds: trainer.seeds,
            stats: trainer.stats.clone(),
            progress: trainer.progress,
            optimizer: trainer.optimizer.config,
            optimizer_step: trainer.optimizer.step,
            mask_ratios,
        };
        let mut tensors = Vec::new();
        trainer.model.visit_params_ref(&mut |name, p| tensors.push((name.to_string(), p.cast::<f32>())));
        for (name, (m, v)) in &trainer.optimizer.moments {
            for (prefix, data) in MOMENT_PREFIX.iter().zip([m, v]) {
                let t = Tensor2::from_vec(1, data.len(), data.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect())
                    .expect("length matches");
                tensors.push((format!("{prefix}{name}"), t));
            }
        }
        Checkpoint { header, tensors }
    }

    /// Rebuilds a trainer. The loss log is not stored and starts empty.
    pub fn into_trainer<T: Scalar>(self) -> Result<Trainer<T>> {
        let h = self.header;
        h.stats.validate()?;
        let mut model = Model::<T>::new(h.model.clone(), h.seeds.init)?;
        let mut params = BTreeMap::new();
        let mut moments: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
        for (name, t) in self.tensors {
            if let Some(rest) = name.strip_prefix(MOMENT_PREFIX[0]) {
                moments.entry(rest.to_string()).or_default().0 = t.cast::<T>().into_data();
            } else if let Some(rest) = name.strip_prefix(MOMENT_PREFIX[1]) {
                moments.entry(rest.to_string()).or_default().1 = t.cast::<T>().into_data();
            } else if params.insert(name.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate tensor {name} in checkpoint")));
            }
        }
        let mut failure = None;
        model.visit_params(&mut |name, p| match params.remove(name) {
            Some(t) if t.shape() == p.shape() => {
                let src = t.cast::<T>();
                p.data_mut().copy_from_slice(src.data());
            }
            Some(t) => {
                failure.get_or_insert(format!("tensor {name} has shape {:?}, model expects {:?}", t.shape(), p.shape()));
            }
            None => {
                failure.get_or_insert(format!("checkpoint lacks tensor {name}"));
            }
        });
        if let Some(extra) = params.keys().next() {
            failure.get_or_insert(format!("checkpoint has unknown tensor {extra}"));
        }
        let mut sizes = BTreeMap::new();
        model.visit_params_ref(&mut |name, p| {
            sizes.insert(name.to_string(), p.len());
        });
        for (name, (m, v)) in &moments {
            if sizes.get(name) != Some(&m.len()) || m.len() != v.len() {
                failure.get_or_insert(format!("optimizer moments for {name} do not match the model"));
            }
        }
        if let Some(msg) = failure {
            return Err(Error::Config(msg));
        }
        Ok(Trainer {
            model,
            stats: h.stats,
            optimizer: AdamW { config: h.optimizer, step: h.optimizer_step, moments },
            seeds: h.seeds,
            progress: h.progress,
            log: Vec::new(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Config(e.to_string()))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.magic(CHECKPOINT_MAGIC)?;
        let at = cur.offset();
        let len = cur.count("header length", 1)?;
        let header = serde_json::from_slice(cur.take(len, "header")?)
            .map_err(|e| Error::format(at, format!("bad checkpoint header: {e}")))?;
        let count = cur.count("tensor count", 21)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let at = cur.offset();
            let len = cur.u32("name length")? as usize;
            let name = std::str::from_utf8(cur.take(len, "tensor name")?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
                .to_string();
            let rows = cur.u64("rows")? as usize;
            let at = cur.offset();
            let cols = cur.count("cols", 4 * rows.max(1))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(cur.f32("tensor data")?);
            }
            let t = Tensor2::from_vec(rows, cols, data).map_err(|e| Error::format(at, e.to_string()))?;
            tensors.push((name, t));
        }
        cur.finish()?;
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
