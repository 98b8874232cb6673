//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     b"DGNMTCK\0"
//! version   u32 (= 1)
//! stage     u8  (1 or 2)
//! config    u32 length + UTF-8 TOML text of the ModelConfig
//! bpe       u32 length + UTF-8 merge table
//! count     u32 number of parameter records
//! record    u32 name length + name bytes, u32 rank, rank x u32 dims,
//!           prod(dims) x f32 values
//! ```

use std::path::Path;

use crate::model::{Model, ModelConfig};
use crate::tensor::{ParamStore, Stage, Tensor};
use crate::tokenize::BpeModel;

use super::TrainError;

pub const MAGIC: &[u8; 8] = b"DGNMTCK\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    config: ModelConfig,
    config_text: String,
    bpe: BpeModel,
    bpe_text: String,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Snapshot of `store`, values rounded to `f32`.
    pub fn new(config: &ModelConfig, stage: Stage, bpe: &BpeModel, store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Checkpoint {
            stage,
            config: config.clone(),
            config_text: config.to_text(),
            bpe: bpe.clone(),
            bpe_text: bpe.to_merges_text(),
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bpe(&self) -> &BpeModel {
        &self.bpe
    }

    pub fn param(&self, name: &str) -> Option<&ParamRecord> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Rebuild the model under `config` (which must match the stored shapes)
    /// and load every parameter.
    pub fn restore_with(&self, config: ModelConfig) -> Result<(Model, ParamStore), TrainError> {
        let (model, mut store) = Model::new(config, 0)?;
        if store.len() != self.params.len() {
            return Err(TrainError::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                store.len(),
                self.params.len()
            )));
        }
        for rec in &self.params {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| TrainError::Checkpoint(format!("unknown parameter {:?}", rec.name)))?;
            if store.value(id).shape() != rec.shape.as_slice() {
                return Err(TrainError::Checkpoint(format!(
                    "{}: shape {:?} does not match model shape {:?}",
                    rec.name,
                    rec.shape,
                    store.value(id).shape()
                )));
            }
            let values = rec.values.iter().map(|&x| x as f64).collect();
            store.get_mut(id).value = Tensor::new(rec.shape.clone(), values)?;
        }
        Ok((model, store))
    }

    pub fn restore(&self) -> Result<(Model, ParamStore), TrainError> {
        self.restore_with(self.config.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.stage {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        });
        put_bytes(&mut out, self.config_text.as_bytes());
        put_bytes(&mut out, self.bpe_text.as_bytes());
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_bytes(&mut out, p.name.as_bytes());
            put_u32(&mut out, p.shape.len());
            for &d in &p.shape {
                put_u32(&mut out, d);
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(TrainError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported format version {version}")));
        }
        let stage = match r.take(1)?[0] {
            1 => Stage::Stage1,
            2 => Stage::Stage2,
            s => return Err(TrainError::Checkpoint(format!("bad stage marker {s}"))),
        };
        let config_text = r.string()?;
        let config = ModelConfig::from_text(&config_text)?;
        let bpe_text = r.string()?;
        let bpe = BpeModel::from_merges_text(&bpe_text)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| TrainError::Checkpoint("tensor too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.push(ParamRecord { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            stage,
            config,
            config_text,
            bpe,
            bpe_text,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, TrainError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, TrainError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Checkpoint("invalid UTF-8".into()))
    }
}
