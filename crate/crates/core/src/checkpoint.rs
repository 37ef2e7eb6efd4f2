//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "ETDCKPT\0"
//! version u32
//! d       u32
//! d_L     u32
//! L       u32
//! K       u64
//! blocks  u32      number of named blocks that follow
//! block*  name_len u16, name (UTF-8), len u64, len × f64
//! ```
//!
//! Parameter blocks use the names from [`Model::blocks`]. Optimizer moments
//! are stored as `adam.m/<name>` and `adam.v/<name>`; scalars and the loss
//! curve live under `adam.*` and `meta.*`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelShape};
use crate::optim::Adam;

pub const MAGIC: &[u8; 8] = b"ETDCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub valid_hits1: Vec<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn shape(&self) -> ModelShape {
        self.model.shape()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.model.shape();
        let mut blocks: Vec<(String, Vec<f64>)> = self
            .model
            .blocks()
            .into_iter()
            .map(|(n, b)| (n, b.to_vec()))
            .collect();
        if let Some(opt) = &self.optimizer {
            let names = self.model.block_names();
            blocks.push((
                "adam.hyper".into(),
                vec![opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay, opt.t as f64],
            ));
            for (name, m) in names.iter().zip(&opt.m) {
                blocks.push((format!("adam.m/{name}"), m.clone()));
            }
            for (name, v) in names.iter().zip(&opt.v) {
                blocks.push((format!("adam.v/{name}"), v.clone()));
            }
        }
        blocks.push(("meta.epochs".into(), vec![self.meta.epochs as f64]));
        blocks.push(("meta.loss_curve".into(), self.meta.loss_curve.clone()));
        blocks.push(("meta.valid_hits1".into(), self.meta.valid_hits1.clone()));
        if let Some(best) = self.meta.best_epoch {
            blocks.push(("meta.best_epoch".into(), vec![best as f64]));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(shape.d as u32).to_le_bytes());
        out.extend_from_slice(&(shape.d_l as u32).to_le_bytes());
        out.extend_from_slice(&(shape.steps as u32).to_le_bytes());
        out.extend_from_slice(&(shape.top_k as u64).to_le_bytes());
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, data) in &blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not an etd checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let shape = ModelShape {
            d: r.u32()? as usize,
            d_l: r.u32()? as usize,
            steps: r.u32()? as usize,
            top_k: r.u64()? as usize,
        };
        shape
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        let count = r.u32()? as usize;
        let mut blocks: HashMap<String, Vec<f64>> = HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
                .to_owned();
            let len = r.u64()? as usize;
            if len > (bytes.len() - r.pos) / 8 {
                return Err(Error::Checkpoint(format!("block `{name}` runs past end of file")));
            }
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            blocks.insert(name, data);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last block".into()));
        }

        let mut model = Model::init_zeroed(shape);
        let names = model.block_names();
        for (name, dst) in model.blocks_mut() {
            let src = blocks
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter block `{name}`")))?;
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "block `{name}` has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
        }

        let optimizer = match blocks.get("adam.hyper") {
            Some(h) if h.len() == 6 => {
                let mut m = Vec::with_capacity(names.len());
                let mut v = Vec::with_capacity(names.len());
                for (name, (_, p)) in names.iter().zip(model.blocks()) {
                    let get = |prefix: &str| -> Result<Vec<f64>> {
                        let key = format!("{prefix}/{name}");
                        let b = blocks
                            .get(&key)
                            .ok_or_else(|| Error::Checkpoint(format!("missing optimizer block `{key}`")))?;
                        if b.len() != p.len() {
                            return Err(Error::Checkpoint(format!("optimizer block `{key}` has wrong length")));
                        }
                        Ok(b.clone())
                    };
                    m.push(get("adam.m")?);
                    v.push(get("adam.v")?);
                }
                Some(Adam {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                    weight_decay: h[4],
                    t: h[5] as u64,
                    m,
                    v,
                })
            }
            Some(_) => return Err(Error::Checkpoint("malformed `adam.hyper` block".into())),
            None => None,
        };

        let scalar = |key: &str| blocks.get(key).and_then(|b| b.first()).map(|&x| x as usize);
        let meta = TrainingMeta {
            epochs: scalar("meta.epochs").unwrap_or(0),
            loss_curve: blocks.get("meta.loss_curve").cloned().unwrap_or_default(),
            valid_hits1: blocks.get("meta.valid_hits1").cloned().unwrap_or_default(),
            best_epoch: scalar("meta.best_epoch"),
        };
        Ok(Self {
            model,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
