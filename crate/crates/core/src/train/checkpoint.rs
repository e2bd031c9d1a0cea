//! Binary checkpoint: named `f32` tensors followed by a JSON trailer.
//!
//! ```text
//! "PCCK"  u32 version  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 ndim, u32 dims[ndim], f32 payload
//! u64 trailer_len, trailer (JSON: optimizer scalars, epoch, rng, config)
//! ```
//!
//! Model parameters come first in name order, then the momentum buffers as
//! `velocity/<param>`, so encoding is canonical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::OptimizerState;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PCCK";
pub const VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

/// Position in the per-epoch random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    /// Epochs completed.
    pub epoch: usize,
    pub rng: RngState,
    /// Resolved run configuration.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerScalars {
    initial_lr: f64,
    reductions: u32,
    lr: f64,
    epochs_since_best: usize,
    best_val_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    optimizer: OptimizerScalars,
    epoch: usize,
    rng: RngState,
    config: serde_json::Value,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Input(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    let ndim = u8::try_from(t.rank()).map_err(|_| Error::Input(format!("{name}: rank too large")))?;
    out.push(ndim);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Input(format!("{name}: dim too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = self.params.len() + self.optimizer.velocities.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t)?;
        }
        for (name, t) in &self.optimizer.velocities {
            put_tensor(&mut out, &format!("{VELOCITY_PREFIX}{name}"), t)?;
        }
        let o = &self.optimizer;
        let trailer = Trailer {
            optimizer: OptimizerScalars {
                initial_lr: o.initial_lr,
                reductions: o.reductions,
                lr: o.lr,
                epochs_since_best: o.epochs_since_best,
                best_val_loss: o.best_val_loss,
            },
            epoch: self.epoch,
            rng: self.rng,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&trailer).expect("trailer serializes");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        let mut optimizer = OptimizerState::new(0.0);
        for _ in 0..count {
            let start = r.pos as u64;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::format(start + 2, "tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dims")? as usize);
            }
            let numel: usize = dims.iter().product();
            let payload = r.take(numel * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::format(start, format!("{name}: {e}")))?;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => {
                    optimizer.velocities.insert(p.to_string(), t);
                }
                None => params.insert(name, t),
            }
        }
        let trailer_at = r.pos as u64;
        let len = r.u64("trailer length")? as usize;
        let json = r.take(len, "trailer")?;
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after trailer"));
        }
        let t: Trailer = serde_json::from_slice(json)
            .map_err(|e| Error::format(trailer_at + 8, format!("bad trailer: {e}")))?;
        optimizer.initial_lr = t.optimizer.initial_lr;
        optimizer.reductions = t.optimizer.reductions;
        optimizer.lr = t.optimizer.lr;
        optimizer.epochs_since_best = t.optimizer.epochs_since_best;
        optimizer.best_val_loss = t.optimizer.best_val_loss;
        Ok(Checkpoint {
            params,
            optimizer,
            epoch: t.epoch,
            rng: t.rng,
            config: t.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("b.weight", Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap());
        params.insert("a.bias", Tensor::vector(vec![1.0]));
        let mut optimizer = OptimizerState::new(0.0064);
        optimizer.velocities.insert("a.bias".into(), Tensor::vector(vec![-0.125]));
        optimizer.best_val_loss = Some(0.75);
        Checkpoint {
            params,
            optimizer,
            epoch: 3,
            rng: RngState {
                seed: 11,
                next_epoch: 3,
            },
            config: serde_json::json!({"train": {"lr": 0.0064}}),
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let b = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), b);
    }

    #[test]
    fn canonical_order() {
        let b = sample().to_bytes().unwrap();
        // first tensor name follows the 12-byte header and a u16 length
        assert_eq!(&b[14..20], b"a.bias");
    }

    #[test]
    fn rejects_corruption() {
        let b = sample().to_bytes().unwrap();
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 1]), Err(Error::Format { .. })));
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
