//! Versioned binary checkpoint.
//!
//! Little-endian layout:
//!
//! ```text
//! "RMAMCKPT"             8-byte magic
//! version       u32
//! config_len    u32, then that many bytes of key=value text
//! n_params      u32
//! per parameter:
//!   name_len u32, name bytes, rank u32, rank × u64 dims, f32 values
//! has_optimizer u8; if 1: step u64, then every first moment followed
//!               by every second moment, in parameter order, as f32
//! crc32         u32 over all preceding bytes
//! ```

use std::path::Path;

use rma_core::params::ParamStore;
use rma_core::train::AdamState;
use rma_core::{Model, ModelConfig, Tensor};

use crate::config::{model_diff, RunConfig};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

pub const MAGIC: &[u8; 8] = b"RMAMCKPT";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("field fits in u32").to_le_bytes());
}

fn put_tensor_values(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(config: &RunConfig, params: &ParamStore<f32>, optimizer: Option<&AdamState<f32>>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = config.to_text();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, params.len());
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_tensor_values(&mut out, t);
    }
    match optimizer {
        None => out.push(0),
        Some(adam) => {
            out.push(1);
            out.extend_from_slice(&adam.step.to_le_bytes());
            for t in adam.m.iter().chain(&adam.v) {
                put_tensor_values(&mut out, t);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    params: &ParamStore<f32>,
    optimizer: Option<&AdamState<f32>>,
) -> Result<()> {
    atomic_write(path, &encode(config, params, optimizer))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    fn values(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor too large".into()))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor::new(shape, data)?)
    }
}

/// Parses and validates checkpoint bytes. With `expected`, the stored
/// model configuration must equal it.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let head = bytes.len().min(MAGIC.len());
    if bytes[..head] != MAGIC[..head] {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum);
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let config = RunConfig::parse(&r.string()?)?;
    if let Some(exp) = expected {
        if *exp != config.model {
            return Err(Error::ConfigMismatch(model_diff(exp, &config.model).join(", ")));
        }
    }

    let n = r.len()?;
    let mut stored_params = ParamStore::new();
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.len()?;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let t = r.values(&shape)?;
        stored_params.add(name, t);
    }

    let mut model = Model::new(config.model, 0)?;
    for id in model.params.ids() {
        let name = model.params.name(id).to_string();
        let src = stored_params
            .find(&name)
            .ok_or_else(|| Error::MissingParameter(name.clone()))?;
        let value = stored_params.get(src);
        if value.shape() != model.params.get(id).shape() {
            return Err(Error::ConfigMismatch(format!(
                "parameter `{name}` has shape {:?}, config implies {:?}",
                value.shape(),
                model.params.get(id).shape()
            )));
        }
        *model.params.get_mut(id) = value.clone();
    }
    if stored_params.len() != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, config implies {}",
            stored_params.len(),
            model.params.len()
        )));
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let mut adam = AdamState::new(&model.params);
            adam.step = r.u64()?;
            let shapes: Vec<Vec<usize>> = model.params.iter().map(|(_, t)| t.shape().to_vec()).collect();
            for (i, s) in shapes.iter().enumerate() {
                adam.m[i] = r.values(s)?;
            }
            for (i, s) in shapes.iter().enumerate() {
                adam.v[i] = r.values(s)?;
            }
            Some(adam)
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
    })
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}
