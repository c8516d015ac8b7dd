//! Little-endian binary model file.
//!
//! ```text
//! magic        8 bytes  "DTTAMODL"
//! version      u32
//! n_layers     u32
//! split        u32      number of extractor layers
//! per layer    u8 kind (0 dense, 1 batchnorm, 2 relu), then
//!              dense: u32 input, u32 output
//!              batchnorm: u32 width, f64 momentum
//!              relu: u32 width
//! n_params     u64
//! params       n_params x f64
//! adapt_mask   ceil(n_params / 8) bytes, LSB-first
//! running      per batchnorm layer: width x f64 mean, width x f64 variance
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::layer::{BatchNorm, Dense, Layer};
use super::{AdaptScope, Model};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DTTAMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_BN: u8 = 1;
const KIND_RELU: u8 = 2;

pub fn write_model(model: &Model, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.split as u32).to_le_bytes());
    for layer in &model.layers {
        match layer {
            Layer::Dense(d) => {
                buf.push(KIND_DENSE);
                buf.extend_from_slice(&(d.input as u32).to_le_bytes());
                buf.extend_from_slice(&(d.output as u32).to_le_bytes());
            }
            Layer::BatchNorm(bn) => {
                buf.push(KIND_BN);
                buf.extend_from_slice(&(bn.width as u32).to_le_bytes());
                buf.extend_from_slice(&bn.momentum.to_le_bytes());
            }
            Layer::Relu { width } => {
                buf.push(KIND_RELU);
                buf.extend_from_slice(&(*width as u32).to_le_bytes());
            }
        }
    }
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut bits = vec![0u8; params.len().div_ceil(8)];
    for (i, &m) in model.adapt_mask.iter().enumerate() {
        if m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    buf.extend_from_slice(&bits);
    for (mean, var) in model.running_stats() {
        for v in mean.iter().chain(&var) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated model file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Format(format!("non-finite value at offset {}", self.pos - 8)))
        }
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_model(input: &mut impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8).map_err(|_| bad_magic())? != MODEL_MAGIC {
        return Err(bad_magic());
    }
    let version = cur.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let n_layers = cur.u32()? as usize;
    let split = cur.u32()? as usize;
    if split > n_layers {
        return Err(Error::Format(format!("split {split} exceeds {n_layers} layers")));
    }
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let layer = match cur.u8()? {
            KIND_DENSE => {
                let input = cur.u32()? as usize;
                let output = cur.u32()? as usize;
                Layer::Dense(Dense {
                    input,
                    output,
                    weight: vec![0.0; input * output],
                    bias: vec![0.0; output],
                })
            }
            KIND_BN => {
                let width = cur.u32()? as usize;
                let momentum = cur.f64()?;
                let mut bn = BatchNorm::new(width);
                bn.momentum = momentum;
                Layer::BatchNorm(bn)
            }
            KIND_RELU => Layer::Relu {
                width: cur.u32()? as usize,
            },
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let mut model = Model::from_layers(layers, split, AdaptScope::BatchNormAffine)
        .map_err(|e| Error::Format(format!("inconsistent layer manifest: {e}")))?;

    let n_params = cur.u64()? as usize;
    if n_params != model.n_params() {
        return Err(Error::Format(format!(
            "parameter count {n_params} does not match manifest ({})",
            model.n_params()
        )));
    }
    let params = cur.f64s(n_params)?;
    model.set_params(&params)?;
    let bits = cur.take(n_params.div_ceil(8))?;
    let mask = (0..n_params).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
    model.set_adapt_mask(mask)?;
    for layer in &mut model.layers {
        if let Layer::BatchNorm(bn) = layer {
            bn.running_mean = cur.f64s(bn.width)?;
            bn.running_var = cur.f64s(bn.width)?;
            if bn.running_var.iter().any(|&v| v <= 0.0) {
                return Err(Error::Format("non-positive running variance".into()));
            }
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(model)
}

fn bad_magic() -> Error {
    Error::Format("not a model file (bad magic)".into())
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut file = std::fs::File::open(path)?;
    read_model(&mut file)
}
