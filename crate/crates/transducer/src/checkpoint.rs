//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic  "ATCK"
//! u32    format version
//! u32    config length, then that many bytes of TOML model config
//! u32    tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u8  dtype (0 = f32, 1 = i8)
//!   u32 rank, then rank × u64 dims
//!   f32 scale (1.0 for f32 tensors)
//!   data: f32 or i8 values in row-major order
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use attn_transducer_core::model::{Model, ModelConfig};
use attn_transducer_core::quant::{self, QuantizedParams, QuantizedTensor, StoredTensor};
use attn_transducer_core::{ParamStore, Tensor};

use crate::Error;

pub const MAGIC: &[u8; 4] = b"ATCK";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, StoredTensor)>,
}

impl Checkpoint {
    /// Float checkpoint. Values are rounded to f32.
    pub fn from_model(model: &Model) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|p| {
                let data = p.tensor.data().iter().map(|&v| f64::from(v as f32)).collect();
                let t = Tensor::new(p.tensor.shape().to_vec(), data).expect("same shape");
                (p.name.clone(), StoredTensor::Float(t))
            })
            .collect();
        Self { config: model.config.clone(), tensors }
    }

    /// 8-bit checkpoint of the weight matrices of `model`.
    pub fn quantized(model: &Model) -> Result<Self, Error> {
        let q = quant::quantize_weights(model.params())?;
        let tensors = q
            .tensors
            .into_iter()
            .map(|(n, t)| match t {
                StoredTensor::Float(t) => {
                    let data = t.data().iter().map(|&v| f64::from(v as f32)).collect();
                    (n, StoredTensor::Float(Tensor::new(t.shape().to_vec(), data).expect("same shape")))
                }
                q => (n, q),
            })
            .collect();
        Ok(Self { config: model.config.clone(), tensors })
    }

    pub fn is_quantized(&self) -> bool {
        self.tensors.iter().any(|(_, t)| matches!(t, StoredTensor::Int8(_)))
    }

    /// Builds the model, dequantizing 8-bit tensors.
    pub fn into_model(self) -> Result<Model, Error> {
        let store: ParamStore = quant::dequantize_params(&QuantizedParams { tensors: self.tensors })?;
        Ok(Model::from_params(self.config, store)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), Error> {
        let config = toml::to_string(&self.config).map_err(|e| Error::Format(format!("config: {e}")))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(w, config.as_bytes())?;
        w.write_all(&len_u32(self.tensors.len())?.to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_bytes(w, name.as_bytes())?;
            let (dtype, shape, scale) = match t {
                StoredTensor::Float(t) => (DTYPE_F32, t.shape(), 1.0f32),
                StoredTensor::Int8(q) => (DTYPE_I8, &q.shape[..], q.scale),
            };
            w.write_all(&[dtype])?;
            w.write_all(&len_u32(shape.len())?.to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&scale.to_le_bytes())?;
            match t {
                StoredTensor::Float(t) => {
                    let mut buf = Vec::with_capacity(4 * t.len());
                    for &v in t.data() {
                        buf.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
                StoredTensor::Int8(q) => {
                    let buf: Vec<u8> = q.data.iter().map(|&v| v as u8).collect();
                    w.write_all(&buf)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, Error> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config: ModelConfig = toml::from_str(&config).map_err(|e| Error::Format(format!("config: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension overflow".into()))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("size overflow".into()))?;
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            let scale = f32::from_le_bytes(b);
            let t = match dtype[0] {
                DTYPE_F32 => {
                    let mut buf = vec![0u8; 4 * n];
                    r.read_exact(&mut buf)?;
                    let data = buf.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
                    StoredTensor::Float(Tensor::new(shape, data)?)
                }
                DTYPE_I8 => {
                    if !(scale > 0.0 && scale.is_finite()) {
                        return Err(Error::Format(format!("tensor {name} has invalid scale {scale}")));
                    }
                    let mut buf = vec![0u8; n];
                    r.read_exact(&mut buf)?;
                    StoredTensor::Int8(QuantizedTensor { shape, scale, data: buf.into_iter().map(|v| v as i8).collect() })
                }
                d => return Err(Error::Format(format!("tensor {name} has unknown dtype {d}"))),
            };
            tensors.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut bytes.as_slice())
    }
}

fn len_u32(n: usize) -> Result<u32, Error> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit the format")))
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<(), Error> {
    w.write_all(&len_u32(b.len())?.to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, Error> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Format(format!("record of {n} bytes is implausibly large")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            feature_dim: 4,
            pyramid_layers: 1,
            lstm_layers: 1,
            encoder_dim: 8,
            decoder_dim: 6,
            heads: 2,
            context: 1,
            chunk_width: 2,
            vocab_size: 3,
            ..Default::default()
        };
        Model::new(cfg, 4).unwrap()
    }

    #[test]
    fn float_round_trip() {
        let model = tiny();
        let ck = Checkpoint::from_model(&model);
        let back = Checkpoint::read(&mut ck.to_bytes().unwrap().as_slice()).unwrap();
        assert_eq!(back, ck);
        assert!(!back.is_quantized());
        let m2 = back.into_model().unwrap();
        for (a, b) in model.params().iter().zip(m2.params().iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn quantized_round_trip_and_size() {
        let model = tiny();
        let q = Checkpoint::quantized(&model).unwrap();
        assert!(q.is_quantized());
        let bytes = q.to_bytes().unwrap();
        assert_eq!(Checkpoint::read(&mut bytes.as_slice()).unwrap(), q);
        assert!(bytes.len() < Checkpoint::from_model(&model).to_bytes().unwrap().len());
        q.into_model().unwrap();
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::from_model(&tiny()).to_bytes().unwrap();
        assert!(Checkpoint::read(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read(&mut bad.as_slice()).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::read(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn topology_mismatch_is_an_error() {
        let mut ck = Checkpoint::from_model(&tiny());
        ck.config.decoder_dim = 8;
        assert!(ck.clone().into_model().is_err());
        let mut ck = Checkpoint::from_model(&tiny());
        ck.tensors.pop();
        assert!(ck.into_model().is_err());
    }
}
