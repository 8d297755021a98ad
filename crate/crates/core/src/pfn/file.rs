//! Binary weights file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PFNW" | u32 version | u32 len, config JSON
//! u32 tensor count | per tensor: u32 len, name | u32 ndim | u32 dims.. | f32 data..
//! u32 CRC32 of every preceding byte
//! ```

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

use super::model::{param_names, Params};
use super::{PfnConfig, PfnWeights};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PFNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Serializes weights, rounding every parameter to `f32`.
pub fn to_bytes<T: Scalar>(weights: &PfnWeights<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    let config = serde_json::to_vec(&weights.config)?;
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_u32(&mut out, weights.params.len() as u32);
    for (name, t) in param_names(weights.config.n_layers).iter().zip(weights.params.iter()) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.ndim() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

/// Parses and validates a weights file. The CRC is checked before anything
/// else, so corrupted input never reaches the parser.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<PfnWeights<T>> {
    if bytes.len() < 16 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("bad weights magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("weights CRC mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config: PfnConfig = serde_json::from_slice(r.take(config_len)?)?;
    config.validate()?;
    let count = r.u32()? as usize;
    let names = param_names(config.n_layers);
    if count != names.len() {
        return Err(Error::Format(format!("{count} tensors stored, config needs {}", names.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for want in names.iter() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
        if name != want {
            return Err(Error::Format(format!("expected tensor {want}, found {name}")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4")) as f64)).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after tensor table".into()));
    }
    let params = Params::from_values(config.n_layers, tensors).expect("count checked");
    PfnWeights::from_params(config, params)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> PfnWeights<f64> {
        let cfg = PfnConfig { n_layers: 1, emb_dim: 8, n_heads: 2, ff_dim: 8, max_features: 3, max_classes: 2, dropout: 0.0 };
        PfnWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn reload_then_resave_is_byte_identical() {
        let bytes = to_bytes(&sample()).unwrap();
        let loaded: PfnWeights<f64> = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded).unwrap(), bytes);
        let as_f32: PfnWeights<f32> = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&as_f32).unwrap(), bytes);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        for i in (0..bytes.len()).step_by(7) {
            for bit in [0, 5] {
                let mut bad = bytes.clone();
                bad[i] ^= 1 << bit;
                assert!(matches!(from_bytes::<f64>(&bad), Err(Error::Format(_))), "byte {i} bit {bit}");
            }
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        for len in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes::<f64>(&bytes[..len]).is_err());
        }
    }
}
