//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `EPSGCKPT`, format version (u32), config
//! JSON length (u32) and bytes, seed (u64), parameter count (u64), the
//! parameters as f64, then a SHA-256 digest of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"EPSGCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())?;
    let mut buf = Vec::with_capacity(64 + config.len() + 8 * model.n_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&model.config().seed.to_le_bytes());
    buf.extend_from_slice(&(model.n_params() as u64).to_le_bytes());
    for v in model.params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint; when `expected` is given the stored config must
/// match it exactly.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Integrity("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Integrity("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Integrity(format!("unsupported version {version}")));
    }
    let config_len = cur.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len)?)?;
    let seed = cur.u64()?;
    if seed != config.seed {
        return Err(Error::Integrity("seed field disagrees with config".into()));
    }
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::ConfigMismatch(format!(
                "stored {config:?}, expected {exp:?}"
            )));
        }
    }
    let n = cur.u64()? as usize;
    let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Integrity("size overflow".into()))?)?;
    if cur.pos != body.len() {
        return Err(Error::Integrity("trailing bytes".into()));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Model::from_params(config, params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn model() -> Model {
        Model::new(ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            seed: 9,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path, Some(m.config())).unwrap();
        assert!(m.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let a = m.encode(x.view()).unwrap();
        let b = back.encode(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let other = ModelConfig {
            segment_len: 8,
            ..model().config().clone()
        };
        assert!(matches!(
            decode_checkpoint(&bytes, Some(&other)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut], None),
                Err(Error::Integrity(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped, None), Err(Error::Integrity(_))));
    }
}
