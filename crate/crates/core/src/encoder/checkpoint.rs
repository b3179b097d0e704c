//! Binary checkpoint:
//!
//! ```text
//! "XLNG" | version u32 | layers, model_dim, heads, ffn_dim, max_positions, vocab_size: u32
//!        | dropout f64 | tensor count u32 | (len u32, len × f32)*
//! ```
//!
//! All integers and floats are little-endian. Tensors follow the declared
//! order of [`EncoderWeights::tensor_names`]. Parameters are kept at
//! single-precision values by initialization and the optimizer, so the
//! 32-bit encoding is lossless for any trained model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::Parameters;

use super::weights::{EncoderConfig, EncoderWeights};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XLNG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(weights: &EncoderWeights) -> Vec<u8> {
    let cfg = &weights.config;
    let mut out = Vec::with_capacity(64 + 4 * weights.parameter_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.layers, cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.max_positions, cfg.vocab_size] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout.to_le_bytes());
    let tensors = weights.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderWeights> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            message: "bad magic bytes".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let dropout = f64::from_le_bytes(r.take(8, "config")?.try_into().unwrap());
    let config = EncoderConfig {
        layers: dims[0],
        model_dim: dims[1],
        heads: dims[2],
        ffn_dim: dims[3],
        max_positions: dims[4],
        vocab_size: dims[5],
        dropout,
    };
    let header_end = r.pos;
    config.validate().map_err(|e| Error::Checkpoint {
        offset: header_end,
        message: format!("invalid config: {e}"),
    })?;

    let mut weights = EncoderWeights::zeros(config);
    let count_at = r.pos;
    let count = r.u32("tensor count")? as usize;
    let expected = weights.tensors().len();
    if count != expected {
        return Err(Error::Checkpoint {
            offset: count_at,
            message: format!("expected {expected} tensors, found {count}"),
        });
    }
    let names = weights.tensor_names();
    for (t, name) in weights.tensors_mut().into_iter().zip(names) {
        let at = r.pos;
        let len = r.u32(&name)? as usize;
        if len != t.len() {
            return Err(Error::Checkpoint {
                offset: at,
                message: format!("tensor {name} has length {len}, expected {}", t.len()),
            });
        }
        let raw = r.take(4 * len, &name)?;
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            offset: r.pos,
            message: "trailing bytes".into(),
        });
    }
    Ok(weights)
}

pub fn save_checkpoint(weights: &EncoderWeights, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(weights))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderWeights> {
    decode_checkpoint(&fs::read(path)?)
}

/// Saves then reloads.
pub fn checkpoint_roundtrip(weights: &EncoderWeights, path: &Path) -> Result<EncoderWeights> {
    save_checkpoint(weights, path)?;
    load_checkpoint(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights() -> EncoderWeights {
        EncoderWeights::init(
            EncoderConfig {
                layers: 2,
                model_dim: 8,
                heads: 2,
                ffn_dim: 16,
                max_positions: 6,
                vocab_size: 11,
                dropout: 0.1,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let w = weights();
        let dir = tempfile::tempdir().unwrap();
        let back = checkpoint_roundtrip(&w, &dir.path().join("w.ckpt")).unwrap();
        assert_eq!(back.config, w.config);
        for (a, b) in back.tensors().iter().zip(w.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_errors() {
        let bytes = encode_checkpoint(&weights());
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        assert!(decode_checkpoint(&bytes[..10]).is_err());
    }

    #[test]
    fn version_mismatch_names_versions() {
        let mut bytes = encode_checkpoint(&weights());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 7, expected: 1 }));
        assert!(err.to_string().contains('7'));
    }
}
