//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CGRG"  u32 version
//! u32 len, config (TOML text)
//! u32 count, then per token: u32 len, UTF-8 bytes
//! u32 count, then per parameter:
//!     u32 len, name   u8 dtype   u32 rank, u64 dims…   payload
//! 32-byte SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::nn::{Model, ModelConfig, ModelParams};
use crate::tensor::{DType, Real, Tensor};
use crate::vocab::Vocab;

use super::TrainError;

pub const MAGIC: &[u8; 4] = b"CGRG";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A model together with the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub vocab: Vocab,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, vocab: &Vocab) -> Result<Vec<u8>, TrainError> {
    let config = toml::to_string(&model.config).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_bytes(&mut out, config.as_bytes());
    put_u32(&mut out, vocab.len() as u32);
    for t in vocab.tokens() {
        put_bytes(&mut out, t.as_bytes());
    }
    let named = model.params.named();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_bytes(&mut out, name.as_bytes());
        out.push(T::DTYPE.tag());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TrainError::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::CorruptCheckpoint("invalid UTF-8".into()))
    }
}

fn read_values<T: Real, S: Real>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks(S::DTYPE.size())
        .map(|c| T::from_f64_lossy(S::read_le(c).to_f64_lossy()))
        .collect()
}

/// Parses and verifies a checkpoint. Stored values are converted to `T`
/// when the element types differ.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>, TrainError> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(TrainError::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(TrainError::CorruptCheckpoint("digest mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let config: ModelConfig =
        toml::from_str(&r.string()?).map_err(|e| TrainError::CorruptCheckpoint(format!("config: {e}")))?;
    let n_tokens = r.u32()? as usize;
    let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocab::from_text(&tokens.iter().map(|t| format!("{t}\n")).collect::<String>())?;
    let n_params = r.u32()? as usize;
    let mut named = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string()?;
        let tag = r.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| TrainError::CorruptCheckpoint(format!("dtype tag {tag}")))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_len = numel
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| TrainError::CorruptCheckpoint(format!("dims {dims:?}")))?;
        let payload = r.take(bytes_len)?;
        let data = match dtype {
            DType::F32 => read_values::<T, f32>(payload),
            DType::F64 => read_values::<T, f64>(payload),
        };
        named.push((name, Tensor::new(dims, data)?));
    }
    if r.pos != body.len() {
        return Err(TrainError::CorruptCheckpoint("trailing bytes".into()));
    }
    if config.vocab_size != vocab.len() {
        return Err(TrainError::CorruptCheckpoint(format!(
            "config vocabulary {} vs stored {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let params = ModelParams::from_named(&config, named)?;
    Ok(Checkpoint {
        model: Model { config, params },
        vocab,
    })
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, vocab: &Vocab, path: &Path) -> Result<(), TrainError> {
    Ok(std::fs::write(path, encode_checkpoint(model, vocab)?)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, TrainError> {
    decode_checkpoint(&std::fs::read(path)?)
}
