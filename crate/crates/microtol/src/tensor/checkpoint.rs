//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MTOL" | version u32 | tensor count u32
//! per tensor: name len u16 | UTF-8 name | rank u8 | extents u32 x rank | f32 payload
//! metadata: step u64 | config hash len u16 | UTF-8 config hash
//! ```

use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 4] = b"MTOL";
const VERSION: u32 = 1;
const MAX_RANK: u8 = 8;
/// Upper bound on elements per tensor; keeps hostile headers from
/// requesting huge allocations.
const MAX_NUMEL: u64 = 1 << 26;

/// Named parameter tensors plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub step: u64,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.shape().len() as u8);
            for &e in tensor.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u16).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TensorError> {
        let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_checkpoint(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::CheckpointFormat("truncated input".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TensorError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8, TensorError> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self, len: usize) -> Result<String, TensorError> {
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| TensorError::CheckpointFormat("invalid UTF-8 string".into()))
    }
}

/// Decodes checkpoint bytes. Rejects bad magic, unknown versions,
/// truncated buffers, oversized tensors, and trailing garbage.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TensorError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TensorError::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TensorError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u8()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorError::CheckpointFormat(format!(
                "tensor {name:?} has rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = r.u32()? as u64;
            numel = numel.saturating_mul(e);
            shape.push(e as usize);
        }
        if numel == 0 || numel > MAX_NUMEL {
            return Err(TensorError::CheckpointFormat(format!(
                "tensor {name:?} has {numel} elements"
            )));
        }
        let payload = r.take(numel as usize * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| TensorError::CheckpointFormat(e.to_string()))?;
        tensors.push((name, tensor));
    }
    let step = r.u64()?;
    let hash_len = r.u16()? as usize;
    let config_hash = r.string(hash_len)?;
    if r.pos != bytes.len() {
        return Err(TensorError::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        tensors,
        step,
        config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                (
                    "image.w1".to_string(),
                    Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -0.25]).unwrap(),
                ),
                ("logit_scale".to_string(), Tensor::scalar(2.6593)),
            ],
            step: 1234,
            config_hash: "abcd1234".to_string(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..4], b"MTOL");
        let parsed = parse_checkpoint(&bytes).unwrap();
        assert_eq!(parsed, ckpt);
    }

    #[test]
    fn encoding_is_byte_stable() {
        assert_eq!(sample().to_bytes(), sample().to_bytes());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_checkpoint(b"XXXX").is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(parse_checkpoint(&trailing).is_err());
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(parse_checkpoint(&wrong_version).is_err());
    }

    #[test]
    fn oversized_tensor_header_is_rejected() {
        // Header that claims a gigantic tensor without carrying the bytes.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MTOL");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'x');
        bytes.push(2);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(parse_checkpoint(&bytes).is_err());
    }
}
