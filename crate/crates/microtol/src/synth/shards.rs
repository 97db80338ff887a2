//! Binary vector shards: materialized image payloads and embedding exports.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "MTSH" | version u32 | dim u32 | count u32
//! per record: id len u16 | UTF-8 id | dim x f32
//! ```

use std::path::Path;

use super::SynthError;

const MAGIC: &[u8; 4] = b"MTSH";
const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 16;

/// A batch of identified fixed-width vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorShard {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

impl VectorShard {
    pub fn new(dim: usize) -> VectorShard {
        VectorShard {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, id: String, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "vector width mismatch");
        self.entries.push((id, vector));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, vector) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<VectorShard, SynthError> {
        let bytes = std::fs::read(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_shard(&bytes)
    }
}

/// Decodes shard bytes; exposed for fuzzing.
pub fn parse_shard(bytes: &[u8]) -> Result<VectorShard, SynthError> {
    let bad = |m: &str| SynthError::MalformedShard(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], SynthError> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated input"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if dim == 0 || dim > MAX_DIM {
        return Err(bad(&format!("dim {dim} out of range")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    // Cheap plausibility bound before allocating.
    if count.saturating_mul(dim as usize * 4) > bytes.len().saturating_mul(2) {
        return Err(bad("count exceeds what the buffer could hold"));
    }
    let mut entries = Vec::new();
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("invalid UTF-8 id"))?;
        let payload = take(dim as usize * 4)?;
        let vector: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((id, vector));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(VectorShard {
        dim: dim as usize,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_round_trips() {
        let mut shard = VectorShard::new(3);
        shard.push("img-0001".to_string(), vec![1.0, -2.5, 0.0]);
        shard.push("img-0002".to_string(), vec![4.0, 5.0, 6.0]);
        let parsed = parse_shard(&shard.to_bytes()).unwrap();
        assert_eq!(parsed, shard);
    }

    #[test]
    fn corrupt_shards_are_rejected() {
        let shard = VectorShard {
            dim: 2,
            entries: vec![("a".to_string(), vec![1.0, 2.0])],
        };
        let bytes = shard.to_bytes();
        assert!(parse_shard(&bytes[..bytes.len() - 2]).is_err());
        assert!(parse_shard(b"NOPE").is_err());
        let mut trailing = bytes;
        trailing.extend_from_slice(&[1, 2, 3]);
        assert!(parse_shard(&trailing).is_err());
    }
}
