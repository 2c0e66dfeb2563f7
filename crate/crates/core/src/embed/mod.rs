//! Embedding tables and the `ZSEM` on-disk format.
//!
//! Layout, all integers little-endian, no padding:
//!
//! ```text
//! "ZSEM" | version: u32 = 1 | dim: u32 | count: u64
//! count × ( id_len: u16 | id: UTF-8 bytes | dim × f32 )
//! ```

mod format;
pub mod synth;

use indexmap::IndexMap;
use thiserror::Error;

pub use format::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, HEADER_LEN, MAGIC, VERSION};
pub use synth::{synth_world, SyntheticWorld, SyntheticWorldConfig};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("bad magic {found:?}, expected \"ZSEM\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}, expected 1")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} more bytes at offset {offset} (record {record})")]
    Truncated { offset: usize, needed: usize, record: u64 },
    #[error("declared dim {dim} disagrees with payload: {trailing} bytes left after {count} records")]
    DimMismatch { dim: u32, count: u64, trailing: usize },
    #[error("non-finite component in vector {id:?} at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("vector {id:?} has length {len}, table dim is {dim}")]
    WrongLength { id: String, len: usize, dim: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id {0:?} is not valid UTF-8")]
    InvalidId(String),
    #[error("id of {0} bytes exceeds the u16 length field")]
    IdTooLong(usize),
    #[error("dim must be positive")]
    ZeroDim,
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Id → f32 vector store. Insertion order is preserved and is the order
/// records are written in.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub encoder_id: String,
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(encoder_id: impl Into<String>, dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(EmbedError::ZeroDim);
        }
        Ok(Self { encoder_id: encoder_id.into(), dim, entries: IndexMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), EmbedError> {
        let id = id.into();
        if id.len() > u16::MAX as usize {
            return Err(EmbedError::IdTooLong(id.len()));
        }
        if vector.len() != self.dim {
            return Err(EmbedError::WrongLength { id, len: vector.len(), dim: self.dim });
        }
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { id, index });
        }
        if self.entries.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    /// Converts an f64 vector to f32 storage.
    pub fn insert_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<(), EmbedError> {
        self.insert(id, vector.iter().map(|&v| v as f32).collect())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// The vector upcast to f64, which is what all engine arithmetic uses.
    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Key of an audio-side embedding for utterance `id` repeated `a` times.
pub fn audio_key(id: &str, a: u32) -> String {
    format!("{id}@a{a}")
}

/// Splits `"{id}@a{a}"` into its parts.
pub fn parse_audio_key(key: &str) -> Option<(&str, u32)> {
    let (id, rep) = key.rsplit_once("@a")?;
    let a = rep.parse().ok()?;
    Some((id, a))
}
