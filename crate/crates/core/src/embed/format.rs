use std::fs;
use std::path::Path;

use super::{EmbedError, EmbeddingTable};

pub const MAGIC: [u8; 4] = *b"ZSEM";
pub const VERSION: u32 = 1;
/// magic + version + dim + count
pub const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn encode_embeddings(table: &EmbeddingTable) -> Result<Vec<u8>, EmbedError> {
    let dim = table.dim();
    let body: usize = table.iter().map(|(id, _)| 2 + id.len() + 4 * dim).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + body);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (id, vector) in table.iter() {
        // Tables validate on insert, but fields are reachable through
        // clone-and-mutate in downstream code; re-check what the reader
        // will reject.
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { id: id.to_owned(), index });
        }
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(EmbedError::Truncated { offset: self.pos, needed: n - remaining, record: self.record });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_embeddings(bytes: &[u8], encoder_id: &str) -> Result<EmbeddingTable, EmbedError> {
    let mut cur = Cursor { bytes, pos: 0, record: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(EmbedError::BadMagic { found: magic });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(EmbedError::UnsupportedVersion(version));
    }
    let dim = cur.u32()?;
    let count = cur.u64()?;
    let mut table = EmbeddingTable::new(encoder_id, dim as usize)?;

    for record in 0..count {
        cur.record = record;
        let id_len = cur.u16()? as usize;
        let id_bytes = cur.take(id_len)?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| EmbedError::InvalidId(String::from_utf8_lossy(id_bytes).into_owned()))?
            .to_owned();
        let payload = cur.take(4 * dim as usize)?;
        let vector: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        table.insert(id, vector)?;
    }

    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(EmbedError::DimMismatch { dim, count, trailing });
    }
    Ok(table)
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), EmbedError> {
    let bytes = encode_embeddings(table)?;
    fs::write(path, bytes).map_err(|source| EmbedError::Io { path: path.display().to_string(), source })
}

/// Reads a table; its `encoder_id` is taken from the file stem since the
/// format does not store one.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable, EmbedError> {
    let bytes = fs::read(path).map_err(|source| EmbedError::Io { path: path.display().to_string(), source })?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_embeddings(&bytes, &stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = EmbeddingTable::new("e", 4).unwrap();
        let bytes = encode_embeddings(&t).unwrap();
        // Oracle: field widths of the header (4 magic + 4 version + 4 dim + 8 count).
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8);
        let back = decode_embeddings(&bytes, "e").unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn single_vector_round_trip() {
        let mut t = EmbeddingTable::new("e", 4).unwrap();
        t.insert("u1", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let back = decode_embeddings(&encode_embeddings(&t).unwrap(), "e").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_bytes_exact() {
        let mut t = EmbeddingTable::new("e", 2).unwrap();
        t.insert("ab", vec![1.0, -2.0]).unwrap();
        let bytes = encode_embeddings(&t).unwrap();
        let mut expected = b"ZSEM".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0]);
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn distinct_error_kinds() {
        let mut t = EmbeddingTable::new("e", 3).unwrap();
        t.insert("u1", vec![0.5, 0.25, 1.0]).unwrap();
        let good = encode_embeddings(&t).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_embeddings(&bad_magic, "e"), Err(EmbedError::BadMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_embeddings(&bad_version, "e"), Err(EmbedError::UnsupportedVersion(2))));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(decode_embeddings(truncated, "e"), Err(EmbedError::Truncated { .. })));

        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings(&nan, "e"), Err(EmbedError::NonFinite { index: 2, .. })));

        // Declared dim smaller than the payload leaves bytes behind.
        let mut short_dim = good.clone();
        short_dim[8] = 2;
        assert!(matches!(decode_embeddings(&short_dim, "e"), Err(EmbedError::DimMismatch { .. })));
        // Declared dim larger runs off the end.
        let mut long_dim = good;
        long_dim[8] = 4;
        assert!(matches!(decode_embeddings(&long_dim, "e"), Err(EmbedError::Truncated { .. })));
    }

    #[test]
    fn writer_rejects_nan_naming_id() {
        let mut t = EmbeddingTable::new("e", 1).unwrap();
        t.insert("ok", vec![1.0]).unwrap();
        // Bypass insert validation to exercise the writer's own check.
        t.entries.insert("bad".into(), vec![f32::NAN]);
        match encode_embeddings(&t) {
            Err(EmbedError::NonFinite { id, .. }) => assert_eq!(id, "bad"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            dim in 1usize..16,
            rows in proptest::collection::vec(("[a-z0-9_@]{0,12}", proptest::collection::vec(-1e6f32..1e6, 16)), 0..20),
        ) {
            let mut t = EmbeddingTable::new("p", dim).unwrap();
            for (id, v) in rows {
                let _ = t.insert(id, v[..dim].to_vec());
            }
            let bytes = encode_embeddings(&t).unwrap();
            let back = decode_embeddings(&bytes, "p").unwrap();
            prop_assert_eq!(encode_embeddings(&back).unwrap(), bytes);
            prop_assert_eq!(back, t);
        }
    }
}
