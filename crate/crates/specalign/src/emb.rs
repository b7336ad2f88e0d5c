//! EMB1 embedding files: `"EMB1"`, rows and dim as little-endian `u32`,
//! then `rows × dim` little-endian binary32 values, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use specalign_core::{EmbeddingMatrix, RoleTag};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 12;

/// Decodes EMB1 bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], role: RoleTag, path: &Path) -> Result<EmbeddingMatrix> {
    let have = bytes.len() as u64;
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: HEADER_LEN as u64,
            found: have,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::BadHeader {
            path: path.into(),
            detail: "dim must be positive".into(),
        });
    }
    let expected = HEADER_LEN as u64 + 4 * rows as u64 * dim as u64;
    if have < expected {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected,
            found: have,
        });
    }
    if have > expected {
        return Err(Error::TrailingBytes {
            path: path.into(),
            trailing: have - expected,
        });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = EmbeddingMatrix::new_unchecked(rows, dim, data, role)?;
    if let Some(row) = m.first_non_finite_row() {
        return Err(Error::NonFinite {
            path: path.into(),
            row,
        });
    }
    Ok(m)
}

fn bad_magic(bytes: &[u8], path: &Path) -> Error {
    Error::BadMagic {
        path: path.into(),
        found: bytes[..4].try_into().unwrap(),
        expected: "EMB1",
    }
}

pub fn encode(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let too_big = |what: &str, v: usize| Error::BadHeader {
        path: "<memory>".into(),
        detail: format!("{what} {v} does not fit in u32"),
    };
    let rows = u32::try_from(m.rows()).map_err(|_| too_big("rows", m.rows()))?;
    let dim = u32::try_from(m.dim()).map_err(|_| too_big("dim", m.dim()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_embedding_file(path: impl AsRef<Path>, role: RoleTag) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, role, path)
}

pub fn write_embedding_file(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(m)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
