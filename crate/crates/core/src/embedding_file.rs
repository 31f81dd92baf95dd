//! Binary embedding tables: `"CADC"`, u32 version, u32 rows, u32 cols,
//! row-major little-endian f32 payload, then the FNV-1a 64 hash of the
//! payload bytes (little-endian). All integers are little-endian.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::Matrix;

pub const MAGIC: &[u8; 4] = b"CADC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not an embedding file")]
    BadMagic,
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated embedding file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("embedding file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("table too large for the format: {rows}x{cols}")]
    TooLarge { rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, EmbeddingFileError>;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode(table: &Matrix<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = table.shape();
    let too_large = || EmbeddingFileError::TooLarge { rows, cols };
    let r = u32::try_from(rows).map_err(|_| too_large())?;
    let c = u32::try_from(cols).map_err(|_| too_large())?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for v in table.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a64(&out[HEADER_LEN..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EmbeddingFileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingFileError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(EmbeddingFileError::UnsupportedVersion(version));
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or(EmbeddingFileError::TooLarge { rows, cols })?;
    let expected = HEADER_LEN + payload_len + 8;
    if bytes.len() < expected {
        return Err(EmbeddingFileError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EmbeddingFileError::TrailingBytes(bytes.len() - expected));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().expect("8-byte slice"));
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(EmbeddingFileError::ChecksumMismatch { stored, computed });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked against header"))
}

pub fn save_embeddings(table: &Matrix<f32>, path: &Path) -> Result<()> {
    let bytes = encode(table)?;
    fs::write(path, bytes).map_err(|source| EmbeddingFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_embeddings(path: &Path) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|source| EmbeddingFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
