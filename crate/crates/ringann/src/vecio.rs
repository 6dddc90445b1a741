//! fvecs / ivecs files: repeated `[i32 LE dim][dim × 4-byte LE payload]`.

use std::fs;
use std::path::Path;

use ringann_core::Dataset;

use crate::error::{Error, Result};

/// Integer rows read from an ivecs file, all of one width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub dim: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn new(dim: usize, data: Vec<i32>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged int matrix");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<i32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("rows", "need at least one row, all of equal non-zero width"));
        }
        Ok(Self::new(dim, rows.concat()))
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Splits a vector file into its common dimension and raw 4-byte payload
/// words.
fn parse(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<[u8; 4]>)> {
    let err = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.is_empty() {
        return Err(err(0, "empty file, at least one record required".into()));
    }
    let mut dim: Option<usize> = None;
    let mut words = Vec::with_capacity(bytes.len() / 4);
    let mut pos = 0;
    while pos < bytes.len() {
        let Some(head) = bytes.get(pos..pos + 4) else {
            return Err(err(pos, format!("truncated record header ({} of 4 bytes)", bytes.len() - pos)));
        };
        let d = i32::from_le_bytes(head.try_into().expect("4 bytes"));
        if d <= 0 {
            return Err(err(pos, format!("record dimension {d} must be positive")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(err(pos, format!("record dimension {d} differs from first record's {expected}")));
            }
            Some(_) => {}
        }
        let body = pos + 4;
        let end = body + 4 * d;
        if end > bytes.len() {
            return Err(err(body, format!("truncated record: need {} payload bytes, {} left", 4 * d, bytes.len() - body)));
        }
        words.extend(bytes[body..end].chunks_exact(4).map(|w| <[u8; 4]>::try_from(w).expect("4 bytes")));
        pos = end;
    }
    Ok((dim.expect("at least one record"), words))
}

fn frame(dim: usize, words: impl Iterator<Item = [u8; 4]>, n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n * (4 + 4 * dim));
    let head = (dim as i32).to_le_bytes();
    for (i, w) in words.enumerate() {
        if i % dim == 0 {
            out.extend_from_slice(&head);
        }
        out.extend_from_slice(&w);
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_fvecs(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    let (d, words) = parse(path, bytes)?;
    let data = words.into_iter().map(f32::from_le_bytes).collect();
    Ok(Dataset::new(d, data)?)
}

pub fn encode_fvecs(ds: &Dataset) -> Vec<u8> {
    frame(ds.dim(), ds.as_slice().iter().map(|x| x.to_le_bytes()), ds.len())
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_fvecs(path, &read(path)?)
}

pub fn save_fvecs(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_fvecs(ds))
}

pub fn decode_ivecs(path: &Path, bytes: &[u8]) -> Result<IntMatrix> {
    let (d, words) = parse(path, bytes)?;
    Ok(IntMatrix::new(d, words.into_iter().map(i32::from_le_bytes).collect()))
}

pub fn encode_ivecs(m: &IntMatrix) -> Vec<u8> {
    frame(m.dim, m.data.iter().map(|x| x.to_le_bytes()), m.len())
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<IntMatrix> {
    let path = path.as_ref();
    decode_ivecs(path, &read(path)?)
}

pub fn save_ivecs(m: &IntMatrix, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_ivecs(m))
}

/// Reads id rows (e.g. ground truth) as unsigned global ids.
pub fn load_id_rows(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let path = path.as_ref();
    let m = load_ivecs(path)?;
    m.rows()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&v| {
                    u32::try_from(v).map_err(|_| Error::Format {
                        path: path.to_path_buf(),
                        offset: (i * (4 + 4 * m.dim)) as u64,
                        reason: format!("negative id {v} in row {i}"),
                    })
                })
                .collect()
        })
        .collect()
}
