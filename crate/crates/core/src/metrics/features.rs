//! Binary feature files: `FVDF` magic, then little-endian `u32` version, `N`, `d`,
//! followed by `N·d` row-major `f32` values.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FVDF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|msg| Error::format(path, "feature file", msg))
}

fn decode_features(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or("size overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "header says {n}x{d} ({expected} bytes), file has {}",
            bytes.len()
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(DMatrix::from_row_slice(n, d, &values))
}

/// Writes `rows` as `f32`; values are narrowed.
pub fn write_feature_file(path: impl AsRef<Path>, rows: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let (n, d) = rows.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..n {
        for c in 0..d {
            out.extend_from_slice(&(rows[(r, c)] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One feature vector per clip, rows of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: DMatrix<f64>,
    source_tag: String,
}

impl FeatureSet {
    pub fn new(vectors: DMatrix<f64>, source_tag: impl Into<String>) -> Result<Self> {
        if vectors.nrows() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 {
            return Err(Error::invalid("feature vectors must have at least one dimension"));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature value at row {}",
                i % vectors.nrows()
            )));
        }
        Ok(Self {
            vectors,
            source_tag: source_tag.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::new(read_feature_file(path)?, path.display().to_string())
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}
