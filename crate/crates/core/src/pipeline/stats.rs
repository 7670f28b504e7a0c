//! Per-feature standardization statistics and their binary sidecar.
//!
//! Sidecar layout, little-endian: `"EBST"`, `u32` version (1), `u64`
//! feature count `n`, then `n` means and `n` standard deviations as `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::standardize_in_place;
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"EBST";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero for constant features.
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize_row(&self, row: &mut [f64]) {
        standardize_in_place(row, &self.mean, &self.std);
    }

    pub fn standardize_rows(&self, rows: &mut Matrix) -> Result<()> {
        if rows.cols() != self.len() {
            return Err(Error::config(format!(
                "stats cover {} features, rows have {}",
                self.len(),
                rows.cols()
            )));
        }
        for i in 0..rows.rows() {
            self.standardize_row(rows.row_mut(i));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in self.mean.iter().chain(&self.std) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::data("not a stats sidecar (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::data(format!("unsupported stats version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != 16 * n {
            return Err(Error::data(format!(
                "stats payload is {} bytes, header declares {n} features",
                body.len()
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (mean, std) = vals.split_at(n);
        Ok(FeatureStats {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

/// Per-column mean and population standard deviation, two-pass, rows
/// accumulated in order.
pub fn compute_stats(rows: &Matrix) -> Result<FeatureStats> {
    if rows.rows() < 2 {
        return Err(Error::precondition(format!(
            "statistics need at least 2 rows, got {}",
            rows.rows()
        )));
    }
    let n = rows.rows() as f64;
    let mean: Vec<f64> = rows.col_sums().into_iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; rows.cols()];
    for i in 0..rows.rows() {
        for ((acc, x), m) in sq.iter_mut().zip(rows.row(i)).zip(&mean) {
            let d = x - m;
            *acc += d * d;
        }
    }
    let std = sq.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(FeatureStats { mean, std })
}
