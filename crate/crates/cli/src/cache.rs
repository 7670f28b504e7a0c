//! On-disk cache of fused, standardized rows.
//!
//! A cache directory holds `train.ebfr`, `test.ebfr`, the frame statistics
//! `frame_stats.ebst` and, unless the mode is standard, `fused_stats.ebst`.
//!
//! `.ebfr` layout (little-endian):
//!
//! ```text
//! magic "EBFR", version u32 = 1, fusion_mode u8, n_classes u32,
//! n_rows u64, n_cols u64, n_clips u64,
//! per clip: label u32, id length u32, id bytes (UTF-8)
//! per row: clip ordinal u32
//! rows: f64 × n_rows·n_cols, row-major
//! ```

use std::path::{Path, PathBuf};

use adbn_core::pipeline::{FeatureStats, FusedDataset, FusedSplit};
use adbn_core::{Error, FusionMode, Matrix, Result};

use crate::checkpoint::{write_atomic, Reader, Writer};

const MAGIC: &[u8; 4] = b"EBFR";
const VERSION: u32 = 1;

pub fn train_path(dir: &Path) -> PathBuf {
    dir.join("train.ebfr")
}

pub fn test_path(dir: &Path) -> PathBuf {
    dir.join("test.ebfr")
}

pub fn save_dataset(dir: &Path, data: &FusedDataset) -> Result<()> {
    write_atomic(&train_path(dir), &encode_split(&data.train, data.mode, data.n_classes)?)?;
    write_atomic(&test_path(dir), &encode_split(&data.test, data.mode, data.n_classes)?)?;
    write_atomic(&dir.join("frame_stats.ebst"), &data.frame_stats.to_bytes())?;
    let fused = dir.join("fused_stats.ebst");
    match &data.fused_stats {
        Some(s) => write_atomic(&fused, &s.to_bytes())?,
        None if fused.exists() => std::fs::remove_file(&fused).map_err(|e| Error::io(&fused, e))?,
        None => {}
    }
    Ok(())
}

/// One cached split with the header fields needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSplit {
    pub mode: FusionMode,
    pub n_classes: usize,
    pub split: FusedSplit,
}

pub fn load_split(path: &Path) -> Result<CachedSplit> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::data(format!(
                "fused cache {} not found; run `adbn fuse` first",
                path.display()
            ))
        } else {
            Error::io(path, e)
        }
    })?;
    decode_split(&bytes).map_err(|e| e.context(path.display()))
}

pub fn load_frame_stats(dir: &Path) -> Result<FeatureStats> {
    FeatureStats::load(&dir.join("frame_stats.ebst"))
}

fn encode_split(split: &FusedSplit, mode: FusionMode, n_classes: usize) -> Result<Vec<u8>> {
    let u32_of = |n: usize| u32::try_from(n).map_err(|_| Error::data(format!("{n} overflows u32")));
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(mode.tag());
    w.u32(u32_of(n_classes)?);
    w.u64(split.rows.rows() as u64);
    w.u64(split.rows.cols() as u64);
    w.u64(split.clip_ids.len() as u64);
    for (id, &label) in split.clip_ids.iter().zip(&split.clip_labels) {
        w.u32(u32_of(label)?);
        w.u32(u32_of(id.len())?);
        w.bytes(id.as_bytes());
    }
    for &c in &split.row_clip {
        w.u32(u32_of(c)?);
    }
    w.f64s(split.rows.as_slice());
    Ok(w.buf)
}

fn decode_split(bytes: &[u8]) -> Result<CachedSplit> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::data("not a fused-row cache (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported cache version {version}")));
    }
    let mode = FusionMode::from_tag(r.u8()?).ok_or_else(|| Error::data("unknown fusion mode tag"))?;
    let n_classes = r.u32()? as usize;
    let to_usize = |x: u64| usize::try_from(x).map_err(|_| Error::data("size overflows usize"));
    let n_rows = to_usize(r.u64()?)?;
    let n_cols = to_usize(r.u64()?)?;
    let n_clips = to_usize(r.u64()?)?;
    let mut clip_ids = Vec::new();
    let mut clip_labels = Vec::new();
    for _ in 0..n_clips {
        let label = r.u32()? as usize;
        if label >= n_classes {
            return Err(Error::data(format!("clip label {label} outside [0, {n_classes})")));
        }
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?).map_err(|_| Error::data("clip id is not UTF-8"))?;
        clip_labels.push(label);
        clip_ids.push(id.to_owned());
    }
    let mut row_clip = Vec::new();
    for _ in 0..n_rows {
        let c = r.u32()? as usize;
        if c >= n_clips {
            return Err(Error::data(format!("row refers to clip {c} of {n_clips}")));
        }
        row_clip.push(c);
    }
    let n_values = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| Error::data("declared dimensions overflow"))?;
    let rows = Matrix::from_vec(n_rows, n_cols, r.f64s(n_values)?)
        .map_err(|e| Error::data(format!("cached rows: {e}")))?;
    if r.pos != bytes.len() {
        return Err(Error::data("trailing bytes after cached rows"));
    }
    Ok(CachedSplit {
        mode,
        n_classes,
        split: FusedSplit {
            rows,
            row_clip,
            clip_ids,
            clip_labels,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split() -> FusedSplit {
        FusedSplit {
            rows: Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 1.0),
            row_clip: vec![0, 0, 1],
            clip_ids: vec!["a".into(), "clip-β".into()],
            clip_labels: vec![2, 0],
        }
    }

    #[test]
    fn round_trip() {
        let bytes = encode_split(&split(), FusionMode::Gradient, 3).unwrap();
        let back = decode_split(&bytes).unwrap();
        assert_eq!(back.mode, FusionMode::Gradient);
        assert_eq!(back.n_classes, 3);
        assert_eq!(back.split, split());
        assert!(decode_split(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let bytes = encode_split(&split(), FusionMode::Standard, 2).unwrap();
        assert!(matches!(decode_split(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn missing_cache_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_split(&train_path(dir.path())), Err(Error::Data(_))));
    }
}
