//! Dataset ingestion: manifests, frame files, temporal sampling, cropping,
//! resizing, standardization and mini-batching.

mod image;
mod manifest;
mod pgm;
mod stats;

pub use image::{resize_bilinear, trim_black_borders, trim_with_threshold, BLACK_THRESHOLD};
pub use manifest::{load_manifest, parse_manifest, ClipRecord, DatasetManifest, Split, DEFAULT_CLASSES};
pub use pgm::{decode_pgm, encode_pgm, load_frame, save_frame};
pub use stats::{compute_stats, FeatureStats};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{FrameTensor, FusionMode};
use crate::numerics::{Matrix, Purpose, RngStream};

pub const FRAMES_PER_CLIP: usize = 6;
pub const FRAME_HEIGHT: usize = 72;
pub const FRAME_WIDTH: usize = 96;
pub const DEFAULT_BATCH_SIZE: usize = 128;

/// `k` frame indices spread evenly over `n` frames:
/// `round(i·(n-1)/(k-1))`, halves rounded up. Repeats when `n < k`.
pub fn sample_frames_uniform(n: usize, k: usize) -> Vec<usize> {
    if n == 0 || k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![0];
    }
    let span = (n - 1) as u64;
    let steps = (k - 1) as u64;
    (0..k as u64)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect()
}

/// Trim black borders, then resize to the target grid.
pub fn preprocess_frame(frame: &FrameTensor, height: usize, width: usize) -> Result<FrameTensor> {
    resize_bilinear(&trim_black_borders(frame), height, width)
}

/// Shuffled mini-batch partition of row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, shuffle_seed: u64) -> Self {
        BatchPlan {
            batch_size,
            shuffle_seed,
        }
    }
}

/// Every index in `0..n_rows` appears exactly once; all batches are full
/// except possibly the last.
pub fn make_batches(n_rows: usize, plan: &BatchPlan) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_rows).collect();
    RngStream::new(plan.shuffle_seed)
        .substream(Purpose::Shuffle, 0)
        .shuffle(&mut order);
    order
        .chunks(plan.batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOptions {
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            frames_per_clip: FRAMES_PER_CLIP,
            height: FRAME_HEIGHT,
            width: FRAME_WIDTH,
        }
    }
}

/// Fused rows of one split with their clip bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSplit {
    pub rows: Matrix,
    /// Clip ordinal (index into `clip_ids`) of each row.
    pub row_clip: Vec<usize>,
    pub clip_ids: Vec<String>,
    pub clip_labels: Vec<usize>,
}

impl FusedSplit {
    pub fn row_labels(&self) -> Vec<usize> {
        self.row_clip.iter().map(|&c| self.clip_labels[c]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    pub mode: FusionMode,
    pub n_classes: usize,
    pub train: FusedSplit,
    pub test: FusedSplit,
    /// Per-pixel statistics of the training frames.
    pub frame_stats: FeatureStats,
    /// Statistics of the fused training rows (aggregative and gradient
    /// modes).
    pub fused_stats: Option<FeatureStats>,
}

/// Loads, samples and preprocesses one clip's frames.
pub fn load_clip_frames(clip: &ClipRecord, opts: &PrepareOptions) -> Result<Vec<FrameTensor>> {
    sample_frames_uniform(clip.frame_paths.len(), opts.frames_per_clip)
        .into_iter()
        .map(|i| {
            let raw = load_frame(&clip.frame_paths[i])?;
            preprocess_frame(&raw, opts.height, opts.width)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context(format!("clip {:?}", clip.clip_id)))
}

/// Full preprocessing for one fusion mode.
///
/// Frames are standardized with per-pixel statistics of the training
/// frames, then fused. Sums and differences are no longer unit-variance,
/// so aggregative and gradient rows are standardized a second time with
/// statistics of the fused training rows. Test data never feeds any
/// statistic.
pub fn prepare_dataset(
    manifest: &DatasetManifest,
    mode: FusionMode,
    opts: &PrepareOptions,
) -> Result<FusedDataset> {
    manifest.require_splits()?;
    let train: Vec<&ClipRecord> = manifest.split(Split::Train).collect();
    let test: Vec<&ClipRecord> = manifest.split(Split::Test).collect();
    let load = |clips: &[&ClipRecord]| -> Result<Vec<Vec<FrameTensor>>> {
        clips.par_iter().map(|c| load_clip_frames(c, opts)).collect()
    };
    let train_frames = load(&train)?;
    let test_frames = load(&test)?;
    prepare_from_frames(&train, train_frames, &test, test_frames, mode, manifest.n_classes)
}

/// [`prepare_dataset`] on frames already loaded and resized.
pub fn prepare_from_frames(
    train: &[&ClipRecord],
    mut train_frames: Vec<Vec<FrameTensor>>,
    test: &[&ClipRecord],
    mut test_frames: Vec<Vec<FrameTensor>>,
    mode: FusionMode,
    n_classes: usize,
) -> Result<FusedDataset> {
    let dim = train_frames
        .first()
        .and_then(|f| f.first())
        .map(|f| f.values().len())
        .ok_or_else(|| Error::data("no training frames"))?;
    let mut flat = Vec::new();
    for f in train_frames.iter().flatten() {
        if f.values().len() != dim {
            return Err(Error::data("training frames differ in size"));
        }
        flat.extend_from_slice(f.values());
    }
    let frame_rows = Matrix::from_vec(flat.len() / dim, dim, flat)?;
    let frame_stats = compute_stats(&frame_rows)?;
    drop(frame_rows);

    for f in train_frames.iter_mut().chain(test_frames.iter_mut()).flatten() {
        if f.values().len() != dim {
            return Err(Error::data("frame size differs from training frames"));
        }
        frame_stats.standardize_row(f.values_mut());
    }

    let mut train_split = fuse_split(train, &train_frames, mode)?;
    let mut test_split = fuse_split(test, &test_frames, mode)?;
    let fused_stats = if mode != FusionMode::Standard {
        let s = compute_stats(&train_split.rows)?;
        s.standardize_rows(&mut train_split.rows)?;
        s.standardize_rows(&mut test_split.rows)?;
        Some(s)
    } else {
        None
    };
    Ok(FusedDataset {
        mode,
        n_classes,
        train: train_split,
        test: test_split,
        frame_stats,
        fused_stats,
    })
}

fn fuse_split(clips: &[&ClipRecord], frames: &[Vec<FrameTensor>], mode: FusionMode) -> Result<FusedSplit> {
    let mut data = Vec::new();
    let mut row_clip = Vec::new();
    let mut cols = 0;
    for (ci, (clip, fs)) in clips.iter().zip(frames).enumerate() {
        let fused = mode
            .apply(fs)
            .map_err(|e| e.context(format!("clip {:?}", clip.clip_id)))?;
        for f in fused {
            cols = f.values().len();
            data.extend_from_slice(f.values());
            row_clip.push(ci);
        }
    }
    Ok(FusedSplit {
        rows: Matrix::from_vec(row_clip.len(), cols, data)?,
        row_clip,
        clip_ids: clips.iter().map(|c| c.clip_id.clone()).collect(),
        clip_labels: clips.iter().map(|c| c.event_class).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn uniform_sampling_cases() {
        assert_eq!(sample_frames_uniform(6, 6), [0, 1, 2, 3, 4, 5]);
        assert_eq!(sample_frames_uniform(11, 6), [0, 2, 4, 6, 8, 10]);
        assert_eq!(sample_frames_uniform(1, 6), [0; 6]);
        // round(i·3/5): 0, 0.6, 1.2, 1.8, 2.4, 3.0
        assert_eq!(sample_frames_uniform(4, 6), [0, 1, 1, 2, 2, 3]);
        // round(i·99/5) with halves up: 19.8 -> 20, 39.6 -> 40 ...
        assert_eq!(sample_frames_uniform(100, 6), [0, 20, 40, 59, 79, 99]);
    }

    #[test]
    fn uniform_sampling_is_monotone_and_in_range() {
        for n in 1..60 {
            for k in 1..12 {
                let idx = sample_frames_uniform(n, k);
                assert_eq!(idx.len(), k);
                assert!(idx.windows(2).all(|w| w[0] <= w[1]));
                assert!(idx.iter().all(|&i| i < n));
                assert_eq!(idx[0], 0);
                if k > 1 {
                    assert_eq!(*idx.last().unwrap(), n - 1);
                }
            }
        }
    }

    #[test]
    fn batches_partition_rows() {
        let plan = BatchPlan::new(128, 42);
        let b = make_batches(300, &plan);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [128, 128, 44]);
        assert_eq!(b, make_batches(300, &plan));
        let all: BTreeSet<usize> = b.iter().flatten().copied().collect();
        assert_eq!(all.len(), 300);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 300);
        assert_ne!(b, make_batches(300, &BatchPlan::new(128, 43)));
    }

    fn clip(id: &str, class: usize, split: Split) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            frame_paths: vec![],
            action_label: "a".into(),
            event_class: class,
            split,
        }
    }

    fn frames(seed: u64, n: usize) -> Vec<FrameTensor> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|_| FrameTensor::new(3, 4, (0..12).map(|_| rng.uniform()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn row_counts_per_mode() {
        let train_clips: Vec<ClipRecord> = (0..4).map(|i| clip(&format!("t{i}"), i % 2, Split::Train)).collect();
        let test_clips = [clip("q", 1, Split::Test)];
        let train: Vec<&ClipRecord> = train_clips.iter().collect();
        let test: Vec<&ClipRecord> = test_clips.iter().collect();
        for (mode, per_clip) in [(FusionMode::Standard, 6), (FusionMode::Aggregative, 1), (FusionMode::Gradient, 5)] {
            let tf: Vec<_> = (0..4).map(|i| frames(i, 6)).collect();
            let ds = prepare_from_frames(&train, tf, &test, vec![frames(99, 6)], mode, 2).unwrap();
            assert_eq!(ds.train.rows.rows(), 4 * per_clip);
            assert_eq!(ds.test.rows.rows(), per_clip);
            assert_eq!(ds.train.rows.cols(), 12);
            assert_eq!(ds.train.row_labels().len(), 4 * per_clip);
            assert_eq!(ds.fused_stats.is_some(), mode != FusionMode::Standard);
        }
    }

    #[test]
    fn test_frames_never_touch_statistics() {
        let train_clips: Vec<ClipRecord> = (0..3).map(|i| clip(&format!("t{i}"), 0, Split::Train)).collect();
        let test_clips = [clip("q", 1, Split::Test)];
        let train: Vec<&ClipRecord> = train_clips.iter().collect();
        let test: Vec<&ClipRecord> = test_clips.iter().collect();
        let run = |test_seed| {
            let tf: Vec<_> = (0..3).map(|i| frames(i, 6)).collect();
            prepare_from_frames(&train, tf, &test, vec![frames(test_seed, 6)], FusionMode::Aggregative, 2).unwrap()
        };
        let a = run(1000);
        let b = run(2000);
        assert_eq!(a.frame_stats, b.frame_stats);
        assert_eq!(a.fused_stats, b.fused_stats);
        assert_eq!(a.train, b.train);
        assert_ne!(a.test.rows, b.test.rows);
    }

    #[test]
    fn fused_train_rows_are_standardized() {
        let train_clips: Vec<ClipRecord> = (0..20).map(|i| clip(&format!("t{i}"), 0, Split::Train)).collect();
        let test_clips = [clip("q", 1, Split::Test)];
        let train: Vec<&ClipRecord> = train_clips.iter().collect();
        let test: Vec<&ClipRecord> = test_clips.iter().collect();
        for mode in [FusionMode::Aggregative, FusionMode::Gradient] {
            let tf: Vec<_> = (0..20).map(|i| frames(i, 6)).collect();
            let ds = prepare_from_frames(&train, tf, &test, vec![frames(7, 6)], mode, 2).unwrap();
            let s = compute_stats(&ds.train.rows).unwrap();
            assert!(s.mean.iter().all(|m| m.abs() < 1e-9));
            assert!(s.std.iter().all(|x| (x - 1.0).abs() < 1e-6));
        }
    }
}
