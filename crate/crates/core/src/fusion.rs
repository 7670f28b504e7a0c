//! First-layer input regimes: per-frame, summed, or differenced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FrameTensor {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::data(format!(
                "frame has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("frame contains non-finite values"));
        }
        Ok(FrameTensor {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        FrameTensor {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Standard,
    Aggregative,
    Gradient,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [
        FusionMode::Standard,
        FusionMode::Aggregative,
        FusionMode::Gradient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Standard => "standard",
            FusionMode::Aggregative => "aggregative",
            FusionMode::Gradient => "gradient",
        }
    }

    /// Model-name prefix used in reports (`A-DBN`, `G-RBM`, ...).
    pub fn prefix(self) -> &'static str {
        match self {
            FusionMode::Standard => "",
            FusionMode::Aggregative => "A-",
            FusionMode::Gradient => "G-",
        }
    }

    /// Checkpoint tag.
    pub fn tag(self) -> u8 {
        match self {
            FusionMode::Standard => 0,
            FusionMode::Aggregative => 1,
            FusionMode::Gradient => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// Training rows produced from a clip of `n_frames` frames.
    pub fn rows_per_clip(self, n_frames: usize) -> usize {
        match self {
            FusionMode::Standard => n_frames,
            FusionMode::Aggregative => usize::from(n_frames > 0),
            FusionMode::Gradient => n_frames.saturating_sub(1),
        }
    }

    pub fn apply(self, frames: &[FrameTensor]) -> Result<Vec<FrameTensor>> {
        match self {
            FusionMode::Standard => fuse_standard(frames),
            FusionMode::Aggregative => fuse_aggregative(frames).map(|f| vec![f]),
            FusionMode::Gradient => fuse_gradient(frames),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(FusionMode::Standard),
            "aggregative" => Ok(FusionMode::Aggregative),
            "gradient" => Ok(FusionMode::Gradient),
            other => Err(Error::config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

fn check_same_dims(frames: &[FrameTensor]) -> Result<()> {
    let dims = frames[0].dims();
    if let Some((k, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
        return Err(Error::data(format!(
            "frame {k} is {}x{}, expected {}x{}",
            f.height, f.width, dims.0, dims.1
        )));
    }
    Ok(())
}

/// Elementwise sum of all frames, accumulated in list order.
pub fn fuse_aggregative(frames: &[FrameTensor]) -> Result<FrameTensor> {
    if frames.is_empty() {
        return Err(Error::precondition("aggregative fusion needs at least one frame"));
    }
    check_same_dims(frames)?;
    let mut acc = frames[0].clone();
    for f in &frames[1..] {
        for (a, v) in acc.values.iter_mut().zip(&f.values) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Consecutive differences `frames[k+1] - frames[k]`.
pub fn fuse_gradient(frames: &[FrameTensor]) -> Result<Vec<FrameTensor>> {
    if frames.len() < 2 {
        return Err(Error::precondition(format!(
            "gradient fusion needs at least two frames, got {}",
            frames.len()
        )));
    }
    check_same_dims(frames)?;
    Ok(frames
        .windows(2)
        .map(|pair| FrameTensor {
            height: pair[0].height,
            width: pair[0].width,
            values: pair[1]
                .values
                .iter()
                .zip(&pair[0].values)
                .map(|(b, a)| b - a)
                .collect(),
        })
        .collect())
}

pub fn fuse_standard(frames: &[FrameTensor]) -> Result<Vec<FrameTensor>> {
    if frames.is_empty() {
        return Err(Error::precondition("no frames"));
    }
    Ok(frames.to_vec())
}

/// Per-position z-score. A non-positive `std` (constant pixel) is clamped
/// to 1, so constant training pixels map to zero.
pub fn restandardize(frame: &FrameTensor, mean: &[f64], std: &[f64]) -> FrameTensor {
    let mut out = frame.clone();
    standardize_in_place(&mut out.values, mean, std);
    out
}

pub(crate) fn standardize_in_place(values: &mut [f64], mean: &[f64], std: &[f64]) {
    assert_eq!(values.len(), mean.len(), "mean length");
    assert_eq!(values.len(), std.len(), "std length");
    for ((v, m), s) in values.iter_mut().zip(mean).zip(std) {
        let s = if *s > 0.0 { *s } else { 1.0 };
        *v = (*v - m) / s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(h: usize, w: usize, v: &[f64]) -> FrameTensor {
        FrameTensor::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn aggregative_single_and_copies() {
        let f = frame(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(fuse_aggregative(std::slice::from_ref(&f)).unwrap(), f);
        let sum = fuse_aggregative(&vec![f.clone(); 4]).unwrap();
        let expect: Vec<f64> = f.values().iter().map(|x| 4.0 * x).collect();
        assert_eq!(sum.values(), expect.as_slice());
    }

    #[test]
    fn aggregative_hand_sum() {
        let a = frame(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = frame(2, 2, &[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(
            fuse_aggregative(&[a, b]).unwrap().values(),
            &[11.0, 22.0, 33.0, 44.0]
        );
    }

    #[test]
    fn aggregative_errors() {
        assert!(matches!(fuse_aggregative(&[]), Err(Error::Precondition(_))));
        let a = FrameTensor::filled(2, 2, 0.0);
        let b = FrameTensor::filled(2, 3, 0.0);
        assert!(matches!(fuse_aggregative(&[a, b]), Err(Error::Data(_))));
    }

    #[test]
    fn gradient_cases() {
        let a = frame(1, 3, &[0.2, 0.4, 0.6]);
        let out = fuse_gradient(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].values().iter().all(|&x| x == 0.0));

        let d = [1.0, -2.0, 0.5];
        let step = |k: f64| {
            frame(1, 3, &[0.2 + k * d[0], 0.4 + k * d[1], 0.6 + k * d[2]])
        };
        let out = fuse_gradient(&[step(0.0), step(1.0), step(2.0)]).unwrap();
        assert_eq!(out.len(), 2);
        for f in out {
            for (x, y) in f.values().iter().zip(d) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        let six = vec![FrameTensor::filled(2, 2, 1.0); 6];
        assert_eq!(fuse_gradient(&six).unwrap().len(), 5);
        assert!(matches!(
            fuse_gradient(&six[..1]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn standard_passthrough() {
        let frames = vec![frame(1, 2, &[0.1, 0.2]), frame(1, 2, &[0.3, 0.4])];
        assert_eq!(fuse_standard(&frames).unwrap(), frames);
        assert_eq!(fuse_standard(&vec![frames[0].clone(); 6]).unwrap().len(), 6);
    }

    #[test]
    fn rows_per_clip_contract() {
        assert_eq!(FusionMode::Standard.rows_per_clip(6), 6);
        assert_eq!(FusionMode::Aggregative.rows_per_clip(6), 1);
        assert_eq!(FusionMode::Gradient.rows_per_clip(6), 5);
    }

    #[test]
    fn restandardize_cases() {
        let f = frame(1, 3, &[1.0, 2.0, 3.0]);
        let z = restandardize(&f, &[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
        assert!(z.values().iter().all(|&x| x == 0.0));
        assert_eq!(restandardize(&f, &[0.0; 3], &[1.0; 3]), f);
        let clamped = restandardize(&f, &[1.0, 2.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_eq!(clamped.values(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
            assert_eq!(FusionMode::from_tag(m.tag()), Some(m));
        }
        assert!("optical".parse::<FusionMode>().is_err());
    }

    fn clip() -> impl Strategy<Value = Vec<FrameTensor>> {
        proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 2..8)
            .prop_map(|fs| fs.into_iter().map(|v| frame(2, 3, &v)).collect())
    }

    proptest! {
        #[test]
        fn gradient_telescopes(frames in clip()) {
            let diffs = fuse_gradient(&frames).unwrap();
            let total = fuse_aggregative(&diffs).unwrap();
            let first = frames.first().unwrap().values();
            let last = frames.last().unwrap().values();
            for ((t, l), f) in total.values().iter().zip(last).zip(first) {
                prop_assert!((t - (l - f)).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregation_is_permutation_invariant(frames in clip(), seed in any::<u64>()) {
            let mut shuffled = frames.clone();
            crate::numerics::RngStream::new(seed).shuffle(&mut shuffled);
            let a = fuse_aggregative(&frames).unwrap();
            let b = fuse_aggregative(&shuffled).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
