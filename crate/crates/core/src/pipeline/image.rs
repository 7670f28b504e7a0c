//! Border trimming and bilinear resizing.

use crate::error::{Error, Result};
use crate::fusion::FrameTensor;

/// Rows/columns whose brightest pixel is at or below this are "black".
pub const BLACK_THRESHOLD: f64 = 8.0 / 255.0;

/// Removes leading and trailing all-black rows and columns. An all-black
/// frame is returned unchanged.
pub fn trim_black_borders(frame: &FrameTensor) -> FrameTensor {
    trim_with_threshold(frame, BLACK_THRESHOLD)
}

pub fn trim_with_threshold(frame: &FrameTensor, threshold: f64) -> FrameTensor {
    let (h, w) = frame.dims();
    let row_live = |y: usize| (0..w).any(|x| frame.at(y, x) > threshold);
    let col_live = |x: usize| (0..h).any(|y| frame.at(y, x) > threshold);
    let Some(top) = (0..h).find(|&y| row_live(y)) else {
        return frame.clone();
    };
    let bottom = (0..h).rev().find(|&y| row_live(y)).unwrap_or(top);
    let left = (0..w).find(|&x| col_live(x)).unwrap_or(0);
    let right = (0..w).rev().find(|&x| col_live(x)).unwrap_or(left);
    if (top, bottom, left, right) == (0, h - 1, 0, w - 1) {
        return frame.clone();
    }
    let (nh, nw) = (bottom - top + 1, right - left + 1);
    let mut values = Vec::with_capacity(nh * nw);
    for y in top..=bottom {
        values.extend((left..=right).map(|x| frame.at(y, x)));
    }
    FrameTensor::new(nh, nw, values).expect("cropped dims are consistent")
}

/// Corner-aligned bilinear interpolation: output pixel `(y, x)` samples the
/// source at `(y·(H-1)/(h-1), x·(W-1)/(w-1))`.
pub fn resize_bilinear(frame: &FrameTensor, height: usize, width: usize) -> Result<FrameTensor> {
    let (src_h, src_w) = frame.dims();
    if src_h < 2 || src_w < 2 {
        return Err(Error::precondition(format!(
            "cannot resize a {src_h}x{src_w} frame; need at least 2x2"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::precondition("target size must be positive"));
    }
    let scale = |dst: usize, src: usize| {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(height, src_h), scale(width, src_w));
    // Precompute horizontal taps.
    let xs: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| {
            let pos = x as f64 * sx;
            let x0 = (pos.floor() as usize).min(src_w - 1);
            let x1 = (x0 + 1).min(src_w - 1);
            (x0, x1, pos - x0 as f64)
        })
        .collect();
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        let pos = y as f64 * sy;
        let y0 = (pos.floor() as usize).min(src_h - 1);
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = pos - y0 as f64;
        for &(x0, x1, fx) in &xs {
            let top = lerp(frame.at(y0, x0), frame.at(y0, x1), fx);
            let bottom = lerp(frame.at(y1, x0), frame.at(y1, x1), fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    FrameTensor::new(height, width, values)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trims_top_band() {
        let mut v = vec![0.5; 30 * 20];
        v[..10 * 20].iter_mut().for_each(|x| *x = 0.0);
        let f = FrameTensor::new(30, 20, v).unwrap();
        let t = trim_black_borders(&f);
        assert_eq!(t.dims(), (20, 20));
        assert!(t.values().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn trims_all_sides_with_noise_floor() {
        // 2-pixel frame of dark noise around a 3x4 bright core.
        let f = FrameTensor::new(7, 8, (0..56).map(|i| {
            let (y, x) = (i / 8, i % 8);
            if (2..5).contains(&y) && (2..6).contains(&x) { 0.7 } else { 5.0 / 255.0 }
        }).collect()).unwrap();
        assert_eq!(trim_black_borders(&f).dims(), (3, 4));
    }

    #[test]
    fn all_black_and_no_border_unchanged() {
        let black = FrameTensor::filled(5, 6, 0.0);
        assert_eq!(trim_black_borders(&black), black);
        let bright = FrameTensor::filled(5, 6, 0.2);
        assert_eq!(trim_black_borders(&bright), bright);
    }

    #[test]
    fn constant_stays_constant() {
        let f = FrameTensor::filled(240, 320, 0.37);
        let r = resize_bilinear(&f, 72, 96).unwrap();
        assert_eq!(r.dims(), (72, 96));
        assert!(r.values().iter().all(|&x| x == 0.37));
    }

    #[test]
    fn same_size_is_identity() {
        let f = FrameTensor::new(72, 96, (0..72 * 96).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()).unwrap();
        let r = resize_bilinear(&f, 72, 96).unwrap();
        for (a, b) in f.values().iter().zip(r.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_downsample_hits_midpoints() {
        // 4x4 horizontal ramp v(y, x) = x / 3 sampled on a 3x3 grid: source
        // columns 0, 1.5, 3 -> values 0, 0.5, 1 on every row.
        let f = FrameTensor::new(4, 4, (0..16).map(|i| (i % 4) as f64 / 3.0).collect()).unwrap();
        let r = resize_bilinear(&f, 3, 3).unwrap();
        for y in 0..3 {
            assert!((r.at(y, 0) - 0.0).abs() < 1e-12);
            assert!((r.at(y, 1) - 0.5).abs() < 1e-12);
            assert!((r.at(y, 2) - 1.0).abs() < 1e-12);
        }
        // Mixed ramp v = x + 4y: point (1.5, 1.5) -> 1.5 + 6 = 7.5.
        let g = FrameTensor::new(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let r = resize_bilinear(&g, 3, 3).unwrap();
        assert!((r.at(1, 1) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_source_rejected() {
        assert!(resize_bilinear(&FrameTensor::filled(1, 5, 0.0), 3, 3).is_err());
    }

    proptest! {
        #[test]
        fn resize_stays_within_source_range(
            vals in proptest::collection::vec(0.0f64..1.0, 5 * 7),
            h in 1usize..12,
            w in 1usize..12,
        ) {
            let f = FrameTensor::new(5, 7, vals).unwrap();
            let lo = f.values().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = resize_bilinear(&f, h, w).unwrap();
            prop_assert_eq!(r.dims(), (h, w));
            for &v in r.values() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
