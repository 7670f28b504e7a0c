//! Synthetic "moving blob" clips: a bright Gaussian spot drifting across a
//! gray background, with black letterbox bars above and below. Each class
//! is one motion direction, so the class is invisible in any single frame
//! position but obvious from the motion.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use adbn_core::pipeline::{save_frame, Split};
use adbn_core::{ClipRecord, DatasetManifest, Error, FrameTensor, Purpose, Result, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub train_clips: usize,
    pub test_clips: usize,
    pub n_classes: usize,
    pub frames: usize,
    /// Full frame size, letterbox included.
    pub height: usize,
    pub width: usize,
    /// Rows of black at the top and at the bottom.
    pub letterbox: usize,
    pub background: f64,
    pub noise: f64,
    pub amplitude: f64,
    /// Gaussian radius of the blob, pixels.
    pub radius: f64,
    /// Per-frame displacement range, pixels.
    pub speed: (f64, f64),
    /// Start-position jitter around the center, pixels.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            train_clips: 300,
            test_clips: 60,
            n_classes: 3,
            frames: 6,
            height: 96,
            width: 128,
            letterbox: 12,
            background: 0.35,
            noise: 0.02,
            amplitude: 0.55,
            radius: 5.0,
            speed: (4.0, 6.0),
            jitter: 6.0,
            seed: 2024,
        }
    }
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.frames < 2 || self.train_clips == 0 || self.test_clips == 0 {
            return Err(Error::config("need >= 2 classes, >= 2 frames and clips in both splits"));
        }
        if 2 * self.letterbox + 2 > self.height || self.width < 2 {
            return Err(Error::config("frame too small for its letterbox"));
        }
        if !(self.speed.0 <= self.speed.1) {
            return Err(Error::config("speed range is inverted"));
        }
        Ok(())
    }

    /// Unit motion vector `(dy, dx)` of a class: class `k` moves at angle
    /// `2πk / n_classes`, class 0 to the right.
    pub fn direction(&self, class: usize) -> (f64, f64) {
        let angle = TAU * class as f64 / self.n_classes as f64;
        (angle.sin(), angle.cos())
    }

    /// The frames of clip `index` (counted over train then test).
    pub fn clip_frames(&self, index: usize, class: usize) -> Vec<FrameTensor> {
        let mut rng = RngStream::new(self.seed).substream(Purpose::Data, index as u32);
        let content_h = self.height - 2 * self.letterbox;
        let (dy, dx) = self.direction(class);
        let speed = self.speed.0 + (self.speed.1 - self.speed.0) * rng.uniform();
        let mut jitter = || self.jitter * (2.0 * rng.uniform() - 1.0);
        let y0 = content_h as f64 / 2.0 + jitter();
        let x0 = self.width as f64 / 2.0 + jitter();
        let two_r2 = 2.0 * self.radius * self.radius;
        (0..self.frames)
            .map(|t| {
                let cy = y0 + dy * speed * t as f64;
                let cx = x0 + dx * speed * t as f64;
                let mut values = vec![0.0; self.height * self.width];
                for y in 0..content_h {
                    let row = (y + self.letterbox) * self.width;
                    for x in 0..self.width {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let v = self.background
                            + self.noise * rng.standard_normal()
                            + self.amplitude * (-d2 / two_r2).exp();
                        values[row + x] = v.clamp(0.0, 1.0);
                    }
                }
                FrameTensor::new(self.height, self.width, values).expect("dims match")
            })
            .collect()
    }
}

/// Writes PGM frames under `dir/frames/` and returns the path of the
/// manifest `dir/manifest.tsv`. Classes alternate so every split is
/// balanced.
pub fn write_dataset(dir: &Path, spec: &BlobSpec) -> Result<PathBuf> {
    spec.validate()?;
    let mut clips = Vec::with_capacity(spec.train_clips + spec.test_clips);
    for index in 0..spec.train_clips + spec.test_clips {
        let (split, local) = if index < spec.train_clips {
            (Split::Train, index)
        } else {
            (Split::Test, index - spec.train_clips)
        };
        let class = local % spec.n_classes;
        let clip_id = format!("blob-{split}-{local:04}");
        let rel = Path::new("frames").join(&clip_id);
        let abs = dir.join(&rel);
        std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        let mut frame_paths = Vec::with_capacity(spec.frames);
        for (t, frame) in spec.clip_frames(index, class).iter().enumerate() {
            let name = format!("{t:03}.pgm");
            save_frame(&abs.join(&name), frame)?;
            frame_paths.push(rel.join(name));
        }
        let (dy, dx) = spec.direction(class);
        clips.push(ClipRecord {
            clip_id,
            frame_paths,
            action_label: format!("move-{:.0}", dy.atan2(dx).to_degrees().rem_euclid(360.0)),
            event_class: class,
            split,
        });
    }
    let manifest = DatasetManifest {
        name: "moving-blob".into(),
        n_classes: spec.n_classes,
        clips,
        stats: None,
    };
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
