//! Tab-separated clip manifests.
//!
//! ```text
//! #! name = ucf101-fold1
//! #! n_classes = 5
//! # any other line starting with '#' is a comment
//! clip_id<TAB>frame;frame;...<TAB>action<TAB>event<TAB>split
//! ```
//!
//! Frame paths are relative to the manifest's directory unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::FeatureStats;

pub const DEFAULT_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub action_label: String,
    pub event_class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub n_classes: usize,
    pub clips: Vec<ClipRecord>,
    pub stats: Option<FeatureStats>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    /// Training workflows need both splits populated.
    pub fn require_splits(&self) -> Result<()> {
        for s in [Split::Train, Split::Test] {
            if self.split(s).next().is_none() {
                return Err(Error::data(format!("manifest {:?} has no {s} clips", self.name)));
            }
        }
        Ok(())
    }

    /// Renders the manifest text. Paths are written as given.
    pub fn to_text(&self) -> String {
        let mut out = format!("#! name = {}\n#! n_classes = {}\n", self.name, self.n_classes);
        for c in &self.clips {
            let frames: Vec<String> = c.frame_paths.iter().map(|p| p.display().to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.clip_id,
                frames.join(";"),
                c.action_label,
                c.event_class,
                c.split
            ));
        }
        out
    }
}

/// Parses manifest text. `base` resolves relative frame paths; existence
/// is checked when `check_files` is set.
pub fn parse_manifest(text: &str, base: &Path, default_name: &str, check_files: bool) -> Result<DatasetManifest> {
    let mut name = default_name.to_string();
    let mut n_classes = DEFAULT_CLASSES;
    let mut records: Vec<(usize, Vec<&str>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(directive) = line.strip_prefix("#!") {
            let (key, value) = directive
                .split_once('=')
                .ok_or_else(|| Error::data(format!("line {line_no}: directive needs key = value")))?;
            match key.trim() {
                "name" => name = value.trim().to_string(),
                "n_classes" => {
                    n_classes = value.trim().parse().map_err(|_| {
                        Error::data(format!("line {line_no}: n_classes is not an integer"))
                    })?
                }
                other => return Err(Error::data(format!("line {line_no}: unknown directive {other:?}"))),
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::data(format!(
                "line {line_no}: expected 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        records.push((line_no, fields));
    }
    if n_classes < 2 {
        return Err(Error::data(format!("n_classes must be at least 2, got {n_classes}")));
    }

    let mut seen = HashSet::new();
    let mut clips = Vec::with_capacity(records.len());
    for (line_no, f) in records {
        let at = |msg: String| Error::data(format!("line {line_no}: {msg}"));
        let clip_id = f[0].trim().to_string();
        if clip_id.is_empty() {
            return Err(at("empty clip_id".into()));
        }
        if !seen.insert(clip_id.clone()) {
            return Err(at(format!("duplicate clip_id {clip_id:?}")));
        }
        let frame_paths: Vec<PathBuf> = f[1]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                let p = Path::new(s);
                if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
            })
            .collect();
        if frame_paths.is_empty() {
            return Err(at(format!("clip {clip_id:?} lists no frames")));
        }
        if check_files {
            if let Some(missing) = frame_paths.iter().find(|p| !p.is_file()) {
                return Err(at(format!("clip {clip_id:?}: frame {} does not exist", missing.display())));
            }
        }
        let event_class: usize = f[3]
            .trim()
            .parse()
            .map_err(|_| at(format!("event class {:?} is not an integer", f[3])))?;
        if event_class >= n_classes {
            return Err(at(format!(
                "clip {clip_id:?}: event class {event_class} outside [0, {n_classes})"
            )));
        }
        let split = f[4].trim().parse::<Split>().map_err(|e| at(e.to_string()))?;
        clips.push(ClipRecord {
            clip_id,
            frame_paths,
            action_label: f[2].trim().to_string(),
            event_class,
            split,
        });
    }
    Ok(DatasetManifest {
        name,
        n_classes,
        clips,
        stats: None,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_manifest(&text, base, &stem, true).map_err(|e| e.context(path.display()))
}
