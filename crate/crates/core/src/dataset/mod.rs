//! Labeled frame manifests and leakage-safe fold planning.
//!
//! A manifest is JSON Lines, one [`SampleRecord`] per line:
//!
//! ```text
//! {"id":"v01_f000","image_path":"img/v01_f000.pgm","mask_path":null,"label":"covid","video_id":"v01","frame_index":0}
//! ```
//!
//! Relative paths resolve against the manifest's directory.

mod folds;
pub mod synth;

pub use folds::{make_folds, FoldBalance, FoldPlan};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Covid,
    Healthy,
}

impl Label {
    /// Position in the classifier's probability vector.
    pub fn class_index(self) -> usize {
        match self {
            Label::Covid => 0,
            Label::Healthy => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Covid),
            1 => Some(Label::Healthy),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "covid" => Some(Label::Covid),
            "healthy" => Some(Label::Healthy),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Covid => "covid",
            Label::Healthy => "healthy",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: Label,
    pub video_id: String,
    pub frame_index: u64,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    image_path: PathBuf,
    #[serde(default)]
    mask_path: Option<PathBuf>,
    label: String,
    video_id: String,
    frame_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Builds a manifest after checking id and `(video, frame)` uniqueness.
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self> {
        let manifest = DatasetManifest {
            root: root.into(),
            records,
        };
        if let Some((line, msg)) = manifest.key_violations().into_iter().next() {
            return Err(Error::Dataset(format!("record {line}: {msg}")));
        }
        Ok(manifest)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn image_path(&self, record: &SampleRecord) -> PathBuf {
        self.resolve(&record.image_path)
    }

    pub fn mask_path(&self, record: &SampleRecord) -> Option<PathBuf> {
        record.mask_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn load_image(&self, record: &SampleRecord) -> Result<GrayImage> {
        imaging::load_gray(self.image_path(record))
    }

    pub fn load_mask(&self, record: &SampleRecord) -> Result<Option<GrayImage>> {
        self.mask_path(record).map(imaging::load_gray).transpose()
    }

    /// Distinct video ids, sorted.
    pub fn videos(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .records
            .iter()
            .map(|r| r.video_id.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        v.sort();
        v
    }

    /// `(covid, healthy)` record counts.
    pub fn class_counts(&self) -> (usize, usize) {
        self.records.iter().fold((0, 0), |(c, h), r| match r.label {
            Label::Covid => (c + 1, h),
            Label::Healthy => (c, h + 1),
        })
    }

    // 1-based positions of records breaking id or frame uniqueness.
    fn key_violations(&self) -> Vec<(usize, String)> {
        let mut ids = HashSet::new();
        let mut frames = HashSet::new();
        let mut out = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.id.is_empty() || r.video_id.is_empty() {
                out.push((i + 1, "empty id or video_id".to_string()));
            } else if !ids.insert(r.id.as_str()) {
                out.push((i + 1, format!("duplicate id `{}`", r.id)));
            } else if !frames.insert((r.video_id.as_str(), r.frame_index)) {
                out.push((
                    i + 1,
                    format!(
                        "frame {} of video `{}` listed twice",
                        r.frame_index, r.video_id
                    ),
                ));
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Parses JSONL text without touching the file system.
pub fn parse_manifest(text: &str, source: &Path, root: &Path) -> Result<DatasetManifest> {
    let err = |line: usize, msg: String| Error::Manifest {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| err(lineno, format!("malformed record: {e}")))?;
        let label = Label::parse(&raw.label).ok_or_else(|| {
            err(
                lineno,
                format!("unknown label `{}` (expected covid|healthy)", raw.label),
            )
        })?;
        records.push(SampleRecord {
            id: raw.id,
            image_path: raw.image_path,
            mask_path: raw.mask_path,
            label,
            video_id: raw.video_id,
            frame_index: raw.frame_index,
        });
        lines.push(lineno);
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        records,
    };
    if let Some((pos, msg)) = manifest.key_violations().into_iter().next() {
        return Err(err(lines[pos - 1], msg));
    }
    Ok(manifest)
}

/// Reads and validates a manifest, including that every referenced image
/// and mask decodes.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let manifest = parse_manifest(&text, path, &root)?;

    let line_of: HashMap<&str, usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .zip(manifest.records())
        .map(|((i, _), r)| (r.id.as_str(), i + 1))
        .collect();
    let failures: Vec<(usize, String)> = manifest
        .records()
        .par_iter()
        .filter_map(|r| {
            let check = || -> Result<()> {
                let img = manifest.load_image(r)?;
                if let Some(mask) = manifest.load_mask(r)? {
                    if mask.dims() != img.dims() {
                        return Err(Error::Image(format!(
                            "mask {:?} does not match image {:?}",
                            mask.dims(),
                            img.dims()
                        )));
                    }
                }
                Ok(())
            };
            check()
                .err()
                .map(|e| (line_of[r.id.as_str()], e.to_string()))
        })
        .collect();
    if let Some((line, msg)) = failures.into_iter().min_by_key(|f| f.0) {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg: format!("unreadable file: {msg}"),
        });
    }
    Ok(manifest)
}

/// Frame indices `0, stride, 2*stride, ...` below `frame_count`.
pub fn select_frames(frame_count: u64, stride: u64) -> Result<Vec<u64>> {
    if stride == 0 {
        return Err(Error::Config("frame stride must be at least 1".into()));
    }
    Ok((0..frame_count).step_by(stride as usize).collect())
}
