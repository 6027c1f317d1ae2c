use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::rng;

/// Video-level fold assignment. All frames of a video share one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FoldBalance {
    pub fold: usize,
    pub videos: usize,
    pub covid: usize,
    pub healthy: usize,
}

/// Shuffles the sorted video ids with PCG32 and deals them round-robin.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    let mut videos = manifest.videos();
    if videos.len() < k {
        return Err(Error::Dataset(format!(
            "{} videos cannot fill {k} folds",
            videos.len()
        )));
    }
    videos.shuffle(&mut rng::pcg32(seed));
    let assignment = videos
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i % k))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, video_id: &str) -> Option<usize> {
        self.assignment.get(video_id).copied()
    }

    pub fn videos_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(v, _)| v.as_str())
            .collect()
    }

    /// Every manifest video is assigned, and every fold index is below `k`.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        if let Some((v, f)) = self.assignment.iter().find(|(_, &f)| f >= self.k) {
            return Err(Error::Dataset(format!(
                "video `{v}` assigned to fold {f} but k = {}",
                self.k
            )));
        }
        if let Some(v) = manifest
            .videos()
            .into_iter()
            .find(|v| !self.assignment.contains_key(v))
        {
            return Err(Error::Dataset(format!("video `{v}` has no fold")));
        }
        Ok(())
    }

    /// Record indices `(train, test)` for one held-out fold, in manifest order.
    pub fn split(
        &self,
        manifest: &DatasetManifest,
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate(manifest)?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, r) in manifest.records().iter().enumerate() {
            if self.assignment[&r.video_id] == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, test))
    }

    pub fn class_balance(&self, manifest: &DatasetManifest) -> Vec<FoldBalance> {
        let mut out: Vec<FoldBalance> = (0..self.k)
            .map(|fold| FoldBalance {
                fold,
                videos: self.videos_in(fold).len(),
                covid: 0,
                healthy: 0,
            })
            .collect();
        for r in manifest.records() {
            if let Some(b) = self.fold_of(&r.video_id).and_then(|f| out.get_mut(f)) {
                match r.label {
                    Label::Covid => b.covid += 1,
                    Label::Healthy => b.healthy += 1,
                }
            }
        }
        out
    }

    /// Folds whose covid fraction differs from the global one by more than
    /// 20% (relative). Also logged at warn level.
    pub fn balance_warnings(&self, manifest: &DatasetManifest) -> Vec<String> {
        let (c, h) = manifest.class_counts();
        if c + h == 0 {
            return Vec::new();
        }
        let global = c as f64 / (c + h) as f64;
        let mut warnings = Vec::new();
        for b in self.class_balance(manifest) {
            let n = b.covid + b.healthy;
            if n == 0 {
                continue;
            }
            let ratio = b.covid as f64 / n as f64;
            if (ratio - global).abs() > 0.2 * global {
                let msg = format!(
                    "fold {}: covid fraction {:.3} deviates from global {:.3} by more than 20%",
                    b.fold, ratio, global
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        warnings
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let plan: FoldPlan = serde_json::from_str(&text)?;
        if plan.k == 0 {
            return Err(Error::Dataset("fold plan has k = 0".into()));
        }
        Ok(plan)
    }
}
