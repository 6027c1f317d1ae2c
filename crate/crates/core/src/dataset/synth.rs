//! Synthetic stand-in data: "covid" frames carry a bright blob (the
//! pathology the segmenter should find), "healthy" frames are clean speckle.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{DatasetManifest, Label, SampleRecord};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};
use crate::rng::{self, GaussianStream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub videos: usize,
    pub frames_per_video: usize,
    pub size: usize,
    pub with_masks: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            videos: 4,
            frames_per_video: 10,
            size: 64,
            with_masks: true,
            seed: 0,
        }
    }
}

/// One frame and its ground-truth mask.
pub fn synth_frame(label: Label, size: usize, seed: u64) -> (GrayImage, GrayImage) {
    let mut r = rng::pcg32(seed);
    let radius = (size as f64 / 6.0).max(1.0);
    let cx = r.gen_range(radius..size as f64 - radius);
    let cy = r.gen_range(radius..size as f64 - radius);
    let mut noise = GaussianStream::new(r);
    let mut img = GrayImage::filled(size, size, 0);
    let mut mask = GrayImage::filled(size, size, 0);
    for y in 0..size {
        for x in 0..size {
            let inside = label == Label::Covid && {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                dx * dx + dy * dy <= radius * radius
            };
            let base = if inside { 225.0 } else { 60.0 };
            let v = (base + 12.0 * noise.next_standard())
                .round()
                .clamp(0.0, 255.0);
            img.set(x, y, v as u8);
            if inside {
                mask.set(x, y, 255);
            }
        }
    }
    (img, mask)
}

/// Writes `images/`, optional `masks/` and `manifest.jsonl` under `dir`.
/// Even-numbered videos are covid, odd ones healthy.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<DatasetManifest> {
    if spec.size < 4 {
        return Err(Error::Config("synthetic frames need size >= 4".into()));
    }
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
    };
    mkdir(&dir.join("images"))?;
    if spec.with_masks {
        mkdir(&dir.join("masks"))?;
    }
    let mut records = Vec::with_capacity(spec.videos * spec.frames_per_video);
    for v in 0..spec.videos {
        let label = if v % 2 == 0 {
            Label::Covid
        } else {
            Label::Healthy
        };
        let video_id = format!("vid{v:03}");
        for f in 0..spec.frames_per_video {
            let id = format!("{video_id}_f{f:04}");
            let (img, mask) = synth_frame(label, spec.size, rng::keyed_seed(spec.seed, &id));
            let image_path = Path::new("images").join(format!("{id}.pgm"));
            imaging::save_gray(dir.join(&image_path), &img)?;
            let mask_path = if spec.with_masks {
                let p = Path::new("masks").join(format!("{id}.pgm"));
                imaging::save_gray(dir.join(&p), &mask)?;
                Some(p)
            } else {
                None
            };
            records.push(SampleRecord {
                id,
                image_path,
                mask_path,
                label,
                video_id: video_id.clone(),
                frame_index: f as u64,
            });
        }
    }
    let manifest = DatasetManifest::new(dir, records)?;
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_match_labels() {
        let (img, mask) = synth_frame(Label::Covid, 32, 1);
        assert!(mask.is_binary());
        assert!(mask.pixels().contains(&255));
        let inside: Vec<u8> = img
            .pixels()
            .iter()
            .zip(mask.pixels())
            .filter(|(_, &m)| m == 255)
            .map(|(&p, _)| p)
            .collect();
        assert!(inside.iter().all(|&p| p > 150));
        let (_, empty) = synth_frame(Label::Healthy, 32, 1);
        assert!(empty.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn generated_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(dir.path(), &SynthSpec::default()).unwrap();
        assert_eq!(m.len(), 40);
        let loaded = super::super::load_manifest(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.records(), m.records());
        assert_eq!(loaded.class_counts(), (20, 20));
    }
}
