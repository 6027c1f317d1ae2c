//! Frame-level orchestration: preprocess, classify, segment, overlay, report.

mod bench;
mod evaluate;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use bench::{bench, BenchReport, EndToEnd, LayerTiming};
pub use evaluate::{
    cross_validate, evaluate, CrossValidation, Evaluation, FoldPredictor, Prediction,
};

use crate::arch::{BoundModel, ModelGraph};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage, RgbImage, PROCESSING_SIZE};
use crate::metrics::{self, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;
use crate::training::{argmax, bind_backbone, HeadParams};
use crate::weights::WeightArchive;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub covid: f64,
    pub healthy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub preprocess: f64,
    pub classify: f64,
    pub segment: f64,
    pub overlay: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub id: String,
    pub label_pred: Label,
    pub probs: ClassProbabilities,
    pub overlay_path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iou: Option<f64>,
    pub timing_ms: StageTimings,
}

impl InferenceReport {
    /// Copy with all timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        InferenceReport {
            timing_ms: StageTimings::default(),
            ..self.clone()
        }
    }
}

const OVERLAY_ALPHA: f64 = 0.4;
const OVERLAY_COLOR: [f64; 3] = [255.0, 0.0, 0.0];

/// Grayscale as RGB with masked pixels blended 60/40 toward pure red.
pub fn render_overlay(gray: &GrayImage, mask: &GrayImage) -> Result<RgbImage> {
    if gray.dims() != mask.dims() {
        return Err(Error::Image(format!(
            "overlay mask {:?} does not match image {:?}",
            mask.dims(),
            gray.dims()
        )));
    }
    let mut out = RgbImage::from_gray(gray);
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            if mask.get(x, y) != 0 {
                let g = gray.get(x, y) as f64;
                let px = OVERLAY_COLOR
                    .map(|c| ((1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * c).round() as u8);
                out.set(x, y, px);
            }
        }
    }
    Ok(out)
}

/// Ground-truth mask brought to processing resolution, re-binarized at 128.
pub fn resize_mask(mask: &GrayImage) -> Result<GrayImage> {
    let mut m = imaging::resize_bilinear(mask, PROCESSING_SIZE, PROCESSING_SIZE)?;
    for p in m.pixels_mut() {
        *p = if *p >= 128 { 255 } else { 0 };
    }
    Ok(m)
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Bound classifier backbone, one head per fold (or a single head), and
/// the segmenter.
pub struct Pipeline<T: Scalar = f32> {
    backbone: BoundModel<T>,
    heads: Vec<HeadParams<T>>,
    segmenter: BoundModel<T>,
    pub threshold: f64,
}

impl<T: Scalar> Pipeline<T> {
    /// `cls_weights` holds backbone and head slots.
    pub fn new(
        cls_graph: &ModelGraph,
        cls_weights: &WeightArchive,
        seg_graph: &ModelGraph,
        seg_weights: &WeightArchive,
    ) -> Result<Self> {
        let head = HeadParams::from_archive(cls_graph, cls_weights)?;
        Self::with_heads(cls_graph, cls_weights, vec![head], seg_graph, seg_weights)
    }

    /// Shared backbone with a separate head per fold.
    pub fn with_heads(
        cls_graph: &ModelGraph,
        backbone_weights: &WeightArchive,
        heads: Vec<HeadParams<T>>,
        seg_graph: &ModelGraph,
        seg_weights: &WeightArchive,
    ) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::MissingParam("classifier head".into()));
        }
        let (c, h, w) = seg_graph.input_spec();
        if (h, w) != (PROCESSING_SIZE, PROCESSING_SIZE) || c != 1 {
            return Err(Error::Config(format!(
                "segmenter input must be (1, {PROCESSING_SIZE}, {PROCESSING_SIZE}), got {:?}",
                (c, h, w)
            )));
        }
        let (_, h, w) = cls_graph.input_spec();
        if (h, w) != (PROCESSING_SIZE, PROCESSING_SIZE) {
            return Err(Error::Config(format!(
                "classifier input must be {PROCESSING_SIZE}x{PROCESSING_SIZE}, got {h}x{w}"
            )));
        }
        Ok(Pipeline {
            backbone: bind_backbone(cls_graph, backbone_weights)?,
            heads,
            segmenter: BoundModel::new(seg_graph, seg_weights)?,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn fold_count(&self) -> usize {
        self.heads.len()
    }

    /// `(covid, healthy)` probabilities for a processed frame.
    pub fn classify(&self, fold: usize, frame: &GrayImage) -> Result<[f64; 2]> {
        let head = self
            .heads
            .get(fold)
            .ok_or_else(|| Error::MissingParam(format!("classifier head for fold {fold}")))?;
        let (channels, _, _) = self.backbone.graph().input_spec();
        let x = imaging::normalize::<T>(frame).replicate_channels(channels)?;
        let probs = head.forward(self.backbone.features(&x)?.as_slice())?.probs;
        if probs.len() != 2 {
            return Err(Error::Config(format!(
                "screening needs a 2-class head, got {} classes",
                probs.len()
            )));
        }
        let p = |i: usize| probs[i].to_f64().unwrap_or(f64::NAN);
        Ok([
            p(Label::Covid.class_index()),
            p(Label::Healthy.class_index()),
        ])
    }

    /// Binary mask at processing resolution.
    pub fn segment(&self, frame: &GrayImage) -> Result<GrayImage> {
        let probs = self.segmenter.forward(&imaging::normalize::<T>(frame))?;
        Ok(metrics::threshold_mask(&probs, self.threshold))
    }

    /// Full per-frame path; `overlay_path` receives the rendered overlay.
    pub fn infer_frame(
        &self,
        fold: usize,
        id: &str,
        frame: &GrayImage,
        truth_mask: Option<&GrayImage>,
        overlay_path: &Path,
    ) -> Result<InferenceReport> {
        let start = Instant::now();
        let (resized, _) = imaging::preprocess::<T>(frame)?;
        let preprocess = ms(start);
        let pred = self.predict(fold, &resized)?;
        finish_report(
            id,
            &resized,
            pred,
            truth_mask,
            overlay_path,
            start,
            preprocess,
        )
    }
}

fn label_of(probs: [f64; 2]) -> Label {
    Label::from_class_index(argmax(&probs)).expect("two classes")
}

pub(crate) fn finish_report(
    id: &str,
    resized: &GrayImage,
    pred: Prediction,
    truth_mask: Option<&GrayImage>,
    overlay_path: &Path,
    start: Instant,
    preprocess: f64,
) -> Result<InferenceReport> {
    let iou = truth_mask
        .map(|m| resize_mask(m).and_then(|m| metrics::iou(&pred.mask, &m)))
        .transpose()?;
    let t = Instant::now();
    let overlay = render_overlay(resized, &pred.mask)?;
    imaging::save_rgb(overlay_path, &overlay)?;
    let overlay_ms = ms(t);
    Ok(InferenceReport {
        id: id.to_string(),
        label_pred: label_of(pred.probs),
        probs: ClassProbabilities {
            covid: pred.probs[0],
            healthy: pred.probs[1],
        },
        overlay_path: overlay_path.to_path_buf(),
        iou,
        timing_ms: StageTimings {
            preprocess,
            classify: pred.classify_ms,
            segment: pred.segment_ms,
            overlay: overlay_ms,
            total: ms(start),
        },
    })
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Reads one frame, runs both networks on a single thread and writes
/// `<out_dir>/<stem>_overlay.<ext>` (`ext` is `ppm` or `png`).
pub fn infer_single<T: Scalar>(
    image_path: &Path,
    pipeline: &Pipeline<T>,
    truth_mask: Option<&Path>,
    out_dir: &Path,
    ext: &str,
) -> Result<InferenceReport> {
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let frame = imaging::load_gray(image_path)?;
    let mask = truth_mask.map(imaging::load_gray).transpose()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let overlay = out_dir.join(format!("{id}_overlay.{ext}"));
    single_threaded(|| pipeline.infer_frame(0, &id, &frame, mask.as_ref(), &overlay))?
}
