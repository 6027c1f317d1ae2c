use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish_report, ms, InferenceReport, Pipeline};
use crate::arch::ModelGraph;
use crate::dataset::{DatasetManifest, FoldPlan};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};
use crate::metrics::{self, EvalReport, FoldMetrics};
use crate::scalar::Scalar;
use crate::training::{self, TrainConfig, TrainOutcome};
use crate::weights::WeightArchive;

/// Model output for one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `(covid, healthy)`.
    pub probs: [f64; 2],
    /// Binary mask at processing resolution.
    pub mask: GrayImage,
    pub classify_ms: f64,
    pub segment_ms: f64,
}

/// Source of per-fold predictions. [`Pipeline`] is the real implementation;
/// tests can substitute fixed answers.
pub trait FoldPredictor: Sync {
    fn fold_count(&self) -> usize;
    fn predict(&self, fold: usize, frame: &GrayImage) -> Result<Prediction>;
}

impl<T: Scalar> FoldPredictor for Pipeline<T> {
    fn fold_count(&self) -> usize {
        Pipeline::fold_count(self)
    }

    fn predict(&self, fold: usize, frame: &GrayImage) -> Result<Prediction> {
        let t = Instant::now();
        let probs = self.classify(fold, frame)?;
        let classify_ms = ms(t);
        let t = Instant::now();
        let mask = self.segment(frame)?;
        Ok(Prediction {
            probs,
            mask,
            classify_ms,
            segment_ms: ms(t),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    /// One entry per manifest record, in manifest order.
    pub samples: Vec<InferenceReport>,
}

pub const REPORT_FILE: &str = "evaluation.json";

/// Scores every record with the head of its own fold, writes overlays to
/// `<out_dir>/overlays/` and the combined report to `<out_dir>/evaluation.json`.
pub fn evaluate(
    manifest: &DatasetManifest,
    folds: &FoldPlan,
    predictor: &dyn FoldPredictor,
    out_dir: &Path,
    ext: &str,
) -> Result<Evaluation> {
    folds.validate(manifest)?;
    if predictor.fold_count() < folds.k {
        return Err(Error::MissingParam(format!(
            "classifier heads for {} folds, have {}",
            folds.k,
            predictor.fold_count()
        )));
    }
    let overlay_dir = out_dir.join("overlays");
    fs::create_dir_all(&overlay_dir)
        .map_err(|e| Error::io(format!("creating {}", overlay_dir.display()), e))?;

    let samples: Vec<InferenceReport> = manifest
        .records()
        .par_iter()
        .map(|rec| {
            let fold = folds.fold_of(&rec.video_id).expect("validated plan");
            let frame = manifest.load_image(rec)?;
            let truth = manifest.load_mask(rec)?;
            let start = Instant::now();
            let (resized, _) = imaging::preprocess::<f32>(&frame)?;
            let preprocess = ms(start);
            let pred = predictor.predict(fold, &resized)?;
            let overlay = overlay_dir.join(format!("{}.{ext}", rec.id));
            finish_report(
                &rec.id,
                &resized,
                pred,
                truth.as_ref(),
                &overlay,
                start,
                preprocess,
            )
        })
        .collect::<Result<_>>()?;

    let mut per_fold = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (mut preds, mut truths, mut ious) = (Vec::new(), Vec::new(), Vec::new());
        for (rec, s) in manifest.records().iter().zip(&samples) {
            if folds.fold_of(&rec.video_id) == Some(fold) {
                preds.push(s.label_pred);
                truths.push(rec.label);
                ious.extend(s.iou);
            }
        }
        per_fold.push(FoldMetrics::from_predictions(fold, &preds, &truths, &ious)?);
    }
    let evaluation = Evaluation {
        report: metrics::aggregate(per_fold)?,
        samples,
    };
    let path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&evaluation)?;
    fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(evaluation)
}

pub struct CrossValidation<T: Scalar> {
    pub training: TrainOutcome<T>,
    pub head_paths: Vec<PathBuf>,
    pub evaluation: Evaluation,
}

/// Trains one head per fold on frozen backbone features, saves the heads
/// under `<out_dir>/heads/`, then evaluates every record with its fold's head.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate<T: Scalar>(
    manifest: &DatasetManifest,
    folds: &FoldPlan,
    cls_graph: &ModelGraph,
    backbone_weights: &WeightArchive,
    seg_graph: &ModelGraph,
    seg_weights: &WeightArchive,
    cfg: &TrainConfig,
    out_dir: &Path,
    ext: &str,
) -> Result<CrossValidation<T>> {
    let training = training::train_head::<T>(manifest, folds, cls_graph, backbone_weights, cfg)?;
    let head_paths = training::save_heads(&training, &out_dir.join("heads"))?;
    let heads = training.folds.iter().map(|f| f.head.clone()).collect();
    let pipeline =
        Pipeline::<T>::with_heads(cls_graph, backbone_weights, heads, seg_graph, seg_weights)?;
    let evaluation = evaluate(manifest, folds, &pipeline, out_dir, ext)?;
    Ok(CrossValidation {
        training,
        head_paths,
        evaluation,
    })
}
