//! Classification rates, mask IoU and cross-fold aggregation.
//!
//! Covid is the positive class. Rates whose denominator is zero are absent
//! (`None`), never reported as 0.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRates {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, pred: Label, truth: Label) {
        match (pred, truth) {
            (Label::Covid, Label::Covid) => self.tp += 1,
            (Label::Covid, Label::Healthy) => self.fp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Healthy, Label::Covid) => self.fn_ += 1,
        }
    }

    pub fn rates(&self) -> Option<ClassificationRates> {
        Some(ClassificationRates {
            accuracy: ratio(self.tp + self.tn, self.total())?,
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
        })
    }
}

pub fn classification_metrics(
    preds: &[Label],
    truths: &[Label],
) -> Result<(ConfusionMatrix, ClassificationRates)> {
    if preds.len() != truths.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(p, t);
    }
    let rates = cm.rates().expect("non-empty");
    Ok((cm, rates))
}

/// `|A ∩ B| / |A ∪ B|` over nonzero pixels; two empty masks score 1.
pub fn iou(pred: &GrayImage, truth: &GrayImage) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Metric(format!(
            "mask dims {:?} and {:?} differ",
            pred.dims(),
            truth.dims()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.pixels().iter().zip(truth.pixels()) {
        let (a, b) = (a != 0, b != 0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary mask of the first plane: 255 where `p >= threshold`, else 0.
pub fn threshold_mask<T: Scalar>(probabilities: &Tensor<T>, threshold: f64) -> GrayImage {
    let [_, _, h, w] = probabilities.dims();
    let t = T::lit(threshold);
    let pixels = probabilities
        .plane(0, 0)
        .iter()
        .map(|&p| if p >= t { 255 } else { 0 })
        .collect();
    GrayImage::new(w, h, pixels).expect("plane matches dims")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub samples: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Mean over samples that have a ground-truth mask.
    pub mean_iou: Option<f64>,
    pub iou_samples: usize,
}

impl FoldMetrics {
    pub fn from_predictions(
        fold: usize,
        preds: &[Label],
        truths: &[Label],
        ious: &[f64],
    ) -> Result<Self> {
        let (confusion, rates) = classification_metrics(preds, truths)?;
        let mean_iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        Ok(FoldMetrics {
            fold,
            samples: preds.len(),
            confusion,
            accuracy: rates.accuracy,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            mean_iou,
            iou_samples: ious.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two folds.
    pub std: Option<f64>,
    pub folds: usize,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std = mean
            .filter(|_| n > 1)
            .map(|m| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        MetricSummary {
            mean,
            std,
            folds: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: MetricSummary,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub mean_iou: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldMetrics>,
    pub aggregate: AggregateMetrics,
    pub notes: Vec<String>,
}

/// Unweighted mean and sample standard deviation across folds.
pub fn aggregate(folds: Vec<FoldMetrics>) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Metric("no folds to aggregate".into()));
    }
    let mut notes = Vec::new();
    let mut collect = |name: &str, get: &dyn Fn(&FoldMetrics) -> Option<f64>| {
        let mut vals = Vec::new();
        for f in &folds {
            match get(f) {
                Some(v) => vals.push(v),
                None => notes.push(format!(
                    "{name} undefined in fold {}; excluded from aggregate",
                    f.fold
                )),
            }
        }
        MetricSummary::of(&vals)
    };
    let aggregate = AggregateMetrics {
        accuracy: collect("accuracy", &|f| Some(f.accuracy)),
        sensitivity: collect("sensitivity", &|f| f.sensitivity),
        specificity: collect("specificity", &|f| f.specificity),
        mean_iou: collect("mean_iou", &|f| f.mean_iou),
    };
    Ok(EvalReport {
        folds,
        aggregate,
        notes,
    })
}
