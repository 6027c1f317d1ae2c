//! Fine-tuning of the classifier head on frozen backbone features.
//!
//! The head is `dense -> relu -> dense -> softmax` trained with softmax
//! cross-entropy and SGD with momentum. Backbone features are computed once
//! per (image, augmentation variant) and reused for every epoch and fold.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{
    init_weights_with_prefix, validate_weights, BoundModel, Init, LayerKind, ModelGraph,
    HEAD_PREFIX,
};
use crate::dataset::{DatasetManifest, FoldPlan, Label};
use crate::error::{Error, Result};
use crate::imaging::{self, AugmentConfig};
use crate::metrics::{self, EvalReport, FoldMetrics};
use crate::rng;
use crate::scalar::Scalar;
use crate::weights::{WeightArchive, WeightTensor};

pub const FC1: &str = "head.fc1";
pub const FC2: &str = "head.fc2";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Expansion applied to training images; `None` trains on originals only.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} not in [0,1)",
                self.momentum
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// `-ln(max(p[true_class], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &[T], true_class: usize) -> Result<f64> {
    let p = probs.get(true_class).ok_or_else(|| {
        Error::Training(format!(
            "class {true_class} out of range for {} probabilities",
            probs.len()
        ))
    })?;
    Ok(-p.to_f64().unwrap_or(0.0).max(1e-12).ln())
}

/// Head parameters; also used for gradients and momentum buffers.
/// Weight matrices are row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T: Scalar = f32> {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Intermediate values of one head forward pass.
#[derive(Debug, Clone)]
pub struct HeadActivations<T> {
    pub pre: Vec<T>,
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        HeadParams {
            inputs,
            hidden,
            classes,
            w1: vec![T::zero(); hidden * inputs],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); classes * hidden],
            b2: vec![T::zero(); classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.hidden, self.classes)
    }

    /// `(inputs, hidden, classes)` of the head layers in `graph`.
    pub fn shape_of(graph: &ModelGraph) -> Result<(usize, usize, usize)> {
        let dense = |name: &str| {
            graph
                .layers()
                .iter()
                .find(|l| l.name == name)
                .and_then(|l| match l.kind {
                    LayerKind::Dense {
                        in_features,
                        out_features,
                    } => Some((in_features, out_features)),
                    _ => None,
                })
                .ok_or_else(|| Error::Config(format!("graph has no dense layer `{name}`")))
        };
        let (inputs, hidden) = dense(FC1)?;
        let (h2, classes) = dense(FC2)?;
        if h2 != hidden {
            return Err(Error::Config(format!(
                "{FC2} expects {h2} inputs but {FC1} produces {hidden}"
            )));
        }
        Ok((inputs, hidden, classes))
    }

    /// He-uniform weights with zero biases, keyed by `seed`.
    pub fn init(graph: &ModelGraph, seed: u64) -> Result<Self> {
        Self::shape_of(graph)?;
        Self::from_archive(
            graph,
            &init_weights_with_prefix(graph, Init::HeUniform, seed, HEAD_PREFIX),
        )
    }

    pub fn from_archive(graph: &ModelGraph, archive: &WeightArchive) -> Result<Self> {
        let (inputs, hidden, classes) = Self::shape_of(graph)?;
        let take = |name: String, dims: Vec<usize>| -> Result<Vec<T>> {
            let t = archive
                .get(&name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.dims != dims {
                return Err(Error::ParamShape {
                    name,
                    expected: dims,
                    found: t.dims.clone(),
                });
            }
            Ok(t.values.iter().map(|&v| T::from_storage(v)).collect())
        };
        Ok(HeadParams {
            inputs,
            hidden,
            classes,
            w1: take(format!("{FC1}.weight"), vec![hidden, inputs])?,
            b1: take(format!("{FC1}.bias"), vec![hidden])?,
            w2: take(format!("{FC2}.weight"), vec![classes, hidden])?,
            b2: take(format!("{FC2}.bias"), vec![classes])?,
        })
    }

    /// Archive holding only the four `head.*` slots.
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        let put = |a: &mut WeightArchive, name: String, dims: Vec<usize>, v: &[T]| {
            let values = v.iter().map(|x| x.to_storage()).collect();
            a.insert(
                name,
                WeightTensor::new(dims, values).expect("sized by construction"),
            )
            .expect("distinct names");
        };
        put(
            &mut a,
            format!("{FC1}.weight"),
            vec![self.hidden, self.inputs],
            &self.w1,
        );
        put(&mut a, format!("{FC1}.bias"), vec![self.hidden], &self.b1);
        put(
            &mut a,
            format!("{FC2}.weight"),
            vec![self.classes, self.hidden],
            &self.w2,
        );
        put(&mut a, format!("{FC2}.bias"), vec![self.classes], &self.b2);
        a
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.inputs, self.hidden, self.classes) == (other.inputs, other.hidden, other.classes)
            && self.w1.len() == other.w1.len()
            && self.b1.len() == other.b1.len()
            && self.w2.len() == other.w2.len()
            && self.b2.len() == other.b2.len()
    }

    fn slices_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn slices(&self) -> [&Vec<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn forward(&self, features: &[T]) -> Result<HeadActivations<T>> {
        if features.len() != self.inputs {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.inputs,
                features.len()
            )));
        }
        let pre = crate::tensor::dense(features, &self.w1, &self.b1)?;
        let hidden: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let logits = crate::tensor::dense(&hidden, &self.w2, &self.b2)?;
        Ok(HeadActivations {
            pre,
            hidden,
            probs: crate::tensor::softmax(&logits),
        })
    }

    pub fn predict(&self, features: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(features)?.probs))
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Exact gradient of the cross-entropy loss for one sample, plus the loss.
pub fn head_gradients<T: Scalar>(
    features: &[T],
    params: &HeadParams<T>,
    true_class: usize,
) -> Result<(HeadParams<T>, f64)> {
    let act = params.forward(features)?;
    let loss = cross_entropy(&act.probs, true_class)?;
    let mut g = params.zeros_like();
    let dz: Vec<T> = act
        .probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == true_class { p - T::one() } else { p })
        .collect();
    let (n_in, n_hid) = (params.inputs, params.hidden);
    let mut dh = vec![T::zero(); n_hid];
    for (k, &d) in dz.iter().enumerate() {
        g.b2[k] = d;
        let row = &params.w2[k * n_hid..(k + 1) * n_hid];
        let grow = &mut g.w2[k * n_hid..(k + 1) * n_hid];
        for j in 0..n_hid {
            grow[j] = d * act.hidden[j];
            dh[j] = dh[j] + row[j] * d;
        }
    }
    for (j, &dhj) in dh.iter().enumerate() {
        let d = if act.pre[j] > T::zero() {
            dhj
        } else {
            T::zero()
        };
        g.b1[j] = d;
        let grow = &mut g.w1[j * n_in..(j + 1) * n_in];
        for (gw, &x) in grow.iter_mut().zip(features) {
            *gw = d * x;
        }
    }
    Ok((g, loss))
}

/// Momentum buffers, one per head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T: Scalar = f32> {
    pub velocity: HeadParams<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &HeadParams<T>) -> Self {
        SgdState {
            velocity: params.zeros_like(),
        }
    }
}

/// `v = momentum * v - lr * g; p += v`.
pub fn sgd_step<T: Scalar>(
    params: &mut HeadParams<T>,
    grads: &HeadParams<T>,
    state: &mut SgdState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.velocity) {
        return Err(Error::Shape(
            "gradient or velocity shape differs from head".into(),
        ));
    }
    let mu = T::lit(cfg.momentum);
    let lr = T::lit(cfg.learning_rate);
    for ((p, g), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.velocity.slices_mut())
    {
        for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = mu * *v - lr * g;
            *p = *p + *v;
        }
    }
    Ok(())
}

/// Mean gradient and mean loss over a batch of `(features, class)` rows.
pub fn batch_gradients<T: Scalar>(
    params: &HeadParams<T>,
    batch: &[(&[T], usize)],
) -> Result<(HeadParams<T>, f64)> {
    let mut acc = params.zeros_like();
    let mut loss = 0.0;
    for &(x, y) in batch {
        let (g, l) = head_gradients(x, params, y)?;
        loss += l;
        for (a, g) in acc.slices_mut().into_iter().zip(g.slices()) {
            for (a, &g) in a.iter_mut().zip(g.iter()) {
                *a = *a + g;
            }
        }
    }
    let scale = T::lit(1.0 / batch.len().max(1) as f64);
    for a in acc.slices_mut() {
        for v in a.iter_mut() {
            *v = *v * scale;
        }
    }
    Ok((acc, loss / batch.len().max(1) as f64))
}

/// Mean loss over `rows` in the given order.
pub fn mean_loss<T: Scalar>(params: &HeadParams<T>, rows: &[(&[T], usize)]) -> Result<f64> {
    let mut total = 0.0;
    for &(x, y) in rows {
        total += cross_entropy(&params.forward(x)?.probs, y)?;
    }
    Ok(total / rows.len().max(1) as f64)
}

pub fn accuracy<T: Scalar>(params: &HeadParams<T>, rows: &[(&[T], usize)]) -> Result<f64> {
    let mut hits = 0usize;
    for &(x, y) in rows {
        hits += (params.predict(x)? == y) as usize;
    }
    Ok(hits as f64 / rows.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Scalar> {
    pub params: HeadParams<T>,
    /// Mean training loss before the first epoch, then after each epoch.
    pub losses: Vec<f64>,
}

/// Minibatch SGD over `rows`; each epoch visits them in a fresh shuffled
/// order drawn from `cfg.seed`.
pub fn fit_head<T: Scalar>(
    rows: &[(&[T], usize)],
    init: HeadParams<T>,
    cfg: &TrainConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    let mut params = init;
    let mut state = SgdState::new(&params);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut r = rng::pcg32(cfg.seed);
    let mut losses = vec![mean_loss(&params, rows)?];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| rows[i]));
            let (g, _) = batch_gradients(&params, &batch)?;
            sgd_step(&mut params, &g, &mut state, cfg)?;
        }
        losses.push(mean_loss(&params, rows)?);
    }
    Ok(FitResult { params, losses })
}

/// Backbone features of one image variant, tagged with its origin.
#[derive(Debug, Clone)]
pub struct FeatureRow<T> {
    pub sample: usize,
    pub variant: usize,
    pub fold: usize,
    pub class: usize,
    pub features: Vec<T>,
}

/// Computes features for every record (and, with augmentation, every
/// variant). Variants inherit the fold of their source image.
pub fn precompute_features<T: Scalar>(
    manifest: &DatasetManifest,
    folds: &FoldPlan,
    backbone: &BoundModel<T>,
    augment: Option<&AugmentConfig>,
    seed: u64,
) -> Result<Vec<FeatureRow<T>>> {
    folds.validate(manifest)?;
    let (channels, _, _) = backbone.graph().input_spec();
    let per_image: Vec<Result<Vec<FeatureRow<T>>>> = manifest
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let (resized, _) = imaging::preprocess::<T>(&manifest.load_image(rec)?)?;
            let variants = match augment {
                Some(cfg) => imaging::augment_keyed(&rec.id, &resized, None, cfg, seed)?
                    .into_iter()
                    .map(|a| a.image)
                    .collect(),
                None => vec![resized],
            };
            let fold = folds.fold_of(&rec.video_id).expect("validated plan");
            let mut rows = Vec::with_capacity(variants.len());
            for (v, img) in variants.iter().enumerate() {
                let x = imaging::normalize::<T>(img).replicate_channels(channels)?;
                rows.push(FeatureRow {
                    sample: i,
                    variant: v,
                    fold,
                    class: rec.label.class_index(),
                    features: backbone.features(&x)?.into_vec(),
                });
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_image {
        out.extend(rows?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FoldTraining<T: Scalar> {
    pub fold: usize,
    pub head: HeadParams<T>,
    pub losses: Vec<f64>,
    pub train_rows: usize,
    pub train_accuracy: f64,
    /// Ids of every sample whose features produced a gradient.
    pub contributors: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub folds: Vec<FoldTraining<T>>,
    /// Held-out classification metrics of each fold's head.
    pub report: EvalReport,
}

/// Builds a bound backbone from `weights`, filling absent head slots with
/// zeros so the whole graph validates.
pub fn bind_backbone<T: Scalar>(
    graph: &ModelGraph,
    weights: &WeightArchive,
) -> Result<BoundModel<T>> {
    let filled = init_weights_with_prefix(graph, Init::Zeros, 0, HEAD_PREFIX).merged(weights);
    validate_weights(graph, &filled)?;
    BoundModel::new(graph, &filled)
}

/// Cross-validated head training: for each fold, fit on the other folds'
/// (augmented) samples and score the untouched held-out originals.
pub fn train_head<T: Scalar>(
    manifest: &DatasetManifest,
    folds: &FoldPlan,
    graph: &ModelGraph,
    weights: &WeightArchive,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let backbone = bind_backbone::<T>(graph, weights)?;
    let rows = precompute_features(manifest, folds, &backbone, cfg.augment.as_ref(), cfg.seed)?;
    train_on_rows(manifest, folds, graph, &rows, cfg)
}

/// The fold loop of [`train_head`] on already computed features.
pub fn train_on_rows<T: Scalar>(
    manifest: &DatasetManifest,
    folds: &FoldPlan,
    graph: &ModelGraph,
    rows: &[FeatureRow<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let results: Vec<Result<(FoldTraining<T>, FoldMetrics)>> = (0..folds.k)
        .into_par_iter()
        .map(|fold| train_fold(manifest, graph, rows, fold, cfg))
        .collect();
    let mut trained = Vec::with_capacity(folds.k);
    let mut metrics = Vec::with_capacity(folds.k);
    for r in results {
        let (t, m) = r?;
        // Cross-check the access log against the plan itself.
        if let Some(id) = t.contributors.iter().find(|id| {
            manifest
                .records()
                .iter()
                .any(|rec| &rec.id == *id && folds.fold_of(&rec.video_id) == Some(t.fold))
        }) {
            return Err(Error::Training(format!(
                "held-out sample `{id}` contributed to the head of fold {}",
                t.fold
            )));
        }
        trained.push(t);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        folds: trained,
        report: metrics::aggregate(metrics)?,
    })
}

fn train_fold<T: Scalar>(
    manifest: &DatasetManifest,
    graph: &ModelGraph,
    rows: &[FeatureRow<T>],
    fold: usize,
    cfg: &TrainConfig,
) -> Result<(FoldTraining<T>, FoldMetrics)> {
    let train: Vec<&FeatureRow<T>> = rows.iter().filter(|r| r.fold != fold).collect();
    if train.is_empty() {
        return Err(Error::Training(format!(
            "training set for fold {fold} is empty"
        )));
    }
    let contributors = train
        .iter()
        .map(|r| manifest.records()[r.sample].id.clone())
        .collect();
    let train_xy: Vec<(&[T], usize)> = train.iter().map(|r| (&r.features[..], r.class)).collect();
    let fold_cfg = TrainConfig {
        seed: rng::keyed_seed(cfg.seed, &format!("fold{fold}")),
        ..cfg.clone()
    };
    let init = HeadParams::init(graph, fold_cfg.seed)?;
    let fit = fit_head(&train_xy, init, &fold_cfg)?;
    let train_accuracy = accuracy(&fit.params, &train_xy)?;
    log::info!(
        "fold {fold}: {} training rows, loss {:.4} -> {:.4}, train accuracy {:.3}",
        train_xy.len(),
        fit.losses[0],
        fit.losses.last().copied().unwrap_or(f64::NAN),
        train_accuracy
    );

    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for r in rows.iter().filter(|r| r.fold == fold && r.variant == 0) {
        let p = fit.params.predict(&r.features)?;
        preds.push(Label::from_class_index(p).unwrap_or(Label::Healthy));
        truths.push(Label::from_class_index(r.class).unwrap_or(Label::Healthy));
    }
    let fold_metrics = if preds.is_empty() {
        return Err(Error::Training(format!(
            "fold {fold} has no held-out samples"
        )));
    } else {
        FoldMetrics::from_predictions(fold, &preds, &truths, &[])?
    };
    Ok((
        FoldTraining {
            fold,
            head: fit.params,
            losses: fit.losses,
            train_rows: train_xy.len(),
            train_accuracy,
            contributors,
        },
        fold_metrics,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_rows: usize,
    pub train_accuracy: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub folds: Vec<FoldSummary>,
    pub held_out: EvalReport,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn summary(&self) -> TrainingSummary {
        TrainingSummary {
            folds: self
                .folds
                .iter()
                .map(|f| FoldSummary {
                    fold: f.fold,
                    train_rows: f.train_rows,
                    train_accuracy: f.train_accuracy,
                    losses: f.losses.clone(),
                })
                .collect(),
            held_out: self.report.clone(),
        }
    }

    /// Smallest per-fold training accuracy.
    pub fn min_train_accuracy(&self) -> f64 {
        self.folds
            .iter()
            .map(|f| f.train_accuracy)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn head_path(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("head_fold{fold}.lsw"))
}

/// Writes one `head.*`-only archive per fold.
pub fn save_heads<T: Scalar>(outcome: &TrainOutcome<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    outcome
        .folds
        .iter()
        .map(|f| {
            let p = head_path(dir, f.fold);
            f.head.to_archive().save(&p)?;
            Ok(p)
        })
        .collect()
}
