//! Offline training: fold-wise Adam training with best-epoch selection,
//! cross-validation, and credibility curves.
//!
//! Everything here is deterministic per `(config, fold plan)`: shuffles
//! and initializations draw from seeds derived with splitmix64, so fold
//! workers can run in any order (or in parallel, one model and tape per
//! fold) and still reproduce identical reports.

use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::autodiff::Tape;
use crate::gin::{
    classify, forward_logits, stage_params, ModelConfig, Normalizer, TsaModel,
};
use crate::graph::{FoldPlan, GraphSample};
use crate::linalg::Mat;
use crate::metrics::{
    compute_metrics, cr_curve_from_predictions, CrCurve, Metrics, NoCorrectPredictions,
};
use crate::optim::Adam;
use crate::rng::{child_seed, rng_from_seed};

/// Training hyperparameters. `model` fixes the architecture; the rest
/// drives the optimization loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of the training pool carved out for best-epoch selection
    /// inside `cross_validate`.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 42,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("class {0} absent from the training split")]
    ClassAbsent(u8),
    #[error("fold plan does not match dataset size")]
    PlanMismatch,
    #[error(transparent)]
    NoCorrectPredictions(#[from] NoCorrectPredictions),
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub predicted: u8,
    /// Softmax margin `|S0 - S1|`.
    pub margin: f64,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

/// Classify every sample and summarize.
pub fn evaluate(model: &TsaModel, samples: &[&GraphSample]) -> (Metrics, Vec<Prediction>) {
    let preds: Vec<Prediction> = samples
        .iter()
        .map(|s| {
            let (p, margin) = crate::gin::predict(model, s);
            Prediction {
                label: s.label,
                predicted: p,
                margin,
            }
        })
        .collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let predicted: Vec<u8> = preds.iter().map(|p| p.predicted).collect();
    (compute_metrics(&labels, &predicted), preds)
}

fn mean_batch_loss_and_grads(
    model: &TsaModel,
    batch: &[&GraphSample],
) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, model);
    let mut total = None;
    for sample in batch {
        let logits = forward_logits(&mut tape, model, &staged, sample);
        let loss = tape.softmax_cross_entropy(logits, sample.label as usize);
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss),
        });
    }
    let total = total.expect("non-empty batch");
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(mean);
    let loss_value = tape.data(mean)[(0, 0)];
    let grads = staged
        .ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(tape.data(id).rows(), tape.data(id).cols()))
        })
        .collect();
    (loss_value, grads)
}

/// Train on `train`, track accuracy on `val` after every epoch, and
/// return the best-epoch model with its validation metrics. With
/// `epochs = 0` the initialized model is evaluated as-is.
pub fn train_fold(
    train: &[&GraphSample],
    val: &[&GraphSample],
    cfg: &TrainConfig,
) -> Result<(TsaModel, Metrics), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    for class in [0u8, 1u8] {
        if !train.iter().any(|s| s.label == class) {
            return Err(TrainError::ClassAbsent(class));
        }
    }

    let mut model = TsaModel::init(&cfg.model, child_seed(cfg.seed, 0));
    model.normalizer = Normalizer::fit(train.iter().copied());

    let mut adam = Adam::new(cfg.lr, &model.params());
    let mut shuffle_rng = rng_from_seed(child_seed(cfg.seed, 1));

    let (mut best_model, mut best_metrics) = {
        let (m, _) = evaluate(&model, val);
        (model.clone(), m)
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&GraphSample> = chunk.iter().map(|&i| train[i]).collect();
            let (_, grads) = mean_batch_loss_and_grads(&model, &batch);
            let grad_refs: Vec<&Mat> = grads.iter().collect();
            let mut params = model.params_mut();
            adam.step(&mut params, &grad_refs);
        }
        let (metrics, _) = evaluate(&model, val);
        if metrics.acc > best_metrics.acc {
            best_metrics = metrics;
            best_model = model.clone();
        }
    }
    Ok((best_model, best_metrics))
}

/// Per-metric mean or spread across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricVector {
    pub acc: f64,
    pub f1: f64,
    pub tnr: f64,
    pub tpr: f64,
}

/// Fold-by-fold held-out metrics with their mean and population standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub per_fold: Vec<Metrics>,
    pub mean: MetricVector,
    pub std: MetricVector,
}

/// Mean and population standard deviation of the four rates over folds.
pub fn summarize_folds(per_fold: &[Metrics]) -> (MetricVector, MetricVector) {
    let k = per_fold.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| per_fold.iter().map(|m| f(m)).sum::<f64>() / k;
    let std = |f: &dyn Fn(&Metrics) -> f64, mu: f64| {
        libm::sqrt(per_fold.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / k)
    };
    let acc = mean(&|m: &Metrics| m.acc);
    let f1 = mean(&|m: &Metrics| m.f1);
    let tnr = mean(&|m: &Metrics| m.tnr);
    let tpr = mean(&|m: &Metrics| m.tpr);
    (
        MetricVector { acc, f1, tnr, tpr },
        MetricVector {
            acc: std(&|m: &Metrics| m.acc, acc),
            f1: std(&|m: &Metrics| m.f1, f1),
            tnr: std(&|m: &Metrics| m.tnr, tnr),
            tpr: std(&|m: &Metrics| m.tpr, tpr),
        },
    )
}

/// Stratified train/validation split of the index list, deterministic
/// per seed. Guarantees a non-empty validation set.
pub fn split_train_val(
    indices: &[usize],
    labels: &[u8],
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut rng = rng_from_seed(seed);
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * val_fraction) as usize)
            .clamp(1, idx.len().saturating_sub(1).max(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    (train, val)
}

/// Run one train/evaluate round per fold of the plan. The held-out fold
/// is used only for the reported metrics; best-epoch selection uses a
/// validation split carved from the remaining folds.
pub fn cross_validate(
    samples: &[GraphSample],
    plan: &FoldPlan,
    cfg: &TrainConfig,
) -> Result<CvReport, TrainError> {
    if plan.assignments.len() != samples.len() {
        return Err(TrainError::PlanMismatch);
    }
    let mut per_fold = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let (_, metrics) = run_fold(samples, plan, cfg, fold)?;
        per_fold.push(metrics);
    }
    let (mean, std) = summarize_folds(&per_fold);
    Ok(CvReport {
        per_fold,
        mean,
        std,
    })
}

/// Train the model for one fold of the plan and evaluate it on the
/// held-out fold. Exposed so callers can run folds in parallel and
/// assemble the same report `cross_validate` would produce.
pub fn run_fold(
    samples: &[GraphSample],
    plan: &FoldPlan,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(TsaModel, Metrics), TrainError> {
    if plan.assignments.len() != samples.len() {
        return Err(TrainError::PlanMismatch);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let test_idx = plan.fold_indices(fold);
    let pool_idx = plan.complement_indices(fold);
    if test_idx.is_empty() || pool_idx.is_empty() {
        return Err(TrainError::EmptySplit("fold"));
    }
    let fold_seed = child_seed(cfg.seed, 1000 + fold as u64);
    let (train_idx, val_idx) =
        split_train_val(&pool_idx, &labels, cfg.val_fraction, fold_seed);
    let train: Vec<&GraphSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&GraphSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let fold_cfg = TrainConfig {
        seed: fold_seed,
        ..cfg.clone()
    };
    let (model, _) = train_fold(&train, &val, &fold_cfg)?;
    let test: Vec<&GraphSample> = test_idx.iter().map(|&i| &samples[i]).collect();
    let (metrics, _) = evaluate(&model, &test);
    Ok((model, metrics))
}

/// Credibility curve of a model over a sample set.
pub fn compute_cr_curve(
    model: &TsaModel,
    samples: &[&GraphSample],
    thresholds: &[f64],
) -> Result<CrCurve, TrainError> {
    let correct_margin: Vec<(bool, f64)> = samples
        .iter()
        .map(|s| {
            let (s0, s1) = classify(model, s);
            let predicted = u8::from(s1 >= s0);
            (predicted == s.label, libm::fabs(s0 - s1))
        })
        .collect();
    let correct: Vec<bool> = correct_margin.iter().map(|&(c, _)| c).collect();
    let margins: Vec<f64> = correct_margin.iter().map(|&(_, m)| m).collect();
    Ok(cr_curve_from_predictions(&correct, &margins, thresholds)?)
}
