//! GIN message passing and the two-class readout head.
//!
//! Structure-aware stage: k layers of `h <- MLP((1+eps) h_v + sum_u h_u)`
//! realized densely as `MLP((A + (1+eps) I) H)` with a two-layer MLP and
//! a ReLU between. We run GIN-0 (eps fixed at 0). The readout pools the
//! final-layer embeddings only, then a single linear map produces the two
//! stability logits.
//!
//! Features are z-scored with statistics fitted on the training fold and
//! applied identically at inference; the normalizer travels with the
//! model checkpoint.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{softmax_row, Tape, ValueId};
use crate::graph::GraphSample;
use crate::linalg::Mat;
use crate::pooling;
use crate::rng::rng_from_seed;

/// Readout selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Sum,
    Dal,
}

impl core::fmt::Display for Pooling {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
            Pooling::Dal => "dal",
        })
    }
}

impl core::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            "dal" => Ok(Pooling::Dal),
            other => Err(alloc::format!("unknown pooling `{other}` (mean|sum|dal)")),
        }
    }
}

/// Per-feature z-score statistics from a training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Identity normalizer of the given width.
    pub fn identity(dim: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit mean and standard deviation per feature column over all nodes
    /// of all samples. Constant columns get std 1 so they pass through
    /// centered instead of exploding.
    pub fn fit<'a>(samples: impl Iterator<Item = &'a GraphSample>) -> Normalizer {
        let mut count = 0usize;
        let mut sum = vec![0.0f64; 2];
        let mut sumsq = vec![0.0f64; 2];
        for s in samples {
            for i in 0..s.n {
                for j in 0..2 {
                    let v = s.features[(i, j)];
                    sum[j] += v;
                    sumsq[j] += v * v;
                }
            }
            count += s.n;
        }
        assert!(count > 0, "cannot fit a normalizer on an empty set");
        let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        let std: Vec<f64> = (0..2)
            .map(|j| {
                let var = (sumsq[j] / count as f64 - mean[j] * mean[j]).max(0.0);
                let s = libm::sqrt(var);
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, features: &Mat) -> Mat {
        let mut out = features.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out[(i, j)] = (out[(i, j)] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// One GIN layer: fixed epsilon plus a two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct GinLayer {
    pub epsilon: f64,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

/// Model shape knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epsilon: f64,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: 2,
            hidden: 64,
            layers: 4,
            epsilon: 0.0,
            pooling: Pooling::Dal,
        }
    }
}

/// GIN layers, pooling choice, classifier head, and feature normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TsaModel {
    pub layers: Vec<GinLayer>,
    pub pooling: Pooling,
    pub fc_w: Mat,
    pub fc_b: Mat,
    pub normalizer: Normalizer,
}

/// He-style uniform init: `U[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
fn init_weight<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let bound = libm::sqrt(6.0 / rows as f64);
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
    )
}

impl TsaModel {
    /// Deterministic seeded initialization; biases start at zero and the
    /// normalizer is the identity until a trainer fits it.
    pub fn init(cfg: &ModelConfig, seed: u64) -> TsaModel {
        assert!(cfg.layers >= 1, "need at least one GIN layer");
        assert!(cfg.hidden >= 1 && cfg.in_dim >= 1);
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.in_dim } else { cfg.hidden };
            layers.push(GinLayer {
                epsilon: cfg.epsilon,
                w1: init_weight(&mut rng, input, cfg.hidden),
                b1: Mat::zeros(1, cfg.hidden),
                w2: init_weight(&mut rng, cfg.hidden, cfg.hidden),
                b2: Mat::zeros(1, cfg.hidden),
            });
        }
        TsaModel {
            layers,
            pooling: cfg.pooling,
            fc_w: init_weight(&mut rng, cfg.hidden, 2),
            fc_b: Mat::zeros(1, 2),
            normalizer: Normalizer::identity(cfg.in_dim),
        }
    }

    /// Embedding width produced by the last layer.
    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w2.cols()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w1.rows()
    }

    /// Parameters in a fixed order (layer by layer, then the head).
    pub fn params(&self) -> Vec<&Mat> {
        let mut p = Vec::with_capacity(self.layers.len() * 4 + 2);
        for l in &self.layers {
            p.push(&l.w1);
            p.push(&l.b1);
            p.push(&l.w2);
            p.push(&l.b2);
        }
        p.push(&self.fc_w);
        p.push(&self.fc_b);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut p = Vec::with_capacity(self.layers.len() * 4 + 2);
        for l in self.layers.iter_mut() {
            p.push(&mut l.w1);
            p.push(&mut l.b1);
            p.push(&mut l.w2);
            p.push(&mut l.b2);
        }
        p.push(&mut self.fc_w);
        p.push(&mut self.fc_b);
        p
    }
}

/// Model parameters staged onto a tape as leaves, in [`TsaModel::params`]
/// order, so one batch can reuse them across samples and the trainer can
/// read their gradients back.
pub struct StagedParams {
    pub ids: Vec<ValueId>,
}

pub fn stage_params(tape: &mut Tape, model: &TsaModel) -> StagedParams {
    let ids = model.params().into_iter().map(|m| tape.leaf(m.clone())).collect();
    StagedParams { ids }
}

/// Forward pass to the two logits for one sample, using staged params.
pub fn forward_logits(
    tape: &mut Tape,
    model: &TsaModel,
    staged: &StagedParams,
    sample: &GraphSample,
) -> ValueId {
    let x = model.normalizer.apply(&sample.features);
    let mut h = tape.leaf(x);
    let mut pid = 0;
    for layer in &model.layers {
        let agg = tape.leaf(sample.aggregation_matrix(layer.epsilon));
        let s = tape.matmul(agg, h);
        let (w1, b1, w2, b2) = (
            staged.ids[pid],
            staged.ids[pid + 1],
            staged.ids[pid + 2],
            staged.ids[pid + 3],
        );
        pid += 4;
        let t = tape.matmul(s, w1);
        let t = tape.add_row(t, b1);
        let t = tape.relu(t);
        let t = tape.matmul(t, w2);
        h = tape.add_row(t, b2);
    }
    let pooled = match model.pooling {
        Pooling::Mean => pooling::mean_pool(tape, h),
        Pooling::Sum => pooling::sum_pool(tape, h),
        Pooling::Dal => pooling::dal_pool(tape, h).z,
    };
    let (fc_w, fc_b) = (staged.ids[pid], staged.ids[pid + 1]);
    let logits = tape.matmul(pooled, fc_w);
    tape.add(logits, fc_b)
}

/// Node embeddings after the final GIN layer (inference only).
pub fn gin_forward(model: &TsaModel, sample: &GraphSample) -> Mat {
    let mut tape = Tape::new();
    let x = model.normalizer.apply(&sample.features);
    let mut h = tape.leaf(x);
    for layer in &model.layers {
        let agg = tape.leaf(sample.aggregation_matrix(layer.epsilon));
        let s = tape.matmul(agg, h);
        let w1 = tape.leaf(layer.w1.clone());
        let b1 = tape.leaf(layer.b1.clone());
        let w2 = tape.leaf(layer.w2.clone());
        let b2 = tape.leaf(layer.b2.clone());
        let t = tape.matmul(s, w1);
        let t = tape.add_row(t, b1);
        let t = tape.relu(t);
        let t = tape.matmul(t, w2);
        h = tape.add_row(t, b2);
    }
    tape.data(h).clone()
}

/// Class probabilities `(S0, S1)` for one sample.
pub fn classify(model: &TsaModel, sample: &GraphSample) -> (f64, f64) {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, model);
    let logits = forward_logits(&mut tape, model, &staged, sample);
    let probs = softmax_row(tape.data(logits).row(0));
    (probs[0], probs[1])
}

/// Predicted label and softmax margin `|S0 - S1|`.
pub fn predict(model: &TsaModel, sample: &GraphSample) -> (u8, f64) {
    let (s0, s1) = classify(model, sample);
    (u8::from(s1 >= s0), libm::fabs(s0 - s1))
}
