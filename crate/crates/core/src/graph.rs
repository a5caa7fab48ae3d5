//! Graph samples and stratified fold plans.
//!
//! One sample per simulated scenario: the bus topology as an undirected
//! edge list (parallel circuits collapse to one edge), an n-by-2 feature
//! matrix holding the per-bus active/reactive injections at the clearing
//! instant, and the TSI label.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::dynamics::{StabilityVerdict, Trajectory};
use crate::grid::GridCase;
use crate::linalg::Mat;
use crate::rng::rng_from_seed;

/// Scenario provenance carried with each sample. `seed` is enough to
/// regenerate the full scenario deterministically; the rest is kept for
/// reporting without re-simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMeta {
    pub seed: u64,
    pub line_index: u32,
    /// 0 = from terminal, 1 = to terminal.
    pub faulted_end: u8,
    pub clear_time: f64,
    pub tsi: f64,
}

/// One labeled training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub n: usize,
    /// Undirected edges as `(low, high)` bus-index pairs, sorted, no
    /// duplicates, no self-loops.
    pub edges: Vec<(u32, u32)>,
    /// n-by-2 features: column 0 active power, column 1 reactive power.
    pub features: Mat,
    pub label: u8,
    pub meta: SampleMeta,
}

impl GraphSample {
    /// Aggregation operator `A + (1 + eps) I` as a dense matrix.
    pub fn aggregation_matrix(&self, epsilon: f64) -> Mat {
        let mut a = Mat::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u as usize, v as usize)] = 1.0;
            a[(v as usize, u as usize)] = 1.0;
        }
        for i in 0..self.n {
            a[(i, i)] = 1.0 + epsilon;
        }
        a
    }

    /// Structural sanity check used by the dataset reader.
    pub fn check(&self) -> bool {
        self.features.rows() == self.n
            && self.features.cols() == 2
            && self.features.is_finite()
            && self.label <= 1
            && self
                .edges
                .iter()
                .all(|&(u, v)| (u as usize) < self.n && (v as usize) < self.n && u < v)
            && self.edges.windows(2).all(|w| w[0] < w[1])
    }
}

/// Build a sample directly from per-bus injections: one node per bus,
/// one edge per distinct connected bus pair.
pub fn build_graph_from_injections(
    case: &GridCase,
    injections: &[(f64, f64)],
    label: u8,
) -> GraphSample {
    let n = case.n_buses();
    assert_eq!(injections.len(), n, "one injection pair per bus");
    let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for line in case.lines.iter().filter(|l| l.in_service) {
        let (a, b) = (line.from_bus as u32, line.to_bus as u32);
        pairs.insert((a.min(b), a.max(b)));
    }
    let mut features = Mat::zeros(n, 2);
    for (i, &(p, q)) in injections.iter().enumerate() {
        features[(i, 0)] = p;
        features[(i, 1)] = q;
    }
    GraphSample {
        n,
        edges: pairs.into_iter().collect(),
        features,
        label,
        meta: SampleMeta::default(),
    }
}

/// Build the graph sample for a simulated scenario with features from
/// the fault-clearing snapshot.
///
/// Panics if the trajectory carries no snapshot (callers only build
/// samples from faulted runs).
pub fn build_graph(case: &GridCase, traj: &Trajectory, verdict: &StabilityVerdict) -> GraphSample {
    let snapshot = traj
        .snapshot_injections
        .as_ref()
        .expect("trajectory must carry a clearing-instant snapshot");
    let mut sample = build_graph_from_injections(case, snapshot, verdict.label);
    sample.meta.tsi = verdict.tsi;
    sample
}

/// Stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index per sample, same order as the dataset.
    pub assignments: Vec<u32>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FoldError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("dataset has {n} samples, fewer than {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("class {0} is absent from the dataset")]
    ClassAbsent(u8),
}

/// Deterministic stratified partition: within each class the samples are
/// shuffled and dealt round-robin, so per-fold class fractions track the
/// global mix as closely as integer counts allow.
pub fn make_folds(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan, FoldError> {
    if k < 2 {
        return Err(FoldError::TooFewFolds(k));
    }
    let n = labels.len();
    if n < k {
        return Err(FoldError::TooFewSamples { n, k });
    }
    for class in [0u8, 1u8] {
        if !labels.iter().any(|&l| l == class) {
            return Err(FoldError::ClassAbsent(class));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut assignments = vec![0u32; n];
    let mut next_fold = 0u32;
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignments[i] = next_fold;
            next_fold = (next_fold + 1) % k as u32;
        }
    }
    Ok(FoldPlan { k, assignments })
}
