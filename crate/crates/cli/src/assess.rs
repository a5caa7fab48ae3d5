//! Online assessment: credibility-gated model predictions with TDS
//! fallback.
//!
//! The model path simulates only to the clearing instant (a handful of
//! integration steps), classifies the snapshot graph, and accepts the
//! prediction when the softmax margin `|S0 - S1|` meets the threshold.
//! Below the threshold the full time-domain simulation decides, so gated
//! labels can be wrong only on high-confidence mistakes.

use std::time::Instant;

use anyhow::Result;
use rayon::prelude::*;
use tsa_core::dynamics::{assess_trajectory, simulate, SimOptions};
use tsa_core::gin::{classify, TsaModel};
use tsa_core::graph::build_graph_from_injections;
use tsa_core::grid::GridCase;
use tsa_core::scenario::{prepare_scenario, ScenarioConfig};

/// Which path produced the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Model,
    TdsFallback,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Model => "model",
            Source::TdsFallback => "tds_fallback",
        })
    }
}

/// Outcome of one gated assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentOutcome {
    pub label: u8,
    pub source: Source,
    /// Softmax margin `|S0 - S1|` of the model prediction.
    pub margin: f64,
    /// Wall-clock seconds for the whole assessment call.
    pub elapsed: f64,
}

/// Assess the scenario identified by `seed`: simulate to the clearing
/// instant, classify the snapshot, and fall back to the full TDS run when
/// the margin is below `threshold`.
pub fn assess_online(
    model: &TsaModel,
    case: &GridCase,
    seed: u64,
    threshold: f64,
    cfg: &ScenarioConfig,
) -> Result<AssessmentOutcome> {
    assert!((0.0..=1.0).contains(&threshold) || threshold > 1.0);
    let start = Instant::now();
    let prep = prepare_scenario(case, seed, cfg)?;
    let snapshot =
        tsa_core::dynamics::snapshot_at_clear(&prep.model, prep.fault.clear_time, cfg.dt)?;
    let sample = build_graph_from_injections(&prep.scaled_case, &snapshot, 0);
    let (s0, s1) = classify(model, &sample);
    let margin = (s0 - s1).abs();
    if margin >= threshold {
        return Ok(AssessmentOutcome {
            label: u8::from(s1 >= s0),
            source: Source::Model,
            margin,
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    let traj = simulate(
        &prep.model,
        &SimOptions {
            clear_time: prep.fault.clear_time,
            horizon: cfg.horizon,
            dt: cfg.dt,
            early_exit: cfg.early_exit,
        },
    );
    let verdict = assess_trajectory(&traj);
    Ok(AssessmentOutcome {
        label: verdict.label,
        source: Source::TdsFallback,
        margin,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// One scenario of a batch with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioAssessment {
    pub seed: u64,
    pub outcome: AssessmentOutcome,
    pub tds_label: u8,
    pub tds_elapsed: f64,
}

/// Batch accuracy and timing against the pure-TDS baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTimingReport {
    pub n: usize,
    pub fallback_fraction: f64,
    pub mean_model_path: f64,
    pub mean_fallback_path: f64,
    pub mean_overall: f64,
    pub mean_tds_baseline: f64,
    pub accuracy_vs_tds: f64,
    pub per_scenario: Vec<ScenarioAssessment>,
}

impl std::fmt::Display for BatchTimingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenarios:          {}", self.n)?;
        writeln!(
            f,
            "fallback fraction:  {:.1}%",
            100.0 * self.fallback_fraction
        )?;
        writeln!(f, "mean model path:    {:.3} ms", 1e3 * self.mean_model_path)?;
        writeln!(
            f,
            "mean fallback path: {:.3} ms",
            1e3 * self.mean_fallback_path
        )?;
        writeln!(f, "mean overall:       {:.3} ms", 1e3 * self.mean_overall)?;
        writeln!(
            f,
            "mean pure TDS:      {:.3} ms",
            1e3 * self.mean_tds_baseline
        )?;
        writeln!(
            f,
            "speedup vs TDS:     {:.1}x",
            self.mean_tds_baseline / self.mean_overall.max(1e-12)
        )?;
        write!(f, "accuracy vs TDS:    {:.2}%", 100.0 * self.accuracy_vs_tds)
    }
}

/// Assess every scenario and run the pure-TDS baseline for ground truth
/// and the timing comparison.
pub fn batch_assess(
    model: &TsaModel,
    case: &GridCase,
    seeds: &[u64],
    threshold: f64,
    cfg: &ScenarioConfig,
) -> Result<BatchTimingReport> {
    assert!(!seeds.is_empty(), "need at least one scenario");
    let per_scenario: Result<Vec<ScenarioAssessment>> = seeds
        .par_iter()
        .map(|&seed| {
            let outcome = assess_online(model, case, seed, threshold, cfg)?;
            let baseline_start = Instant::now();
            let prep = prepare_scenario(case, seed, cfg)?;
            let traj = simulate(
                &prep.model,
                &SimOptions {
                    clear_time: prep.fault.clear_time,
                    horizon: cfg.horizon,
                    dt: cfg.dt,
                    early_exit: cfg.early_exit,
                },
            );
            let verdict = assess_trajectory(&traj);
            Ok(ScenarioAssessment {
                seed,
                outcome,
                tds_label: verdict.label,
                tds_elapsed: baseline_start.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let per_scenario = per_scenario?;

    let n = per_scenario.len();
    let fallbacks: Vec<&ScenarioAssessment> = per_scenario
        .iter()
        .filter(|s| s.outcome.source == Source::TdsFallback)
        .collect();
    let model_path: Vec<&ScenarioAssessment> = per_scenario
        .iter()
        .filter(|s| s.outcome.source == Source::Model)
        .collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let correct = per_scenario
        .iter()
        .filter(|s| s.outcome.label == s.tds_label)
        .count();
    Ok(BatchTimingReport {
        n,
        fallback_fraction: fallbacks.len() as f64 / n as f64,
        mean_model_path: mean(
            &model_path
                .iter()
                .map(|s| s.outcome.elapsed)
                .collect::<Vec<_>>(),
        ),
        mean_fallback_path: mean(
            &fallbacks
                .iter()
                .map(|s| s.outcome.elapsed)
                .collect::<Vec<_>>(),
        ),
        mean_overall: mean(
            &per_scenario
                .iter()
                .map(|s| s.outcome.elapsed)
                .collect::<Vec<_>>(),
        ),
        mean_tds_baseline: mean(
            &per_scenario
                .iter()
                .map(|s| s.tds_elapsed)
                .collect::<Vec<_>>(),
        ),
        accuracy_vs_tds: correct as f64 / n as f64,
        per_scenario,
    })
}
