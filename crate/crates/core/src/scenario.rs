//! Scenario sampling: perturb, dispatch, fault, simulate, label.
//!
//! One scenario = one record of the dataset-construction protocol:
//! per-load factors from U[0.8, 1.2], proportional redispatch, an AC
//! power flow, a bolted three-phase fault on a uniformly drawn line
//! terminal cleared after U[1/60, 1/6] s, a 10 s classical-model TDS,
//! and the TSI label. Scenarios whose power flow diverges or whose
//! post-fault network islands are resampled from the same stream, so a
//! record is a pure function of `(case, seed, config)`.

use alloc::vec::Vec;
use rand::Rng;

use crate::dynamics::{
    assess_trajectory, prepare_dynamics, simulate, DynamicsError, FaultSpec, LineEnd, SimOptions,
    StabilityVerdict,
};
use crate::graph::{build_graph, GraphSample};
use crate::grid::GridCase;
use crate::powerflow::{scale_and_dispatch, solve_power_flow, PowerFlowError};
use crate::rng::rng_from_seed;

/// Sampling ranges and simulation settings for dataset construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Per-load scaling factor range.
    pub load_range: (f64, f64),
    /// Fault clearing time range in seconds.
    pub clear_range: (f64, f64),
    pub horizon: f64,
    pub dt: f64,
    pub pf_tol: f64,
    pub pf_max_iter: usize,
    /// Resample attempts before giving up on a seed.
    pub retry_budget: usize,
    pub early_exit: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            load_range: (0.8, 1.2),
            clear_range: (1.0 / 60.0, 1.0 / 6.0),
            horizon: 10.0,
            dt: 0.005,
            pf_tol: 1e-8,
            pf_max_iter: 20,
            retry_budget: 50,
            early_exit: true,
        }
    }
}

/// One sampled, simulated, and labeled scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub seed: u64,
    pub fault: FaultSpec,
    pub load_factors: Vec<f64>,
    pub verdict: StabilityVerdict,
    pub sample: GraphSample,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("retry budget of {budget} exhausted for seed {seed}; last: {last}")]
    RetryBudgetExhausted {
        seed: u64,
        budget: usize,
        last: RetryReason,
    },
    #[error("case has no in-service lines to fault")]
    NoFaultableLines,
}

/// Why an attempt was resampled.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetryReason {
    #[error("power flow: {0}")]
    PowerFlow(PowerFlowError),
    #[error("dynamics: {0}")]
    Dynamics(DynamicsError),
}

/// A drawn scenario with its solved pre-fault state and dynamic model,
/// ready either for the full labeling run or for the online assessor's
/// cheap snapshot path.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub seed: u64,
    pub scaled_case: GridCase,
    pub fault: FaultSpec,
    pub load_factors: Vec<f64>,
    pub pf: crate::powerflow::PowerFlowSolution,
    pub model: crate::dynamics::DynamicsModel,
}

/// Draw load factors and a fault for `seed`, resampling until the power
/// flow converges and the post-fault network stays connected. This is
/// the deterministic prefix shared by dataset generation and online
/// assessment: the same seed always yields the same scenario.
pub fn prepare_scenario(
    case: &GridCase,
    seed: u64,
    cfg: &ScenarioConfig,
) -> Result<PreparedScenario, ScenarioError> {
    let faultable: Vec<usize> = case
        .lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.in_service)
        .map(|(i, _)| i)
        .collect();
    if faultable.is_empty() {
        return Err(ScenarioError::NoFaultableLines);
    }

    let mut rng = rng_from_seed(seed);
    let mut last = RetryReason::PowerFlow(PowerFlowError::BadTolerance(0.0));
    for _ in 0..cfg.retry_budget {
        let (scaled, factors) =
            scale_and_dispatch(case, cfg.load_range.0, cfg.load_range.1, &mut rng);
        let fault = FaultSpec {
            line_index: faultable[rng.random_range(0..faultable.len())],
            faulted_end: if rng.random_range(0..2u32) == 0 {
                LineEnd::From
            } else {
                LineEnd::To
            },
            clear_time: rng.random_range(cfg.clear_range.0..=cfg.clear_range.1),
        };
        let pf = match solve_power_flow(&scaled, cfg.pf_tol, cfg.pf_max_iter) {
            Ok(pf) => pf,
            Err(e) => {
                last = RetryReason::PowerFlow(e);
                continue;
            }
        };
        let model = match prepare_dynamics(&scaled, &pf, Some(&fault)) {
            Ok(m) => m,
            Err(e) => {
                last = RetryReason::Dynamics(e);
                continue;
            }
        };
        return Ok(PreparedScenario {
            seed,
            scaled_case: scaled,
            fault,
            load_factors: factors,
            pf,
            model,
        });
    }
    Err(ScenarioError::RetryBudgetExhausted {
        seed,
        budget: cfg.retry_budget,
        last,
    })
}

/// Draw and simulate one scenario. Deterministic per `(case, seed, cfg)`.
pub fn sample_scenario(
    case: &GridCase,
    seed: u64,
    cfg: &ScenarioConfig,
) -> Result<ScenarioRecord, ScenarioError> {
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
    let mut sample = build_graph(&prep.scaled_case, &traj, &verdict);
    sample.meta.seed = seed;
    sample.meta.line_index = prep.fault.line_index as u32;
    sample.meta.faulted_end = match prep.fault.faulted_end {
        LineEnd::From => 0,
        LineEnd::To => 1,
    };
    sample.meta.clear_time = prep.fault.clear_time;
    Ok(ScenarioRecord {
        seed,
        fault: prep.fault,
        load_factors: prep.load_factors,
        verdict,
        sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_seed;

    #[test]
    fn draws_respect_paper_ranges() {
        let mut case = GridCase::smib(0.5, 3.0, 0.3, 0.4, 2);
        case.loads.push(crate::grid::Load {
            bus: 1,
            p: 0.2,
            q: 0.05,
        });
        let cfg = ScenarioConfig::default();
        for i in 0..20 {
            let rec = sample_scenario(&case, child_seed(42, i), &cfg).unwrap();
            assert!(rec.fault.clear_time >= 1.0 / 60.0 && rec.fault.clear_time <= 1.0 / 6.0);
            for f in &rec.load_factors {
                assert!(*f >= 0.8 && *f <= 1.2);
            }
            assert_eq!(rec.sample.label, rec.verdict.label);
            assert!(rec.sample.check());
        }
    }

    #[test]
    fn same_seed_identical_record() {
        let case = GridCase::smib(0.5, 3.0, 0.3, 0.4, 2);
        let cfg = ScenarioConfig::default();
        let a = sample_scenario(&case, 77, &cfg).unwrap();
        let b = sample_scenario(&case, 77, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smib_fast_clearing_is_stable_slow_is_not() {
        // equal-area analysis puts the critical clearing time well inside
        // [1/60, 1/6] for this fixture only if the disturbance is severe;
        // here we just pin both sides with explicit clear times.
        let case = GridCase::smib(0.9, 3.0, 0.3, 0.4, 2);
        let pf = solve_power_flow(&case, 1e-10, 30).unwrap();
        let mk = |clear: f64| {
            let fault = FaultSpec {
                line_index: 0,
                faulted_end: LineEnd::To,
                clear_time: clear,
            };
            let model = prepare_dynamics(&case, &pf, Some(&fault)).unwrap();
            let traj = simulate(
                &model,
                &SimOptions {
                    clear_time: clear,
                    horizon: 10.0,
                    dt: 0.005,
                    early_exit: true,
                },
            );
            assess_trajectory(&traj).label
        };
        assert_eq!(mk(0.05), 1, "fast clearing should hold synchronism");
        assert_eq!(mk(0.5), 0, "late clearing should lose synchronism");
    }
}
