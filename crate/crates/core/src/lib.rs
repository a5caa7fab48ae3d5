//! Transient stability assessment kernels.
//!
//! This crate holds the numeric heart of the toolkit: the grid model and
//! admittance matrix, a Newton-Raphson AC power flow, a classical-model
//! swing-equation simulator with Kron reduction, scenario sampling and
//! labeling, a small reverse-mode autodiff tape, GIN message passing with
//! covariance-times-mean (distribution-aware) pooling, and the training /
//! evaluation machinery built on top of them.
//!
//! The crate is `no_std` + `alloc`: all transcendental math goes through
//! [`libm`] so results are bit-identical regardless of the host's libm.
//! File formats, the CLI, threading, and wall-clock timing live in the
//! companion `tsa-cli` crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

// Complex64 appears in the CMat API; re-export the crate for consumers.
pub use num_complex;

pub mod autodiff;
pub mod dynamics;
pub mod gin;
pub mod graph;
pub mod grid;
pub mod jacobi;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pooling;
pub mod powerflow;
pub mod rng;
pub mod scenario;
pub mod train;

pub use dynamics::{
    assess_trajectory, prepare_dynamics, simulate, DynamicsError, DynamicsModel, FaultSpec,
    LineEnd, SimOptions, StabilityVerdict, Trajectory,
};
pub use gin::{GinLayer, Normalizer, Pooling, TsaModel};
pub use graph::{
    build_graph, build_graph_from_injections, make_folds, FoldError, FoldPlan, GraphSample,
    SampleMeta,
};
pub use grid::{build_ybus, Bus, BusKind, Generator, GridCase, GridError, Line, Load};
pub use linalg::Mat;
pub use metrics::{compute_metrics, threshold_grid, CrCurve, Metrics};
pub use powerflow::{scale_and_dispatch, solve_power_flow, PowerFlowError, PowerFlowSolution};
pub use scenario::{
    prepare_scenario, sample_scenario, PreparedScenario, ScenarioConfig, ScenarioError,
    ScenarioRecord,
};
pub use train::{
    compute_cr_curve, cross_validate, evaluate, train_fold, CvReport, TrainConfig, TrainError,
};

/// Nominal system frequency; the New England and WSCC test systems are
/// 60 Hz networks and the case format does not carry a frequency field.
pub const SYSTEM_FREQ_HZ: f64 = 60.0;

/// Synchronous speed in rad/s, `2*pi*f`.
pub const OMEGA_SYNC: f64 = 2.0 * core::f64::consts::PI * SYSTEM_FREQ_HZ;
