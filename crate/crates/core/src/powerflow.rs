//! Newton-Raphson AC power flow and scenario redispatch.
//!
//! Establishes the pre-fault operating point for each scenario. Polar
//! mismatch formulation, flat start, full Jacobian rebuilt per iteration;
//! plenty for desk-scale cases. Reactive limits and tap controls are not
//! modeled.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::grid::{BusKind, GridCase};
use crate::linalg::{lu_solve, CMat, LinalgError, Mat};

/// Converged power-flow state. Angles are radians with the slack at 0;
/// `p_inj`/`q_inj` are net bus injections (generation minus load).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian: {0}")]
    SingularJacobian(LinalgError),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Active/reactive injections implied by a voltage profile:
/// `P_i = V_i * sum_j V_j (G_ij cos t_ij + B_ij sin t_ij)` and the
/// matching reactive form.
pub fn power_injections(ybus: &CMat, v_mag: &[f64], v_ang: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v_mag.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for j in 0..n {
            let y = ybus[(i, j)];
            if y.re == 0.0 && y.im == 0.0 {
                continue;
            }
            let tij = v_ang[i] - v_ang[j];
            let (s, c) = (libm::sin(tij), libm::cos(tij));
            pi += v_mag[j] * (y.re * c + y.im * s);
            qi += v_mag[j] * (y.re * s - y.im * c);
        }
        p[i] = v_mag[i] * pi;
        q[i] = v_mag[i] * qi;
    }
    (p, q)
}

/// Per-bus scheduled injections from generator setpoints and loads.
fn scheduled_injections(case: &GridCase) -> (Vec<f64>, Vec<f64>) {
    let n = case.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for g in &case.generators {
        p[g.bus] += g.p_set;
    }
    for l in &case.loads {
        p[l.bus] -= l.p;
        q[l.bus] -= l.q;
    }
    (p, q)
}

/// Solve the AC power flow with Newton-Raphson from a flat start.
pub fn solve_power_flow(
    case: &GridCase,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    if !(tol > 0.0) {
        return Err(PowerFlowError::BadTolerance(tol));
    }
    let n = case.n_buses();
    let ybus = crate::grid::build_ybus(case);
    let (p_spec, q_spec) = scheduled_injections(case);

    let mut v_mag = vec![1.0; n];
    let mut v_ang = vec![0.0; n];
    let mut kinds = vec![BusKind::Pq; n];
    for bus in &case.buses {
        kinds[bus.id] = bus.kind;
        if let Some(v) = bus.voltage_setpoint {
            v_mag[bus.id] = v;
        }
    }

    // unknown ordering: angles at non-slack buses, then magnitudes at pq
    let ang_buses: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let pq_buses: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let na = ang_buses.len();
    let npq = pq_buses.len();
    let m = na + npq;

    let mut iterations = 0;
    loop {
        let (p_calc, q_calc) = power_injections(&ybus, &v_mag, &v_ang);
        let mut mismatch = Mat::zeros(m, 1);
        let mut worst = 0.0f64;
        for (r, &i) in ang_buses.iter().enumerate() {
            let dp = p_spec[i] - p_calc[i];
            mismatch[(r, 0)] = dp;
            worst = worst.max(libm::fabs(dp));
        }
        for (r, &i) in pq_buses.iter().enumerate() {
            let dq = q_spec[i] - q_calc[i];
            mismatch[(na + r, 0)] = dq;
            worst = worst.max(libm::fabs(dq));
        }
        if worst < tol {
            return Ok(PowerFlowSolution {
                v_mag,
                v_ang,
                p_inj: p_calc,
                q_inj: q_calc,
                iterations,
                max_mismatch: worst,
            });
        }
        if iterations >= max_iter {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: worst,
            });
        }

        // full Jacobian in the same row/column ordering as the mismatch
        let mut jac = Mat::zeros(m, m);
        let entry = |i: usize, j: usize| ybus[(i, j)];
        for (r, &i) in ang_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                let y = entry(i, j);
                jac[(r, c)] = if i == j {
                    -q_calc[i] - y.im * v_mag[i] * v_mag[i]
                } else {
                    let tij = v_ang[i] - v_ang[j];
                    v_mag[i] * v_mag[j] * (y.re * libm::sin(tij) - y.im * libm::cos(tij))
                };
            }
            for (c, &j) in pq_buses.iter().enumerate() {
                let y = entry(i, j);
                jac[(r, na + c)] = if i == j {
                    p_calc[i] / v_mag[i] + y.re * v_mag[i]
                } else {
                    let tij = v_ang[i] - v_ang[j];
                    v_mag[i] * (y.re * libm::cos(tij) + y.im * libm::sin(tij))
                };
            }
        }
        for (r, &i) in pq_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                let y = entry(i, j);
                jac[(na + r, c)] = if i == j {
                    p_calc[i] - y.re * v_mag[i] * v_mag[i]
                } else {
                    let tij = v_ang[i] - v_ang[j];
                    -v_mag[i] * v_mag[j] * (y.re * libm::cos(tij) + y.im * libm::sin(tij))
                };
            }
            for (c, &j) in pq_buses.iter().enumerate() {
                let y = entry(i, j);
                jac[(na + r, na + c)] = if i == j {
                    q_calc[i] / v_mag[i] - y.im * v_mag[i]
                } else {
                    let tij = v_ang[i] - v_ang[j];
                    v_mag[i] * (y.re * libm::sin(tij) - y.im * libm::cos(tij))
                };
            }
        }

        let step = lu_solve(&jac, &mismatch).map_err(PowerFlowError::SingularJacobian)?;
        for (r, &i) in ang_buses.iter().enumerate() {
            v_ang[i] += step[(r, 0)];
        }
        for (r, &i) in pq_buses.iter().enumerate() {
            v_mag[i] += step[(na + r, 0)];
        }
        iterations += 1;
    }
}

/// Scale each load by an independent factor drawn uniformly from
/// `[lo, hi]` and redispatch generators proportionally so scheduled
/// generation tracks the new total load (the slack absorbs the residual
/// in the subsequent power flow). Returns the scaled case together with
/// the per-load factors, in load order.
pub fn scale_and_dispatch<R: Rng>(
    case: &GridCase,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> (GridCase, Vec<f64>) {
    assert!(lo <= hi && lo > 0.0, "factor range must be positive");
    let mut scaled = case.clone();
    let old_total: f64 = case.loads.iter().map(|l| l.p).sum();
    let mut factors = Vec::with_capacity(case.loads.len());
    for load in scaled.loads.iter_mut() {
        let f = rng.random_range(lo..=hi);
        load.p *= f;
        load.q *= f;
        factors.push(f);
    }
    let new_total: f64 = scaled.loads.iter().map(|l| l.p).sum();
    if old_total.abs() > 1e-12 {
        let ratio = new_total / old_total;
        for g in scaled.generators.iter_mut() {
            g.p_set *= ratio;
        }
    }
    (scaled, factors)
}
