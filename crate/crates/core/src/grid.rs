//! Static network model and bus admittance matrix.
//!
//! A [`GridCase`] is the per-unit description of one power system: buses,
//! pi-section lines, classical-model generators, and constant-power loads.
//! All electrical quantities are per-unit on `base_mva`; angles are
//! radians. Bus ids are contiguous `0..n` (the case-file loader renumbers
//! arbitrary ids before handing cases to this crate).

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::linalg::CMat;

/// Bus role in the power flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// Network node. `voltage_setpoint` is required for slack and PV buses
/// and must be absent on PQ buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub voltage_setpoint: Option<f64>,
}

/// Pi-section transmission line. `b_shunt` is the total line charging
/// susceptance, split half per terminal. Transformers in the bundled
/// cases are represented as lines (unit tap).
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_shunt: f64,
    pub in_service: bool,
}

impl Line {
    /// Series admittance `1/(r + jx)`.
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

/// Classical-model synchronous machine: constant EMF behind `xd_prime`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_set: f64,
    pub inertia_h: f64,
    pub damping_d: f64,
    pub xd_prime: f64,
}

/// Constant-power load (converted to constant admittance for transients).
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// A validated static network.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// Violated case invariant. Each variant names the offending element so
/// loader errors can point at it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("base_mva must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("duplicate bus id {0}")]
    DuplicateBusId(usize),
    #[error("bus ids must be contiguous from 0; missing id {0}")]
    NonContiguousBusIds(usize),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("bus {0} is {1:?} but has no voltage setpoint")]
    MissingSetpoint(usize, BusKind),
    #[error("bus {0} is pq but carries a voltage setpoint")]
    SetpointOnPq(usize),
    #[error("bus {0} voltage setpoint {1} is not positive")]
    NonPositiveSetpoint(usize, f64),
    #[error("line {0} references unknown bus {1}")]
    LineBusRef(usize, usize),
    #[error("line {0} connects bus {1} to itself")]
    SelfLoop(usize, usize),
    #[error("line {0} has zero reactance")]
    ZeroReactance(usize),
    #[error("generator {0} references unknown bus {1}")]
    GeneratorBusRef(usize, usize),
    #[error("generator {0} sits on pq bus {1}; generator buses must be slack or pv")]
    GeneratorOnPq(usize, usize),
    #[error("generator {0} inertia must be positive, got {1}")]
    NonPositiveInertia(usize, f64),
    #[error("generator {0} xd' must be positive, got {1}")]
    NonPositiveXdPrime(usize, f64),
    #[error("generator {0} damping must be nonnegative, got {1}")]
    NegativeDamping(usize, f64),
    #[error("load {0} references unknown bus {1}")]
    LoadBusRef(usize, usize),
    #[error("non-finite value on {0}")]
    NonFinite(&'static str),
    #[error("in-service lines do not connect all buses ({0} islands)")]
    Disconnected(usize),
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Index of the slack bus. Callers must hold a validated case.
    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
            .id
    }

    pub fn total_load(&self) -> (f64, f64) {
        let p = self.loads.iter().map(|l| l.p).sum();
        let q = self.loads.iter().map(|l| l.q).sum();
        (p, q)
    }

    pub fn total_generation_setpoint(&self) -> f64 {
        self.generators.iter().map(|g| g.p_set).sum()
    }

    /// Check every invariant; returns the first violation found.
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0) {
            return Err(GridError::NonPositiveBase(self.base_mva));
        }
        let n = self.buses.len();
        let mut seen = vec![false; n];
        for bus in &self.buses {
            if bus.id < n && seen[bus.id] {
                return Err(GridError::DuplicateBusId(bus.id));
            }
            if bus.id >= n {
                // an id beyond n-1 implies some id in 0..n is absent
                return Err(GridError::NonContiguousBusIds(
                    seen.iter().position(|s| !s).unwrap_or(0),
                ));
            }
            seen[bus.id] = true;
            match (bus.kind, bus.voltage_setpoint) {
                (BusKind::Pq, Some(_)) => return Err(GridError::SetpointOnPq(bus.id)),
                (BusKind::Pq, None) => {}
                (kind, None) => return Err(GridError::MissingSetpoint(bus.id, kind)),
                (_, Some(v)) if !(v > 0.0) => {
                    return Err(GridError::NonPositiveSetpoint(bus.id, v))
                }
                (_, Some(v)) if !v.is_finite() => return Err(GridError::NonFinite("bus")),
                _ => {}
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GridError::NonContiguousBusIds(missing));
        }
        let slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack != 1 {
            return Err(GridError::SlackCount(slack));
        }
        for (i, line) in self.lines.iter().enumerate() {
            if line.from_bus >= n {
                return Err(GridError::LineBusRef(i, line.from_bus));
            }
            if line.to_bus >= n {
                return Err(GridError::LineBusRef(i, line.to_bus));
            }
            if line.from_bus == line.to_bus {
                return Err(GridError::SelfLoop(i, line.from_bus));
            }
            if line.x == 0.0 {
                return Err(GridError::ZeroReactance(i));
            }
            if !(line.r.is_finite() && line.x.is_finite() && line.b_shunt.is_finite()) {
                return Err(GridError::NonFinite("line"));
            }
        }
        let kind_of = |bus: usize| self.buses.iter().find(|b| b.id == bus).map(|b| b.kind);
        for (i, gen) in self.generators.iter().enumerate() {
            if gen.bus >= n {
                return Err(GridError::GeneratorBusRef(i, gen.bus));
            }
            if kind_of(gen.bus) == Some(BusKind::Pq) {
                return Err(GridError::GeneratorOnPq(i, gen.bus));
            }
            if !(gen.inertia_h > 0.0) {
                return Err(GridError::NonPositiveInertia(i, gen.inertia_h));
            }
            if !(gen.xd_prime > 0.0) {
                return Err(GridError::NonPositiveXdPrime(i, gen.xd_prime));
            }
            if !(gen.damping_d >= 0.0) {
                return Err(GridError::NegativeDamping(i, gen.damping_d));
            }
            if !(gen.p_set.is_finite()
                && gen.inertia_h.is_finite()
                && gen.xd_prime.is_finite()
                && gen.damping_d.is_finite())
            {
                return Err(GridError::NonFinite("generator"));
            }
        }
        for (i, load) in self.loads.iter().enumerate() {
            if load.bus >= n {
                return Err(GridError::LoadBusRef(i, load.bus));
            }
            if !(load.p.is_finite() && load.q.is_finite()) {
                return Err(GridError::NonFinite("load"));
            }
        }
        let islands = count_islands(n, self.lines.iter().filter(|l| l.in_service));
        if n > 0 && islands != 1 {
            return Err(GridError::Disconnected(islands));
        }
        Ok(())
    }
}

/// Number of connected components of the bus graph induced by `lines`.
pub fn count_islands<'a>(n: usize, lines: impl Iterator<Item = &'a Line>) -> usize {
    if n == 0 {
        return 0;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for line in lines {
        let a = find(&mut parent, line.from_bus);
        let b = find(&mut parent, line.to_bus);
        if a != b {
            parent[a] = b;
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Build the n-by-n complex bus admittance matrix from in-service lines.
///
/// Off-diagonals accumulate `-1/(r+jx)` over parallel circuits; diagonals
/// accumulate the series admittances plus `j*b_shunt/2` per terminal.
pub fn build_ybus(case: &GridCase) -> CMat {
    let n = case.n_buses();
    let mut y = CMat::zeros(n, n);
    for line in case.lines.iter().filter(|l| l.in_service) {
        let ys = line.series_admittance();
        let ysh = Complex64::new(0.0, line.b_shunt / 2.0);
        let (f, t) = (line.from_bus, line.to_bus);
        y[(f, f)] += ys + ysh;
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    y
}

/// Convenience constructors for test fixtures.
impl GridCase {
    /// Two-bus single-machine-infinite-bus fixture: an infinite slack bus
    /// (no generator attached) tied to one machine bus through `circuits`
    /// parallel lossless lines of reactance `x_line` each.
    pub fn smib(p_set: f64, h: f64, xd_prime: f64, x_line: f64, circuits: usize) -> GridCase {
        let lines = (0..circuits)
            .map(|_| Line {
                from_bus: 0,
                to_bus: 1,
                r: 0.0,
                x: x_line,
                b_shunt: 0.0,
                in_service: true,
            })
            .collect();
        GridCase {
            base_mva: 100.0,
            buses: vec![
                Bus {
                    id: 0,
                    kind: BusKind::Slack,
                    voltage_setpoint: Some(1.0),
                },
                Bus {
                    id: 1,
                    kind: BusKind::Pv,
                    voltage_setpoint: Some(1.0),
                },
            ],
            lines,
            generators: vec![Generator {
                bus: 1,
                p_set,
                inertia_h: h,
                damping_d: 0.0,
                xd_prime,
            }],
            loads: vec![],
        }
    }
}
