//! Voltage-security analytics: the L-index on the generator/load bus
//! partition, state classification and a loadability scan.
//!
//! For load buses L and generator buses G the bus equations split as
//!
//! ```text
//! I_L = Y_LL·V_L + Y_LG·V_G
//! ```
//!
//! With no load current the load-bus voltages are V_L⁰ = F·V_G where
//! F = −Y_LL⁻¹·Y_LG. The local index of load bus j compares its actual voltage
//! with that no-load voltage:
//!
//! ```text
//! L_j = | 1 − (Σ_i F_ji·V_i) / V_j |
//! ```
//!
//! L_j is 0 at no load and reaches 1 at the voltage-collapse point of a
//! single-source radial feed; `l_max` is the system indicator.

mod loadability;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{AdmittanceMatrix, GridError, NetworkCase, PowerFlowSolution};

pub use loadability::{find_loadability_limit, LoadabilityResult, ScanOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("no load buses: L-index undefined")]
    NoLoadBuses,
    #[error("degenerate load subnetwork: Y_LL is singular")]
    DegenerateLoadSubnetwork,
    #[error("no steady state: power flow did not converge")]
    NoSteadyState,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("flat direction: scaling pattern changes no load")]
    FlatDirection,
    #[error("loadability unbounded up to lambda {0}")]
    Unbounded(f64),
    #[error("solution has {got} buses but the partition covers {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Generator buses (in-service generation, slack always included) versus the
/// remaining load buses, both in case bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPartition {
    pub generator_set: Vec<u32>,
    pub load_set: Vec<u32>,
    /// Positions of `generator_set` buses in the case bus list.
    pub generator_pos: Vec<usize>,
    /// Positions of `load_set` buses in the case bus list.
    pub load_pos: Vec<usize>,
}

impl BusPartition {
    pub fn bus_count(&self) -> usize {
        self.generator_pos.len() + self.load_pos.len()
    }

    pub fn load_position(&self, bus: u32) -> Option<usize> {
        self.load_set.iter().position(|&b| b == bus)
    }
}

pub fn partition_buses(case: &NetworkCase) -> Result<BusPartition, StabilityError> {
    let gen = case.bus_generation();
    let mut p = BusPartition {
        generator_set: Vec::new(),
        load_set: Vec::new(),
        generator_pos: Vec::new(),
        load_pos: Vec::new(),
    };
    for (i, (bus, g)) in case.buses.iter().zip(&gen).enumerate() {
        if g.units > 0 || bus.kind == crate::grid::BusKind::Slack {
            p.generator_set.push(bus.id);
            p.generator_pos.push(i);
        } else {
            p.load_set.push(bus.id);
            p.load_pos.push(i);
        }
    }
    if p.load_set.is_empty() {
        return Err(StabilityError::NoLoadBuses);
    }
    Ok(p)
}

/// F = −Y_LL⁻¹·Y_LG, rows follow `partition.load_set`, columns `generator_set`.
#[derive(Debug, Clone, PartialEq)]
pub struct FMatrix {
    pub entries: DMatrix<Complex64>,
    pub partition: BusPartition,
}

pub fn compute_f_matrix(ybus: &AdmittanceMatrix, partition: &BusPartition) -> Result<FMatrix, StabilityError> {
    if ybus.n() != partition.bus_count() {
        return Err(StabilityError::SizeMismatch {
            expected: partition.bus_count(),
            got: ybus.n(),
        });
    }
    let nl = partition.load_pos.len();
    let ng = partition.generator_pos.len();
    let y_ll = DMatrix::from_fn(nl, nl, |r, c| ybus.get(partition.load_pos[r], partition.load_pos[c]));
    let y_lg = DMatrix::from_fn(nl, ng, |r, c| {
        ybus.get(partition.load_pos[r], partition.generator_pos[c])
    });

    let lu = y_ll.lu();
    let diag = lu.u().diagonal();
    let largest = diag.iter().fold(0.0f64, |m, d| m.max(d.norm()));
    let smallest = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.norm()));
    if !(largest > 0.0) || smallest <= 1e-12 * largest {
        return Err(StabilityError::DegenerateLoadSubnetwork);
    }
    let entries = lu.solve(&(-y_lg)).ok_or(StabilityError::DegenerateLoadSubnetwork)?;
    Ok(FMatrix {
        entries,
        partition: partition.clone(),
    })
}

/// Local indices in `load_set` order.
pub fn local_indices(v: &[Complex64], f: &FMatrix) -> Result<Vec<f64>, StabilityError> {
    let part = &f.partition;
    if v.len() != part.bus_count() {
        return Err(StabilityError::SizeMismatch {
            expected: part.bus_count(),
            got: v.len(),
        });
    }
    Ok(part
        .load_pos
        .iter()
        .enumerate()
        .map(|(row, &j)| {
            let no_load: Complex64 = part
                .generator_pos
                .iter()
                .enumerate()
                .map(|(col, &i)| f.entries[(row, col)] * v[i])
                .sum();
            (Complex64::new(1.0, 0.0) - no_load / v[j]).norm()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateClass {
    Normal,
    Alarm,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alarm: f64,
    pub emergency: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alarm: 0.5,
            emergency: 0.8,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), StabilityError> {
        if self.alarm.is_finite() && self.emergency.is_finite() && 0.0 <= self.alarm && self.alarm < self.emergency {
            Ok(())
        } else {
            Err(StabilityError::Config(format!(
                "thresholds must satisfy 0 <= alarm < emergency (got {} / {})",
                self.alarm, self.emergency
            )))
        }
    }
}

/// Left-closed bands: Normal below `alarm`, Alarm in [alarm, emergency),
/// Emergency from `emergency` up.
pub fn classify_state(l_max: f64, thresholds: &Thresholds) -> Result<StateClass, StabilityError> {
    thresholds.validate()?;
    Ok(if l_max < thresholds.alarm {
        StateClass::Normal
    } else if l_max < thresholds.emergency {
        StateClass::Alarm
    } else {
        StateClass::Emergency
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LIndexReport {
    /// Local index keyed by load bus id.
    pub l_local: BTreeMap<u32, f64>,
    pub l_max: f64,
    pub l_sum: f64,
    /// Load bus attaining `l_max`.
    pub critical_bus: u32,
    pub state_class: StateClass,
    pub thresholds: Thresholds,
}

pub fn compute_l_index(
    solution: &PowerFlowSolution,
    f: &FMatrix,
    thresholds: &Thresholds,
) -> Result<LIndexReport, StabilityError> {
    if !solution.converged {
        return Err(StabilityError::NoSteadyState);
    }
    report_from_voltages(&solution.v, f, thresholds)
}

/// L-index report for an arbitrary voltage vector (no convergence check).
pub fn report_from_voltages(
    v: &[Complex64],
    f: &FMatrix,
    thresholds: &Thresholds,
) -> Result<LIndexReport, StabilityError> {
    let local = local_indices(v, f)?;
    let (mut l_max, mut critical) = (0.0f64, f.partition.load_set[0]);
    for (&bus, &l) in f.partition.load_set.iter().zip(&local) {
        if l > l_max {
            l_max = l;
            critical = bus;
        }
    }
    let l_sum = local.iter().sum();
    Ok(LIndexReport {
        l_local: f.partition.load_set.iter().copied().zip(local).collect(),
        l_max,
        l_sum,
        critical_bus: critical,
        state_class: classify_state(l_max, thresholds)?,
        thresholds: *thresholds,
    })
}

/// Partition + Y-bus + F for a case in one call.
pub fn f_matrix_for_case(case: &NetworkCase) -> Result<FMatrix, StabilityError> {
    let partition = partition_buses(case)?;
    compute_f_matrix(&crate::grid::build_ybus(case), &partition)
}
