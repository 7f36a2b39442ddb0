use serde::{Deserialize, Serialize};

use super::{f_matrix_for_case, local_indices, FMatrix, StabilityError};
use crate::grid::{build_ybus, AdmittanceMatrix, BusKind, NetworkCase, PowerFlowOptions, PowerFlowSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Scale non-slack generation with total load so the slack does not pick
    /// up the whole increase.
    pub scale_generation: bool,
    pub initial_step: f64,
    pub max_lambda: f64,
    pub power_flow: PowerFlowOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            scale_generation: true,
            initial_step: 0.1,
            max_lambda: 1000.0,
            power_flow: PowerFlowOptions {
                max_iter: 40,
                flat_start: false,
                ..PowerFlowOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadabilityResult {
    /// Largest load scale with a converged steady state (collapse proxy).
    pub lambda_max: f64,
    /// Smallest scale found without one.
    pub lambda_fail: f64,
    pub direction: Vec<f64>,
    /// (lambda, l_max) of every converged point, lambda ascending.
    pub trace: Vec<(f64, f64)>,
}

/// Case loads at scale `lambda`: p_i = p0_i·(1 + (lambda − 1)·d_i).
pub(crate) fn scaled_case(base: &NetworkCase, direction: &[f64], lambda: f64, scale_generation: bool) -> NetworkCase {
    let mut case = base.clone();
    let mut before = 0.0;
    let mut after = 0.0;
    for (bus, d) in case.buses.iter_mut().zip(direction) {
        let factor = 1.0 + (lambda - 1.0) * d;
        before += bus.p_load;
        bus.p_load *= factor;
        bus.q_load *= factor;
        after += bus.p_load;
    }
    if scale_generation && before > 0.0 {
        let ratio = after / before;
        let slack_bus = case.buses.iter().find(|b| b.kind == BusKind::Slack).map(|b| b.id);
        for g in case.generators.iter_mut() {
            if Some(g.bus) != slack_bus {
                g.p_gen *= ratio;
            }
        }
    }
    case
}

struct Probe<'a> {
    base: &'a NetworkCase,
    direction: &'a [f64],
    ybus: AdmittanceMatrix,
    f: FMatrix,
    options: &'a ScanOptions,
}

impl Probe<'_> {
    /// Converged steady state with every L_j below 1, else None.
    fn at(&self, lambda: f64, seed: &PowerFlowSolution) -> Result<Option<(PowerFlowSolution, f64)>, StabilityError> {
        let case = scaled_case(self.base, self.direction, lambda, self.options.scale_generation);
        let sol = match crate::grid::powerflow_with(&case, &self.ybus, &self.options.power_flow, seed.v.clone()) {
            Ok(s) => s,
            Err(crate::grid::GridError::SingularJacobian { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if !sol.converged {
            return Ok(None);
        }
        let l_max = local_indices(&sol.v, &self.f)?.into_iter().fold(0.0, f64::max);
        Ok((l_max < 1.0).then_some((sol, l_max)))
    }
}

/// Steps the load scale up from 1 with doubling steps until the power flow
/// fails, then bisects between the last converged and the first failed scale
/// until they are `lambda_tol` apart.
pub fn find_loadability_limit(
    case: &NetworkCase,
    direction: &[f64],
    lambda_tol: f64,
    options: &ScanOptions,
) -> Result<LoadabilityResult, StabilityError> {
    if direction.len() != case.buses.len() {
        return Err(StabilityError::SizeMismatch {
            expected: case.buses.len(),
            got: direction.len(),
        });
    }
    let moves_load = case
        .buses
        .iter()
        .zip(direction)
        .any(|(b, &d)| d != 0.0 && (b.p_load != 0.0 || b.q_load != 0.0));
    if !moves_load {
        return Err(StabilityError::FlatDirection);
    }
    let probe = Probe {
        base: case,
        direction,
        ybus: build_ybus(case),
        f: f_matrix_for_case(case)?,
        options,
    };
    let flat = PowerFlowOptions {
        flat_start: true,
        ..options.power_flow
    };
    let base_sol = crate::grid::solve_power_flow(case, &flat)?;
    if !base_sol.converged {
        return Err(StabilityError::NoSteadyState);
    }
    let base_l = local_indices(&base_sol.v, &probe.f)?.into_iter().fold(0.0, f64::max);

    let mut trace = vec![(1.0, base_l)];
    let (mut lo, mut lo_sol) = (1.0, base_sol);
    let mut step = options.initial_step;
    let mut hi = loop {
        let lambda = lo + step;
        if lambda > options.max_lambda {
            return Err(StabilityError::Unbounded(lo));
        }
        match probe.at(lambda, &lo_sol)? {
            Some((sol, l)) => {
                trace.push((lambda, l));
                lo = lambda;
                lo_sol = sol;
                step *= 2.0;
            }
            None => break lambda,
        }
    };
    while hi - lo > lambda_tol {
        let mid = 0.5 * (lo + hi);
        match probe.at(mid, &lo_sol)? {
            Some((sol, l)) => {
                trace.push((mid, l));
                lo = mid;
                lo_sol = sol;
            }
            None => hi = mid,
        }
    }
    Ok(LoadabilityResult {
        lambda_max: lo,
        lambda_fail: hi,
        direction: direction.to_vec(),
        trace,
    })
}
