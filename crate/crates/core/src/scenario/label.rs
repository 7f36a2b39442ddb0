use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{scenario_options, ScenarioError};
use crate::grid::{build_ybus, powerflow_with, GridError, NetworkCase, PowerFlowSolution};
use crate::stability::{f_matrix_for_case, local_indices, FMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelStatus {
    /// Already below the alarm threshold; nothing to do.
    Secure,
    /// Injections found that bring l_max below alarm.
    Corrected,
    /// Budget exhausted or no step improved l_max.
    Unlabelable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub bus: u32,
    pub dq: f64,
    /// Indices of the power-flow-verified state after the step.
    pub l_max: f64,
    pub l_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    /// Accumulated injection per candidate bus (p.u.), zeros included.
    pub dq_star: BTreeMap<u32, f64>,
    pub steps: Vec<GreedyStep>,
    pub status: LabelStatus,
    pub l_max_before: f64,
    pub l_sum_before: f64,
}

impl Labeling {
    pub fn total_injection(&self) -> f64 {
        self.dq_star.values().sum()
    }

    pub fn l_max_after(&self) -> f64 {
        self.steps.last().map_or(self.l_max_before, |s| s.l_max)
    }
}

fn indices(v: &[num_complex::Complex64], f: &FMatrix) -> Result<(f64, f64), ScenarioError> {
    let l = local_indices(v, f)?;
    Ok((l.iter().copied().fold(0.0, f64::max), l.iter().sum()))
}

/// Greedy corrective search: repeatedly add `step_dq` at whichever candidate
/// gives the lowest power-flow-verified l_max, until l_max < `alarm`. Stops
/// as unlabelable when the next step would exceed `budget` or when no
/// candidate lowers l_max.
pub fn label_corrective_injections(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    candidates: &[u32],
    alarm: f64,
    step_dq: f64,
    budget: f64,
) -> Result<Labeling, ScenarioError> {
    if !solution.converged {
        return Err(ScenarioError::NoSteadyState);
    }
    if !(step_dq > 0.0) {
        return Err(ScenarioError::Config("step_dq must be positive".into()));
    }
    let f = f_matrix_for_case(case)?;
    let mut cands: Vec<u32> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let index = case.bus_index();
    let mut positions = Vec::with_capacity(cands.len());
    for &bus in &cands {
        if f.partition.load_position(bus).is_none() {
            return Err(ScenarioError::CandidateNotLoadBus(bus));
        }
        positions.push(index[&bus]);
    }

    let (l_max_before, l_sum_before) = indices(&solution.v, &f)?;
    let mut counts = vec![0u32; cands.len()];
    let mut steps = Vec::new();
    let mut l_max = l_max_before;
    let status = if l_max < alarm {
        LabelStatus::Secure
    } else if cands.is_empty() {
        LabelStatus::Unlabelable
    } else {
        let ybus = build_ybus(case);
        let opts = scenario_options();
        let mut work = case.clone();
        let mut v = solution.v.clone();
        let mut taken = 0u32;
        loop {
            if l_max < alarm {
                break LabelStatus::Corrected;
            }
            if (taken + 1) as f64 * step_dq > budget + 1e-9 {
                break LabelStatus::Unlabelable;
            }
            let mut best: Option<(usize, f64, f64, Vec<num_complex::Complex64>)> = None;
            for (c, &pos) in positions.iter().enumerate() {
                let saved = work.buses[pos].q_comp;
                work.buses[pos].q_comp = saved + step_dq;
                let trial = powerflow_with(&work, &ybus, &opts, v.clone());
                work.buses[pos].q_comp = saved;
                let sol = match trial {
                    Ok(s) if s.converged => s,
                    Ok(_) | Err(GridError::SingularJacobian { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                let (lm, ls) = indices(&sol.v, &f)?;
                if best.as_ref().is_none_or(|b| lm < b.1) {
                    best = Some((c, lm, ls, sol.v));
                }
            }
            match best {
                Some((c, lm, ls, nv)) if lm < l_max => {
                    counts[c] += 1;
                    taken += 1;
                    work.buses[positions[c]].q_comp += step_dq;
                    v = nv;
                    l_max = lm;
                    steps.push(GreedyStep {
                        bus: cands[c],
                        dq: step_dq,
                        l_max: lm,
                        l_sum: ls,
                    });
                }
                _ => break LabelStatus::Unlabelable,
            }
        }
    };
    Ok(Labeling {
        dq_star: cands
            .iter()
            .zip(&counts)
            .map(|(&b, &n)| (b, n as f64 * step_dq))
            .collect(),
        steps,
        status,
        l_max_before,
        l_sum_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{solve_power_flow, Branch, Bus, BusKind, Generator};

    fn two_bus(q: f64) -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            buses: vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::PQ).with_load(0.0, q)],
            branches: vec![Branch::line(1, 2, 0.0, 0.1, 0.0)],
            generators: vec![Generator::new(1, 0.0, 1.0)],
        }
    }

    #[test]
    fn secure_state_needs_nothing() {
        let case = two_bus(0.2);
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        let l = label_corrective_injections(&case, &sol, &[2], 0.5, 0.1, 5.0).unwrap();
        assert_eq!(l.status, LabelStatus::Secure);
        assert_eq!(l.dq_star[&2], 0.0);
        assert!(l.steps.is_empty());
    }

    #[test]
    fn generator_bus_is_not_a_candidate() {
        let case = two_bus(2.0);
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        assert!(matches!(
            label_corrective_injections(&case, &sol, &[1], 0.5, 0.1, 5.0),
            Err(ScenarioError::CandidateNotLoadBus(1))
        ));
    }

    #[test]
    fn budget_exhaustion_is_unlabelable() {
        // q = 2.4 puts V2 at 0.6 and L at 2/3.
        let case = two_bus(2.4);
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        let l = label_corrective_injections(&case, &sol, &[2], 0.5, 0.1, 0.1).unwrap();
        assert_eq!(l.status, LabelStatus::Unlabelable);
        assert!(l.total_injection() <= 0.1 + 1e-12);
        assert!(l.steps.windows(2).all(|w| w[1].l_max <= w[0].l_max));
    }
}
