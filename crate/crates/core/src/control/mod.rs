//! Turns surrogate outputs into ranked, power-flow-checked reactive
//! injections, with the greedy search as the fallback when no model is
//! loaded or the model has nothing useful to say.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{apply_perturbation, solve_power_flow_from, GridError, NetworkCase, Perturbation, PowerFlowSolution};
use crate::learner::{LearnError, ModelBundle};
use crate::scenario::{extract_features, label_corrective_injections, LabelStatus, ScenarioError};
use crate::stability::{compute_l_index, f_matrix_for_case, LIndexReport, StabilityError, StateClass, Thresholds};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("no steady state: power flow did not converge")]
    NoSteadyState,
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error(transparent)]
    Model(#[from] LearnError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    /// Issued in Alarm, to keep out of Emergency.
    Preventive,
    /// Issued in Emergency.
    Corrective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub id: String,
    pub bus: u32,
    /// Reactive injection, p.u.
    pub dq: f64,
    pub kind: ActionKind,
    pub predicted_l_max_after: f64,
    /// Set iff the verification power flow converged.
    pub verified_l_max_after: Option<f64>,
    #[serde(default)]
    pub verified_l_sum_after: Option<f64>,
    /// Verification was attempted and the power flow failed.
    #[serde(default)]
    pub unverifiable: bool,
    pub auto_eligible: bool,
}

impl ControlAction {
    /// Value the ranking sorts on.
    pub fn rank_key(&self) -> f64 {
        self.verified_l_max_after.unwrap_or(self.predicted_l_max_after)
    }

    pub fn perturbation(&self) -> Perturbation {
        Perturbation::injection(self.bus, self.dq)
    }
}

/// Total order: verified (else predicted) l_max after, then smaller dq,
/// then lower bus id.
pub fn rank_order(a: &ControlAction, b: &ControlAction) -> Ordering {
    a.rank_key()
        .total_cmp(&b.rank_key())
        .then(a.dq.total_cmp(&b.dq))
        .then(a.bus.cmp(&b.bus))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    ModelOnly,
    ModelPlusVerification,
    AnalyticFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    pub actions: Vec<ControlAction>,
    pub basis: Basis,
    pub state_class: StateClass,
    pub l_max: f64,
    /// Logical tick at issue.
    pub timestamp: u64,
    /// The fallback search ran out of budget before reaching Normal.
    #[serde(default)]
    pub incomplete: bool,
}

impl Recommendation {
    pub fn top(&self) -> Option<&ControlAction> {
        self.actions.first()
    }

    /// All actions as one perturbation.
    pub fn combined(&self) -> Perturbation {
        let mut injections = BTreeMap::new();
        for a in &self.actions {
            *injections.entry(a.bus).or_insert(0.0) += a.dq;
        }
        Perturbation {
            injections,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub thresholds: Thresholds,
    pub verify: bool,
    /// Largest dq the combined mode may apply without a human.
    pub auto_cap: f64,
    /// Predictions below this are treated as zero.
    pub noise_floor: f64,
    /// Candidate buses and step for the greedy fallback.
    pub candidates: Vec<u32>,
    pub step_dq: f64,
    pub budget: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            verify: true,
            auto_cap: 0.5,
            noise_floor: 0.01,
            candidates: Vec::new(),
            step_dq: 0.1,
            budget: 5.0,
        }
    }
}

impl ControlConfig {
    /// Thresholds, candidates and greedy step of a scenario profile.
    pub fn from_scenario(config: &crate::scenario::ScenarioConfig) -> Self {
        Self {
            thresholds: config.labeling.thresholds,
            candidates: config.injection_candidates.clone(),
            step_dq: config.labeling.step_dq,
            budget: config.labeling.budget,
            ..Default::default()
        }
    }
}

fn options() -> crate::grid::PowerFlowOptions {
    crate::scenario::scenario_options()
}

fn assess(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    thresholds: &Thresholds,
) -> Result<LIndexReport, ControlError> {
    if !solution.converged {
        return Err(ControlError::NoSteadyState);
    }
    let f = f_matrix_for_case(case)?;
    Ok(compute_l_index(solution, &f, thresholds)?)
}

/// Applies the action, re-solves from `solution` and fills the verified
/// fields. A failed power flow leaves them empty and marks the action.
pub fn verify_action(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    action: &ControlAction,
    thresholds: &Thresholds,
) -> Result<ControlAction, ControlError> {
    if !case.buses.iter().any(|b| b.id == action.bus) {
        return Err(ControlError::UnknownBus(action.bus));
    }
    let mut out = action.clone();
    let after = apply_perturbation(case, &action.perturbation())?;
    match solve_power_flow_from(&after, &options(), &solution.v) {
        Ok(sol) if sol.converged => {
            let report = assess(&after, &sol, thresholds)?;
            out.verified_l_max_after = Some(report.l_max);
            out.verified_l_sum_after = Some(report.l_sum);
            out.unverifiable = false;
        }
        Ok(_) | Err(GridError::SingularJacobian { .. }) => {
            out.verified_l_max_after = None;
            out.verified_l_sum_after = None;
            out.unverifiable = true;
        }
        Err(e) => return Err(e.into()),
    }
    Ok(out)
}

/// Greedy result as an ordered sequence of single steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySequence {
    pub actions: Vec<ControlAction>,
    pub incomplete: bool,
    pub l_max_before: f64,
    pub l_sum_before: f64,
}

/// The labeling oracle, returned step by step. Each step is power-flow
/// verified on the state left by the previous ones.
pub fn greedy_corrective_search(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    candidates: &[u32],
    thresholds: &Thresholds,
    step_dq: f64,
    budget: f64,
) -> Result<GreedySequence, ControlError> {
    let labeling = label_corrective_injections(case, solution, candidates, thresholds.alarm, step_dq, budget)?;
    let kind = if labeling.l_max_before >= thresholds.emergency {
        ActionKind::Corrective
    } else {
        ActionKind::Preventive
    };
    let actions = labeling
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| ControlAction {
            id: format!("g{k}"),
            bus: s.bus,
            dq: s.dq,
            kind,
            predicted_l_max_after: s.l_max,
            verified_l_max_after: Some(s.l_max),
            verified_l_sum_after: Some(s.l_sum),
            unverifiable: false,
            auto_eligible: false,
        })
        .collect();
    Ok(GreedySequence {
        actions,
        incomplete: labeling.status == LabelStatus::Unlabelable,
        l_max_before: labeling.l_max_before,
        l_sum_before: labeling.l_sum_before,
    })
}

/// Builds the recommendation for the current state. `id` names it; action
/// ids are `{id}.{bus}`. With no bundle, or when the model proposes nothing
/// that verifiably helps, the greedy search supplies the actions (one per
/// bus, its accumulated injection there).
pub fn recommend_actions(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    bundle: Option<&ModelBundle>,
    measurement: Option<&crate::scenario::MeasurementVector>,
    config: &ControlConfig,
    id: &str,
    tick: u64,
) -> Result<Recommendation, ControlError> {
    let report = assess(case, solution, &config.thresholds)?;
    let mut rec = Recommendation {
        id: id.to_string(),
        actions: Vec::new(),
        basis: Basis::ModelOnly,
        state_class: report.state_class,
        l_max: report.l_max,
        timestamp: tick,
        incomplete: false,
    };
    if report.state_class == StateClass::Normal {
        return Ok(rec);
    }
    let kind = if report.state_class == StateClass::Emergency {
        ActionKind::Corrective
    } else {
        ActionKind::Preventive
    };
    let alarm = config.thresholds.alarm;

    if let Some(bundle) = bundle {
        let owned;
        let m = match measurement {
            Some(m) => m,
            None => {
                owned = extract_features(case, solution, &bundle.schema)?;
                &owned
            }
        };
        let preds = bundle.predict_injections(m)?;
        let positive: Vec<(u32, f64)> = preds.into_iter().filter(|&(_, q)| q >= config.noise_floor).collect();
        let total: f64 = positive.iter().map(|p| p.1).sum();
        // Predicted effect: the full set lands at the alarm level, shared in
        // proportion to each bus's part of the total.
        let l = report.l_max;
        rec.actions = positive
            .iter()
            .map(|&(bus, dq)| ControlAction {
                id: format!("{id}.{bus}"),
                bus,
                dq,
                kind,
                predicted_l_max_after: l - (l - alarm).max(0.0) * dq / total,
                verified_l_max_after: None,
                verified_l_sum_after: None,
                unverifiable: false,
                auto_eligible: false,
            })
            .collect();
        if config.verify {
            rec.basis = Basis::ModelPlusVerification;
            rec.actions = verify_all(case, solution, &rec.actions, &config.thresholds)?;
        }
    }

    let helpful = rec
        .actions
        .iter()
        .any(|a| a.verified_l_max_after.map_or(!config.verify, |v| v < report.l_max));
    if !helpful {
        let seq = greedy_corrective_search(
            case,
            solution,
            &config.candidates,
            &config.thresholds,
            config.step_dq,
            config.budget,
        )?;
        let mut per_bus: BTreeMap<u32, f64> = BTreeMap::new();
        for a in &seq.actions {
            *per_bus.entry(a.bus).or_insert(0.0) += a.dq;
        }
        let last = seq.actions.last().map_or(report.l_max, |a| a.predicted_l_max_after);
        rec.actions = per_bus
            .into_iter()
            .map(|(bus, dq)| ControlAction {
                id: format!("{id}.{bus}"),
                bus,
                dq,
                kind,
                predicted_l_max_after: last,
                verified_l_max_after: None,
                verified_l_sum_after: None,
                unverifiable: false,
                auto_eligible: false,
            })
            .collect();
        if config.verify {
            rec.actions = verify_all(case, solution, &rec.actions, &config.thresholds)?;
        }
        rec.basis = Basis::AnalyticFallback;
        rec.incomplete = seq.incomplete || rec.actions.is_empty();
    }

    for a in rec.actions.iter_mut() {
        a.auto_eligible = a.dq <= config.auto_cap && a.verified_l_max_after.is_some_and(|v| v < report.l_max);
    }
    rec.actions.sort_by(rank_order);
    Ok(rec)
}

fn verify_all(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    actions: &[ControlAction],
    thresholds: &Thresholds,
) -> Result<Vec<ControlAction>, ControlError> {
    actions
        .par_iter()
        .map(|a| verify_action(case, solution, a, thresholds))
        .collect()
}
