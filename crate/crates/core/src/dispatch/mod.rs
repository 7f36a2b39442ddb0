//! The dispatcher state machine. Every change to the grid goes through
//! [`dispatch_step`], which is a pure function of the previous state, the
//! input and a fixed context (model bundle and control settings). The event
//! log carries enough to rebuild the inputs, so replaying it from the
//! initial state reproduces the final state exactly.

mod adversary;
mod episode;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{recommend_actions, ControlConfig, ControlError, Recommendation};
use crate::grid::{
    apply_perturbation, solve_power_flow, solve_power_flow_from, GridError, NetworkCase, Perturbation,
    PowerFlowSolution,
};
use crate::learner::ModelBundle;
use crate::scenario::{corrupt_measurements, extract_features, CorruptionConfig, ScenarioError};
use crate::stability::{compute_l_index, f_matrix_for_case, LIndexReport, StabilityError, StateClass};

pub use adversary::{sample_disturbance, AdversaryConfig, AdversaryMove, LoadSpike, TelemetryAttack};
pub use episode::{run_episode, AppliedAction, EpisodeConfig, GameEpisode, PayoffWeights};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("base case does not converge")]
    BaseUnconverged,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Assess and classify only.
    Monitor,
    /// Recommendations wait for the operator.
    OpenLoop,
    /// Best verified action applied automatically.
    ClosedLoop,
    /// Small verified actions applied automatically, the rest queued.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Apply,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum DispatchInput {
    /// Advance the clock: solve, assess, and let the controller move.
    /// `attack` corrupts the telemetry the model sees on this tick.
    Tick {
        #[serde(default)]
        attack: Option<CorruptionConfig>,
    },
    /// `id` is a pending recommendation (meaning its top action) or one of
    /// its action ids.
    Decision {
        id: String,
        verdict: Verdict,
    },
    ModeChange {
        mode: Mode,
    },
    Disturbance {
        perturbation: Perturbation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    UnknownId,
    ModeConflict,
    InvalidInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedInjection {
    pub action_id: String,
    pub bus: u32,
    pub dq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data")]
pub enum EventPayload {
    Telemetry {
        converged: bool,
        l_max: Option<f64>,
        l_sum: Option<f64>,
        state_class: Option<StateClass>,
        #[serde(default)]
        attack: Option<CorruptionConfig>,
    },
    RecommendationIssued {
        recommendation: Recommendation,
        /// Left in `pending` for the operator.
        queued: bool,
        #[serde(default)]
        note: Option<String>,
    },
    OperatorApplied {
        /// The id the operator sent.
        decision_id: String,
        recommendation_id: String,
        applied: AppliedInjection,
        l_max_after: Option<f64>,
    },
    OperatorRejected {
        decision_id: String,
        recommendation_id: String,
    },
    AutoApplied {
        recommendation_id: String,
        applied: Vec<AppliedInjection>,
        l_max_after: Option<f64>,
    },
    ModeChanged {
        from: Mode,
        to: Mode,
    },
    DisturbanceInjected {
        perturbation: Perturbation,
    },
    Unresolved {
        reason: String,
    },
    /// An input refused without changing the grid.
    InputRejected {
        code: RejectCode,
        reason: String,
        input: DispatchInput,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchEvent {
    /// Position in the log.
    pub seq: u64,
    pub tick: u64,
    /// `{"kind": ..., "data": {...}}`. Adjacent rather than internal
    /// tagging: the buffered form cannot read integer map keys back.
    pub payload: EventPayload,
}

impl DispatchEvent {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            EventPayload::Telemetry { .. } => "Telemetry",
            EventPayload::RecommendationIssued { .. } => "RecommendationIssued",
            EventPayload::OperatorApplied { .. } => "OperatorApplied",
            EventPayload::OperatorRejected { .. } => "OperatorRejected",
            EventPayload::AutoApplied { .. } => "AutoApplied",
            EventPayload::ModeChanged { .. } => "ModeChanged",
            EventPayload::DisturbanceInjected { .. } => "DisturbanceInjected",
            EventPayload::Unresolved { .. } => "Unresolved",
            EventPayload::InputRejected { .. } => "InputRejected",
        }
    }
}

/// Model and control settings; fixed for the life of a dispatcher.
#[derive(Debug, Clone, Default)]
pub struct DispatchContext {
    pub bundle: Option<ModelBundle>,
    pub control: ControlConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchState {
    pub mode: Mode,
    pub current_case: NetworkCase,
    /// Case of `last_solution`; the fallback after a divergence.
    pub last_converged_case: NetworkCase,
    pub last_solution: PowerFlowSolution,
    pub last_report: LIndexReport,
    pub pending: Vec<Recommendation>,
    pub event_log: Vec<DispatchEvent>,
    pub tick: u64,
    pub next_recommendation: u64,
}

fn options() -> crate::grid::PowerFlowOptions {
    crate::scenario::scenario_options()
}

impl DispatchState {
    /// Tick 0, Monitor mode, base case solved and assessed.
    pub fn new(case: NetworkCase, ctx: &DispatchContext) -> Result<Self, DispatchError> {
        ctx.control.thresholds.validate()?;
        let solution = solve_power_flow(&case, &options())?;
        if !solution.converged {
            return Err(DispatchError::BaseUnconverged);
        }
        if let Some(b) = &ctx.bundle {
            extract_features(&case, &solution, &b.schema)?;
        }
        let report = compute_l_index(&solution, &f_matrix_for_case(&case)?, &ctx.control.thresholds)?;
        Ok(Self {
            mode: Mode::Monitor,
            last_converged_case: case.clone(),
            current_case: case,
            last_solution: solution,
            last_report: report,
            pending: Vec::new(),
            event_log: Vec::new(),
            tick: 0,
            next_recommendation: 0,
        })
    }

    pub fn state_class(&self) -> StateClass {
        self.last_report.state_class
    }

    fn emit(&mut self, out: &mut Vec<DispatchEvent>, payload: EventPayload) {
        let e = DispatchEvent {
            seq: self.event_log.len() as u64,
            tick: self.tick,
            payload,
        };
        self.event_log.push(e.clone());
        out.push(e);
    }

    /// Solves `case` from the last solution; on success it becomes current.
    fn adopt(&mut self, case: NetworkCase, ctx: &DispatchContext) -> Result<bool, DispatchError> {
        let solved = match solve_power_flow_from(&case, &options(), &self.last_solution.v) {
            Ok(s) if s.converged => s,
            Ok(_) | Err(GridError::SingularJacobian { .. }) => return Ok(false),
            Err(e) => return Err(e.into()),
        };
        self.last_report = compute_l_index(&solved, &f_matrix_for_case(&case)?, &ctx.control.thresholds)?;
        self.last_solution = solved;
        self.last_converged_case = case.clone();
        self.current_case = case;
        Ok(true)
    }

    /// Applies injections to the current case. Returns the new l_max, or
    /// None (case unchanged) when the result does not solve.
    fn inject(&mut self, injections: &[AppliedInjection], ctx: &DispatchContext) -> Result<Option<f64>, DispatchError> {
        let mut p = Perturbation::default();
        for a in injections {
            *p.injections.entry(a.bus).or_insert(0.0) += a.dq;
        }
        let case = apply_perturbation(&self.current_case, &p)?;
        Ok(self.adopt(case, ctx)?.then_some(self.last_report.l_max))
    }
}

fn reject(
    state: &mut DispatchState,
    out: &mut Vec<DispatchEvent>,
    code: RejectCode,
    reason: String,
    input: &DispatchInput,
) {
    state.emit(
        out,
        EventPayload::InputRejected {
            code,
            reason,
            input: input.clone(),
        },
    );
}

/// One transition. Divergence and bad operator input are recorded as
/// events, not returned as errors; errors mean a broken context (schema
/// mismatch, invalid thresholds).
pub fn dispatch_step(
    ctx: &DispatchContext,
    mut state: DispatchState,
    input: &DispatchInput,
) -> Result<(DispatchState, Vec<DispatchEvent>), DispatchError> {
    let mut out = Vec::new();
    match input {
        DispatchInput::ModeChange { mode } => {
            let from = state.mode;
            state.mode = *mode;
            if *mode == Mode::ClosedLoop {
                state.pending.clear();
            }
            state.emit(&mut out, EventPayload::ModeChanged { from, to: *mode });
        }
        DispatchInput::Disturbance { perturbation } => match apply_perturbation(&state.current_case, perturbation) {
            Ok(case) => {
                state.current_case = case;
                state.emit(
                    &mut out,
                    EventPayload::DisturbanceInjected {
                        perturbation: perturbation.clone(),
                    },
                );
            }
            Err(e) => reject(&mut state, &mut out, RejectCode::InvalidInput, e.to_string(), input),
        },
        DispatchInput::Decision { id, verdict } => decide(ctx, &mut state, &mut out, id, *verdict, input)?,
        DispatchInput::Tick { attack } => tick(ctx, &mut state, &mut out, attack.as_ref())?,
    }
    Ok((state, out))
}

fn decide(
    ctx: &DispatchContext,
    state: &mut DispatchState,
    out: &mut Vec<DispatchEvent>,
    id: &str,
    verdict: Verdict,
    input: &DispatchInput,
) -> Result<(), DispatchError> {
    if !matches!(state.mode, Mode::OpenLoop | Mode::Combined) {
        let reason = format!("operator decisions are not accepted in {:?} mode", state.mode);
        reject(state, out, RejectCode::ModeConflict, reason, input);
        return Ok(());
    }
    let found = state.pending.iter().enumerate().find_map(|(r, rec)| {
        if rec.id == id {
            Some((r, rec.actions.first().map(|_| 0)))
        } else {
            rec.actions.iter().position(|a| a.id == id).map(|k| (r, Some(k)))
        }
    });
    let Some((r, action)) = found else {
        reject(
            state,
            out,
            RejectCode::UnknownId,
            format!("no pending recommendation or action {id}"),
            input,
        );
        return Ok(());
    };
    let rec_id = state.pending[r].id.clone();
    match verdict {
        Verdict::Reject => {
            let whole = rec_id == id;
            if whole {
                state.pending.remove(r);
            } else {
                let rec = &mut state.pending[r];
                rec.actions.retain(|a| a.id != id);
                if rec.actions.is_empty() {
                    state.pending.remove(r);
                }
            }
            state.emit(
                out,
                EventPayload::OperatorRejected {
                    decision_id: id.to_string(),
                    recommendation_id: rec_id,
                },
            );
        }
        Verdict::Apply => {
            let Some(k) = action else {
                reject(
                    state,
                    out,
                    RejectCode::InvalidInput,
                    format!("recommendation {id} has no actions"),
                    input,
                );
                return Ok(());
            };
            let a = &state.pending[r].actions[k];
            let applied = AppliedInjection {
                action_id: a.id.clone(),
                bus: a.bus,
                dq: a.dq,
            };
            // The rest of the recommendation was computed for the old state.
            state.pending.remove(r);
            let l_max_after = state.inject(std::slice::from_ref(&applied), ctx)?;
            state.emit(
                out,
                EventPayload::OperatorApplied {
                    decision_id: id.to_string(),
                    recommendation_id: rec_id,
                    applied,
                    l_max_after,
                },
            );
        }
    }
    Ok(())
}

fn tick(
    ctx: &DispatchContext,
    state: &mut DispatchState,
    out: &mut Vec<DispatchEvent>,
    attack: Option<&CorruptionConfig>,
) -> Result<(), DispatchError> {
    state.tick += 1;
    let case = state.current_case.clone();
    if !state.adopt(case, ctx)? {
        state.emit(
            out,
            EventPayload::Telemetry {
                converged: false,
                l_max: None,
                l_sum: None,
                state_class: None,
                attack: attack.copied(),
            },
        );
        state.current_case = state.last_converged_case.clone();
        state.emit(
            out,
            EventPayload::Unresolved {
                reason: "power flow diverged; reverted to the last converged case".into(),
            },
        );
        if state.mode == Mode::ClosedLoop {
            state.pending.clear();
        }
        return Ok(());
    }
    let report = state.last_report.clone();
    state.emit(
        out,
        EventPayload::Telemetry {
            converged: true,
            l_max: Some(report.l_max),
            l_sum: Some(report.l_sum),
            state_class: Some(report.state_class),
            attack: attack.copied(),
        },
    );
    if state.mode == Mode::Monitor {
        return Ok(());
    }
    if report.state_class == StateClass::Normal {
        state.pending.clear();
        return Ok(());
    }

    let measurement = match (&ctx.bundle, attack) {
        (Some(b), Some(cfg)) => {
            let clean = extract_features(&state.current_case, &state.last_solution, &b.schema)?;
            Some(corrupt_measurements(&clean, cfg, &b.schema, state.tick, None))
        }
        _ => None,
    };
    let rec_id = format!("r{}", state.next_recommendation);
    state.next_recommendation += 1;
    let rec = recommend_actions(
        &state.current_case,
        &state.last_solution,
        ctx.bundle.as_ref(),
        measurement.as_ref(),
        &ctx.control,
        &rec_id,
        state.tick,
    )?;

    match state.mode {
        Mode::Monitor => unreachable!(),
        Mode::OpenLoop => {
            state.pending = vec![rec.clone()];
            state.emit(
                out,
                EventPayload::RecommendationIssued {
                    recommendation: rec,
                    queued: true,
                    note: None,
                },
            );
        }
        Mode::ClosedLoop => {
            state.pending.clear();
            let best = rec
                .actions
                .iter()
                .find(|a| a.verified_l_max_after.is_some_and(|v| v < report.l_max))
                .map(|a| AppliedInjection {
                    action_id: a.id.clone(),
                    bus: a.bus,
                    dq: a.dq,
                });
            let note = best.is_none().then(|| "no verified action available".to_string());
            state.emit(
                out,
                EventPayload::RecommendationIssued {
                    recommendation: rec.clone(),
                    queued: false,
                    note,
                },
            );
            if let Some(a) = best {
                let l_max_after = state.inject(std::slice::from_ref(&a), ctx)?;
                state.emit(
                    out,
                    EventPayload::AutoApplied {
                        recommendation_id: rec.id,
                        applied: vec![a],
                        l_max_after,
                    },
                );
            }
        }
        Mode::Combined => {
            let (auto, rest): (Vec<_>, Vec<_>) = rec.actions.iter().cloned().partition(|a| a.auto_eligible);
            let mut queued = rec.clone();
            queued.actions = rest;
            let has_rest = !queued.actions.is_empty();
            state.pending = if has_rest { vec![queued] } else { Vec::new() };
            state.emit(
                out,
                EventPayload::RecommendationIssued {
                    recommendation: rec.clone(),
                    queued: has_rest,
                    note: None,
                },
            );
            if !auto.is_empty() {
                let applied: Vec<AppliedInjection> = auto
                    .iter()
                    .map(|a| AppliedInjection {
                        action_id: a.id.clone(),
                        bus: a.bus,
                        dq: a.dq,
                    })
                    .collect();
                let l_max_after = state.inject(&applied, ctx)?;
                state.emit(
                    out,
                    EventPayload::AutoApplied {
                        recommendation_id: rec.id,
                        applied,
                        l_max_after,
                    },
                );
            }
        }
    }
    Ok(())
}

/// The inputs that produced `log`, in order.
pub fn inputs_from_log(log: &[DispatchEvent]) -> Vec<DispatchInput> {
    log.iter()
        .filter_map(|e| match &e.payload {
            EventPayload::Telemetry { attack, .. } => Some(DispatchInput::Tick { attack: *attack }),
            EventPayload::OperatorApplied { decision_id, .. } => Some(DispatchInput::Decision {
                id: decision_id.clone(),
                verdict: Verdict::Apply,
            }),
            EventPayload::OperatorRejected { decision_id, .. } => Some(DispatchInput::Decision {
                id: decision_id.clone(),
                verdict: Verdict::Reject,
            }),
            EventPayload::ModeChanged { to, .. } => Some(DispatchInput::ModeChange { mode: *to }),
            EventPayload::DisturbanceInjected { perturbation } => Some(DispatchInput::Disturbance {
                perturbation: perturbation.clone(),
            }),
            EventPayload::InputRejected { input, .. } => Some(input.clone()),
            EventPayload::RecommendationIssued { .. }
            | EventPayload::AutoApplied { .. }
            | EventPayload::Unresolved { .. } => None,
        })
        .collect()
}

/// Re-runs the inputs recorded in `log` from `initial`.
pub fn replay(
    ctx: &DispatchContext,
    initial: &DispatchState,
    log: &[DispatchEvent],
) -> Result<DispatchState, DispatchError> {
    let mut state = initial.clone();
    for input in inputs_from_log(log) {
        state = dispatch_step(ctx, state, &input)?.0;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, BusKind, ElementRef, Generator};
    use crate::stability::Thresholds;

    /// Slack feeding load bus 2 over two parallel lines.
    pub(crate) fn two_bus(q: f64) -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            buses: vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::PQ).with_load(0.0, q)],
            branches: vec![Branch::line(1, 2, 0.0, 0.2, 0.0), Branch::line(1, 2, 0.0, 0.2, 0.0)],
            generators: vec![Generator::new(1, 0.0, 1.0)],
        }
    }

    fn ctx() -> DispatchContext {
        DispatchContext {
            bundle: None,
            control: ControlConfig {
                thresholds: Thresholds::default(),
                candidates: vec![2],
                ..Default::default()
            },
        }
    }

    fn step(state: DispatchState, input: DispatchInput) -> (DispatchState, Vec<DispatchEvent>) {
        dispatch_step(&ctx(), state, &input).unwrap()
    }

    fn kinds(events: &[DispatchEvent]) -> Vec<&'static str> {
        events.iter().map(|e| e.kind()).collect()
    }

    const TICK: DispatchInput = DispatchInput::Tick { attack: None };

    fn mode(m: Mode) -> DispatchInput {
        DispatchInput::ModeChange { mode: m }
    }

    #[test]
    fn monitor_normal_tick_logs_telemetry_only() {
        let s = DispatchState::new(two_bus(0.5), &ctx()).unwrap();
        let (s, ev) = step(s, TICK);
        assert_eq!(kinds(&ev), vec!["Telemetry"]);
        assert_eq!((s.tick, s.event_log.len()), (1, 1));
    }

    #[test]
    fn open_loop_waits_for_the_operator() {
        let s = DispatchState::new(two_bus(2.4), &ctx()).unwrap();
        assert_eq!(s.state_class(), StateClass::Alarm);
        let (s, _) = step(s, mode(Mode::OpenLoop));
        let (s, ev) = step(s, TICK);
        assert_eq!(kinds(&ev), vec!["Telemetry", "RecommendationIssued"]);
        assert_eq!(s.pending.len(), 1);
        let before = s.last_report.l_max;
        let id = s.pending[0].id.clone();
        let (s, ev) = step(
            s,
            DispatchInput::Decision {
                id,
                verdict: Verdict::Apply,
            },
        );
        assert_eq!(kinds(&ev), vec!["OperatorApplied"]);
        assert!(s.pending.is_empty());
        assert!(s.last_report.l_max < before);
        let (s, _) = step(s, TICK);
        assert_eq!(s.state_class(), StateClass::Normal);
    }

    #[test]
    fn closed_loop_applies_in_the_same_tick() {
        let s = DispatchState::new(two_bus(2.48), &ctx()).unwrap();
        assert_eq!(s.state_class(), StateClass::Emergency);
        let (s, _) = step(s, mode(Mode::ClosedLoop));
        let (s, ev) = step(s, TICK);
        assert_eq!(kinds(&ev), vec!["Telemetry", "RecommendationIssued", "AutoApplied"]);
        assert!(s.pending.is_empty());
        assert_eq!(s.state_class(), StateClass::Normal);
    }

    #[test]
    fn decisions_are_guarded() {
        let s = DispatchState::new(two_bus(2.4), &ctx()).unwrap();
        let (s, _) = step(s, mode(Mode::OpenLoop));
        let (s, _) = step(s, TICK);
        let id = s.pending[0].id.clone();
        let (s, ev) = step(
            s,
            DispatchInput::Decision {
                id: "nope".into(),
                verdict: Verdict::Apply,
            },
        );
        assert!(matches!(
            ev[0].payload,
            EventPayload::InputRejected {
                code: RejectCode::UnknownId,
                ..
            }
        ));
        let (s, _) = step(s, mode(Mode::Monitor));
        let (s, ev) = step(
            s,
            DispatchInput::Decision {
                id: id.clone(),
                verdict: Verdict::Apply,
            },
        );
        assert!(matches!(
            ev[0].payload,
            EventPayload::InputRejected {
                code: RejectCode::ModeConflict,
                ..
            }
        ));
        let (s, _) = step(s, mode(Mode::OpenLoop));
        let case = s.current_case.clone();
        let (s, ev) = step(
            s,
            DispatchInput::Decision {
                id,
                verdict: Verdict::Reject,
            },
        );
        assert_eq!(kinds(&ev), vec!["OperatorRejected"]);
        assert!(s.pending.is_empty());
        assert_eq!(s.current_case, case);
    }

    #[test]
    fn divergence_reverts_and_is_unresolved() {
        let s = DispatchState::new(two_bus(0.5), &ctx()).unwrap();
        let huge = Perturbation {
            load_scale: [(2, 40.0)].into(),
            ..Default::default()
        };
        let (s, ev) = step(s, DispatchInput::Disturbance { perturbation: huge });
        assert_eq!(kinds(&ev), vec!["DisturbanceInjected"]);
        let (s, ev) = step(s, TICK);
        assert_eq!(kinds(&ev), vec!["Telemetry", "Unresolved"]);
        assert_eq!(s.current_case, two_bus(0.5));
        let islanding = Perturbation {
            outages: vec![ElementRef::Branch(0), ElementRef::Branch(1)],
            ..Default::default()
        };
        let (_, ev) = step(
            s,
            DispatchInput::Disturbance {
                perturbation: islanding,
            },
        );
        assert!(matches!(
            ev[0].payload,
            EventPayload::InputRejected {
                code: RejectCode::InvalidInput,
                ..
            }
        ));
    }

    #[test]
    fn replay_reproduces_the_state() {
        let c = ctx();
        let initial = DispatchState::new(two_bus(2.0), &c).unwrap();
        let inputs = vec![
            TICK,
            mode(Mode::OpenLoop),
            DispatchInput::Disturbance {
                perturbation: Perturbation::uniform_scale(&two_bus(0.0), 1.2),
            },
            TICK,
            DispatchInput::Decision {
                id: "r0".into(),
                verdict: Verdict::Apply,
            },
            DispatchInput::Decision {
                id: "r0".into(),
                verdict: Verdict::Apply,
            },
            mode(Mode::Combined),
            DispatchInput::Disturbance {
                perturbation: Perturbation::uniform_scale(&two_bus(0.0), 1.02),
            },
            TICK,
            TICK,
        ];
        let mut s = initial.clone();
        for i in &inputs {
            s = dispatch_step(&c, s, i).unwrap().0;
        }
        assert_eq!(replay(&c, &initial, &s.event_log).unwrap(), s);
        let json = serde_json::to_string(&s.event_log).unwrap();
        let back: Vec<DispatchEvent> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s.event_log);
    }
}
