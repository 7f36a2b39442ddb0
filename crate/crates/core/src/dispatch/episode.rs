use serde::{Deserialize, Serialize};

use super::{
    dispatch_step, sample_disturbance, AdversaryConfig, DispatchContext, DispatchError, DispatchInput, DispatchState,
    EventPayload, Mode, Verdict,
};
use crate::grid::{NetworkCase, Perturbation};
use crate::scenario::CorruptionConfig;
use crate::stability::StateClass;

/// Per-tick reward by end-of-tick class, the divergence penalty (in place
/// of the class reward) and the cost per p.u. of applied injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffWeights {
    pub normal: f64,
    pub alarm: f64,
    pub emergency: f64,
    pub unresolved: f64,
    pub effort: f64,
}

impl Default for PayoffWeights {
    fn default() -> Self {
        Self {
            normal: 1.0,
            alarm: 0.0,
            emergency: -1.0,
            unresolved: -10.0,
            effort: 0.01,
        }
    }
}

impl PayoffWeights {
    pub fn class_reward(&self, class: StateClass) -> f64 {
        match class {
            StateClass::Normal => self.normal,
            StateClass::Alarm => self.alarm,
            StateClass::Emergency => self.emergency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub ticks: u64,
    pub mode: Mode,
    pub payoff: PayoffWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub tick: u64,
    pub bus: u32,
    pub dq: f64,
    /// False when applied by (auto-approved) operator decision.
    pub automatic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEpisode {
    pub seed: u64,
    pub mode: Mode,
    pub ticks: u64,
    pub disturbances: Vec<(u64, Perturbation)>,
    pub attacks: Vec<(u64, CorruptionConfig)>,
    pub actions: Vec<AppliedAction>,
    /// Per-tick payoff; `payoff` is the sum.
    pub rewards: Vec<f64>,
    pub payoff: f64,
    /// End-of-tick state is Normal on the last tick.
    pub recovered: bool,
    /// Ticks from the first non-Normal assessment to the first Normal
    /// end-of-tick; 0 when the state never left Normal.
    pub time_to_recover: Option<u64>,
    /// End-of-tick l_sum (the last converged state on Unresolved ticks).
    pub l_sum_trace: Vec<f64>,
    pub l_max_trace: Vec<f64>,
    pub class_trace: Vec<StateClass>,
    pub unresolved_ticks: u64,
    /// Headless OpenLoop: operator decisions were auto-approved.
    pub auto_approved: bool,
}

/// Adversary move, then the tick (assessment and controller move), then,
/// in headless OpenLoop, approval of the top pending action.
pub fn run_episode(
    case: &NetworkCase,
    adversary: &AdversaryConfig,
    ctx: &DispatchContext,
    config: &EpisodeConfig,
) -> Result<(GameEpisode, DispatchState), DispatchError> {
    adversary.validate()?;
    let mut state = DispatchState::new(case.clone(), ctx)?;
    if config.mode != Mode::Monitor {
        state = dispatch_step(ctx, state, &DispatchInput::ModeChange { mode: config.mode })?.0;
    }
    let mut ep = GameEpisode {
        seed: adversary.rng_seed,
        mode: config.mode,
        ticks: config.ticks,
        disturbances: Vec::new(),
        attacks: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        payoff: 0.0,
        recovered: false,
        time_to_recover: None,
        l_sum_trace: Vec::new(),
        l_max_trace: Vec::new(),
        class_trace: Vec::new(),
        unresolved_ticks: 0,
        auto_approved: config.mode == Mode::OpenLoop,
    };
    let mut first_alarm: Option<u64> = None;
    for t in 1..=config.ticks {
        let mv = sample_disturbance(adversary, &state.current_case, t);
        let mut events = Vec::new();
        if let Some(p) = mv.perturbation {
            let (s, ev) = dispatch_step(
                ctx,
                state,
                &DispatchInput::Disturbance {
                    perturbation: p.clone(),
                },
            )?;
            state = s;
            if matches!(ev[0].payload, EventPayload::DisturbanceInjected { .. }) {
                ep.disturbances.push((t, p));
            }
        }
        if let Some(a) = mv.attack {
            ep.attacks.push((t, a));
        }
        let (s, ev) = dispatch_step(ctx, state, &DispatchInput::Tick { attack: mv.attack })?;
        state = s;
        events.extend(ev);
        if config.mode == Mode::OpenLoop {
            if let Some(rec) = state.pending.first() {
                let input = DispatchInput::Decision {
                    id: rec.id.clone(),
                    verdict: Verdict::Apply,
                };
                let (s, ev) = dispatch_step(ctx, state, &input)?;
                state = s;
                events.extend(ev);
            }
        }

        let mut unresolved = false;
        let mut effort = 0.0;
        for e in &events {
            match &e.payload {
                EventPayload::Telemetry {
                    state_class: Some(c), ..
                } if *c != StateClass::Normal && first_alarm.is_none() => first_alarm = Some(t),
                EventPayload::Unresolved { .. } => unresolved = true,
                EventPayload::AutoApplied { applied, .. } => {
                    for a in applied {
                        effort += a.dq.abs();
                        ep.actions.push(AppliedAction {
                            tick: t,
                            bus: a.bus,
                            dq: a.dq,
                            automatic: true,
                        });
                    }
                }
                EventPayload::OperatorApplied {
                    applied, l_max_after, ..
                } if l_max_after.is_some() => {
                    effort += applied.dq.abs();
                    ep.actions.push(AppliedAction {
                        tick: t,
                        bus: applied.bus,
                        dq: applied.dq,
                        automatic: false,
                    });
                }
                _ => {}
            }
        }
        let class = state.state_class();
        let reward = if unresolved {
            ep.unresolved_ticks += 1;
            config.payoff.unresolved
        } else {
            config.payoff.class_reward(class)
        } - config.payoff.effort * effort;
        ep.rewards.push(reward);
        ep.l_sum_trace.push(state.last_report.l_sum);
        ep.l_max_trace.push(state.last_report.l_max);
        ep.class_trace.push(class);
        if let (Some(t0), None) = (first_alarm, ep.time_to_recover) {
            if class == StateClass::Normal && !unresolved {
                ep.time_to_recover = Some(t - t0 + 1);
            }
        }
    }
    ep.payoff = ep.rewards.iter().sum();
    ep.recovered = state.state_class() == StateClass::Normal
        && !matches!(
            state.event_log.last().map(|e| &e.payload),
            Some(EventPayload::Unresolved { .. })
        );
    if first_alarm.is_none() {
        ep.time_to_recover = Some(0);
    }
    if !ep.recovered {
        ep.time_to_recover = None;
    }
    Ok((ep, state))
}
