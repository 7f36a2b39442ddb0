//! Batch experiments: the corruption sweep, the corrective-control demo and
//! paired episode batches. Everything here is deterministic under its
//! seeds; wall-clock latency is kept out of the outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{greedy_corrective_search, recommend_actions, verify_action, ControlConfig, ControlError};
use crate::dispatch::{
    run_episode, AdversaryConfig, DispatchContext, DispatchError, EpisodeConfig, GameEpisode, LoadSpike, Mode,
    PayoffWeights,
};
use crate::grid::{apply_perturbation, solve_power_flow_from, GridError, NetworkCase, Perturbation, PowerFlowSolution};
use crate::learner::{evaluate_model, LearnError, Metrics, ModelBundle};
use crate::scenario::{
    generate_scenarios, scale_system, CorruptionConfig, CorruptionMode, LabeledSample, ScenarioConfig, ScenarioError,
};
use crate::stability::{compute_l_index, f_matrix_for_case, StabilityError, StateClass};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: CorruptionMode,
    pub rate: f64,
    pub model: Metrics,
    pub baseline: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Indicator metrics on the clean test set.
    pub clean: Metrics,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, mode: CorruptionMode, rate: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.mode == mode && r.rate == rate)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,rate,model_rmse,baseline_rmse,model_relative_rmse,baseline_relative_rmse\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{},{},{},{},{}",
                r.mode, r.rate, r.model.rmse, r.baseline.rmse, r.model.relative_rmse, r.baseline.relative_rmse
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "clean l_max rmse {:.6} (rel {:.4})\n",
            self.clean.rmse, self.clean.relative_rmse
        );
        let _ = writeln!(out, "{:<6} {:>5} {:>12} {:>12}", "mode", "rate", "model", "baseline");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:>5} {:>12.6} {:>12.6}",
                format!("{:?}", r.mode),
                r.rate,
                r.model.rmse,
                r.baseline.rmse
            );
        }
        out
    }
}

/// l_max error of the model and of the direct calculation over a grid of
/// corruption modes and rates. Draw i corrupts test sample i.
pub fn corruption_sweep(
    bundle: &ModelBundle,
    test: &[LabeledSample],
    case: &NetworkCase,
    modes: &[CorruptionMode],
    rates: &[f64],
    seed: u64,
) -> Result<SweepTable, ExperimentError> {
    let clean = evaluate_model(bundle, test, None, None)?;
    let grid: Vec<(CorruptionMode, f64)> = modes.iter().flat_map(|&m| rates.iter().map(move |&r| (m, r))).collect();
    let rows = grid
        .par_iter()
        .map(|&(mode, rate)| {
            let cfg = CorruptionConfig {
                rate,
                mode,
                rng_seed: seed,
                ..Default::default()
            };
            if !cfg.is_valid() {
                return Err(ExperimentError::Input(format!("invalid corruption rate {rate}")));
            }
            let r = evaluate_model(bundle, test, Some(&cfg), Some(case))?;
            Ok(SweepRow {
                mode,
                rate,
                model: r.per_target["l_max"],
                baseline: r.baseline.expect("baseline requested"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        clean: clean.per_target["l_max"],
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSource {
    Model,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub bus: u32,
    pub dq: f64,
    pub source: StepSource,
}

/// One scenario of the control demo. `l_max[0]`/`l_sum[0]` are before any
/// action, entry k after the k-th applied step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTrace {
    pub scenario: usize,
    pub lambda: f64,
    pub steps: Vec<DemoStep>,
    pub l_max: Vec<f64>,
    pub l_sum: Vec<f64>,
    pub success: bool,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDemo {
    pub alarm: f64,
    pub traces: Vec<DemoTrace>,
    pub success_rate: f64,
    pub decreasing_rate: f64,
    /// Share of scenarios reaching Normal within budget where the greedy
    /// search alone was asked (the fallback success rate).
    pub greedy_success_rate: f64,
}

impl ControlDemo {
    /// Long format: scenario, step, source, bus, dq, l_max, l_sum.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,step,source,bus,dq,l_max,l_sum\n");
        for t in &self.traces {
            for k in 0..t.l_sum.len() {
                let (src, bus, dq) = match k.checked_sub(1).map(|j| &t.steps[j]) {
                    None => ("before".to_string(), String::new(), String::new()),
                    Some(s) => (
                        format!("{:?}", s.source).to_lowercase(),
                        s.bus.to_string(),
                        s.dq.to_string(),
                    ),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    t.scenario, k, src, bus, dq, t.l_max[k], t.l_sum[k]
                );
            }
        }
        out
    }
}

struct Live {
    case: NetworkCase,
    solution: PowerFlowSolution,
}

impl Live {
    fn apply(&mut self, bus: u32, dq: f64) -> Result<Option<(f64, f64)>, ExperimentError> {
        let case = apply_perturbation(&self.case, &Perturbation::injection(bus, dq))?;
        match solve_power_flow_from(&case, &crate::scenario::scenario_options(), &self.solution.v) {
            Ok(sol) if sol.converged => {
                let r = compute_l_index(&sol, &f_matrix_for_case(&case)?, &Default::default())?;
                self.case = case;
                self.solution = sol;
                Ok(Some((r.l_max, r.l_sum)))
            }
            Ok(_) | Err(GridError::SingularJacobian { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Corrective control on the first `count` non-Normal scenarios sampled
/// from `scenarios`: the model's actions in rank order (each kept only if
/// it verifiably lowers l_max on the state it meets), then greedy steps
/// until l_max is below alarm or the budget runs out. Without a bundle the
/// greedy search does all of it.
pub fn control_demo(
    case: &NetworkCase,
    scenarios: &ScenarioConfig,
    bundle: Option<&ModelBundle>,
    control: &ControlConfig,
    count: usize,
) -> Result<ControlDemo, ExperimentError> {
    let alarm = control.thresholds.alarm;
    let mut picked = Vec::new();
    let mut drawn = 0;
    let mut batch_size = count.max(1) * 4;
    while picked.len() < count {
        let cfg = ScenarioConfig {
            rng_seed: scenarios.rng_seed.wrapping_add(drawn as u64),
            ..scenarios.clone()
        };
        let batch = generate_scenarios(case, &cfg, batch_size)?;
        for s in batch.scenarios {
            let f = f_matrix_for_case(&s.case)?;
            let r = compute_l_index(&s.solution, &f, &control.thresholds)?;
            if r.state_class != StateClass::Normal && picked.len() < count {
                picked.push((drawn + s.index, s));
            }
        }
        drawn += batch_size;
        if drawn > 100 * count.max(1) {
            return Err(ExperimentError::Input(format!(
                "only {} of {count} non-Normal scenarios in {drawn} draws",
                picked.len()
            )));
        }
        batch_size *= 2;
    }

    let traces = picked
        .par_iter()
        .map(|(index, s)| -> Result<(DemoTrace, bool), ExperimentError> {
            let f = f_matrix_for_case(&s.case)?;
            let r0 = compute_l_index(&s.solution, &f, &control.thresholds)?;
            let greedy_only = greedy_corrective_search(
                &s.case,
                &s.solution,
                &control.candidates,
                &control.thresholds,
                control.step_dq,
                control.budget,
            )?;
            let mut live = Live {
                case: s.case.clone(),
                solution: s.solution.clone(),
            };
            let mut t = DemoTrace {
                scenario: *index,
                lambda: s.lambda,
                steps: Vec::new(),
                l_max: vec![r0.l_max],
                l_sum: vec![r0.l_sum],
                success: false,
                strictly_decreasing: true,
            };
            if let Some(b) = bundle {
                let rec = recommend_actions(&s.case, &s.solution, Some(b), None, control, "demo", 0)?;
                for a in rec
                    .actions
                    .iter()
                    .filter(|_| rec.basis != crate::control::Basis::AnalyticFallback)
                {
                    let now = *t.l_max.last().expect("non-empty");
                    if now < alarm {
                        break;
                    }
                    let checked = verify_action(&live.case, &live.solution, a, &control.thresholds)?;
                    if checked.verified_l_max_after.is_some_and(|v| v < now) {
                        if let Some((lm, ls)) = live.apply(a.bus, a.dq)? {
                            t.steps.push(DemoStep {
                                bus: a.bus,
                                dq: a.dq,
                                source: StepSource::Model,
                            });
                            t.l_max.push(lm);
                            t.l_sum.push(ls);
                        }
                    }
                }
            }
            let spent: f64 = t.steps.iter().map(|s| s.dq).sum();
            if *t.l_max.last().expect("non-empty") >= alarm {
                let seq = greedy_corrective_search(
                    &live.case,
                    &live.solution,
                    &control.candidates,
                    &control.thresholds,
                    control.step_dq,
                    (control.budget - spent).max(0.0),
                )?;
                for a in &seq.actions {
                    if let Some((lm, ls)) = live.apply(a.bus, a.dq)? {
                        t.steps.push(DemoStep {
                            bus: a.bus,
                            dq: a.dq,
                            source: StepSource::Greedy,
                        });
                        t.l_max.push(lm);
                        t.l_sum.push(ls);
                    }
                }
            }
            t.success = *t.l_max.last().expect("non-empty") < alarm;
            t.strictly_decreasing = t.l_sum.windows(2).all(|w| w[1] < w[0]);
            Ok((t, !greedy_only.incomplete))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = traces.len().max(1) as f64;
    let rate = |f: &dyn Fn(&(DemoTrace, bool)) -> bool| traces.iter().filter(|t| f(t)).count() as f64 / n;
    Ok(ControlDemo {
        alarm,
        success_rate: rate(&|t| t.0.success),
        decreasing_rate: rate(&|t| t.0.strictly_decreasing),
        greedy_success_rate: rate(&|t| t.1),
        traces: traces.into_iter().map(|t| t.0).collect(),
    })
}

/// The stressed IEEE 118 game: loads and generation at 1.7x base (just
/// under the calibrated alarm level), against line trips, unit trips and
/// load spikes.
pub fn stressed_episode_setup(case: &NetworkCase, seed: u64) -> (NetworkCase, AdversaryConfig) {
    (
        scale_system(case, 1.7),
        AdversaryConfig {
            line_outage_rate: 0.1,
            gen_outage_rate: 0.02,
            load_spike: Some(LoadSpike {
                probability: 0.3,
                magnitude: (0.1, 0.5),
            }),
            telemetry_attack: None,
            rng_seed: seed,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub episodes: usize,
    pub mean_payoff: f64,
    pub min_payoff: f64,
    pub max_payoff: f64,
    pub recovered_rate: f64,
    pub mean_time_to_recover: Option<f64>,
    pub unresolved_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub seeds: Vec<u64>,
    pub per_mode: BTreeMap<String, ModeStats>,
    /// Per mode, share of seeds whose payoff is >= the Monitor payoff.
    pub paired_vs_monitor: BTreeMap<String, f64>,
    pub episodes: Vec<GameEpisode>,
}

/// Every mode on every seed, same adversary per seed.
pub fn episode_batch(
    case: &NetworkCase,
    adversary: &AdversaryConfig,
    ctx: &DispatchContext,
    modes: &[Mode],
    seeds: &[u64],
    ticks: u64,
) -> Result<EpisodeBatch, ExperimentError> {
    let jobs: Vec<(u64, Mode)> = seeds.iter().flat_map(|&s| modes.iter().map(move |&m| (s, m))).collect();
    let episodes = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let adv = AdversaryConfig {
                rng_seed: seed,
                ..adversary.clone()
            };
            let cfg = EpisodeConfig {
                ticks,
                mode,
                payoff: PayoffWeights::default(),
            };
            Ok(run_episode(case, &adv, ctx, &cfg)?.0)
        })
        .collect::<Result<Vec<GameEpisode>, ExperimentError>>()?;

    let mut per_mode = BTreeMap::new();
    let mut paired = BTreeMap::new();
    for &mode in modes {
        let eps: Vec<&GameEpisode> = episodes.iter().filter(|e| e.mode == mode).collect();
        let n = eps.len().max(1) as f64;
        let payoffs: Vec<f64> = eps.iter().map(|e| e.payoff).collect();
        let ttr: Vec<f64> = eps.iter().filter_map(|e| e.time_to_recover.map(|t| t as f64)).collect();
        per_mode.insert(
            format!("{mode:?}"),
            ModeStats {
                episodes: eps.len(),
                mean_payoff: payoffs.iter().sum::<f64>() / n,
                min_payoff: payoffs.iter().copied().fold(f64::INFINITY, f64::min),
                max_payoff: payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                recovered_rate: eps.iter().filter(|e| e.recovered).count() as f64 / n,
                mean_time_to_recover: (!ttr.is_empty()).then(|| ttr.iter().sum::<f64>() / ttr.len() as f64),
                unresolved_ticks: eps.iter().map(|e| e.unresolved_ticks).sum(),
            },
        );
        if modes.contains(&Mode::Monitor) {
            let wins = seeds
                .iter()
                .filter(|&&s| {
                    let get = |m: Mode| episodes.iter().find(|e| e.seed == s && e.mode == m).map(|e| e.payoff);
                    get(mode) >= get(Mode::Monitor)
                })
                .count();
            paired.insert(format!("{mode:?}"), wins as f64 / seeds.len().max(1) as f64);
        }
    }
    Ok(EpisodeBatch {
        seeds: seeds.to_vec(),
        per_mode,
        paired_vs_monitor: paired,
        episodes,
    })
}
