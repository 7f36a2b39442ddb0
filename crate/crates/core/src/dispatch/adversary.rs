use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DispatchError;
use crate::grid::{BusKind, ElementRef, NetworkCase, Perturbation};
use crate::scenario::CorruptionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpike {
    pub probability: f64,
    /// Relative increase drawn uniformly from this range.
    pub magnitude: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryAttack {
    pub probability: f64,
    pub corruption: CorruptionConfig,
}

/// Per-tick disturbance probabilities. Each category is drawn
/// independently; at most one element per category per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub line_outage_rate: f64,
    pub gen_outage_rate: f64,
    #[serde(default)]
    pub load_spike: Option<LoadSpike>,
    #[serde(default)]
    pub telemetry_attack: Option<TelemetryAttack>,
    pub rng_seed: u64,
}

impl AdversaryConfig {
    /// Does nothing, ever.
    pub fn null(seed: u64) -> Self {
        Self {
            line_outage_rate: 0.0,
            gen_outage_rate: 0.0,
            load_spike: None,
            telemetry_attack: None,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        let spike_ok = self
            .load_spike
            .is_none_or(|s| p(s.probability) && s.magnitude.0 <= s.magnitude.1 && s.magnitude.0 > -1.0);
        let attack_ok = self
            .telemetry_attack
            .is_none_or(|a| p(a.probability) && a.corruption.is_valid());
        if p(self.line_outage_rate) && p(self.gen_outage_rate) && spike_ok && attack_ok {
            Ok(())
        } else {
            Err(DispatchError::Config(
                "adversary probabilities must lie in [0, 1]".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryMove {
    pub perturbation: Option<Perturbation>,
    /// Corrupts the telemetry of the coming tick; the case is untouched.
    pub attack: Option<CorruptionConfig>,
}

impl AdversaryMove {
    pub fn is_none(&self) -> bool {
        self.perturbation.is_none() && self.attack.is_none()
    }
}

/// The adversary's move at `tick`. Draws come from a stream keyed by
/// (seed, tick), always in the same order, so a move does not depend on
/// earlier ticks' outcomes beyond the case it is applied to. Lines are
/// chosen among in-service branches whose loss keeps the grid connected;
/// generators among in-service non-slack units.
pub fn sample_disturbance(config: &AdversaryConfig, case: &NetworkCase, tick: u64) -> AdversaryMove {
    let mut rng = crate::scenario::stream(config.rng_seed, tick);
    let line = rng.random::<f64>() < config.line_outage_rate;
    let gen = rng.random::<f64>() < config.gen_outage_rate;
    let spike_u: f64 = rng.random();
    let attack_u: f64 = rng.random();
    let (line_pick, gen_pick, bus_pick, mag_u): (f64, f64, f64, f64) =
        (rng.random(), rng.random(), rng.random(), rng.random());
    let attack_seed: u64 = rng.random();

    let pick = |n: usize, u: f64| ((u * n as f64) as usize).min(n.saturating_sub(1));
    let mut p = Perturbation::default();
    if line {
        let lines: Vec<usize> = (0..case.branches.len())
            .filter(|&k| case.branches[k].in_service && !case.is_bridge(k))
            .collect();
        if !lines.is_empty() {
            p.outages.push(ElementRef::Branch(lines[pick(lines.len(), line_pick)]));
        }
    }
    if gen {
        let slack = case.buses.iter().find(|b| b.kind == BusKind::Slack).map(|b| b.id);
        let units: Vec<usize> = (0..case.generators.len())
            .filter(|&k| case.generators[k].in_service && Some(case.generators[k].bus) != slack)
            .collect();
        if !units.is_empty() {
            p.outages
                .push(ElementRef::Generator(units[pick(units.len(), gen_pick)]));
        }
    }
    if let Some(spike) = config.load_spike.filter(|s| spike_u < s.probability) {
        let loads: Vec<u32> = case
            .buses
            .iter()
            .filter(|b| b.p_load != 0.0 || b.q_load != 0.0)
            .map(|b| b.id)
            .collect();
        if !loads.is_empty() {
            let (lo, hi) = spike.magnitude;
            p.load_scale
                .insert(loads[pick(loads.len(), bus_pick)], 1.0 + lo + (hi - lo) * mag_u);
        }
    }
    let attack = config
        .telemetry_attack
        .filter(|a| attack_u < a.probability)
        .map(|a| CorruptionConfig {
            rng_seed: attack_seed,
            ..a.corruption
        });
    AdversaryMove {
        perturbation: (!p.is_identity()).then_some(p),
        attack,
    }
}
