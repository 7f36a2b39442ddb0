use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::case::{BusKind, ElementRef, NetworkCase};
use super::GridError;

/// A disturbance or control applied to a case. Buses absent from
/// `load_scale` keep their load; `injections` add to the bus compensation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    #[serde(default)]
    pub load_scale: BTreeMap<u32, f64>,
    #[serde(default)]
    pub outages: Vec<ElementRef>,
    #[serde(default)]
    pub injections: BTreeMap<u32, f64>,
}

impl Perturbation {
    pub fn is_identity(&self) -> bool {
        self.load_scale.values().all(|&f| f == 1.0)
            && self.outages.is_empty()
            && self.injections.values().all(|&q| q == 0.0)
    }

    /// The same factor on every bus of `case`.
    pub fn uniform_scale(case: &NetworkCase, factor: f64) -> Self {
        Self {
            load_scale: case.buses.iter().map(|b| (b.id, factor)).collect(),
            ..Default::default()
        }
    }

    pub fn outage(element: ElementRef) -> Self {
        Self {
            outages: vec![element],
            ..Default::default()
        }
    }

    pub fn injection(bus: u32, dq: f64) -> Self {
        Self {
            injections: BTreeMap::from([(bus, dq)]),
            ..Default::default()
        }
    }
}

/// Returns a new case with loads scaled, elements outaged and reactive
/// injections added. Connectivity is re-checked; an outage set that cuts
/// buses off the slack is rejected.
pub fn apply_perturbation(case: &NetworkCase, perturbation: &Perturbation) -> Result<NetworkCase, GridError> {
    let index = case.bus_index();
    for id in perturbation.load_scale.keys().chain(perturbation.injections.keys()) {
        if !index.contains_key(id) {
            return Err(GridError::UnknownBusId(*id));
        }
    }
    let mut out = case.clone();
    for (id, factor) in &perturbation.load_scale {
        let bus = &mut out.buses[index[id]];
        bus.p_load *= factor;
        bus.q_load *= factor;
    }
    for &element in &perturbation.outages {
        match element {
            ElementRef::Branch(k) => {
                out.branches
                    .get_mut(k)
                    .ok_or(GridError::UnknownElement(element))?
                    .in_service = false;
            }
            ElementRef::Generator(k) => {
                let bus_id = out.generators.get(k).ok_or(GridError::UnknownElement(element))?.bus;
                let bi = index[&bus_id];
                if out.buses[bi].kind == BusKind::Slack {
                    return Err(GridError::SlackOutage(element));
                }
                out.generators[k].in_service = false;
                let remaining = out.generators.iter().any(|g| g.in_service && g.bus == bus_id);
                if !remaining {
                    out.buses[bi].kind = BusKind::PQ;
                }
            }
        }
    }
    for (id, dq) in &perturbation.injections {
        out.buses[index[id]].q_comp += dq;
    }
    let cut_off = out.unreached_buses(&index);
    if !cut_off.is_empty() {
        return Err(GridError::Islanding {
            cut: perturbation.outages.clone(),
            buses: cut_off,
        });
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, Generator};

    fn two_bus() -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            buses: vec![
                Bus::new(1, BusKind::Slack),
                Bus::new(2, BusKind::PQ).with_load(0.5, 0.2),
            ],
            branches: vec![Branch::line(1, 2, 0.01, 0.1, 0.0)],
            generators: vec![Generator::new(1, 0.0, 1.0)],
        }
    }

    #[test]
    fn identity_perturbation_returns_equal_case() {
        let case = two_bus();
        let out = apply_perturbation(&case, &Perturbation::default()).unwrap();
        assert_eq!(out, case);
        let ones = Perturbation::uniform_scale(&case, 1.0);
        assert!(ones.is_identity());
        assert_eq!(apply_perturbation(&case, &ones).unwrap(), case);
    }

    #[test]
    fn single_line_outage_islands() {
        let err = apply_perturbation(&two_bus(), &Perturbation::outage(ElementRef::Branch(0))).unwrap_err();
        assert!(err.to_string().starts_with("islanding"), "{err}");
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let case = two_bus();
        assert_eq!(
            apply_perturbation(&case, &Perturbation::injection(9, 0.1)),
            Err(GridError::UnknownBusId(9))
        );
        assert_eq!(
            apply_perturbation(&case, &Perturbation::outage(ElementRef::Branch(4))),
            Err(GridError::UnknownElement(ElementRef::Branch(4)))
        );
    }

    #[test]
    fn generator_outage_demotes_pv_bus() {
        let mut case = two_bus();
        case.buses.push(Bus::new(3, BusKind::PV));
        case.branches.push(Branch::line(2, 3, 0.0, 0.1, 0.0));
        case.generators.push(Generator::new(3, 0.2, 1.02));
        let out = apply_perturbation(&case, &Perturbation::outage(ElementRef::Generator(1))).unwrap();
        assert_eq!(out.buses[2].kind, BusKind::PQ);
        assert!(!out.generators[1].in_service);
        assert!(matches!(
            apply_perturbation(&case, &Perturbation::outage(ElementRef::Generator(0))),
            Err(GridError::SlackOutage(_))
        ));
    }

    #[test]
    fn injection_accumulates_compensation() {
        let case = two_bus();
        let once = apply_perturbation(&case, &Perturbation::injection(2, 0.1)).unwrap();
        let twice = apply_perturbation(&once, &Perturbation::injection(2, 0.15)).unwrap();
        assert!((twice.buses[1].q_comp - 0.25).abs() < 1e-15);
        assert_eq!(twice.buses[1].q_load, 0.2);
    }
}
