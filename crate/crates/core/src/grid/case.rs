use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::GridError;

/// Bus classification used by the power-flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

/// A network bus. All electrical quantities are per-unit on the case MVA base,
/// angles are in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_mag: f64,
    pub v_ang: f64,
    pub base_kv: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Reactive injection from controllable compensation devices (p.u.).
    #[serde(default)]
    pub q_comp: f64,
}

impl Bus {
    pub fn new(id: u32, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v_mag: 1.0,
            v_ang: 0.0,
            base_kv: 1.0,
            v_min: 0.94,
            v_max: 1.06,
            q_comp: 0.0,
        }
    }

    pub fn with_load(mut self, p: f64, q: f64) -> Self {
        self.p_load = p;
        self.q_load = q;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    pub shift: f64,
    pub in_service: bool,
    /// Thermal rating (p.u.); 0 means unrated.
    pub mva_rating: f64,
}

impl Branch {
    pub fn line(from_bus: u32, to_bus: u32, r: f64, x: f64, b_charging: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r,
            x,
            b_charging,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
            mva_rating: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub p_gen: f64,
    pub q_gen: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
    pub in_service: bool,
}

impl Generator {
    pub fn new(bus: u32, p_gen: f64, v_set: f64) -> Self {
        Self {
            bus,
            p_gen,
            q_gen: 0.0,
            q_min: -9999.0,
            q_max: 9999.0,
            v_set,
            in_service: true,
        }
    }
}

/// Branch or generator reference by position in the case lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRef {
    Branch(usize),
    Generator(usize),
}

impl std::fmt::Display for ElementRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ElementRef::Branch(i) => write!(f, "branch {i}"),
            ElementRef::Generator(i) => write!(f, "generator {i}"),
        }
    }
}

/// Bus/branch/generator model of a grid. This is also the CaseJSON document:
/// top-level keys `base_mva`, `buses`, `branches`, `generators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

/// Per-bus generator totals after aggregating every in-service unit on the bus.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BusGeneration {
    pub p: f64,
    pub q: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: Option<f64>,
    pub units: usize,
}

impl NetworkCase {
    /// Validates and returns the case.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, GridError> {
        let case = Self {
            base_mva,
            buses,
            branches,
            generators,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let case: NetworkCase = serde_json::from_str(text).map_err(|e| GridError::Syntax {
            line: e.line(),
            message: e.to_string(),
        })?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    /// In-service generation aggregated per bus, in bus order.
    pub fn bus_generation(&self) -> Vec<BusGeneration> {
        let index = self.bus_index();
        let mut out = vec![BusGeneration::default(); self.buses.len()];
        for g in self.generators.iter().filter(|g| g.in_service) {
            if let Some(&i) = index.get(&g.bus) {
                let agg = &mut out[i];
                agg.p += g.p_gen;
                agg.q += g.q_gen;
                agg.q_min += g.q_min;
                agg.q_max += g.q_max;
                agg.v_set.get_or_insert(g.v_set);
                agg.units += 1;
            }
        }
        out
    }

    /// Bus kinds seen by the solver: a PV bus without an in-service generator
    /// behaves as PQ.
    pub fn effective_kinds(&self) -> Vec<BusKind> {
        let gen = self.bus_generation();
        self.buses
            .iter()
            .zip(&gen)
            .map(|(b, g)| match b.kind {
                BusKind::PV if g.units == 0 => BusKind::PQ,
                k => k,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0) {
            return Err(GridError::Invalid {
                element: "case".into(),
                reason: "base_mva must be positive".into(),
            });
        }
        if self.buses.is_empty() {
            return Err(GridError::Invalid {
                element: "case".into(),
                reason: "no buses".into(),
            });
        }
        let mut index = HashMap::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(GridError::Invalid {
                    element: format!("bus {}", b.id),
                    reason: "duplicate bus id".into(),
                });
            }
            if !(b.v_min < b.v_max) {
                return Err(GridError::Invalid {
                    element: format!("bus {}", b.id),
                    reason: "v_min must be below v_max".into(),
                });
            }
            if !(b.base_kv > 0.0) {
                return Err(GridError::Invalid {
                    element: format!("bus {}", b.id),
                    reason: "base_kv must be positive".into(),
                });
            }
        }
        let slacks: Vec<u32> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            0 => return Err(GridError::NoSlack),
            1 => {}
            _ => return Err(GridError::MultipleSlack(slacks)),
        }
        for (k, br) in self.branches.iter().enumerate() {
            let element = format!("branch {k} ({}-{})", br.from_bus, br.to_bus);
            if br.from_bus == br.to_bus {
                return Err(GridError::Invalid {
                    element,
                    reason: "from_bus equals to_bus".into(),
                });
            }
            for end in [br.from_bus, br.to_bus] {
                if !index.contains_key(&end) {
                    return Err(GridError::UnknownBus { element, bus: end });
                }
            }
            if br.in_service && br.x == 0.0 {
                return Err(GridError::Invalid {
                    element,
                    reason: "zero-impedance branch".into(),
                });
            }
            if !(br.tap > 0.0) {
                return Err(GridError::Invalid {
                    element,
                    reason: "tap ratio must be positive".into(),
                });
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            let element = format!("generator {k} (bus {})", g.bus);
            let Some(&bi) = index.get(&g.bus) else {
                return Err(GridError::UnknownBus { element, bus: g.bus });
            };
            if g.q_min > g.q_max {
                return Err(GridError::Invalid {
                    element,
                    reason: "q_min exceeds q_max".into(),
                });
            }
            if g.in_service && self.buses[bi].kind == BusKind::PQ {
                return Err(GridError::Invalid {
                    element,
                    reason: "in-service generator on a PQ bus".into(),
                });
            }
        }
        let unreached = self.unreached_buses(&index);
        if let Some(&bus) = unreached.first() {
            return Err(GridError::Disconnected { bus });
        }
        Ok(())
    }

    /// Bus ids not reachable from the slack through in-service branches.
    pub(crate) fn unreached_buses(&self, index: &HashMap<u32, usize>) -> Vec<u32> {
        let n = self.buses.len();
        let Some(slack) = self.slack_index() else {
            return Vec::new();
        };
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        self.buses
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| !s)
            .map(|(b, _)| b.id)
            .collect()
    }

    /// True when taking the in-service branch at `k` out would island a bus.
    pub fn is_bridge(&self, k: usize) -> bool {
        if !self.branches.get(k).is_some_and(|b| b.in_service) {
            return false;
        }
        let mut probe = self.clone();
        probe.branches[k].in_service = false;
        !probe.unreached_buses(&probe.bus_index()).is_empty()
    }

    /// Copy of the case whose bus voltages are replaced by `v`, for warm starts.
    pub fn with_voltages(&self, v: &[num_complex::Complex64]) -> Self {
        let mut out = self.clone();
        for (b, vi) in out.buses.iter_mut().zip(v) {
            b.v_mag = vi.norm();
            b.v_ang = vi.arg();
        }
        out
    }
}
