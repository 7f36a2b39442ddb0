use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScenarioError;
use crate::grid::{build_ybus, injections, NetworkCase, PowerFlowSolution};

/// Telemetry layout bound to a topology. Features are, in order: |V| per
/// bus, net P per bus, net Q per bus, then from-end active flow per branch
/// (zero while the branch is out of service). Bus and branch order follow
/// the case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub bus_ids: Vec<u32>,
    pub branches: Vec<(u32, u32)>,
    pub names: Vec<String>,
    /// Feature values of the base-case solution; what a stuck sensor reports.
    pub nominal: Vec<f64>,
    /// Per-feature mean over a training set, when one has been attached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub features: Vec<f64>,
    pub corruption_mask: Vec<bool>,
    pub schema_id: String,
}

impl MeasurementVector {
    pub fn masked_count(&self) -> usize {
        self.corruption_mask.iter().filter(|&&m| m).count()
    }
}

fn topology_id(bus_ids: &[u32], branches: &[(u32, u32)]) -> String {
    let mut h = Sha256::new();
    h.update(b"buses");
    for id in bus_ids {
        h.update(id.to_le_bytes());
    }
    h.update(b"branches");
    for (f, t) in branches {
        h.update(f.to_le_bytes());
        h.update(t.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl FeatureSchema {
    /// Schema for `case`, with nominal values taken from `base` (its solution).
    pub fn for_case(case: &NetworkCase, base: &PowerFlowSolution) -> Result<Self, ScenarioError> {
        let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
        let branches: Vec<(u32, u32)> = case.branches.iter().map(|b| (b.from_bus, b.to_bus)).collect();
        let mut names = Vec::with_capacity(3 * bus_ids.len() + branches.len());
        for prefix in ["vm", "p", "q"] {
            names.extend(bus_ids.iter().map(|id| format!("{prefix}_{id}")));
        }
        names.extend(branches.iter().enumerate().map(|(k, (f, t))| format!("pf_{k}_{f}_{t}")));
        let mut schema = Self {
            schema_id: topology_id(&bus_ids, &branches),
            bus_ids,
            branches,
            names,
            nominal: Vec::new(),
            training_mean: None,
        };
        schema.nominal = extract_features(case, base, &schema)?.features;
        Ok(schema)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn check(&self, schema_id: &str) -> Result<(), ScenarioError> {
        if schema_id == self.schema_id {
            Ok(())
        } else {
            Err(ScenarioError::SchemaMismatch {
                expected: self.schema_id.clone(),
                got: schema_id.to_string(),
            })
        }
    }

    /// Attaches the mean of every feature over `samples`.
    pub fn attach_training_mean<'a>(&mut self, samples: impl IntoIterator<Item = &'a MeasurementVector>) {
        let mut sum = vec![0.0; self.len()];
        let mut n = 0usize;
        for m in samples {
            for (s, x) in sum.iter_mut().zip(&m.features) {
                *s += x;
            }
            n += 1;
        }
        if n > 0 {
            self.training_mean = Some(sum.into_iter().map(|s| s / n as f64).collect());
        }
    }
}

pub fn extract_features(
    case: &NetworkCase,
    solution: &PowerFlowSolution,
    schema: &FeatureSchema,
) -> Result<MeasurementVector, ScenarioError> {
    if !solution.converged {
        return Err(ScenarioError::NoSteadyState);
    }
    let same_buses =
        case.buses.len() == schema.bus_ids.len() && case.buses.iter().zip(&schema.bus_ids).all(|(b, id)| b.id == *id);
    let same_branches = case.branches.len() == schema.branches.len()
        && case
            .branches
            .iter()
            .zip(&schema.branches)
            .all(|(b, &(f, t))| b.from_bus == f && b.to_bus == t);
    if !same_buses || !same_branches || solution.v.len() != case.buses.len() {
        return Err(ScenarioError::SchemaMismatch {
            expected: schema.schema_id.clone(),
            got: topology_id(
                &case.buses.iter().map(|b| b.id).collect::<Vec<_>>(),
                &case.branches.iter().map(|b| (b.from_bus, b.to_bus)).collect::<Vec<_>>(),
            ),
        });
    }
    let s = injections(&build_ybus(case), &solution.v);
    let mut features = Vec::with_capacity(schema.len());
    features.extend(solution.v.iter().map(|v| v.norm()));
    features.extend(s.iter().map(|s| s.re));
    features.extend(s.iter().map(|s| s.im));
    features.extend(solution.branch_flows.iter().map(|(sf, _)| sf.re));
    Ok(MeasurementVector {
        corruption_mask: vec![false; features.len()],
        features,
        schema_id: schema.schema_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bundled, solve_power_flow, Branch, Bus, BusKind, Generator};

    fn two_bus() -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            buses: vec![Bus::new(1, BusKind::Slack), Bus::new(2, BusKind::PQ)],
            branches: vec![Branch::line(1, 2, 0.01, 0.1, 0.0)],
            generators: vec![Generator::new(1, 0.0, 1.0)],
        }
    }

    #[test]
    fn two_bus_flat_state() {
        let case = two_bus();
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        let schema = FeatureSchema::for_case(&case, &sol).unwrap();
        let m = extract_features(&case, &sol, &schema).unwrap();
        assert_eq!(m.features.len(), 7);
        assert_eq!(&m.features[..2], &[1.0, 1.0]);
        assert!(m.features[2..].iter().all(|x| x.abs() < 1e-12));
        assert!(m.corruption_mask.iter().all(|&x| !x));
    }

    #[test]
    fn ieee14_layout() {
        let case = bundled::ieee14();
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        let schema = FeatureSchema::for_case(&case, &sol).unwrap();
        assert_eq!(schema.len(), 14 + 28 + 20);
        assert_eq!(schema.names[14], "p_1");
        assert_eq!(schema.names[42], "pf_0_1_2");
    }

    #[test]
    fn other_topology_is_rejected() {
        let case = bundled::ieee14();
        let sol = solve_power_flow(&case, &Default::default()).unwrap();
        let schema = FeatureSchema::for_case(&case, &sol).unwrap();
        let small = two_bus();
        let s2 = solve_power_flow(&small, &Default::default()).unwrap();
        assert!(matches!(
            extract_features(&small, &s2, &schema),
            Err(ScenarioError::SchemaMismatch { .. })
        ));
    }
}
