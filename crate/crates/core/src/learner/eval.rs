use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{LearnError, ModelBundle};
use crate::grid::{apply_perturbation, branch_admittance, ElementRef, NetworkCase, Perturbation};
use crate::scenario::{
    corrupt_measurements, CorruptionConfig, FeatureSchema, LabelStatus, LabeledSample, MeasurementVector,
};
use crate::stability::{f_matrix_for_case, local_indices, FMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    /// RMSE over the population standard deviation of the true values.
    pub relative_rmse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn of(pred: &[f64], truth: &[f64]) -> Self {
        let n = truth.len();
        if n == 0 {
            return Self {
                n: 0,
                rmse: 0.0,
                relative_rmse: 0.0,
                mae: 0.0,
            };
        }
        let nf = n as f64;
        let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / nf;
        let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf;
        let mean = truth.iter().sum::<f64>() / nf;
        let std = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / nf).sqrt();
        let rmse = mse.sqrt();
        Self {
            n,
            rmse,
            relative_rmse: if std > 0.0 {
                rmse / std
            } else if rmse == 0.0 {
                0.0
            } else {
                f64::INFINITY
            },
            mae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Indicator (l_max) metrics.
    pub rmse: f64,
    pub relative_rmse: f64,
    pub mae: f64,
    /// `l_max`, `dq_pooled` and `dq_<bus>` entries.
    pub per_target: BTreeMap<String, Metrics>,
    /// Indicator error of the direct calculation on the same corrupted inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionConfig>,
    /// Mean wall-clock seconds to run every tree of the bundle on one vector.
    pub latency_s: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>12} {:>10} {:>12}\n",
            "target", "n", "rmse", "rel", "mae"
        );
        let mut rows: Vec<(&str, &Metrics)> = self.per_target.iter().map(|(k, v)| (k.as_str(), v)).collect();
        if let Some(b) = &self.baseline {
            rows.push(("baseline", b));
        }
        for (name, m) in rows {
            out += &format!(
                "{:<12} {:>6} {:>12.6} {:>10.4} {:>12.6}\n",
                name, m.n, m.rmse, m.relative_rmse, m.mae
            );
        }
        out += &format!("latency {:.3} us per vector\n", self.latency_s * 1e6);
        out
    }
}

/// Scores `bundle` on `test` against the clean targets. With `corruption`
/// the inputs are corrupted first (draw i for sample i) and, when a
/// `baseline_case` is supplied, the direct L-index calculation on the same
/// corrupted inputs is scored too.
pub fn evaluate_model(
    bundle: &ModelBundle,
    test: &[LabeledSample],
    corruption: Option<&CorruptionConfig>,
    baseline_case: Option<&NetworkCase>,
) -> Result<EvalReport, LearnError> {
    if test.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let inputs: Vec<MeasurementVector> = test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            bundle.schema.check(&s.measurement.schema_id)?;
            Ok(match corruption {
                Some(cfg) => {
                    let prev = i.checked_sub(1).map(|j| test[j].measurement.features.as_slice());
                    corrupt_measurements(&s.measurement, cfg, &bundle.schema, i as u64, prev)
                }
                None => s.measurement.clone(),
            })
        })
        .collect::<Result<_, LearnError>>()?;

    let started = Instant::now();
    let mut l_pred = Vec::with_capacity(test.len());
    let mut dq_pred = Vec::with_capacity(test.len());
    for m in &inputs {
        l_pred.push(bundle.predict_l_max(m)?);
        dq_pred.push(bundle.predict_injections(m)?);
    }
    let latency_s = started.elapsed().as_secs_f64() / test.len() as f64;

    let l_true: Vec<f64> = test.iter().map(|s| s.l_max_true).collect();
    let indicator = Metrics::of(&l_pred, &l_true);
    let mut per_target = BTreeMap::from([("l_max".to_string(), indicator)]);
    let injectable: Vec<usize> = (0..test.len())
        .filter(|&i| test[i].label != LabelStatus::Unlabelable)
        .collect();
    let (mut pooled_p, mut pooled_t) = (Vec::new(), Vec::new());
    for bus in bundle.candidates() {
        let p: Vec<f64> = injectable.iter().map(|&i| dq_pred[i][&bus]).collect();
        let t: Vec<f64> = injectable
            .iter()
            .map(|&i| test[i].dq_star.get(&bus).copied().unwrap_or(0.0))
            .collect();
        per_target.insert(format!("dq_{bus}"), Metrics::of(&p, &t));
        pooled_p.extend(p);
        pooled_t.extend(t);
    }
    if !pooled_t.is_empty() {
        per_target.insert("dq_pooled".into(), Metrics::of(&pooled_p, &pooled_t));
    }

    let baseline = match (corruption, baseline_case) {
        (Some(_), Some(case)) => {
            // One topology (and F) per distinct outage set.
            let mut topologies: BTreeMap<Vec<ElementRef>, Option<(NetworkCase, FMatrix)>> = BTreeMap::new();
            let est: Vec<f64> = inputs
                .iter()
                .zip(test)
                .map(|(m, s)| {
                    let entry = topologies.entry(s.scenario_meta.outages.clone()).or_insert_with(|| {
                        let topo = apply_perturbation(
                            case,
                            &Perturbation {
                                outages: s.scenario_meta.outages.clone(),
                                ..Default::default()
                            },
                        )
                        .ok()?;
                        let fm = f_matrix_for_case(&topo).ok()?;
                        Some((topo, fm))
                    });
                    match entry {
                        Some((topo, fm)) => baseline_with(topo, fm, &bundle.schema, m),
                        None => 1.0,
                    }
                })
                .collect();
            Some(Metrics::of(&est, &l_true))
        }
        _ => None,
    };
    Ok(EvalReport {
        n_samples: test.len(),
        rmse: indicator.rmse,
        relative_rmse: indicator.relative_rmse,
        mae: indicator.mae,
        per_target,
        baseline,
        corruption: corruption.copied(),
        latency_s,
    })
}

/// Direct L-index calculation from telemetry, with no state estimation:
/// |V| is read off the measurements, each branch angle difference is solved
/// from its measured from-end active flow, angles are chained out from the
/// slack along a spanning tree, and the index is evaluated on the result.
/// Exact on clean data; bad inputs pass straight through to the index. A
/// non-finite result reads as 1 (collapse).
pub fn analytic_baseline(
    case: &NetworkCase,
    schema: &FeatureSchema,
    m: &MeasurementVector,
    outages: &[ElementRef],
) -> f64 {
    let Ok(topo) = apply_perturbation(
        case,
        &Perturbation {
            outages: outages.to_vec(),
            ..Default::default()
        },
    ) else {
        return 1.0;
    };
    let Ok(fm) = f_matrix_for_case(&topo) else {
        return 1.0;
    };
    baseline_with(&topo, &fm, schema, m)
}

fn baseline_with(topo: &NetworkCase, fm: &FMatrix, schema: &FeatureSchema, m: &MeasurementVector) -> f64 {
    let n = schema.bus_count();
    let f = &m.features;
    let vm = &f[..n];
    let index = topo.bus_index();

    // Adjacency as (branch, neighbour, sign): theta_nb = theta_here - sign * delta_k.
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for (k, br) in topo.branches.iter().enumerate().filter(|(_, b)| b.in_service) {
        let (a, b) = (index[&br.from_bus], index[&br.to_bus]);
        adj[a].push((k, b, 1.0));
        adj[b].push((k, a, -1.0));
    }
    let delta = |k: usize| {
        let br = &topo.branches[k];
        let (yff, yft, _, _) = branch_admittance(br.r, br.x, br.b_charging, br.tap, br.shift);
        let (vf, vt) = (vm[index[&br.from_bus]], vm[index[&br.to_bus]]);
        let c = ((f[3 * n + k] - vf * vf * yff.re) / (vf * vt * yft.norm())).clamp(-1.0, 1.0);
        let phi = yft.arg();
        let wrap = |x: f64| (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        let (r1, r2) = (wrap(phi + c.acos()), wrap(phi - c.acos()));
        if r1.abs() <= r2.abs() {
            r1
        } else {
            r2
        }
    };

    let Some(slack) = topo.slack_index() else {
        return 1.0;
    };
    let mut theta = vec![f64::NAN; n];
    theta[slack] = 0.0;
    let mut queue = std::collections::VecDeque::from([slack]);
    while let Some(i) = queue.pop_front() {
        for &(k, j, sign) in &adj[i] {
            if theta[j].is_nan() {
                theta[j] = theta[i] - sign * delta(k);
                queue.push_back(j);
            }
        }
    }
    let v: Vec<Complex64> = vm
        .iter()
        .zip(&theta)
        .map(|(&r, &a)| Complex64::from_polar(r, a))
        .collect();
    let l_max = local_indices(&v, fm)
        .map(|l| l.into_iter().fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    if l_max.is_finite() {
        l_max
    } else {
        1.0
    }
}
