use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    extract_features, generate_scenarios, label_corrective_injections, scenario_options, FeatureSchema, LabelStatus,
    MeasurementVector, ScenarioConfig, ScenarioError,
};
use crate::grid::{ElementRef, NetworkCase};
use crate::stability::{f_matrix_for_case, local_indices};

pub const DATASET_FORMAT: &str = "artdisp-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub index: usize,
    pub lambda: f64,
    pub outages: Vec<ElementRef>,
    pub seed: u64,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub measurement: MeasurementVector,
    pub l_max_true: f64,
    pub l_sum_true: f64,
    /// Corrective injection per candidate bus; all zero for secure states.
    pub dq_star: BTreeMap<u32, f64>,
    pub label: LabelStatus,
    pub scenario_meta: ScenarioMeta,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub schema: FeatureSchema,
    pub config: ScenarioConfig,
    pub count: usize,
    pub attempts: usize,
    pub discarded: usize,
    pub convergence_rate: f64,
    /// Samples per label status.
    pub label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Samples usable as injection-regression targets.
    pub fn injection_samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(|s| s.label != LabelStatus::Unlabelable)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_dataset(self, &mut out).expect("writing to memory");
        out
    }

    /// SHA-256 of the serialized file.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl()))
    }

    /// Splits off the last `fraction` of samples (order is already random).
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let n_test = ((self.samples.len() as f64) * fraction).round() as usize;
        let cut = self.samples.len() - n_test.min(self.samples.len());
        let part = |s: &[LabeledSample]| Dataset {
            header: self.header.clone(),
            samples: s.to_vec(),
        };
        (part(&self.samples[..cut]), part(&self.samples[cut..]))
    }
}

/// Samples, solves, featurizes and labels `count` scenarios.
pub fn build_dataset(case: &NetworkCase, config: &ScenarioConfig, count: usize) -> Result<Dataset, ScenarioError> {
    let batch = generate_scenarios(case, config, count)?;
    let base = crate::grid::solve_power_flow(case, &scenario_options())?;
    let mut schema = FeatureSchema::for_case(case, &base)?;
    let lab = &config.labeling;
    let samples: Vec<LabeledSample> = batch
        .scenarios
        .par_iter()
        .map(|s| -> Result<LabeledSample, ScenarioError> {
            let measurement = extract_features(&s.case, &s.solution, &schema)?;
            let (l_max_true, l_sum_true, dq_star, label) = if config.injection_candidates.is_empty() {
                let f = f_matrix_for_case(&s.case)?;
                let l = local_indices(&s.solution.v, &f)?;
                let l_max = l.iter().copied().fold(0.0, f64::max);
                let status = if l_max < lab.thresholds.alarm {
                    LabelStatus::Secure
                } else {
                    LabelStatus::Unlabelable
                };
                (l_max, l.iter().sum(), BTreeMap::new(), status)
            } else {
                let labeling = label_corrective_injections(
                    &s.case,
                    &s.solution,
                    &config.injection_candidates,
                    lab.thresholds.alarm,
                    lab.step_dq,
                    lab.budget,
                )?;
                (
                    labeling.l_max_before,
                    labeling.l_sum_before,
                    labeling.dq_star,
                    labeling.status,
                )
            };
            Ok(LabeledSample {
                measurement,
                l_max_true,
                l_sum_true,
                dq_star,
                label,
                scenario_meta: ScenarioMeta {
                    index: s.index,
                    lambda: s.lambda,
                    outages: s.outages.clone(),
                    seed: config.rng_seed,
                    attempts: s.attempts,
                },
            })
        })
        .collect::<Result<_, _>>()?;
    schema.attach_training_mean(samples.iter().map(|s| &s.measurement));
    let mut label_counts = BTreeMap::new();
    for s in &samples {
        *label_counts.entry(format!("{:?}", s.label)).or_insert(0) += 1;
    }
    Ok(Dataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            schema,
            config: config.clone(),
            count,
            attempts: batch.attempts,
            discarded: batch.discarded,
            convergence_rate: batch.convergence_rate(),
            label_counts,
        },
        samples,
    })
}

/// JSON-Lines: the header, then one sample per line.
pub fn write_dataset(dataset: &Dataset, mut w: impl Write) -> Result<(), ScenarioError> {
    serde_json::to_writer(&mut w, &dataset.header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(r: impl BufRead) -> Result<Dataset, ScenarioError> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, e: serde_json::Error| ScenarioError::Format {
        line: line + 1,
        message: e.to_string(),
    };
    let header: DatasetHeader = match lines.next() {
        Some((i, l)) => serde_json::from_str(&l?).map_err(|e| bad(i, e))?,
        None => {
            return Err(ScenarioError::Format {
                line: 1,
                message: "empty dataset file".into(),
            })
        }
    };
    if header.format != DATASET_FORMAT {
        return Err(ScenarioError::Format {
            line: 1,
            message: format!("unknown format {:?}", header.format),
        });
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSample = serde_json::from_str(&line).map_err(|e| bad(i, e))?;
        header.schema.check(&s.measurement.schema_id)?;
        samples.push(s);
    }
    Ok(Dataset { header, samples })
}

/// Feature matrix plus targets as CSV.
pub fn export_csv(dataset: &Dataset, w: impl Write) -> Result<(), ScenarioError> {
    let mut out = csv::Writer::from_writer(w);
    let buses: Vec<u32> = dataset.header.config.injection_candidates.clone();
    let mut head: Vec<String> = dataset.header.schema.names.clone();
    head.extend(["l_max".to_string(), "l_sum".to_string()]);
    head.extend(buses.iter().map(|b| format!("dq_{b}")));
    head.push("label".into());
    out.write_record(&head)?;
    for s in &dataset.samples {
        let mut row: Vec<String> = s.measurement.features.iter().map(|x| x.to_string()).collect();
        row.push(s.l_max_true.to_string());
        row.push(s.l_sum_true.to_string());
        row.extend(
            buses
                .iter()
                .map(|b| s.dq_star.get(b).copied().unwrap_or(0.0).to_string()),
        );
        row.push(format!("{:?}", s.label));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
