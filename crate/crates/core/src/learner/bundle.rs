use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fit_tree, predict, Hyperparams, LearnError, RegressionTree};
use crate::scenario::{Dataset, FeatureSchema, LabelStatus, LabeledSample, MeasurementVector};
use crate::stability::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    LMax,
    Injection(u32),
}

impl Target {
    pub fn value(&self, s: &LabeledSample) -> f64 {
        match self {
            Target::LMax => s.l_max_true,
            Target::Injection(bus) => s.dq_star.get(bus).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// SHA-256 over the JSON lines of the samples in the window.
    pub dataset_hash: String,
    pub window_size: usize,
    pub n_samples: usize,
    pub n_injection_samples: usize,
    /// Logical clock: 0 for the initial fit, +1 per online update.
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema: FeatureSchema,
    /// Thresholds the injection targets were labeled against.
    pub thresholds: Thresholds,
    pub indicator_model: RegressionTree,
    pub injection_models: BTreeMap<u32, RegressionTree>,
    pub hyperparams: Hyperparams,
    pub training_meta: TrainingMeta,
    /// Retained training window. Not serialized; reattach with
    /// [`ModelBundle::attach_window`] before updating a loaded bundle.
    #[serde(skip)]
    pub window: Vec<LabeledSample>,
}

fn window_hash(samples: &[LabeledSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(serde_json::to_vec(s).expect("samples serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn fit_all(
    schema: FeatureSchema,
    thresholds: Thresholds,
    candidates: &[u32],
    window: Vec<LabeledSample>,
    window_size: usize,
    hp: &Hyperparams,
    updates: u64,
) -> Result<ModelBundle, LearnError> {
    let indicator_model = fit_tree(&window, Target::LMax, hp)?;
    let injectable: Vec<LabeledSample> = window
        .iter()
        .filter(|s| s.label != LabelStatus::Unlabelable)
        .cloned()
        .collect();
    let mut injection_models = BTreeMap::new();
    for &bus in candidates {
        injection_models.insert(bus, fit_tree(&injectable, Target::Injection(bus), hp)?);
    }
    Ok(ModelBundle {
        training_meta: TrainingMeta {
            dataset_hash: window_hash(&window),
            window_size,
            n_samples: window.len(),
            n_injection_samples: injectable.len(),
            updates,
        },
        schema,
        thresholds,
        indicator_model,
        injection_models,
        hyperparams: *hp,
        window,
    })
}

/// Initial fit on the newest `window_size` samples of `dataset`.
pub fn train_bundle(dataset: &Dataset, hp: &Hyperparams, window_size: usize) -> Result<ModelBundle, LearnError> {
    let skip = dataset.samples.len().saturating_sub(window_size);
    fit_all(
        dataset.header.schema.clone(),
        dataset.header.config.labeling.thresholds,
        &dataset.header.config.injection_candidates,
        dataset.samples[skip..].to_vec(),
        window_size,
        hp,
        0,
    )
}

/// Appends `new_samples` to the window, evicts the oldest beyond
/// `window_size` and refits every tree.
pub fn online_update(
    bundle: &ModelBundle,
    new_samples: &[LabeledSample],
    window_size: usize,
) -> Result<ModelBundle, LearnError> {
    for s in new_samples {
        bundle.schema.check(&s.measurement.schema_id)?;
    }
    let mut window: Vec<LabeledSample> = bundle.window.iter().chain(new_samples).cloned().collect();
    let excess = window.len().saturating_sub(window_size);
    window.drain(..excess);
    let candidates: Vec<u32> = bundle.injection_models.keys().copied().collect();
    fit_all(
        bundle.schema.clone(),
        bundle.thresholds,
        &candidates,
        window,
        window_size,
        &bundle.hyperparams,
        bundle.training_meta.updates + 1,
    )
}

impl ModelBundle {
    pub fn candidates(&self) -> Vec<u32> {
        self.injection_models.keys().copied().collect()
    }

    pub fn predict_l_max(&self, m: &MeasurementVector) -> Result<f64, LearnError> {
        predict(&self.indicator_model, m)
    }

    pub fn predict_injections(&self, m: &MeasurementVector) -> Result<BTreeMap<u32, f64>, LearnError> {
        self.injection_models
            .iter()
            .map(|(&bus, t)| Ok((bus, predict(t, m)?)))
            .collect()
    }

    pub fn attach_window(&mut self, samples: Vec<LabeledSample>) {
        self.window = samples;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let b: ModelBundle = serde_json::from_str(text)?;
        for t in std::iter::once(&b.indicator_model).chain(b.injection_models.values()) {
            b.schema.check(&t.schema_id)?;
        }
        Ok(b)
    }
}
