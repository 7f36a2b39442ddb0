//! Regression-tree surrogates for the L-index and the corrective injections,
//! refit over a sliding window of recent samples.

mod bundle;
mod eval;
mod tree;

use thiserror::Error;

pub use bundle::{online_update, train_bundle, ModelBundle, Target, TrainingMeta};
pub use eval::{analytic_baseline, evaluate_model, EvalReport, Metrics};
pub use tree::{fit_matrix, Hyperparams, Matrix, Node, RegressionTree, Surrogate};

use crate::scenario::{LabeledSample, ScenarioError};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("non-finite feature {feature} in sample {sample}")]
    NonFinite { sample: usize, feature: usize },
    #[error("non-finite target in sample {sample}")]
    NonFiniteTarget { sample: usize },
    #[error("schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no model for injection bus {0}")]
    UnknownTarget(u32),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Fits one tree on `samples` for the chosen target.
pub fn fit_tree(samples: &[LabeledSample], target: Target, hp: &Hyperparams) -> Result<RegressionTree, LearnError> {
    let Some(first) = samples.first() else {
        return Err(LearnError::EmptyDataset);
    };
    let schema_id = first.measurement.schema_id.clone();
    for s in samples {
        if s.measurement.schema_id != schema_id {
            return Err(LearnError::SchemaMismatch {
                expected: schema_id,
                got: s.measurement.schema_id.clone(),
            });
        }
    }
    let x = Matrix::from_rows(samples.iter().map(|s| s.measurement.features.as_slice()))?;
    let y: Vec<f64> = samples.iter().map(|s| target.value(s)).collect();
    fit_matrix(&x, &y, hp, &schema_id)
}

/// Prediction for one measurement; masked features fall back on surrogates.
pub fn predict(tree: &RegressionTree, m: &crate::scenario::MeasurementVector) -> Result<f64, LearnError> {
    if m.schema_id != tree.schema_id {
        return Err(LearnError::SchemaMismatch {
            expected: tree.schema_id.clone(),
            got: m.schema_id.clone(),
        });
    }
    if m.features.len() != tree.n_features {
        return Err(LearnError::Shape(format!(
            "{} features, tree expects {}",
            m.features.len(),
            tree.n_features
        )));
    }
    Ok(tree.predict_row(&m.features, Some(&m.corruption_mask)))
}
