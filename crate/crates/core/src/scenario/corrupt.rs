use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream, FeatureSchema, MeasurementVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionMode {
    /// Reading lost; replaced by the gap-fill value.
    Gap,
    /// Relative gaussian error.
    Noise,
    /// Sensor frozen at its nominal value.
    Stuck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapFill {
    TrainingMean,
    Zero,
    LastValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub rate: f64,
    pub mode: CorruptionMode,
    pub noise_sigma: f64,
    pub gap_fill: GapFill,
    pub rng_seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            rate: 0.0,
            mode: CorruptionMode::Gap,
            noise_sigma: 0.05,
            gap_fill: GapFill::TrainingMean,
            rng_seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.rate) && self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()
    }
}

/// Corrupts each feature independently with probability `config.rate`.
///
/// `draw` selects the random stream, so draw k under a given seed is always
/// the same corruption. `previous` is the last reading received for
/// [`GapFill::LastValue`]; without one the nominal value stands in, as it
/// does for a training mean that was never attached.
pub fn corrupt_measurements(
    m: &MeasurementVector,
    config: &CorruptionConfig,
    schema: &FeatureSchema,
    draw: u64,
    previous: Option<&[f64]>,
) -> MeasurementVector {
    let mut out = m.clone();
    if config.rate <= 0.0 {
        return out;
    }
    let mut rng = stream(config.rng_seed, draw);
    for i in 0..out.features.len() {
        if !rng.random_bool(config.rate.min(1.0)) {
            continue;
        }
        let nominal = schema.nominal.get(i).copied().unwrap_or(0.0);
        out.features[i] = match config.mode {
            CorruptionMode::Gap => match config.gap_fill {
                GapFill::Zero => 0.0,
                GapFill::TrainingMean => schema
                    .training_mean
                    .as_ref()
                    .and_then(|t| t.get(i).copied())
                    .unwrap_or(nominal),
                GapFill::LastValue => previous.and_then(|p| p.get(i).copied()).unwrap_or(nominal),
            },
            CorruptionMode::Noise => {
                let z: f64 = rng.sample(StandardNormal);
                out.features[i] * (1.0 + config.noise_sigma * z)
            }
            CorruptionMode::Stuck => nominal,
        };
        out.corruption_mask[i] = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(n: usize) -> FeatureSchema {
        FeatureSchema {
            schema_id: "s".into(),
            bus_ids: vec![],
            branches: vec![],
            names: (0..n).map(|i| format!("f{i}")).collect(),
            nominal: vec![0.5; n],
            training_mean: Some(vec![0.25; n]),
        }
    }

    fn vector(n: usize) -> MeasurementVector {
        MeasurementVector {
            features: (0..n).map(|i| 1.0 + i as f64).collect(),
            corruption_mask: vec![false; n],
            schema_id: "s".into(),
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let m = vector(10);
        let out = corrupt_measurements(&m, &CorruptionConfig::default(), &schema(10), 3, None);
        assert_eq!(out, m);
    }

    #[test]
    fn full_gap_with_zero_fill() {
        let cfg = CorruptionConfig {
            rate: 1.0,
            gap_fill: GapFill::Zero,
            ..Default::default()
        };
        let out = corrupt_measurements(&vector(8), &cfg, &schema(8), 0, None);
        assert!(out.features.iter().all(|&x| x == 0.0));
        assert!(out.corruption_mask.iter().all(|&x| x));
    }

    #[test]
    fn fill_sources() {
        let s = schema(4);
        let mut cfg = CorruptionConfig {
            rate: 1.0,
            ..Default::default()
        };
        assert_eq!(
            corrupt_measurements(&vector(4), &cfg, &s, 0, None).features,
            vec![0.25; 4]
        );
        cfg.gap_fill = GapFill::LastValue;
        let prev = [9.0; 4];
        assert_eq!(
            corrupt_measurements(&vector(4), &cfg, &s, 0, Some(&prev)).features,
            vec![9.0; 4]
        );
        cfg.mode = CorruptionMode::Stuck;
        assert_eq!(
            corrupt_measurements(&vector(4), &cfg, &s, 0, None).features,
            vec![0.5; 4]
        );
    }

    #[test]
    fn noise_is_relative_and_seeded() {
        let cfg = CorruptionConfig {
            rate: 1.0,
            mode: CorruptionMode::Noise,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let m = vector(5);
        let out = corrupt_measurements(&m, &cfg, &schema(5), 1, None);
        assert_eq!(out.features, m.features);
        let noisy = CorruptionConfig {
            noise_sigma: 0.1,
            ..cfg
        };
        let a = corrupt_measurements(&m, &noisy, &schema(5), 1, None);
        let b = corrupt_measurements(&m, &noisy, &schema(5), 1, None);
        assert_eq!(a, b);
        assert_ne!(a.features, m.features);
    }
}
