//! The JSON run configuration.
//!
//! Every field is optional and falls back to its default; unknown keys are
//! rejected. Defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `encoder.base_channels` | 8 |
//! | `encoder.stage_depths` | `[2, 2, 4, 4]` |
//! | `encoder.spatial_kernel`, `encoder.spectral_kernel` | 5 |
//! | `encoder.mlp_ratio` | 2 |
//! | `encoder.fusion` | `"addition"` (or `"concatenation"`) |
//! | `aggregator.groups` | 4 |
//! | `aggregator.heads` | 4 |
//! | `aggregator.window` | 2 |
//! | `aggregator.model_dim` | 64 |
//! | `aggregator.rpe_frequencies` | 20 |
//! | `aggregator.rpe` | `true` |
//! | `aggregator.query_fusion` | `"addition"` |
//! | `decoder.hidden_dims` | `[64, 64, 64]` |
//! | `decoder.activation` | `"gelu"` |
//! | `decoder.output_clamp` | `[0, 1]` (or `null`) |
//! | `train.lr` | 4e-4 |
//! | `train.steps` | 2000 |
//! | `train.batch_scenes` | 4 |
//! | `train.queries_per_step` | 4096 |
//! | `train.seed` | 0 |
//! | `train.augment_flips` | `true` |
//! | `mask_seed` | 7 |
//! | `mask_density` | 0.5 |
//! | `shift_d` | 2 |

use serde::{Deserialize, Serialize};

use crate::aggregator::AggregatorConfig;
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{MgirError, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub aggregator: AggregatorConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub mask_seed: u64,
    pub mask_density: f64,
    pub shift_d: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            aggregator: AggregatorConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
            mask_seed: 7,
            mask_density: 0.5,
            shift_d: 2,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset used for overfitting a single small scene.
    pub fn toy() -> Self {
        Self {
            aggregator: AggregatorConfig {
                model_dim: 32,
                ..Default::default()
            },
            train: TrainConfig {
                lr: 2e-3,
                steps: 2000,
                batch_scenes: 1,
                queries_per_step: 2048,
                seed: 0,
                augment_flips: false,
            },
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| MgirError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = self.model().validate();
        errs.extend(self.train.validate());
        if !(self.mask_density > 0.0 && self.mask_density < 1.0) {
            errs.push(format!("mask_density {} is outside (0, 1)", self.mask_density));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(MgirError::Config(errs))
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            aggregator: self.aggregator.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_json(&RunConfig::toy().to_json()).unwrap(), RunConfig::toy());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"encoder": {"depth": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn all_violations_reported() {
        let text = r#"{"encoder": {"spatial_kernel": 4}, "aggregator": {"heads": 3}, "train": {"lr": -1}, "mask_density": 1.5}"#;
        match RunConfig::from_json(text) {
            Err(MgirError::Config(errs)) => assert!(errs.len() >= 4, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_json(r#"{"decoder": {"output_clamp": null}, "aggregator": {"query_fusion": "concatenation"}}"#).unwrap();
        assert_eq!(cfg.decoder.output_clamp, None);
        assert_eq!(cfg.decoder.hidden_dims, [64, 64, 64]);
        assert_eq!(cfg.aggregator.heads, 4);
    }
}
