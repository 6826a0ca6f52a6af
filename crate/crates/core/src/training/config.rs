use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::ModelConfig;

/// Training and inference settings. Serialized flat: model keys sit next to
/// the optimizer keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub base_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Decoupled weight decay on the head's trend and seasonal MLPs.
    pub head_weight_decay: f64,
    pub seed: u64,
    /// Autoregressive paths per window at inference.
    pub n_samples_infer: usize,
    /// Latent draws per path at inference.
    pub n_latent_infer: usize,
    /// Optimizer steps per epoch.
    pub batches_per_epoch: usize,
    /// Paths per window for the per-epoch validation score.
    pub n_samples_val: usize,
    /// Rolling windows per series held out for validation and for test.
    pub val_windows: usize,
    pub test_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            base_lr: 0.001,
            batch_size: 64,
            max_epochs: 10,
            patience: 10,
            head_weight_decay: 0.5,
            seed: 0,
            n_samples_infer: 100,
            n_latent_infer: 1,
            batches_per_epoch: 300,
            n_samples_val: 16,
            val_windows: 7,
            test_windows: 7,
        }
    }
}

impl TrainConfig {
    /// Parses JSON, rejecting keys this config does not know.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let known = serde_json::to_value(Self::default())?;
        if let (Some(obj), Some(known)) = (value.as_object(), known.as_object()) {
            if let Some(key) = obj.keys().find(|k| !known.contains_key(*k)) {
                return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
            }
        }
        let config: Self = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(self.head_weight_decay >= 0.0 && self.head_weight_decay.is_finite()) {
            return bad("head_weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return bad("batch_size and batches_per_epoch must be positive");
        }
        if self.n_samples_infer == 0 || self.n_latent_infer == 0 || self.n_samples_val == 0 {
            return bad("sample counts must be positive");
        }
        if self.val_windows == 0 || self.test_windows == 0 {
            return bad("val_windows and test_windows must be positive");
        }
        Ok(())
    }
}
