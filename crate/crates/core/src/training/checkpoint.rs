//! JSON checkpoint container. Tensors are stored as base64 of their
//! little-endian bytes, so a save/load cycle is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::engine::{decay_per_tensor, TrainState};
use super::optim::Adam;
use crate::autograd::{Param, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::model::PdTrans;

pub const FORMAT: &str = "pdtrans-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<String>,
    pub v: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dtype: String,
    pub config: TrainConfig,
    pub params: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerRecord>,
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub patience_left: usize,
    pub rng: Option<ChaCha8Rng>,
}

fn encode<F: Scalar>(values: &[F]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * F::BYTES);
    values.iter().for_each(|v| v.write_le(&mut bytes));
    STANDARD.encode(bytes)
}

fn decode<F: Scalar>(text: &str, dtype: &str, expected: usize) -> Result<Vec<F>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad tensor encoding: {e}")))?;
    let values: Vec<F> = match dtype {
        "f32" => bytes.chunks_exact(4).map(|c| F::of(f32::read_le(c) as f64)).collect(),
        "f64" => bytes.chunks_exact(8).map(|c| F::of(f64::read_le(c))).collect(),
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    };
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "tensor has {} values, expected {expected}",
            values.len()
        )));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn new<F: Scalar>(config: &TrainConfig, model: &PdTrans<F>, state: Option<&TrainState<F>>) -> Self {
        let params = model
            .store
            .iter()
            .map(|p| TensorRecord {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                data: encode(&p.data),
            })
            .collect();
        let optimizer = state.map(|s| OptimizerRecord {
            beta1: s.optimizer.beta1,
            beta2: s.optimizer.beta2,
            eps: s.optimizer.eps,
            t: s.optimizer.t,
            m: s.optimizer.m.iter().map(|m| encode(m)).collect(),
            v: s.optimizer.v.iter().map(|v| encode(v)).collect(),
        });
        let patience_left = state.map_or(config.patience, |s| s.patience_left);
        let mut config = config.clone();
        config.model = model.config.clone();
        Self {
            format: FORMAT.to_string(),
            dtype: F::DTYPE.to_string(),
            config,
            params,
            optimizer,
            epoch: state.map_or(0, |s| s.epoch),
            step: state.map_or(0, |s| s.step),
            best_val: state.and_then(|s| s.best_val),
            patience_left,
            rng: state.map(|s| s.rng.clone()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable: {e}")))?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "format {:?}, expected {FORMAT:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model in element type `F`, converting if the stored dtype differs.
    pub fn model<F: Scalar>(&self) -> Result<PdTrans<F>> {
        let mut store = ParamStore::new();
        for t in &self.params {
            let data = decode(&t.data, &self.dtype, t.rows * t.cols)?;
            store.push(Param {
                name: t.name.clone(),
                rows: t.rows,
                cols: t.cols,
                data,
            });
        }
        PdTrans::from_parts(self.config.model.clone(), store)
    }

    /// Training state to resume from, if the checkpoint carries one.
    pub fn state<F: Scalar>(&self, model: &PdTrans<F>) -> Result<Option<TrainState<F>>> {
        let (Some(opt), Some(rng)) = (&self.optimizer, &self.rng) else {
            return Ok(None);
        };
        let lens: Vec<usize> = model.store.iter().map(|p| p.data.len()).collect();
        if opt.m.len() != lens.len() || opt.v.len() != lens.len() {
            return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
        }
        let moments = |all: &[String]| -> Result<Vec<Vec<F>>> {
            all.iter().zip(&lens).map(|(s, &n)| decode(s, &self.dtype, n)).collect()
        };
        let optimizer = Adam {
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            t: opt.t,
            m: moments(&opt.m)?,
            v: moments(&opt.v)?,
            decay: decay_per_tensor(model, &self.config),
        };
        Ok(Some(TrainState {
            epoch: self.epoch,
            step: self.step,
            optimizer,
            best_val: self.best_val,
            patience_left: self.patience_left,
            rng: rng.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;
    use rand::SeedableRng;

    fn tiny() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                n_layers: 1,
                n_heads: 2,
                d_model: 8,
                d_ff: 8,
                t0: 6,
                tau: 3,
                kernel_size: 3,
                latent_dim: 2,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let config = tiny();
        let model = PdTrans::<f32>::new(config.model.clone(), 5).unwrap();
        let mut state = TrainState::new(&model, &config);
        state.optimizer.m[0][0] = 0.125;
        state.best_val = Some(0.3141592653589793);
        state.rng = ChaCha8Rng::seed_from_u64(77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        Checkpoint::new(&config, &model, Some(&state)).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let back = loaded.model::<f32>().unwrap();
        assert_eq!(back.store, model.store);
        assert_eq!(loaded.state(&back).unwrap().unwrap(), state);
        assert_eq!(loaded.config, config);
    }

    #[test]
    fn rejects_foreign_format() {
        let bad = r#"{"format":"other","dtype":"f32"}"#;
        assert!(matches!(Checkpoint::from_json(bad), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_json("not json"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn f64_checkpoint_loads_as_f32() {
        let config = tiny();
        let model = PdTrans::<f64>::new(config.model.clone(), 5).unwrap();
        let ckpt = Checkpoint::new(&config, &model, None);
        assert_eq!(ckpt.dtype, "f64");
        let narrow = ckpt.model::<f32>().unwrap();
        assert_eq!(narrow.store, model.store.cast::<f32>());
        assert!(ckpt.state(&narrow).unwrap().is_none());
    }
}
