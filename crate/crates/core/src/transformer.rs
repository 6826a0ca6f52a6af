//! Encoder-decoder Transformer emitting a Gaussian `(μ_t, σ_t)` per forecast
//! step.
//!
//! Step `t` of either stack sees the previous value `y_{t-1}`, the covariates
//! of step `t`, a series-id embedding and a learned position embedding. The
//! decoder runs in parallel under a causal mask during training and one step
//! at a time (feeding back samples) at inference.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::kernels::{self, AttnShape, Mask};
use crate::autograd::{Graph, Init, ParamId, ParamStore, Scalar, Var};
use crate::data::{WindowBatch, N_COVARIATES};
use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNorm, Linear, Mode, MultiHeadAttention};

/// Added to the softplus output so σ stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub embed_dim_id: usize,
    pub embed_dim_pos: usize,
    /// Conditioning range length.
    pub t0: usize,
    /// Prediction range length.
    pub tau: usize,
    pub dropout: f64,
    pub latent_dim: usize,
    pub kernel_size: usize,
    /// Weight of the forecaster's NLL term.
    pub gamma: f64,
    /// Weight of the KL term.
    pub beta: f64,
    /// Rows of the series-id embedding table; ids must lie in `0..n_series`.
    pub n_series: usize,
    /// Whether the generative decomposition head is attached.
    pub decomposition: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 128,
            embed_dim_id: 20,
            embed_dim_pos: 20,
            t0: 48,
            tau: 24,
            dropout: 0.1,
            latent_dim: 20,
            kernel_size: 25,
            gamma: 1.0,
            beta: 1.0,
            n_series: 1,
            decomposition: true,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Width of the generative head's hidden layers.
    pub fn head_hidden(&self) -> usize {
        (self.d_ff / 4).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layer, head and width counts must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.t0 == 0 || self.tau == 0 {
            return bad("t0 and tau must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::EvenKernel(self.kernel_size));
        }
        if self.kernel_size > 2 * self.tau - 1 {
            return Err(Error::KernelTooLarge {
                kernel: self.kernel_size,
                len: self.tau,
            });
        }
        if self.decomposition && self.kernel_size > self.t0 {
            return Err(Error::KernelTooLarge {
                kernel: self.kernel_size,
                len: self.t0,
            });
        }
        if self.latent_dim == 0 || self.n_series == 0 || self.embed_dim_pos == 0 {
            return bad("latent_dim, n_series and embed_dim_pos must be positive".into());
        }
        crate::objectives::check_coefficients(self.gamma, self.beta)
    }
}

/// Per-step Gaussian parameters, row-major `[batch, len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<F> {
    pub batch: usize,
    pub len: usize,
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

/// Row features fed to the input embedding: lagged value and covariates,
/// plus the id and position used for the embedding lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs<F> {
    /// `[rows, 1 + N_COVARIATES]`
    pub features: Vec<F>,
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
}

impl<F> StepInputs<F> {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }
}

/// The forecaster's parameters, addressed by role.
#[derive(Debug, Clone)]
pub struct TransformerForecaster {
    pub config: ModelConfig,
    pub input_proj: Linear,
    pub id_embedding: ParamId,
    pub pos_embedding: ParamId,
    pub pos_proj: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub mu_head: Linear,
    pub sigma_head: Linear,
}

pub const FEATURE_WIDTH: usize = 1 + N_COVARIATES;

impl TransformerForecaster {
    pub fn new<F: Scalar, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let d = config.d_model;
        let input_proj = Linear::new(store, "embed.input", FEATURE_WIDTH + config.embed_dim_id, d, true, rng);
        let id_embedding = store.add(
            "embed.series_id",
            config.n_series,
            config.embed_dim_id,
            Init::Xavier,
            rng,
        );
        let pos_embedding = store.add(
            "embed.position",
            config.t0 + config.tau,
            config.embed_dim_pos,
            Init::Xavier,
            rng,
        );
        let pos_proj = Linear::new(store, "embed.position_proj", config.embed_dim_pos, d, false, rng);
        let encoder = (0..config.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, config.n_heads, rng),
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d, rng),
                    ff: FeedForward::new(store, &format!("{p}.ff"), d, config.d_ff, rng),
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d, rng),
                }
            })
            .collect();
        let decoder = (0..config.n_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayer {
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, config.n_heads, rng),
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d, rng),
                    cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), d, config.n_heads, rng),
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d, rng),
                    ff: FeedForward::new(store, &format!("{p}.ff"), d, config.d_ff, rng),
                    norm3: LayerNorm::new(store, &format!("{p}.norm3"), d, rng),
                }
            })
            .collect();
        let mu_head = Linear::new(store, "head.mu", d, 1, true, rng);
        let sigma_head = Linear::new(store, "head.sigma", d, 1, true, rng);
        Self {
            config: config.clone(),
            input_proj,
            id_embedding,
            pos_embedding,
            pos_proj,
            encoder,
            decoder,
            mu_head,
            sigma_head,
        }
    }

    fn series_index(&self, id: i64) -> Result<usize> {
        if id < 0 || id as usize >= self.config.n_series {
            return Err(Error::UnknownSeries {
                id,
                n_series: self.config.n_series,
            });
        }
        Ok(id as usize)
    }

    fn check_batch(&self, batch: &WindowBatch) -> Result<()> {
        if batch.t0 != self.config.t0 || batch.tau != self.config.tau {
            return Err(Error::ShapeMismatch(format!(
                "window ({}, {}) vs model ({}, {})",
                batch.t0, batch.tau, self.config.t0, self.config.tau
            )));
        }
        Ok(())
    }

    /// Encoder rows: step `t` carries `y_{t-1}` (zero at `t = 0`) and `x_t`.
    pub fn encoder_inputs<F: Scalar>(&self, batch: &WindowBatch) -> Result<StepInputs<F>> {
        self.check_batch(batch)?;
        let t0 = batch.t0;
        let mut inputs = StepInputs {
            features: Vec::with_capacity(batch.batch * t0 * FEATURE_WIDTH),
            ids: Vec::with_capacity(batch.batch * t0),
            positions: Vec::with_capacity(batch.batch * t0),
        };
        for b in 0..batch.batch {
            let id = self.series_index(batch.series_id[b])?;
            let history = batch.history_row(b);
            for t in 0..t0 {
                let lag = if t == 0 { 0.0 } else { history[t - 1] };
                inputs.features.push(F::of(lag));
                inputs
                    .features
                    .extend(batch.covariates_at(b, t).iter().map(|&c| F::of(c)));
                inputs.ids.push(id);
                inputs.positions.push(t);
            }
        }
        Ok(inputs)
    }

    /// Decoder rows for the first `len` prediction steps with lagged values
    /// `lags` (`[batch, len]`); step `i` pairs `lags[i]` with `x_{t0+i}`.
    pub fn decoder_inputs<F: Scalar>(&self, batch: &WindowBatch, lags: &[f64], len: usize) -> Result<StepInputs<F>> {
        self.check_batch(batch)?;
        if lags.len() != batch.batch * len || len > batch.tau {
            return Err(Error::ShapeMismatch("decoder lag matrix".into()));
        }
        let mut inputs = StepInputs {
            features: Vec::with_capacity(batch.batch * len * FEATURE_WIDTH),
            ids: Vec::with_capacity(batch.batch * len),
            positions: Vec::with_capacity(batch.batch * len),
        };
        for b in 0..batch.batch {
            let id = self.series_index(batch.series_id[b])?;
            for i in 0..len {
                inputs.features.push(F::of(lags[b * len + i]));
                inputs
                    .features
                    .extend(batch.covariates_at(b, batch.t0 + i).iter().map(|&c| F::of(c)));
                inputs.ids.push(id);
                inputs.positions.push(batch.t0 + i);
            }
        }
        Ok(inputs)
    }

    /// Ground-truth lags for teacher forcing: `[y_{t0}, y_{t0+1}, .., y_{t0+τ-1}]`.
    pub fn teacher_lags(batch: &WindowBatch) -> Vec<f64> {
        let mut lags = Vec::with_capacity(batch.batch * batch.tau);
        for b in 0..batch.batch {
            lags.push(batch.history_row(b)[batch.t0 - 1]);
            lags.extend_from_slice(&batch.target_row(b)[..batch.tau - 1]);
        }
        lags
    }

    /// `input_proj([features, id_emb]) + pos_proj(pos_emb)`, shape `[rows, d_model]`.
    pub fn embed_inputs<F: Scalar>(&self, g: &mut Graph<'_, F>, inputs: &StepInputs<F>) -> Var {
        let rows = inputs.rows();
        let feats = g.constant(inputs.features.clone(), rows, FEATURE_WIDTH);
        let id_table = g.param(self.id_embedding);
        let ids = g.gather(id_table, inputs.ids.clone());
        let joined = g.concat_cols(&[feats, ids]);
        let projected = self.input_proj.forward(g, joined);
        let pos_table = g.param(self.pos_embedding);
        let pos = g.gather(pos_table, inputs.positions.clone());
        let pos = self.pos_proj.forward(g, pos);
        g.add(projected, pos)
    }

    /// Encoder stack over `[batch·t0, d]` embedded history.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<'_, F>, embedded: Var, batch: usize, mode: &mut Mode<'_>) -> Var {
        let t0 = self.config.t0;
        let mut x = mode.drop(g, embedded);
        for layer in &self.encoder {
            let shape = layer.attn.shape(batch, t0, t0);
            let a = layer.attn.forward(g, x, x, shape, &Mask::None);
            let a = mode.drop(g, a);
            let r = g.add(x, a);
            x = layer.norm1.forward(g, r);
            let f = layer.ff.forward(g, x, mode);
            let f = mode.drop(g, f);
            let r = g.add(x, f);
            x = layer.norm2.forward(g, r);
        }
        x
    }

    /// Decoder stack over `[batch·len, d]` embedded lags with causal
    /// self-attention and cross-attention to `memory` (`[batch·t0, d]`).
    pub fn decode<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        embedded: Var,
        memory: Var,
        batch: usize,
        len: usize,
        mode: &mut Mode<'_>,
    ) -> Var {
        let t0 = self.config.t0;
        let mut x = mode.drop(g, embedded);
        for layer in &self.decoder {
            let shape = layer.self_attn.shape(batch, len, len);
            let a = layer.self_attn.forward(g, x, x, shape, &Mask::Causal);
            let a = mode.drop(g, a);
            let r = g.add(x, a);
            x = layer.norm1.forward(g, r);
            let shape = layer.cross_attn.shape(batch, len, t0);
            let c = layer.cross_attn.forward(g, x, memory, shape, &Mask::None);
            let c = mode.drop(g, c);
            let r = g.add(x, c);
            x = layer.norm2.forward(g, r);
            let f = layer.ff.forward(g, x, mode);
            let f = mode.drop(g, f);
            let r = g.add(x, f);
            x = layer.norm3.forward(g, r);
        }
        x
    }

    /// `μ = W_μ·f + b_μ`, `σ = softplus(w_σ·f + b_σ) + SIGMA_FLOOR`, each `[rows, 1]`.
    pub fn likelihood_head<F: Scalar>(&self, g: &mut Graph<'_, F>, features: Var) -> Result<(Var, Var)> {
        if g.value(features).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder features"));
        }
        let mu = self.mu_head.forward(g, features);
        let pre = self.sigma_head.forward(g, features);
        let sp = g.softplus(pre);
        let sigma = g.add_scalar(sp, SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    /// One parallel teacher-forced pass; returns `(μ, σ)` nodes of shape `[batch, τ]`.
    pub fn forward_teacher_forced_vars<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        batch: &WindowBatch,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        let enc_in = self.encoder_inputs(batch)?;
        let dec_in = self.decoder_inputs(batch, &Self::teacher_lags(batch), batch.tau)?;
        let emb = self.embed_inputs(g, &enc_in);
        let memory = self.encode(g, emb, batch.batch, mode);
        let dec_emb = self.embed_inputs(g, &dec_in);
        let features = self.decode(g, dec_emb, memory, batch.batch, batch.tau, mode);
        let (mu, sigma) = self.likelihood_head(g, features)?;
        let mu = g.reshape(mu, batch.batch, batch.tau);
        let sigma = g.reshape(sigma, batch.batch, batch.tau);
        Ok((mu, sigma))
    }

    /// Teacher-forced Gaussian parameters with dropout disabled.
    pub fn forward_teacher_forced<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        batch: &WindowBatch,
    ) -> Result<GaussianParams<F>> {
        let mut g = Graph::inference(store);
        let (mu, sigma) = self.forward_teacher_forced_vars(&mut g, batch, &mut Mode::eval())?;
        Ok(GaussianParams {
            batch: batch.batch,
            len: batch.tau,
            mean: g.value(mu).to_vec(),
            std: g.value(sigma).to_vec(),
        })
    }

    /// Encoder output for a batch, `[batch·t0, d_model]`, dropout disabled.
    pub fn memory<F: Scalar>(&self, store: &ParamStore<F>, batch: &WindowBatch) -> Result<Vec<F>> {
        let enc_in = self.encoder_inputs(batch)?;
        let mut g = Graph::inference(store);
        let emb = self.embed_inputs(&mut g, &enc_in);
        let memory = self.encode(&mut g, emb, batch.batch, &mut Mode::eval());
        Ok(g.value(memory).to_vec())
    }

    /// Step-by-step decoding fed with the ground-truth lags, through the
    /// incremental (cached) path. Equal to [`Self::forward_teacher_forced`]
    /// up to rounding.
    pub fn decode_sequential<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        batch: &WindowBatch,
    ) -> Result<GaussianParams<F>> {
        let memory = self.memory(store, batch)?;
        let ids = (0..batch.batch)
            .map(|b| self.series_index(batch.series_id[b]))
            .collect::<Result<Vec<_>>>()?;
        let lags = Self::teacher_lags(batch);
        let mut dec = IncrementalDecoder::new(self, store, &memory, batch.batch, 1);
        let (tau, b_n) = (batch.tau, batch.batch);
        let mut out = GaussianParams {
            batch: b_n,
            len: tau,
            mean: vec![F::zero(); b_n * tau],
            std: vec![F::zero(); b_n * tau],
        };
        for i in 0..tau {
            let mut features = Vec::with_capacity(b_n * FEATURE_WIDTH);
            for b in 0..b_n {
                features.push(F::of(lags[b * tau + i]));
                features.extend(batch.covariates_at(b, batch.t0 + i).iter().map(|&c| F::of(c)));
            }
            let (mu, sigma) = dec.step(&features, &ids)?;
            for b in 0..b_n {
                out.mean[b * tau + i] = mu[b];
                out.std[b * tau + i] = sigma[b];
            }
        }
        Ok(out)
    }

    /// Sample paths drawn by feeding each step's draw `Ŷ_t ~ N(μ_t, σ_t²)`
    /// back as the next decoder input. Paths are ordered window-major:
    /// path `b·n_samples + s`. All values are in the scaled domain.
    pub fn autoregressive_forecast<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        batch: &WindowBatch,
        n_samples: usize,
        rng: &mut dyn RngCore,
    ) -> Result<SamplePaths<F>> {
        if n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        let memory = self.memory(store, batch)?;
        let paths = batch.batch * n_samples;
        let tau = batch.tau;
        let mut ids = Vec::with_capacity(paths);
        let mut last = Vec::with_capacity(paths);
        for b in 0..batch.batch {
            let id = self.series_index(batch.series_id[b])?;
            for _ in 0..n_samples {
                ids.push(id);
                last.push(F::of(batch.history_row(b)[batch.t0 - 1]));
            }
        }
        let mut dec = IncrementalDecoder::new(self, store, &memory, paths, n_samples);
        let mut out = SamplePaths {
            paths,
            tau,
            samples: vec![F::zero(); paths * tau],
            mu: vec![F::zero(); paths * tau],
            sigma: vec![F::zero(); paths * tau],
        };
        let mut features = Vec::with_capacity(paths * FEATURE_WIDTH);
        for i in 0..tau {
            features.clear();
            for p in 0..paths {
                features.push(last[p]);
                features.extend(
                    batch
                        .covariates_at(p / n_samples, batch.t0 + i)
                        .iter()
                        .map(|&c| F::of(c)),
                );
            }
            let (mu, sigma) = dec.step(&features, &ids)?;
            for p in 0..paths {
                let eps: f64 = rng.sample(StandardNormal);
                let draw = mu[p] + sigma[p] * F::of(eps);
                out.mu[p * tau + i] = mu[p];
                out.sigma[p * tau + i] = sigma[p];
                out.samples[p * tau + i] = draw;
                last[p] = draw;
            }
        }
        Ok(out)
    }
}

/// Output of [`TransformerForecaster::autoregressive_forecast`], each `[paths, τ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePaths<F> {
    pub paths: usize,
    pub tau: usize,
    pub samples: Vec<F>,
    pub mu: Vec<F>,
    pub sigma: Vec<F>,
}

/// Untaped one-step-at-a-time decoder with cached self-attention keys and
/// values and precomputed cross-attention projections.
pub struct IncrementalDecoder<'m, F: Scalar> {
    model: &'m TransformerForecaster,
    store: &'m ParamStore<F>,
    rows: usize,
    group: usize,
    cross_kv: Vec<(Vec<F>, Vec<F>)>,
    self_kv: Vec<(Vec<F>, Vec<F>)>,
    step: usize,
}

impl<'m, F: Scalar> IncrementalDecoder<'m, F> {
    /// `rows` decoder rows share memory blocks in groups of `group`.
    pub fn new(
        model: &'m TransformerForecaster,
        store: &'m ParamStore<F>,
        memory: &[F],
        rows: usize,
        group: usize,
    ) -> Self {
        let cfg = &model.config;
        let mem_rows = memory.len() / cfg.d_model;
        let cross_kv = model
            .decoder
            .iter()
            .map(|l| {
                (
                    l.cross_attn.key.apply(store, memory, mem_rows),
                    l.cross_attn.value.apply(store, memory, mem_rows),
                )
            })
            .collect();
        let cache = rows * cfg.tau * cfg.d_model;
        let self_kv = model
            .decoder
            .iter()
            .map(|_| (vec![F::zero(); cache], vec![F::zero(); cache]))
            .collect();
        Self {
            model,
            store,
            rows,
            group,
            cross_kv,
            self_kv,
            step: 0,
        }
    }

    /// Decodes the next position for every row; `features` is
    /// `[rows, FEATURE_WIDTH]`. Returns `(μ, σ)` per row.
    pub fn step(&mut self, features: &[F], ids: &[usize]) -> Result<(Vec<F>, Vec<F>)> {
        let cfg = &self.model.config;
        let (rows, d, tau) = (self.rows, cfg.d_model, cfg.tau);
        if self.step >= tau {
            return Err(Error::IndexOutOfRange {
                index: self.step,
                len: tau,
            });
        }
        let store = self.store;
        let m = self.model;

        let id_table = &store.get(m.id_embedding).data;
        let e = cfg.embed_dim_id;
        let width = FEATURE_WIDTH + e;
        let mut joined = Vec::with_capacity(rows * width);
        for r in 0..rows {
            joined.extend_from_slice(&features[r * FEATURE_WIDTH..(r + 1) * FEATURE_WIDTH]);
            joined.extend_from_slice(&id_table[ids[r] * e..(ids[r] + 1) * e]);
        }
        let mut x = m.input_proj.apply(store, &joined, rows);
        let p = cfg.embed_dim_pos;
        let pos_row = cfg.t0 + self.step;
        let pos = &store.get(m.pos_embedding).data[pos_row * p..(pos_row + 1) * p];
        let pos = m.pos_proj.apply(store, pos, 1);
        for row in x.chunks_exact_mut(d) {
            row.iter_mut().zip(&pos).for_each(|(a, &b)| *a += b);
        }

        for (l, layer) in m.decoder.iter().enumerate() {
            let attn = &layer.self_attn;
            let q = attn.query.apply(store, &x, rows);
            let k = attn.key.apply(store, &x, rows);
            let v = attn.value.apply(store, &x, rows);
            let (kc, vc) = &mut self.self_kv[l];
            for r in 0..rows {
                let at = (r * tau + self.step) * d;
                kc[at..at + d].copy_from_slice(&k[r * d..(r + 1) * d]);
                vc[at..at + d].copy_from_slice(&v[r * d..(r + 1) * d]);
            }
            let shape = AttnShape {
                kv_stride: tau,
                ..attn.shape(rows, 1, self.step + 1)
            };
            let o = attend(&q, kc, vc, shape);
            let a = attn.output.apply(store, &o, rows);
            x = layer.norm1.apply(store, &add(&x, &a));

            let cross = &layer.cross_attn;
            let q = cross.query.apply(store, &x, rows);
            let (ck, cv) = &self.cross_kv[l];
            let shape = AttnShape {
                kv_group: self.group,
                ..cross.shape(rows, 1, cfg.t0)
            };
            let o = attend(&q, ck, cv, shape);
            let c = cross.output.apply(store, &o, rows);
            x = layer.norm2.apply(store, &add(&x, &c));

            let f = layer.ff.apply(store, &x, rows);
            x = layer.norm3.apply(store, &add(&x, &f));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder features"));
        }
        let mu = m.mu_head.apply(store, &x, rows);
        let floor = F::of(SIGMA_FLOOR);
        let sigma = m
            .sigma_head
            .apply(store, &x, rows)
            .into_iter()
            .map(|s| kernels::softplus(s) + floor)
            .collect();
        self.step += 1;
        Ok((mu, sigma))
    }
}

fn attend<F: Scalar>(q: &[F], k: &[F], v: &[F], shape: AttnShape) -> Vec<F> {
    let mut out = vec![F::zero(); shape.batch * shape.lq * shape.width()];
    let mut probs = vec![F::zero(); shape.batch * shape.heads * shape.lq * shape.lk];
    kernels::attention_forward(q, k, v, &shape, &Mask::None, &mut out, &mut probs);
    out
}

fn add<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Functional multi-head attention: `softmax(Q_h K_hᵀ/√d_k + mask)·V_h` per head,
/// concatenated and projected by `mha.output`. `query` is `[lq, d]` and
/// `memory` `[lk, d]`; an explicit mask must leave every query a visible key.
pub fn multi_head_attention<F: Scalar>(
    store: &ParamStore<F>,
    mha: &MultiHeadAttention,
    query: &[F],
    memory: &[F],
    mask: &Mask,
) -> Result<Vec<F>> {
    let d = mha.d_model;
    if !query.len().is_multiple_of(d) || !memory.len().is_multiple_of(d) {
        return Err(Error::ShapeMismatch(format!("attention inputs must have {d} columns")));
    }
    let (lq, lk) = (query.len() / d, memory.len() / d);
    if let Mask::Explicit(m) = mask {
        if m.len() != lq * lk {
            return Err(Error::ShapeMismatch(format!(
                "mask of {} entries for [{lq}, {lk}]",
                m.len()
            )));
        }
    }
    if let Some(row) = (0..lq).find(|&i| (0..lk).all(|j| !mask.visible(i, j, lq, lk))) {
        return Err(Error::AllMaskedRow { row });
    }
    let mut g = Graph::inference(store);
    let qv = g.constant(query.to_vec(), lq, d);
    let mv = g.constant(memory.to_vec(), lk, d);
    let out = mha.forward(&mut g, qv, mv, mha.shape(1, lq, lk), mask);
    Ok(g.value(out).to_vec())
}
