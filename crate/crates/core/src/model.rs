//! The full model: forecaster plus optional generative head, one parameter store.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, ParamStore, Scalar, Var};
use crate::data::WindowBatch;
use crate::decomposition::GenerativeHead;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::objectives::{total_loss, LossBreakdown};
use crate::transformer::{ModelConfig, TransformerForecaster};

#[derive(Debug, Clone)]
pub struct PdTrans<F: Scalar> {
    pub config: ModelConfig,
    pub forecaster: TransformerForecaster,
    /// `None` for the ablation without the decomposition head.
    pub head: Option<GenerativeHead>,
    pub store: ParamStore<F>,
}

/// Loss nodes of one training pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    pub kl: Option<Var>,
    pub recon: Option<Var>,
    pub mu: Var,
    pub sigma: Var,
    pub mu_hat: Option<Var>,
}

/// Point and sample forecasts for one window batch, scaled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchForecast<F> {
    pub batch: usize,
    pub tau: usize,
    /// Draws per window.
    pub draws: usize,
    /// `[batch, draws, τ]`
    pub samples: Vec<F>,
    /// Per-window means over draws, `[batch, τ]`.
    pub trend: Vec<F>,
    pub seasonal: Vec<F>,
    pub mu_hat: Vec<F>,
    pub sigma: Vec<F>,
}

impl<F: Scalar> PdTrans<F> {
    /// Fresh model; parameter initialization is a function of `seed` only.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let forecaster = TransformerForecaster::new(&config, &mut store, &mut rng);
        let head = config
            .decomposition
            .then(|| GenerativeHead::new(&config, &mut store, &mut rng));
        Ok(Self {
            config,
            forecaster,
            head,
            store,
        })
    }

    /// Rebuilds the architecture for `config` and adopts `store`, which must
    /// hold exactly the parameters that architecture registers.
    pub fn from_parts(config: ModelConfig, store: ParamStore<F>) -> Result<Self> {
        let mut fresh = Self::new(config, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, architecture has {}",
                store.len(),
                fresh.store.len()
            )));
        }
        for (want, got) in fresh.store.iter().zip(store.iter()) {
            if want.name != got.name || want.rows != got.rows || want.cols != got.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} [{}, {}] does not match {} [{}, {}]",
                    got.name, got.rows, got.cols, want.name, want.rows, want.cols
                )));
            }
        }
        fresh.store = store;
        Ok(fresh)
    }

    /// Builds the joint loss. Without the head, `total = γ·nll`.
    /// `latent_noise` is `[batch, latent_dim]`; when `None` it is drawn from
    /// `mode.rng` (or zero if there is none).
    pub fn loss_vars<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        batch: &WindowBatch,
        mode: &mut Mode<'_>,
        latent_noise: Option<Vec<F>>,
    ) -> Result<LossVars> {
        let cfg = &self.config;
        let (mu, sigma) = self.forecaster.forward_teacher_forced_vars(g, batch, mode)?;
        let y: Vec<F> = batch.target.iter().map(|&v| F::of(v)).collect();
        let nll = g.gaussian_nll(&y, mu, sigma)?;
        let weighted_nll = g.scale(nll, cfg.gamma);
        let Some(head) = &self.head else {
            return Ok(LossVars {
                total: weighted_nll,
                nll,
                kl: None,
                recon: None,
                mu,
                sigma,
                mu_hat: None,
            });
        };
        let noise = match latent_noise {
            Some(n) => n,
            None => {
                let n = batch.batch * cfg.latent_dim;
                match mode.rng.as_deref_mut() {
                    Some(rng) => (0..n).map(|_| F::of(rng.sample::<f64, _>(StandardNormal))).collect(),
                    None => vec![F::zero(); n],
                }
            }
        };
        let history = g.constant(batch.history.iter().map(|&v| F::of(v)).collect(), batch.batch, batch.t0);
        let hv = head.forward_vars(g, history, mu, noise)?;
        let kl = g.kl_std_normal(hv.mu_z, hv.sigma_z)?;
        let recon = g.gaussian_nll(&y, hv.mu_hat, sigma)?;
        let weighted_kl = g.scale(kl, cfg.beta);
        let t = g.add(weighted_nll, weighted_kl);
        let total = g.add(t, recon);
        Ok(LossVars {
            total,
            nll,
            kl: Some(kl),
            recon: Some(recon),
            mu,
            sigma,
            mu_hat: Some(hv.mu_hat),
        })
    }

    pub fn breakdown(&self, g: &Graph<'_, F>, vars: &LossVars) -> Result<LossBreakdown> {
        let get = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v).as_f64());
        let mut b = total_loss(
            get(Some(vars.nll)),
            get(vars.kl),
            get(vars.recon),
            self.config.gamma,
            self.config.beta,
        )?;
        if self.head.is_none() {
            b.total = self.config.gamma * b.nll;
        }
        Ok(b)
    }

    /// Loss and per-parameter gradients (store order) for one batch.
    pub fn loss_and_grads(
        &self,
        batch: &WindowBatch,
        mode: &mut Mode<'_>,
        latent_noise: Option<Vec<F>>,
    ) -> Result<(LossBreakdown, Vec<Vec<F>>)> {
        let mut g = Graph::new(&self.store);
        let vars = self.loss_vars(&mut g, batch, mode, latent_noise)?;
        let breakdown = self.breakdown(&g, &vars)?;
        let grads = g.backward(vars.total).into_param_grads(&self.store);
        Ok((breakdown, grads))
    }

    /// Loss value only, no tape.
    pub fn loss(
        &self,
        batch: &WindowBatch,
        mode: &mut Mode<'_>,
        latent_noise: Option<Vec<F>>,
    ) -> Result<LossBreakdown> {
        let mut g = Graph::inference(&self.store);
        let vars = self.loss_vars(&mut g, batch, mode, latent_noise)?;
        self.breakdown(&g, &vars)
    }

    /// `n_samples` autoregressive paths per window, each refined by
    /// `n_latent` latent draws and one predictive draw per latent draw.
    /// Without the head the sampled paths are the predictive samples.
    pub fn forecast(
        &self,
        batch: &WindowBatch,
        n_samples: usize,
        n_latent: usize,
        rng: &mut dyn RngCore,
    ) -> Result<BatchForecast<F>> {
        let tau = batch.tau;
        let paths = self
            .forecaster
            .autoregressive_forecast(&self.store, batch, n_samples, rng)?;
        let (draws, samples, trend, seasonal, mu_hat, sigma) = match &self.head {
            None => {
                let zero = vec![F::zero(); paths.mu.len()];
                (n_samples, paths.samples, paths.mu.clone(), zero, paths.mu, paths.sigma)
            }
            Some(head) => {
                let mut history = Vec::with_capacity(paths.paths * batch.t0);
                for b in 0..batch.batch {
                    for _ in 0..n_samples {
                        history.extend(batch.history_row(b).iter().map(|&v| F::of(v)));
                    }
                }
                let out = head.generative_forecast(&self.store, &history, &paths.mu, &paths.sigma, n_latent, rng)?;
                let d = out.decomposition;
                (
                    n_samples * n_latent,
                    out.samples,
                    d.trend,
                    d.seasonal,
                    d.mu_hat,
                    out.sigma,
                )
            }
        };
        let mean_over_draws = |v: &[F]| -> Vec<F> {
            let inv = F::of(1.0 / draws as f64);
            let mut out = vec![F::zero(); batch.batch * tau];
            for (r, row) in v.chunks_exact(tau).enumerate() {
                let b = r / draws;
                for (o, &x) in out[b * tau..(b + 1) * tau].iter_mut().zip(row) {
                    *o += x * inv;
                }
            }
            out
        };
        Ok(BatchForecast {
            batch: batch.batch,
            tau,
            draws,
            trend: mean_over_draws(&trend),
            seasonal: mean_over_draws(&seasonal),
            mu_hat: mean_over_draws(&mu_hat),
            sigma: mean_over_draws(&sigma),
            samples,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.store.n_values()
    }
}
