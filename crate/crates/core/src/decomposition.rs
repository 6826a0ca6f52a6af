//! Conditional generative head: a probabilistic encoder over the history and
//! the forecaster's means, a reparameterized latent draw, and a decoder that
//! rebuilds the forecast mean as trend plus seasonality.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::autograd::kernels;
use crate::autograd::{Graph, Init, ParamId, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::transformer::{ModelConfig, SIGMA_FLOOR};

/// Posterior over the latent code, `[rows, dim]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian<F> {
    pub rows: usize,
    pub dim: usize,
    pub mean: Vec<F>,
    pub std: Vec<F>,
    /// Empty until [`reparameterize`] runs.
    pub noise: Vec<F>,
    pub sample: Vec<F>,
}

/// Reported components and their sum, `[rows, τ]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionOutput<F> {
    pub rows: usize,
    pub len: usize,
    pub trend: Vec<F>,
    pub seasonal: Vec<F>,
    pub mu_hat: Vec<F>,
}

/// Graph nodes of one head pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub mu_z: Var,
    pub sigma_z: Var,
    pub z: Var,
    pub trend: Var,
    pub seasonal: Var,
    pub mu_hat: Var,
}

/// Centered moving average with replicate padding of `(k-1)/2` per side.
pub fn moving_average(x: &[f64], k: usize) -> Result<Vec<f64>> {
    check_kernel(k, x.len())?;
    let mut out = vec![0.0; x.len()];
    kernels::moving_average(x, x.len(), k, &mut out);
    Ok(out)
}

pub(crate) fn check_kernel(k: usize, len: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::EvenKernel(k));
    }
    if len == 0 || k > 2 * len - 1 {
        return Err(Error::KernelTooLarge { kernel: k, len });
    }
    Ok(())
}

/// Fills `noise` with standard normal draws and sets `sample = mean + std ⊙ noise`.
pub fn reparameterize<F: Scalar>(latent: &mut LatentGaussian<F>, rng: &mut dyn RngCore) {
    latent.noise = (0..latent.mean.len())
        .map(|_| F::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    latent.sample = latent
        .mean
        .iter()
        .zip(&latent.std)
        .zip(&latent.noise)
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
}

/// Variance of each component draw: both components get half of the
/// predictive variance.
pub fn component_variance<F: Scalar>(sigma: F) -> F {
    sigma * sigma / F::of(2.0)
}

pub fn component_std<F: Scalar>(sigma: F) -> F {
    component_variance(sigma).sqrt()
}

/// Splits each history row `[rows, t0]` around its unpadded moving average
/// (`t0 - k + 1` points). Returns the least-squares line through that
/// average, as its values at the first and last point (`[rows, 2]`), and the
/// history minus the average at the window centres (`[rows, t0 - k + 1]`).
/// A linear ramp leaves an all-zero remainder; a series whose period divides
/// `k` gives a flat line.
pub fn split_history<F: Scalar>(history: &[F], t0: usize, k: usize) -> (Vec<F>, Vec<F>) {
    let width = t0 + 1 - k;
    let half = k / 2;
    let inv = F::one() / F::from_usize(k).expect("kernel");
    let n = F::from_usize(width).expect("width");
    let centre = F::from_usize(width - 1).expect("width") / F::of(2.0);
    let spread = (0..width)
        .map(|j| F::from_usize(j).expect("index") - centre)
        .map(|d| d * d)
        .fold(F::zero(), |a, b| a + b);
    let rows = history.len() / t0;
    let (mut line, mut detail) = (Vec::with_capacity(rows * 2), Vec::with_capacity(rows * width));
    let mut smooth = vec![F::zero(); width];
    for row in history.chunks_exact(t0) {
        for (j, m) in smooth.iter_mut().enumerate() {
            *m = row[j..j + k].iter().fold(F::zero(), |acc, &v| acc + v) * inv;
            detail.push(row[j + half] - *m);
        }
        let mean = smooth.iter().fold(F::zero(), |a, &b| a + b) / n;
        let slope = if spread > F::zero() {
            smooth.iter().enumerate().fold(F::zero(), |a, (j, &v)| {
                a + (F::from_usize(j).expect("index") - centre) * v
            }) / spread
        } else {
            F::zero()
        };
        line.push(mean - slope * centre);
        line.push(mean + slope * centre);
    }
    (line, detail)
}

#[derive(Debug, Clone)]
pub struct GenerativeHead {
    pub encoder: Mlp,
    pub trend_mlp: Mlp,
    pub seasonal_mlp: Mlp,
    /// Diagonal of the trend map, `[1, τ]`.
    pub trend_scale: ParamId,
    pub trend_bias: ParamId,
    /// Diagonal of the seasonal map, `[1, τ]`.
    pub seasonal_scale: ParamId,
    pub t0: usize,
    pub tau: usize,
    pub latent_dim: usize,
    pub kernel_size: usize,
}

impl GenerativeHead {
    pub fn new<F: Scalar, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let (h, l, tau) = (config.head_hidden(), config.latent_dim, config.tau);
        let context = config.t0 + 1 - config.kernel_size;
        Self {
            encoder: Mlp::new(store, "head.encoder", &[config.t0 + tau, h, h, 2 * l], rng),
            trend_mlp: Mlp::new(store, "head.trend", &[l + 2, h, h, tau], rng),
            seasonal_mlp: Mlp::new(store, "head.seasonal", &[l + context, h, h, tau], rng),
            trend_scale: store.add("head.linear.trend_scale", 1, tau, Init::Ones, rng),
            trend_bias: store.add("head.linear.trend_bias", 1, tau, Init::Zeros, rng),
            seasonal_scale: store.add("head.linear.seasonal_scale", 1, tau, Init::Ones, rng),
            t0: config.t0,
            tau,
            latent_dim: l,
            kernel_size: config.kernel_size,
        }
    }

    /// `history` is `[rows, t0]`, `mu_pred` `[rows, τ]`; returns `(μ_z, σ_z)`.
    pub fn encode_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, history: Var, mu_pred: Var) -> (Var, Var) {
        let joined = g.concat_cols(&[history, mu_pred]);
        let out = self.encoder.forward(g, joined);
        let l = self.latent_dim;
        let mu = g.slice_cols(out, 0, l);
        let pre = g.slice_cols(out, l, 2 * l);
        let sp = g.softplus(pre);
        (mu, g.add_scalar(sp, SIGMA_FLOOR))
    }

    /// Raw trend: `AvgPool(MLP(z, line))` where `line` is the fitted line
    /// through the averaged history from [`split_history`].
    pub fn trend_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, z: Var, line: Var) -> Var {
        let joined = g.concat_cols(&[z, line]);
        let raw = self.trend_mlp.forward(g, joined);
        g.moving_average(raw, self.kernel_size)
    }

    /// Raw seasonality: `MLP(z, detail)` with each row's mean removed.
    pub fn seasonal_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, z: Var, detail: Var) -> Var {
        let joined = g.concat_cols(&[z, detail]);
        let raw = self.seasonal_mlp.forward(g, joined);
        g.center_rows(raw)
    }

    /// Diagonal affine maps folded into the reported components; returns
    /// `(trend, seasonal, μ̂)` with `μ̂ = trend + seasonal`.
    pub fn linear_decode_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, trend: Var, seasonal: Var) -> (Var, Var, Var) {
        let a = g.param(self.trend_scale);
        let b = g.param(self.trend_bias);
        let s = g.param(self.seasonal_scale);
        let t = g.mul_row(trend, a);
        let t = g.add_row(t, b);
        let u = g.mul_row(seasonal, s);
        let u = g.center_rows(u);
        let mu_hat = g.add(t, u);
        (t, u, mu_hat)
    }

    /// Both decoders are conditioned on the history next to `z`: the trend
    /// branch on the line through its moving average, the seasonal branch on
    /// the remainder. `history` must be a constant.
    pub fn decode_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, z: Var, history: Var) -> (Var, Var, Var) {
        let (rows, _) = g.shape(history);
        let (line, detail) = split_history(g.value(history), self.t0, self.kernel_size);
        let line = g.constant(line, rows, 2);
        let detail = g.constant(detail, rows, self.t0 + 1 - self.kernel_size);
        let trend = self.trend_vars(g, z, line);
        let seasonal = self.seasonal_vars(g, z, detail);
        self.linear_decode_vars(g, trend, seasonal)
    }

    /// Full head pass with externally supplied latent noise `[rows, latent_dim]`.
    pub fn forward_vars<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        history: Var,
        mu_pred: Var,
        noise: Vec<F>,
    ) -> Result<HeadVars> {
        let (mu_z, sigma_z) = self.encode_vars(g, history, mu_pred);
        let (rows, dim) = g.shape(mu_z);
        if noise.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "latent noise of {} values for [{rows}, {dim}]",
                noise.len()
            )));
        }
        let eps = g.constant(noise, rows, dim);
        let spread = g.mul(sigma_z, eps);
        let z = g.add(mu_z, spread);
        let (trend, seasonal, mu_hat) = self.decode_vars(g, z, history);
        Ok(HeadVars {
            mu_z,
            sigma_z,
            z,
            trend,
            seasonal,
            mu_hat,
        })
    }

    fn check_rows<F>(&self, data: &[F], cols: usize, what: &'static str) -> Result<usize> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(Error::ShapeMismatch(format!(
                "{what} is not a multiple of {cols} columns"
            )));
        }
        Ok(data.len() / cols)
    }

    /// Posterior `(μ_z, σ_z)` for each row of `history` `[rows, t0]` and
    /// `mu_pred` `[rows, τ]`; the sample is left empty.
    pub fn probabilistic_encode<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        history: &[F],
        mu_pred: &[F],
    ) -> Result<LatentGaussian<F>> {
        let rows = self.check_rows(history, self.t0, "history")?;
        if self.check_rows(mu_pred, self.tau, "mu_pred")? != rows {
            return Err(Error::ShapeMismatch("history and mu_pred rows differ".into()));
        }
        if history.iter().chain(mu_pred).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generative head input"));
        }
        let mut g = Graph::inference(store);
        let h = g.constant(history.to_vec(), rows, self.t0);
        let m = g.constant(mu_pred.to_vec(), rows, self.tau);
        let (mu, sigma) = self.encode_vars(&mut g, h, m);
        Ok(LatentGaussian {
            rows,
            dim: self.latent_dim,
            mean: g.value(mu).to_vec(),
            std: g.value(sigma).to_vec(),
            noise: Vec::new(),
            sample: Vec::new(),
        })
    }

    /// Decodes latent codes `[rows, latent_dim]` given the matching history
    /// rows `[rows, t0]`.
    pub fn decode<F: Scalar>(&self, store: &ParamStore<F>, z: &[F], history: &[F]) -> Result<DecompositionOutput<F>> {
        let rows = self.check_rows(z, self.latent_dim, "latent code")?;
        if self.check_rows(history, self.t0, "history")? != rows {
            return Err(Error::ShapeMismatch("latent code and history rows differ".into()));
        }
        if z.iter().chain(history).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code"));
        }
        let mut g = Graph::inference(store);
        let zv = g.constant(z.to_vec(), rows, self.latent_dim);
        let hv = g.constant(history.to_vec(), rows, self.t0);
        let (t, s, m) = self.decode_vars(&mut g, zv, hv);
        Ok(DecompositionOutput {
            rows,
            len: self.tau,
            trend: g.value(t).to_vec(),
            seasonal: g.value(s).to_vec(),
            mu_hat: g.value(m).to_vec(),
        })
    }

    /// Applies the learned diagonal maps to given raw components.
    pub fn linear_decode<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        trend: &[F],
        seasonal: &[F],
    ) -> Result<DecompositionOutput<F>> {
        if trend.len() != seasonal.len() {
            return Err(Error::ShapeMismatch("trend and seasonal lengths differ".into()));
        }
        let rows = self.check_rows(trend, self.tau, "trend")?;
        let mut g = Graph::inference(store);
        let tv = g.constant(trend.to_vec(), rows, self.tau);
        let sv = g.constant(seasonal.to_vec(), rows, self.tau);
        let (t, s, m) = self.linear_decode_vars(&mut g, tv, sv);
        Ok(DecompositionOutput {
            rows,
            len: self.tau,
            trend: g.value(t).to_vec(),
            seasonal: g.value(s).to_vec(),
            mu_hat: g.value(m).to_vec(),
        })
    }

    /// Draws `n_latent` latent codes per input row and one predictive sample
    /// `Ŷ ~ N(μ̂, σ²)` per draw. Output rows are input-major: row
    /// `r·n_latent + j`. `sigma_pred` passes through unchanged.
    pub fn generative_forecast<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        history: &[F],
        mu_pred: &[F],
        sigma_pred: &[F],
        n_latent: usize,
        rng: &mut dyn RngCore,
    ) -> Result<GenerativeDraws<F>> {
        if n_latent == 0 {
            return Err(Error::InvalidConfig("n_latent must be at least 1".into()));
        }
        if sigma_pred.len() != mu_pred.len() {
            return Err(Error::ShapeMismatch("mu_pred and sigma_pred lengths differ".into()));
        }
        let mut latent = self.probabilistic_encode(store, history, mu_pred)?;
        let (rows, l, tau) = (latent.rows, self.latent_dim, self.tau);
        let repeat = |v: &[F], cols: usize| -> Vec<F> {
            v.chunks_exact(cols)
                .flat_map(|row| (0..n_latent).flat_map(move |_| row.iter().copied()))
                .collect()
        };
        if n_latent > 1 {
            latent.mean = repeat(&latent.mean, l);
            latent.std = repeat(&latent.std, l);
            latent.rows = rows * n_latent;
        }
        reparameterize(&mut latent, rng);
        let decomposition = self.decode(store, &latent.sample, &repeat(history, self.t0))?;
        let mut sigma = Vec::with_capacity(latent.rows * tau);
        for row in sigma_pred.chunks_exact(tau) {
            for _ in 0..n_latent {
                sigma.extend_from_slice(row);
            }
        }
        let samples = decomposition
            .mu_hat
            .iter()
            .zip(&sigma)
            .map(|(&m, &s)| m + s * F::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Ok(GenerativeDraws {
            latent,
            decomposition,
            sigma,
            samples,
        })
    }
}

/// Output of [`GenerativeHead::generative_forecast`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeDraws<F> {
    pub latent: LatentGaussian<F>,
    pub decomposition: DecompositionOutput<F>,
    /// Predictive std per output row, `[rows, τ]`.
    pub sigma: Vec<F>,
    /// One predictive sample per output row, `[rows, τ]`.
    pub samples: Vec<F>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ModelConfig, ParamStore<f64>, GenerativeHead) {
        let config = ModelConfig {
            t0: 6,
            tau: 4,
            latent_dim: 3,
            d_ff: 16,
            kernel_size: 3,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let head = GenerativeHead::new(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(3));
        (config, store, head)
    }

    fn zero_mlp(store: &mut ParamStore<f64>, mlp: &Mlp) {
        for layer in &mlp.layers {
            store.get_mut(layer.weight).data.fill(0.0);
            if let Some(b) = layer.bias {
                store.get_mut(b).data.fill(0.0);
            }
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[2.0, 2.0, 2.0], 3).unwrap(), vec![2.0, 2.0, 2.0]);
        let out = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        for (a, b) in out.iter().zip([4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let ramp = moving_average(&[0.0, 1.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert_eq!(&ramp[1..4], &[1.0, 2.0, 3.0]);
        assert!(matches!(moving_average(&[1.0; 4], 4), Err(Error::EvenKernel(4))));
        assert!(matches!(
            moving_average(&[1.0; 4], 9),
            Err(Error::KernelTooLarge { .. })
        ));
        assert!(moving_average(&[1.0; 4], 7).is_ok());
    }

    #[test]
    fn split_history_examples() {
        let ramp: Vec<f64> = (0..8).map(|t| 0.5 * t as f64 - 1.0).collect();
        let (line, detail) = split_history(&ramp, 8, 3);
        assert_eq!((line.len(), detail.len()), (2, 6));
        assert_abs_diff_eq!(line[0], ramp[1], epsilon = 1e-12);
        assert_abs_diff_eq!(line[1], ramp[6], epsilon = 1e-12);
        assert!(detail.iter().all(|v| v.abs() < 1e-12));

        let wave: Vec<f64> = (0..2 * 12).map(|t| [1.0, -2.0, 1.0][t % 3] + 4.0).collect();
        let (line, detail) = split_history(&wave, 12, 3);
        assert!(line.iter().all(|v| (v - 4.0).abs() < 1e-12));
        assert_abs_diff_eq!(detail[0], -2.0, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn pooling_never_adds_variation(x in proptest::collection::vec(-10.0f64..10.0, 8..30), half in 0usize..4) {
            let tv = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
            let out = moving_average(&x, 2 * half + 1).unwrap();
            proptest::prop_assert!(tv(&out) <= tv(&x) + 1e-9);
        }
    }

    #[test]
    fn moving_average_keeps_mean_of_periodic_input() {
        let x: Vec<f64> = (0..48).map(|t| (t % 4) as f64).collect();
        let out = moving_average(&x[..], 5).unwrap();
        let interior = &out[4..44];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(interior.iter().all(|v| (v - mean).abs() < 0.6));
    }

    #[test]
    fn affine_collapse_of_encoder() {
        let (_, mut store, head) = tiny();
        zero_mlp(&mut store, &head.encoder);
        let last = head.encoder.layers.last().unwrap().bias.unwrap();
        store.get_mut(last).data = vec![0.5, -1.0, 2.0, 0.0, -20.0, 1.0];
        let latent = head.probabilistic_encode(&store, &[1.0; 12], &[3.0; 8]).unwrap();
        assert_eq!(latent.mean, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_abs_diff_eq!(latent.std[0], 2f64.ln() + 1e-6, epsilon = 1e-12);
        assert!(latent.std[1] > 1e-6);
    }

    #[test]
    fn reparameterize_identity() {
        let mut latent = LatentGaussian {
            rows: 1,
            dim: 2,
            mean: vec![1.0f64, -1.0],
            std: vec![0.5, 2.0],
            noise: vec![],
            sample: vec![],
        };
        reparameterize(&mut latent, &mut ChaCha8Rng::seed_from_u64(9));
        for j in 0..2 {
            assert_eq!(latent.sample[j], latent.mean[j] + latent.std[j] * latent.noise[j]);
        }
    }

    #[test]
    fn reparameterize_moments() {
        let n = 100_000;
        let mut latent = LatentGaussian {
            rows: n,
            dim: 1,
            mean: vec![2.0f64; n],
            std: vec![3.0; n],
            noise: vec![],
            sample: vec![],
        };
        reparameterize(&mut latent, &mut ChaCha8Rng::seed_from_u64(1));
        let mean = latent.sample.iter().sum::<f64>() / n as f64;
        let var = latent.sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.03, "{mean}");
        assert!((var.sqrt() - 3.0).abs() < 0.03, "{}", var.sqrt());
    }

    #[test]
    fn zero_decoders_give_zero_components() {
        let (_, mut store, head) = tiny();
        zero_mlp(&mut store, &head.trend_mlp);
        zero_mlp(&mut store, &head.seasonal_mlp);
        let out = head.decode(&store, &[0.3, -0.2, 1.0], &[0.5; 6]).unwrap();
        assert!(out
            .trend
            .iter()
            .chain(&out.seasonal)
            .chain(&out.mu_hat)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn constant_trend_is_pooling_fixed_point() {
        let (_, mut store, head) = tiny();
        zero_mlp(&mut store, &head.trend_mlp);
        let last = head.trend_mlp.layers.last().unwrap().bias.unwrap();
        store.get_mut(last).data.fill(1.75);
        let out = head.decode(&store, &[0.1, 0.2, 0.3], &[-1.0; 6]).unwrap();
        assert!(out.trend.iter().all(|&v| (v - 1.75).abs() < 1e-15));
    }

    #[test]
    fn identity_linear_decoder_sums() {
        let (_, store, head) = tiny();
        let trend = [1.0, 2.0, 3.0, 4.0];
        let seasonal = [0.5, -0.5, 0.25, -0.25];
        let out = head.linear_decode(&store, &trend, &seasonal).unwrap();
        assert_eq!(out.trend, trend.to_vec());
        assert_eq!(out.seasonal, seasonal.to_vec());
        for i in 0..4 {
            assert_eq!(out.mu_hat[i], trend[i] + seasonal[i]);
        }
        let flat = head.linear_decode(&store, &trend, &[0.0; 4]).unwrap();
        assert_eq!(flat.mu_hat, flat.trend);
    }

    #[test]
    fn additivity_after_perturbing_every_parameter() {
        let (_, mut store, head) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in store.iter_mut() {
            p.data.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let z: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let history: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = head.decode(&store, &z, &history).unwrap();
        for i in 0..out.mu_hat.len() {
            assert_eq!(out.mu_hat[i], out.trend[i] + out.seasonal[i]);
        }
    }

    #[test]
    fn component_variances_sum() {
        for sigma in [1e-6f64, 0.3, 1.0, 7.5] {
            let c = component_std(sigma);
            assert_abs_diff_eq!(c * c + c * c, sigma * sigma, epsilon = 1e-15 * sigma * sigma);
            let half = component_variance(sigma);
            assert_eq!(half + half, sigma * sigma);
        }
    }

    #[test]
    fn predictive_spread_matches_sigma() {
        let (_, store, head) = tiny();
        let rows = 20_000;
        let history = vec![0.5; rows * 6];
        let mu = vec![1.0; rows * 4];
        let sigma = vec![0.8; rows * 4];
        let draws = head
            .generative_forecast(&store, &history, &mu, &sigma, 5, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert_eq!(draws.samples.len(), rows * 5 * 4);
        let resid: Vec<f64> = draws
            .samples
            .iter()
            .zip(&draws.decomposition.mu_hat)
            .map(|(s, m)| s - m)
            .collect();
        let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd / 0.8 - 1.0).abs() < 0.03, "{sd}");
        assert!(draws.sigma.iter().all(|&s| s == 0.8));
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let (_, store, head) = tiny();
        let mut g = Graph::inference(&store);
        let h = g.constant(vec![0.1; 6], 1, 6);
        let m = g.constant(vec![0.2; 4], 1, 4);
        let a = head.forward_vars(&mut g, h, m, vec![0.0; 3]).unwrap();
        assert_eq!(g.value(a.z), g.value(a.mu_z));
    }
}
