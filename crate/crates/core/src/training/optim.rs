use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Scalar};

/// Global gradient-norm threshold.
pub const CLIP_NORM: f64 = 10.0;

/// Euclidean norm over every gradient value.
pub fn global_norm<F: Scalar>(grads: &[Vec<F>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Vec<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = F::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    /// Decoupled weight decay per tensor; empty means none.
    #[serde(default)]
    pub decay: Vec<f64>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = store.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            decay: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Vec<F>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - self.beta1), F::of(1.0 - self.beta2));
        let c1 = F::of(1.0 - self.beta1.powf(self.t as f64));
        let c2 = F::of(1.0 - self.beta2.powf(self.t as f64));
        let (lr, eps) = (F::of(lr), F::of(self.eps));
        for (k, (((p, g), m), v)) in store
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
            .enumerate()
        {
            let decay = F::of(self.decay.get(k).copied().unwrap_or(0.0));
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                let w = p.data[i];
                p.data[i] = w - lr * (m_hat / (v_hat.sqrt() + eps) + decay * w);
            }
        }
    }
}
