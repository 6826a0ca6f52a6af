//! Parameterized building blocks. Each layer only holds [`ParamId`]s; values
//! live in a [`ParamStore`] so one architecture serves any element type.
//!
//! Layers offer a taped `forward` and, where the incremental decoder needs
//! it, an untaped `apply` running the same kernels directly.

use rand::{Rng, RngCore};

use crate::autograd::kernels::{self, AttnShape, Mask};
use crate::autograd::{Graph, Init, ParamId, ParamStore, Scalar, Var};

/// Dropout source for a forward pass; `rng: None` disables dropout.
pub struct Mode<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl Mode<'_> {
    pub fn eval() -> Self {
        Mode {
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn drop<F: Scalar>(&mut self, g: &mut Graph<'_, F>, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => g.dropout(x, self.dropout, rng),
            _ => x,
        }
    }
}

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(&format!("{name}.weight"), in_dim, out_dim, Init::Xavier, rng);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), 1, out_dim, Init::Zeros, rng));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: &[F], rows: usize) -> Vec<F> {
        let mut out = vec![F::zero(); rows * self.out_dim];
        if let Some(b) = self.bias {
            let b = &store.get(b).data;
            for row in out.chunks_exact_mut(self.out_dim) {
                row.copy_from_slice(b);
            }
        }
        kernels::matmul(
            x,
            false,
            &store.get(self.weight).data,
            false,
            rows,
            self.in_dim,
            self.out_dim,
            &mut out,
            self.bias.is_some(),
        );
        out
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), 1, dim, Init::Ones, rng),
            beta: store.add(&format!("{name}.beta"), 1, dim, Init::Zeros, rng),
            dim,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }

    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); x.len()];
        kernels::layer_norm(
            x,
            self.dim,
            &store.get(self.gamma).data,
            &store.get(self.beta).data,
            &mut out,
            None,
        );
        out
    }
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model must divide into heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, true, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, true, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, true, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, true, rng),
            heads,
            d_model,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Attention layout for `batch` query blocks of `lq` rows over `lk` keys.
    pub fn shape(&self, batch: usize, lq: usize, lk: usize) -> AttnShape {
        AttnShape::new(batch, self.heads, self.head_dim(), lq, lk)
    }

    /// `query` is `[batch·lq, d]`; `memory` holds the key/value rows.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        query: Var,
        memory: Var,
        shape: AttnShape,
        mask: &Mask,
    ) -> Var {
        let q = self.query.forward(g, query);
        let k = self.key.forward(g, memory);
        let v = self.value.forward(g, memory);
        let o = g.attention(q, k, v, shape, mask);
        self.output.forward(g, o)
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), d_model, d_ff, true, rng),
            outer: Linear::new(store, &format!("{name}.outer"), d_ff, d_model, true, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, mode: &mut Mode<'_>) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.relu(h);
        let h = mode.drop(g, h);
        self.outer.forward(g, h)
    }

    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: &[F], rows: usize) -> Vec<F> {
        let mut h = self.inner.apply(store, x, rows);
        h.iter_mut().for_each(|v| *v = v.max(F::zero()));
        self.outer.apply(store, &h, rows)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_forward_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
        store.get_mut(lin.bias.unwrap()).data = vec![0.5, -0.5];
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        let direct = lin.apply(&store, &x, 2);
        let mut g = Graph::inference(&store);
        let xv = g.constant(x, 2, 3);
        let y = lin.forward(&mut g, xv);
        assert_eq!(g.value(y), direct.as_slice());
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        let lin = Linear::new(&mut store, "l", 10, 6, false, &mut rng);
        let limit = (6.0f32 / 16.0).sqrt();
        assert!(store.get(lin.weight).data.iter().all(|w| w.abs() <= limit));
        assert!(lin.bias.is_none());
    }
}
