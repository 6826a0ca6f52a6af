use rand::Rng;

use super::kernels::{self, AttnShape, Mask};
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::objectives;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'a, F> {
    Owned(Vec<F>),
    Borrowed(&'a [F]),
}

enum Op<F> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<F>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    MovingAverage {
        x: Var,
        kernel: usize,
    },
    CenterRows(Var),
    MeanAll(Var),
    GaussianNll {
        y: Vec<F>,
        mu: Var,
        sigma: Var,
    },
    KlStdNormal {
        mu: Var,
        sigma: Var,
    },
}

struct Node<'a, F> {
    value: Value<'a, F>,
    rows: usize,
    cols: usize,
    op: Op<F>,
    requires_grad: bool,
}

/// Reverse-mode tape over row-major matrices.
///
/// Every operation evaluates eagerly and records how to propagate gradients;
/// [`Graph::backward`] then walks the tape in reverse. Parameters are read in
/// place from the borrowed [`ParamStore`].
pub struct Graph<'a, F: Scalar> {
    params: &'a ParamStore<F>,
    nodes: Vec<Node<'a, F>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

impl<'a, F: Scalar> Graph<'a, F> {
    pub fn new(params: &'a ParamStore<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            grad_enabled: true,
        }
    }

    /// A graph that never needs gradients; parameters are treated as constants.
    pub fn inference(params: &'a ParamStore<F>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'a ParamStore<F> {
        self.params
    }

    fn push(&mut self, value: Value<'a, F>, rows: usize, cols: usize, op: Op<F>, requires_grad: bool) -> Var {
        let len = match &value {
            Value::Owned(v) => v.len(),
            Value::Borrowed(v) => v.len(),
        };
        debug_assert_eq!(len, rows * cols, "node value size");
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Vec<F>, rows: usize, cols: usize, op: Op<F>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Value::Owned(value), rows, cols, op, rg)
    }

    pub fn value(&self, v: Var) -> &[F] {
        match &self.nodes[v.0].value {
            Value::Owned(x) => x,
            Value::Borrowed(x) => x,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = self.push(Value::Borrowed(&p.data), p.rows, p.cols, Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, data: Vec<F>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "constant size");
        self.push(Value::Owned(data), rows, cols, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, data: &'a [F], rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "constant size");
        self.push(Value::Borrowed(data), rows, cols, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained by [`Graph::backward`].
    pub fn variable(&mut self, data: Vec<F>, rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "variable size");
        self.push(Value::Owned(data), rows, cols, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![F::zero(); m * n];
        kernels::matmul(self.value(a), false, self.value(b), false, m, k, n, &mut out, false);
        self.derived(out, m, n, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shapes");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.derived(out, r, c, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + row` with `row` of shape `[1, cols]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "row broadcast shape");
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(rv).map(|(&p, &q)| p + q))
            .collect();
        self.derived(out, r, c, Op::AddRow(a, row), &[a, row])
    }

    /// `a ⊙ row` with `row` of shape `[1, cols]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "row broadcast shape");
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(rv).map(|(&p, &q)| p * q))
            .collect();
        self.derived(out, r, c, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.shape(a);
        let f = F::of(factor);
        let out = self.value(a).iter().map(|&x| x * f).collect();
        self.derived(out, r, c, Op::Scale(a, f), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Var {
        let (r, c) = self.shape(a);
        let s = F::of(shift);
        let out = self.value(a).iter().map(|&x| x + s).collect();
        self.derived(out, r, c, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(F::zero())).collect();
        self.derived(out, r, c, Op::Relu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| kernels::softplus(x)).collect();
        self.derived(out, r, c, Op::Softplus(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let mut out = vec![F::zero(); r * c];
        let mut stats = vec![F::zero(); 2 * r];
        kernels::layer_norm(
            self.value(x),
            c,
            self.value(gamma),
            self.value(beta),
            &mut out,
            Some(&mut stats),
        );
        self.derived(out, r, c, Op::LayerNorm { x, gamma, beta, stats }, &[x, gamma, beta])
    }

    /// Fused scaled dot-product attention over all heads; see [`AttnShape`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape, mask: &Mask) -> Var {
        let d = shape.width();
        assert_eq!(self.shape(q), (shape.batch * shape.lq, d), "query shape");
        assert!(self.shape(k).0 >= shape.kv_rows() && self.shape(k).1 == d, "key shape");
        assert_eq!(self.shape(k), self.shape(v), "key/value shapes");
        let mut out = vec![F::zero(); shape.batch * shape.lq * d];
        let mut probs = vec![F::zero(); shape.batch * shape.heads * shape.lq * shape.lk];
        kernels::attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            &shape,
            mask,
            &mut out,
            &mut probs,
        );
        self.derived(
            out,
            shape.batch * shape.lq,
            d,
            Op::Attention { q, k, v, shape, probs },
            &[q, k, v],
        )
    }

    /// Rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let (r, c) = self.shape(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            assert!(i < r, "gather index {i} >= {r}");
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let n = indices.len();
        self.derived(out, n, c, Op::Gather { table, indices }, &[table])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                assert_eq!(self.shape(p).0, rows, "concat rows");
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        self.derived(out, rows, total, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start <= end && end <= c, "slice bounds");
        let out = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        self.derived(out, r, end - start, Op::SliceCols { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(x).to_vec();
        self.derived(out, rows, cols, Op::Reshape(x), &[x])
    }

    pub fn moving_average(&mut self, x: Var, kernel: usize) -> Var {
        let (r, c) = self.shape(x);
        let mut out = vec![F::zero(); r * c];
        kernels::moving_average(self.value(x), c, kernel, &mut out);
        self.derived(out, r, c, Op::MovingAverage { x, kernel }, &[x])
    }

    /// Subtracts each row's mean.
    pub fn center_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let n = F::from_usize(c).expect("cols");
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            let mean = row.iter().copied().sum::<F>() / n;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        self.derived(out, r, c, Op::CenterRows(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let vals = self.value(x);
        let mean = vals.iter().copied().sum::<F>() / F::from_usize(vals.len()).expect("len");
        self.derived(vec![mean], 1, 1, Op::MeanAll(x), &[x])
    }

    /// Multiplies by an inverted-dropout mask drawn from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let (r, c) = self.shape(x);
        let keep = F::of(1.0 / (1.0 - rate));
        let mask = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let m = self.constant(mask, r, c);
        self.mul(x, m)
    }

    /// Mean Gaussian negative log-likelihood of constants `y` under `(mu, sigma)`.
    pub fn gaussian_nll(&mut self, y: &[F], mu: Var, sigma: Var) -> Result<Var> {
        let shape = self.shape(mu);
        if shape != self.shape(sigma) || y.len() != shape.0 * shape.1 {
            return Err(Error::ShapeMismatch("gaussian_nll operands".into()));
        }
        let value = objectives::gaussian_nll(y, self.value(mu), self.value(sigma))?;
        Ok(self.derived(
            vec![value],
            1,
            1,
            Op::GaussianNll {
                y: y.to_vec(),
                mu,
                sigma,
            },
            &[mu, sigma],
        ))
    }

    /// KL divergence from `N(0, I)` of rows `(mu, sigma)`, averaged over rows.
    pub fn kl_std_normal(&mut self, mu: Var, sigma: Var) -> Result<Var> {
        let (r, c) = self.shape(mu);
        if (r, c) != self.shape(sigma) {
            return Err(Error::ShapeMismatch("kl operands".into()));
        }
        let value = objectives::kl_standard_normal(self.value(mu), self.value(sigma), c)?;
        Ok(self.derived(vec![value], 1, 1, Op::KlStdNormal { mu, sigma }, &[mu, sigma]))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut sink = Sink {
                graph: self,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf | Op::Param => {
                    sink.grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    if let Some(da) = sink.slot(*a) {
                        kernels::matmul(&g, false, self.value(*b), true, m, n, k, da, true);
                    }
                    if let Some(db) = sink.slot(*b) {
                        kernels::matmul(self.value(*a), true, &g, false, k, m, n, db, true);
                    }
                }
                Op::Add(a, b) => {
                    sink.accumulate(*a, &g);
                    sink.accumulate(*b, &g);
                }
                Op::Sub(a, b) => {
                    sink.accumulate(*a, &g);
                    if let Some(db) = sink.slot(*b) {
                        db.iter_mut().zip(&g).for_each(|(d, &x)| *d -= x);
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(da) = sink.slot(*a) {
                        for ((d, &x), &y) in da.iter_mut().zip(&g).zip(self.value(*b)) {
                            *d += x * y;
                        }
                    }
                    if let Some(db) = sink.slot(*b) {
                        for ((d, &x), &y) in db.iter_mut().zip(&g).zip(self.value(*a)) {
                            *d += x * y;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    sink.accumulate(*a, &g);
                    if let Some(dr) = sink.slot(*row) {
                        for gr in g.chunks_exact(node.cols) {
                            dr.iter_mut().zip(gr).for_each(|(d, &x)| *d += x);
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let c = node.cols;
                    if let Some(da) = sink.slot(*a) {
                        let rv = self.value(*row);
                        for (dr, gr) in da.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                dr[j] += gr[j] * rv[j];
                            }
                        }
                    }
                    if let Some(dw) = sink.slot(*row) {
                        for (ar, gr) in self.value(*a).chunks_exact(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                dw[j] += gr[j] * ar[j];
                            }
                        }
                    }
                }
                Op::Scale(a, f) => {
                    if let Some(da) = sink.slot(*a) {
                        da.iter_mut().zip(&g).for_each(|(d, &x)| *d += x * *f);
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => sink.accumulate(*a, &g),
                Op::Relu(a) => {
                    if let Some(da) = sink.slot(*a) {
                        for ((d, &x), &v) in da.iter_mut().zip(&g).zip(self.value(*a)) {
                            if v > F::zero() {
                                *d += x;
                            }
                        }
                    }
                }
                Op::Softplus(a) => {
                    if let Some(da) = sink.slot(*a) {
                        for ((d, &x), &v) in da.iter_mut().zip(&g).zip(self.value(*a)) {
                            *d += x * kernels::sigmoid(v);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, stats } => {
                    let c = node.cols;
                    let n = F::from_usize(c).expect("cols");
                    let xv = self.value(*x);
                    let gv = self.value(*gamma);
                    if let Some(dg) = sink.slot(*gamma) {
                        for (r, (xr, gr)) in xv.chunks_exact(c).zip(g.chunks_exact(c)).enumerate() {
                            let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                            for j in 0..c {
                                dg[j] += gr[j] * (xr[j] - mean) * rstd;
                            }
                        }
                    }
                    if let Some(db) = sink.slot(*beta) {
                        for gr in g.chunks_exact(c) {
                            db.iter_mut().zip(gr).for_each(|(d, &x)| *d += x);
                        }
                    }
                    if let Some(dx) = sink.slot(*x) {
                        for (r, ((xr, gr), dr)) in xv
                            .chunks_exact(c)
                            .zip(g.chunks_exact(c))
                            .zip(dx.chunks_exact_mut(c))
                            .enumerate()
                        {
                            let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                            let mut mean_dh = F::zero();
                            let mut mean_dh_xh = F::zero();
                            for j in 0..c {
                                let dh = gr[j] * gv[j];
                                mean_dh += dh;
                                mean_dh_xh += dh * (xr[j] - mean) * rstd;
                            }
                            mean_dh /= n;
                            mean_dh_xh /= n;
                            for j in 0..c {
                                let xh = (xr[j] - mean) * rstd;
                                dr[j] += rstd * (gr[j] * gv[j] - mean_dh - xh * mean_dh_xh);
                            }
                        }
                    }
                }
                Op::Attention { q, k, v, shape, probs } => {
                    let (dq, dk, dv) = sink.slots3(*q, *k, *v);
                    kernels::attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        shape,
                        probs,
                        &g,
                        dq,
                        dk,
                        dv,
                    );
                }
                Op::Gather { table, indices } => {
                    let c = node.cols;
                    if let Some(dt) = sink.slot(*table) {
                        for (r, &idx) in indices.iter().enumerate() {
                            for j in 0..c {
                                dt[idx * c + j] += g[r * c + j];
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if let Some(dp) = sink.slot(p) {
                            for (dr, gr) in dp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                                dr.iter_mut().zip(&gr[offset..offset + w]).for_each(|(d, &x)| *d += x);
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (w, c) = (node.cols, self.shape(*x).1);
                    if let Some(dx) = sink.slot(*x) {
                        for (dr, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                            dr[*start..*start + w].iter_mut().zip(gr).for_each(|(d, &x)| *d += x);
                        }
                    }
                }
                Op::MovingAverage { x, kernel } => {
                    if let Some(dx) = sink.slot(*x) {
                        kernels::moving_average_backward(&g, node.cols, *kernel, dx);
                    }
                }
                Op::CenterRows(x) => {
                    let c = node.cols;
                    let n = F::from_usize(c).expect("cols");
                    if let Some(dx) = sink.slot(*x) {
                        for (dr, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            let mean = gr.iter().copied().sum::<F>() / n;
                            dr.iter_mut().zip(gr).for_each(|(d, &x)| *d += x - mean);
                        }
                    }
                }
                Op::MeanAll(x) => {
                    let n = self.value(*x).len();
                    let share = g[0] / F::from_usize(n).expect("len");
                    if let Some(dx) = sink.slot(*x) {
                        dx.iter_mut().for_each(|d| *d += share);
                    }
                }
                Op::GaussianNll { y, mu, sigma } => {
                    let (dmu, dsigma) = objectives::gaussian_nll_grad(y, self.value(*mu), self.value(*sigma));
                    if let Some(d) = sink.slot(*mu) {
                        d.iter_mut().zip(&dmu).for_each(|(d, &x)| *d += g[0] * x);
                    }
                    if let Some(d) = sink.slot(*sigma) {
                        d.iter_mut().zip(&dsigma).for_each(|(d, &x)| *d += g[0] * x);
                    }
                }
                Op::KlStdNormal { mu, sigma } => {
                    let cols = self.shape(*mu).1;
                    let (dmu, dsigma) = objectives::kl_standard_normal_grad(self.value(*mu), self.value(*sigma), cols);
                    if let Some(d) = sink.slot(*mu) {
                        d.iter_mut().zip(&dmu).for_each(|(d, &x)| *d += g[0] * x);
                    }
                    if let Some(d) = sink.slot(*sigma) {
                        d.iter_mut().zip(&dsigma).for_each(|(d, &x)| *d += g[0] * x);
                    }
                }
            }
        }

        let param_nodes = self.param_vars.iter().map(|v| v.map(|v| v.0)).collect();
        Gradients { grads, param_nodes }
    }
}

struct Sink<'g, 'a, F: Scalar> {
    graph: &'g Graph<'a, F>,
    grads: &'g mut Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Sink<'_, '_, F> {
    fn slot(&mut self, v: Var) -> Option<&mut [F]> {
        let node = &self.graph.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.rows * node.cols;
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]).as_mut_slice())
    }

    fn accumulate(&mut self, v: Var, g: &[F]) {
        if let Some(d) = self.slot(v) {
            d.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
        }
    }

    /// Three distinct gradient slots at once; aliased handles share the first.
    #[allow(clippy::type_complexity)]
    fn slots3(&mut self, a: Var, b: Var, c: Var) -> (Option<&mut [F]>, Option<&mut [F]>, Option<&mut [F]>) {
        assert!(a != b && b != c && a != c, "attention operands must be distinct nodes");
        for v in [a, b, c] {
            let _ = self.slot(v);
        }
        let mut slots: Vec<(usize, &mut Option<Vec<F>>)> = self
            .grads
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| *i == a.0 || *i == b.0 || *i == c.0)
            .collect();
        let mut take = |v: Var| {
            let pos = slots.iter().position(|(i, _)| *i == v.0).expect("slot present");
            let (_, s) = slots.swap_remove(pos);
            s.as_mut().map(|x| x.as_mut_slice())
        };
        let (sa, sb, sc) = (take(a), take(b), take(c));
        (sa, sb, sc)
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    param_nodes: Vec<Option<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of a leaf created with [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.param_nodes[id.0].and_then(|n| self.grads[n].as_deref())
    }

    /// Per-parameter gradients in store order; unused parameters get zeros.
    pub fn into_param_grads(mut self, store: &ParamStore<F>) -> Vec<Vec<F>> {
        store
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.param_nodes[i]
                    .and_then(|n| self.grads[n].take())
                    .unwrap_or_else(|| vec![F::zero(); p.data.len()])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` at `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += h;
                let up = f(&p);
                p[i] -= 2.0 * h;
                (up - f(&p)) / (2.0 * h)
            })
            .collect()
    }

    fn check(x: Vec<f64>, rows: usize, cols: usize, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let store = ParamStore::<f64>::new();
        let f = |vals: &[f64]| {
            let mut g = Graph::new(&store);
            let v = g.variable(vals.to_vec(), rows, cols);
            let out = build(&mut g, v);
            g.scalar(out)
        };
        let mut g = Graph::new(&store);
        let v = g.variable(x.clone(), rows, cols);
        let out = build(&mut g, v);
        let grads = g.backward(out);
        let analytic = grads.wrt(v).unwrap();
        let numeric = numeric_grad(&x, f);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} numeric {n}");
        }
    }

    fn weights(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Reduces a matrix to a scalar through fixed random weights.
    fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
        let (r, c) = g.shape(x);
        let w = g.constant(weights(r * c, seed), r, c);
        let p = g.mul(x, w);
        g.mean_all(p)
    }

    #[test]
    fn elementwise_and_broadcast_grads() {
        let x = weights(12, 1);
        check(x.clone(), 3, 4, |g, v| {
            let sp = g.softplus(v);
            let r = g.relu(v);
            let s = g.add(sp, r);
            let row = g.constant(weights(4, 9), 1, 4);
            let m = g.mul_row(s, row);
            let a = g.add_row(m, row);
            let c = g.center_rows(a);
            project(g, c, 2)
        });
    }

    #[test]
    fn matmul_layer_norm_grads() {
        check(weights(12, 3), 3, 4, |g, v| {
            let w = g.constant(weights(20, 4), 4, 5);
            let m = g.matmul(v, w);
            let gamma = g.constant(weights(5, 5), 1, 5);
            let beta = g.constant(weights(5, 6), 1, 5);
            let ln = g.layer_norm(m, gamma, beta);
            project(g, ln, 7)
        });
    }

    #[test]
    fn attention_grads_through_all_operands() {
        let shape = AttnShape::new(2, 2, 2, 3, 3);
        for mask in [Mask::None, Mask::Causal] {
            check(weights(24, 11), 6, 4, |g, v| {
                let k = g.scale(v, 0.7);
                let vv = g.add_scalar(v, 0.3);
                let a = g.attention(v, k, vv, shape, &mask);
                project(g, a, 12)
            });
        }
    }

    #[test]
    fn structural_op_grads() {
        check(weights(15, 21), 3, 5, |g, v| {
            let ma = g.moving_average(v, 3);
            let s = g.slice_cols(ma, 1, 4);
            let c = g.concat_cols(&[s, v]);
            let r = g.reshape(c, 4, 6);
            let gathered = g.gather(r, vec![3, 0, 3]);
            project(g, gathered, 22)
        });
    }

    #[test]
    fn params_are_shared_and_collected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = store.add("w", 1, 3, Init::Ones, &mut rng);
        let unused = store.add("u", 1, 1, Init::Zeros, &mut rng);
        let mut g = Graph::new(&store);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let s = g.add(a, b);
        let loss = g.mean_all(s);
        let grads = g.backward(loss).into_param_grads(&store);
        assert_eq!(grads[id.index()], vec![2.0 / 3.0; 3]);
        assert_eq!(grads[unused.index()], vec![0.0]);
    }
}
