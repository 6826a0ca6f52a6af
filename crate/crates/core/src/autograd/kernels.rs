//! Dense kernels on row-major slices, shared by the tape and the
//! incremental inference path.

use super::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c (+)= op(a)·op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `trans_a` the storage of `a` is `k×m`; with `trans_b` the storage of
/// `b` is `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Scalar>(
    a: &[F],
    trans_a: bool,
    b: &[F],
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [F],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: sizes asserted above match the strided views.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn softplus<F: Scalar>(x: F) -> F {
    // max(x, 0) + ln(1 + e^{-|x|}) avoids overflow on either side
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Row-wise layer normalization. `stats` receives `(mean, 1/std)` per row.
pub fn layer_norm<F: Scalar>(
    x: &[F],
    cols: usize,
    gamma: &[F],
    beta: &[F],
    out: &mut [F],
    mut stats: Option<&mut [F]>,
) {
    let eps = F::of(LAYER_NORM_EPS);
    let n = F::from_usize(cols).expect("cols");
    for (r, (row, out_row)) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)).enumerate() {
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rstd = F::one() / (var + eps).sqrt();
        for c in 0..cols {
            out_row[c] = (row[c] - mean) * rstd * gamma[c] + beta[c];
        }
        if let Some(stats) = stats.as_deref_mut() {
            stats[2 * r] = mean;
            stats[2 * r + 1] = rstd;
        }
    }
}

/// Which keys each query may attend to.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    None,
    /// Query `i` sees keys `j <= i + (lk - lq)`, so a single new query over a
    /// cached prefix sees everything.
    Causal,
    /// Row-major `[lq, lk]`; `true` marks a visible key.
    Explicit(Vec<bool>),
}

impl Mask {
    #[inline]
    pub fn visible(&self, i: usize, j: usize, lq: usize, lk: usize) -> bool {
        match self {
            Mask::None => true,
            Mask::Causal => j + lq <= i + lk,
            Mask::Explicit(m) => m[i * lk + j],
        }
    }
}

/// Layout of a fused multi-head attention call.
///
/// Queries are `[batch·lq, heads·dk]`. Keys and values for query batch `b`
/// live in kv block `b / kv_group`, rows `block·kv_stride .. + lk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub lq: usize,
    pub lk: usize,
    pub kv_stride: usize,
    pub kv_group: usize,
}

impl AttnShape {
    pub fn new(batch: usize, heads: usize, head_dim: usize, lq: usize, lk: usize) -> Self {
        Self {
            batch,
            heads,
            head_dim,
            lq,
            lk,
            kv_stride: lk,
            kv_group: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn kv_blocks(&self) -> usize {
        self.batch / self.kv_group
    }

    pub fn kv_rows(&self) -> usize {
        if self.batch == 0 {
            0
        } else {
            (self.kv_blocks() - 1) * self.kv_stride + self.lk
        }
    }

    #[inline]
    fn key_row(&self, b: usize, j: usize) -> usize {
        (b / self.kv_group) * self.kv_stride + j
    }

    #[inline]
    fn prob_offset(&self, b: usize, h: usize, i: usize) -> usize {
        ((b * self.heads + h) * self.lq + i) * self.lk
    }
}

/// Strided view of an `rows×cols` block starting at `offset`.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: isize,
    cs: isize,
}

impl View {
    fn rows(offset: usize, stride: usize) -> Self {
        Self {
            offset,
            rs: stride as isize,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            offset: self.offset,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha·a·b + beta·c` on strided views, `a` is `m×k`, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm_view<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: &[F],
    va: View,
    b: &[F],
    vb: View,
    beta: F,
    c: &mut [F],
    vc: View,
) {
    let last =
        |v: View, r: usize, cl: usize| v.offset + (r.max(1) - 1) * v.rs as usize + (cl.max(1) - 1) * v.cs as usize;
    assert!(m > 0 && n > 0 && k > 0);
    assert!(
        last(va, m, k) < a.len() && last(vb, k, n) < b.len() && last(vc, m, n) < c.len(),
        "attention view out of range"
    );
    // SAFETY: the last element of every view is in bounds and strides are positive.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(va.offset),
            va.rs,
            va.cs,
            b.as_ptr().add(vb.offset),
            vb.rs,
            vb.cs,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs,
            vc.cs,
        );
    }
}

/// Scaled dot-product attention for all heads. Masked keys get probability
/// exactly zero, so they add only exact zeros to the output.
pub fn attention_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    shape: &AttnShape,
    mask: &Mask,
    out: &mut [F],
    probs: &mut [F],
) {
    let d = shape.width();
    let dk = shape.head_dim;
    let (lq, lk) = (shape.lq, shape.lk);
    if lq == 0 || dk == 0 {
        return;
    }
    let scale = F::one() / F::from_usize(dk).expect("dk").sqrt();
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let hc = h * dk;
            let pv = View::rows(shape.prob_offset(b, h, 0), lk);
            let qv = View::rows(b * lq * d + hc, d);
            let kv = View::rows(shape.key_row(b, 0) * d + hc, d);
            if lk == 0 {
                continue;
            }
            gemm_view(lq, dk, lk, scale, q, qv, k, kv.t(), F::zero(), probs, pv);
            for i in 0..lq {
                let p = &mut probs[pv.offset + i * lk..][..lk];
                let mut max = F::neg_infinity();
                for (j, &s) in p.iter().enumerate() {
                    if mask.visible(i, j, lq, lk) && s > max {
                        max = s;
                    }
                }
                let mut total = F::zero();
                for (j, pj) in p.iter_mut().enumerate() {
                    if mask.visible(i, j, lq, lk) {
                        *pj = (*pj - max).exp();
                        total += *pj;
                    } else {
                        *pj = F::zero();
                    }
                }
                let inv = F::one() / total;
                p.iter_mut().for_each(|pj| *pj *= inv);
            }
            gemm_view(lq, lk, dk, F::one(), probs, pv, v, kv, F::zero(), out, qv);
        }
    }
}

/// Accumulates gradients of the attention inputs given the output gradient.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    shape: &AttnShape,
    probs: &[F],
    grad_out: &[F],
    dq: Option<&mut [F]>,
    dk_out: Option<&mut [F]>,
    dv: Option<&mut [F]>,
) {
    let d = shape.width();
    let dk = shape.head_dim;
    let (lq, lk) = (shape.lq, shape.lk);
    if lq == 0 || lk == 0 || dk == 0 {
        return;
    }
    let scale = F::one() / F::from_usize(dk).expect("dk").sqrt();
    let (mut dq, mut dk_out, mut dv) = (dq, dk_out, dv);
    let mut ds = vec![F::zero(); lq * lk];
    let dsv = View::rows(0, lk);
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let hc = h * dk;
            let pv = View::rows(shape.prob_offset(b, h, 0), lk);
            let qv = View::rows(b * lq * d + hc, d);
            let kv = View::rows(shape.key_row(b, 0) * d + hc, d);
            if let Some(dv) = dv.as_deref_mut() {
                gemm_view(lk, lq, dk, F::one(), probs, pv.t(), grad_out, qv, F::one(), dv, kv);
            }
            if dq.is_none() && dk_out.is_none() {
                continue;
            }
            gemm_view(lq, dk, lk, F::one(), grad_out, qv, v, kv.t(), F::zero(), &mut ds, dsv);
            for i in 0..lq {
                let p = &probs[pv.offset + i * lk..][..lk];
                let row = &mut ds[i * lk..][..lk];
                let weighted = p.iter().zip(row.iter()).map(|(&a, &c)| a * c).sum::<F>();
                for (g, &pj) in row.iter_mut().zip(p) {
                    *g = pj * (*g - weighted) * scale;
                }
            }
            if let Some(dq) = dq.as_deref_mut() {
                gemm_view(lq, lk, dk, F::one(), &ds, dsv, k, kv, F::one(), dq, qv);
            }
            if let Some(dkk) = dk_out.as_deref_mut() {
                gemm_view(lk, lq, dk, F::one(), &ds, dsv.t(), q, qv, F::one(), dkk, kv);
            }
        }
    }
}

/// Centered moving average along each row with replicate padding of
/// `(kernel - 1) / 2` on both sides.
pub fn moving_average<F: Scalar>(x: &[F], cols: usize, kernel: usize, out: &mut [F]) {
    let half = (kernel / 2) as isize;
    let inv = F::one() / F::from_usize(kernel).expect("kernel");
    let last = cols as isize - 1;
    for (row, out_row) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        for (i, o) in out_row.iter_mut().enumerate() {
            let mut acc = F::zero();
            for off in -half..=half {
                acc += row[(i as isize + off).clamp(0, last) as usize];
            }
            *o = acc * inv;
        }
    }
}

pub fn moving_average_backward<F: Scalar>(grad_out: &[F], cols: usize, kernel: usize, grad_in: &mut [F]) {
    let half = (kernel / 2) as isize;
    let inv = F::one() / F::from_usize(kernel).expect("kernel");
    let last = cols as isize - 1;
    for (g_row, in_row) in grad_out.chunks_exact(cols).zip(grad_in.chunks_exact_mut(cols)) {
        for (i, &g) in g_row.iter().enumerate() {
            for off in -half..=half {
                in_row[(i as isize + off).clamp(0, last) as usize] += g * inv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        matmul(&a, false, &b, false, 2, 3, 2, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ stored as 3×2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0; 4];
        matmul(&at, true, &bt, true, 2, 3, 2, &mut c2, true);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((sigmoid(-1000.0f64)).abs() < 1e-300);
    }

    #[test]
    fn moving_average_examples() {
        let mut out = [0.0f64; 5];
        moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 5, 3, &mut out);
        let expected = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_offsets() {
        let m = Mask::Causal;
        assert!(m.visible(0, 0, 3, 3));
        assert!(!m.visible(0, 1, 3, 3));
        assert!(m.visible(0, 4, 1, 5));
    }
}
