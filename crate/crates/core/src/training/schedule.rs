/// Step decay: `base_lr · 0.8^⌊epoch/2⌋`.
///
/// Evaluated as `(base_lr · 4^k) / 5^k`: the product is exact and the single
/// division rounds once, so every value is correctly rounded while `5^k`
/// stays exact.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    let k = (epoch / 2) as i32;
    if k <= 22 {
        base_lr * 4f64.powi(k) / 5f64.powi(k)
    } else {
        base_lr * 0.8f64.powi(k)
    }
}
