//! Loss terms of the joint objective and their analytic gradients.
//!
//! All losses are means over their elements (and, for the KL term, a sum over
//! latent dimensions averaged over rows) so magnitudes do not depend on batch
//! size or horizon.

use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::error::{Error, Result};

/// `½·ln(2π)`
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

fn check_sigma<F: Scalar>(sigma: &[F]) -> Result<()> {
    match sigma.iter().find(|s| !(**s > F::zero())) {
        Some(s) => Err(Error::NonPositiveSigma(s.as_f64())),
        None => Ok(()),
    }
}

/// Mean of `(y−μ)²/(2σ²) + ln σ + ½ln(2π)`.
pub fn gaussian_nll<F: Scalar>(y: &[F], mu: &[F], sigma: &[F]) -> Result<F> {
    if y.len() != mu.len() || y.len() != sigma.len() || y.is_empty() {
        return Err(Error::ShapeMismatch("gaussian_nll operands".into()));
    }
    check_sigma(sigma)?;
    let half = F::of(0.5);
    let c = F::of(HALF_LN_TWO_PI);
    let total: F = y
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&y, &m), &s)| {
            let z = (y - m) / s;
            half * z * z + s.ln() + c
        })
        .sum();
    Ok(total / F::from_usize(y.len()).expect("len"))
}

/// Gradients of [`gaussian_nll`] with respect to `mu` and `sigma`.
pub fn gaussian_nll_grad<F: Scalar>(y: &[F], mu: &[F], sigma: &[F]) -> (Vec<F>, Vec<F>) {
    let inv_n = F::one() / F::from_usize(y.len()).expect("len");
    let mut dmu = Vec::with_capacity(y.len());
    let mut dsigma = Vec::with_capacity(y.len());
    for ((&y, &m), &s) in y.iter().zip(mu).zip(sigma) {
        let r = m - y;
        let s2 = s * s;
        dmu.push(r / s2 * inv_n);
        dsigma.push((F::one() / s - r * r / (s2 * s)) * inv_n);
    }
    (dmu, dsigma)
}

/// `D_KL(N(μ, diag σ²) ‖ N(0, I))` summed over `latent_dim` columns and
/// averaged over rows. Non-negative; zero exactly at `μ = 0, σ = 1`.
pub fn kl_standard_normal<F: Scalar>(mu: &[F], sigma: &[F], latent_dim: usize) -> Result<F> {
    if mu.len() != sigma.len() || latent_dim == 0 || !mu.len().is_multiple_of(latent_dim) || mu.is_empty() {
        return Err(Error::ShapeMismatch("kl operands".into()));
    }
    check_sigma(sigma)?;
    let rows = mu.len() / latent_dim;
    let half = F::of(0.5);
    let total: F = mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let s2 = s * s;
            -half * (F::one() + s2.ln() - m * m - s2)
        })
        .sum();
    Ok(total / F::from_usize(rows).expect("rows"))
}

pub fn kl_standard_normal_grad<F: Scalar>(mu: &[F], sigma: &[F], latent_dim: usize) -> (Vec<F>, Vec<F>) {
    let inv_rows = F::one() / F::from_usize(mu.len() / latent_dim).expect("rows");
    let dmu = mu.iter().map(|&m| m * inv_rows).collect();
    let dsigma = sigma.iter().map(|&s| (s - F::one() / s) * inv_rows).collect();
    (dmu, dsigma)
}

/// Negative log-likelihood of the targets under the reconstructed means,
/// sharing the forecaster's standard deviations.
pub fn reconstruction_loss<F: Scalar>(mu_hat: &[F], y: &[F], sigma: &[F]) -> Result<F> {
    gaussian_nll(y, mu_hat, sigma)
}

/// Gradient of [`reconstruction_loss`] with respect to `mu_hat`.
pub fn reconstruction_loss_grad<F: Scalar>(mu_hat: &[F], y: &[F], sigma: &[F]) -> Vec<F> {
    gaussian_nll_grad(y, mu_hat, sigma).0
}

/// The weighted objective and its parts, retained for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub recon: f64,
    pub total: f64,
    pub gamma: f64,
    pub beta: f64,
}

/// `total = γ·nll + β·kl + recon`.
pub fn total_loss(nll: f64, kl: f64, recon: f64, gamma: f64, beta: f64) -> Result<LossBreakdown> {
    check_coefficients(gamma, beta)?;
    let total = gamma * nll + beta * kl + recon;
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    Ok(LossBreakdown {
        nll,
        kl,
        recon,
        total,
        gamma,
        beta,
    })
}

pub fn check_coefficients(gamma: f64, beta: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NonPositiveCoefficient {
            name: "gamma",
            value: gamma,
        });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::NonPositiveCoefficient {
            name: "beta",
            value: beta,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nll_examples() {
        assert_abs_diff_eq!(
            gaussian_nll(&[0.3], &[0.3], &[1.0]).unwrap(),
            0.918_938_533,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            gaussian_nll(&[1.0], &[0.0], &[1.0]).unwrap(),
            1.418_938_533,
            epsilon = 1e-9
        );
        let expected = 0.5 + 2f64.ln() + HALF_LN_TWO_PI;
        assert_abs_diff_eq!(gaussian_nll(&[2.0], &[0.0], &[2.0]).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 2.112_085, epsilon = 1e-6);
    }

    #[test]
    fn half_ln_two_pi_constant() {
        assert_abs_diff_eq!(HALF_LN_TWO_PI, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn nll_rejects_non_positive_sigma() {
        assert!(matches!(
            gaussian_nll(&[0.0], &[0.0], &[0.0]),
            Err(Error::NonPositiveSigma(_))
        ));
        assert!(matches!(
            gaussian_nll(&[0.0], &[0.0], &[-1.0]),
            Err(Error::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_standard_normal(&[1.0], &[1.0], 1).unwrap(), 0.5, epsilon = 1e-15);
        let expected = -0.5 * (1.0 + 4f64.ln() - 4.0);
        assert_abs_diff_eq!(
            kl_standard_normal(&[0.0], &[2.0], 1).unwrap(),
            expected,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(expected, 0.806_853, epsilon = 1e-6);
    }

    #[test]
    fn kl_averages_over_rows() {
        // two rows, same content → same value as one row
        let one = kl_standard_normal(&[0.5, -1.0], &[0.7, 1.3], 2).unwrap();
        let two = kl_standard_normal(&[0.5, -1.0, 0.5, -1.0], &[0.7, 1.3, 0.7, 1.3], 2).unwrap();
        assert_abs_diff_eq!(one, two, epsilon = 1e-15);
    }

    #[test]
    fn recon_matches_nll_and_gradient() {
        let (m, y, s) = ([1.0], [0.0], [2.0]);
        assert_eq!(
            reconstruction_loss(&m, &y, &s).unwrap(),
            gaussian_nll(&y, &m, &s).unwrap()
        );
        let analytic = reconstruction_loss_grad(&m, &y, &s)[0];
        let h = 1e-6;
        let numeric = (reconstruction_loss(&[1.0 + h], &y, &s).unwrap()
            - reconstruction_loss(&[1.0 - h], &y, &s).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(analytic, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(numeric, 0.25, epsilon = 1e-8);
    }

    #[test]
    fn total_loss_composition() {
        let b = total_loss(1.0, 0.5, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(b.total, 3.5);
        assert!(matches!(
            total_loss(1.0, 0.5, 2.0, 1.0, 0.0),
            Err(Error::NonPositiveCoefficient { name: "beta", .. })
        ));
        assert!(matches!(
            total_loss(1.0, 0.5, 2.0, -1.0, 1.0),
            Err(Error::NonPositiveCoefficient { name: "gamma", .. })
        ));
    }

    fn central<Fun: Fn(f64) -> f64>(f: Fun, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-4;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for _ in 0..20 {
            let n = 4;
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
            let (dmu, dsigma) = gaussian_nll_grad(&y, &mu, &sigma);
            let (kmu, ksigma) = kl_standard_normal_grad(&mu, &sigma, 2);
            for i in 0..n {
                let with = |v: &[f64], x: f64| {
                    let mut c = v.to_vec();
                    c[i] = x;
                    c
                };
                let nm = central(|x| gaussian_nll(&y, &with(&mu, x), &sigma).unwrap(), mu[i], h);
                let ns = central(|x| gaussian_nll(&y, &mu, &with(&sigma, x)).unwrap(), sigma[i], h);
                let km = central(|x| kl_standard_normal(&with(&mu, x), &sigma, 2).unwrap(), mu[i], h);
                let ks = central(|x| kl_standard_normal(&mu, &with(&sigma, x), 2).unwrap(), sigma[i], h);
                assert!(rel(dmu[i], nm) < 1e-4);
                assert!(rel(dsigma[i], ns) < 1e-4);
                assert!(rel(kmu[i], km) < 1e-4);
                assert!(rel(ksigma[i], ks) < 1e-4);
            }
        }
    }

    #[test]
    fn nll_minimized_at_target() {
        let (y, s) = ([0.7], [1.3]);
        let (dmu, _) = gaussian_nll_grad(&y, &y, &s);
        assert_eq!(dmu[0], 0.0);
        let h = 1e-3;
        let f = |m: f64| gaussian_nll(&y, &[m], &s).unwrap();
        let second = (f(0.7 + h) - 2.0 * f(0.7) + f(0.7 - h)) / (h * h);
        assert!(second > 0.0);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(mu in -5.0f64..5.0, sigma in 0.01f64..10.0) {
            let kl = kl_standard_normal(&[mu], &[sigma], 1).unwrap();
            prop_assert!(kl >= 0.0);
            if kl < 1e-9 {
                prop_assert!(mu.abs() < 1e-3 && (sigma - 1.0).abs() < 1e-3);
            }
        }

        #[test]
        fn total_is_exact_weighted_sum(nll in -5.0f64..5.0, kl in 0.0f64..5.0, recon in -5.0f64..5.0,
                                       gamma in 0.01f64..5.0, beta in 0.01f64..5.0) {
            let b = total_loss(nll, kl, recon, gamma, beta).unwrap();
            prop_assert_eq!(b.total, gamma * nll + beta * kl + recon);
        }
    }
}
