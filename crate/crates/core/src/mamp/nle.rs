//! Bernoulli-Gaussian MMSE denoiser.
//!
//! Prior `x ~ (1 − p) δ(x) + p N(u_g, v_g)`, observation `y = x + N(0, δ²)`.

use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgPrior {
    /// Activity probability `p`.
    pub sparsity: f64,
    /// Mean of the active component (per real dimension).
    pub mean: f64,
    /// Variance of the active component of a complex entry; each real
    /// dimension gets half.
    pub variance: f64,
}

impl BgPrior {
    pub fn new(sparsity: f64, mean: f64, variance: f64) -> Self {
        Self {
            sparsity,
            mean,
            variance,
        }
    }

    /// Prior mean of a complex entry.
    pub fn complex_mean(&self) -> C64 {
        C64::new(self.sparsity * self.mean, self.sparsity * self.mean)
    }

    /// `E|x − E x|²` of a complex entry.
    pub fn complex_variance(&self) -> f64 {
        let p = self.sparsity;
        2.0 * (p * (1.0 - p) * self.mean * self.mean + p * self.variance / 2.0)
    }
}

/// Scalar posterior for one real dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
    /// Posterior probability that the entry is active.
    pub activity: f64,
}

/// Posterior mean and variance of a real Bernoulli-Gaussian entry.
///
/// The activity probability is evaluated as a logistic of a log-odds, which
/// stays finite for any `y` that the raw ratio of Gaussians would overflow on.
pub fn bg_posterior(y: f64, p: f64, u_g: f64, v_g: f64, noise_var: f64) -> Posterior {
    debug_assert!(noise_var > 0.0 && v_g > 0.0);
    let v_hat = 1.0 / (1.0 / v_g + 1.0 / noise_var);
    let u_hat = v_hat * (u_g / v_g + y / noise_var);
    // log of (1 − p)/p · c · e^d
    let log_c = 0.5 * (1.0 + v_g / noise_var).ln();
    let d = (y - u_g).powi(2) / (2.0 * (noise_var + v_g)) - y * y / (2.0 * noise_var);
    let activity = if p >= 1.0 {
        1.0
    } else if p <= 0.0 {
        0.0
    } else {
        let log_odds = (1.0 - p).ln() - p.ln() + log_c + d;
        if log_odds > 0.0 {
            let e = (-log_odds).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + log_odds.exp())
        }
    };
    Posterior {
        mean: activity * u_hat,
        variance: activity * (1.0 - activity) * u_hat * u_hat + activity * v_hat,
        activity,
    }
}

/// Denoises a complex vector observed in `CN(0, noise_var)` noise, treating
/// real and imaginary parts as independent Bernoulli-Gaussian entries with
/// half the complex variances. Returns the posterior means and the average
/// posterior variance per complex entry.
pub fn nle_denoise(z: &[C64], prior: &BgPrior, noise_var: f64) -> (Vec<C64>, f64) {
    let half_v = prior.variance / 2.0;
    let half_n = noise_var.max(f64::MIN_POSITIVE) / 2.0;
    let mut total_var = 0.0;
    let out = z
        .iter()
        .map(|zi| {
            let re = bg_posterior(zi.re, prior.sparsity, prior.mean, half_v, half_n);
            let im = bg_posterior(zi.im, prior.sparsity, prior.mean, half_v, half_n);
            total_var += re.variance + im.variance;
            C64::new(re.mean, im.mean)
        })
        .collect();
    (out, total_var / z.len().max(1) as f64)
}
