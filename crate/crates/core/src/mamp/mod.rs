//! Memory approximate message passing.
//!
//! Each iteration runs the long-memory linear estimator, a Bernoulli-Gaussian
//! denoiser made orthogonal to its input, and an optimal damping step over a
//! short window of past estimates. Only operator applications are used once
//! the spectral moments are known.

pub mod damping;
pub mod lle;
pub mod nle;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{power_iteration, LinearOperator, Scaled};
use crate::spectral::{GramPowers, SpectralMoments};
use crate::C64;

pub use damping::optimal_damping;
pub use lle::{
    compute_theta, fixed_point_recursion, geometric_budget, Covariances, LleOutput, LongMemoryLle, XiRule, XiTerms,
};
pub use nle::{bg_posterior, nle_denoise, BgPrior, Posterior};

/// How the spectral moments are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralMode {
    /// Exact traces from products of the smaller Gram matrix.
    Exact,
    /// Power iteration for `λmax` plus Hutchinson trace estimates.
    Hutchinson {
        rel_target: f64,
        max_probes: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MampConfig {
    pub max_iterations: usize,
    pub damping_window: usize,
    /// Stop when `‖x̂_{t+1} − x̂_t‖ / ‖x̂_t‖` drops below this.
    pub tolerance: f64,
    pub spectral: SpectralMode,
    pub xi_rule: XiRule,
    /// Consecutive increases of `ν^γ` that count as divergence.
    pub divergence_patience: usize,
    pub power_steps: usize,
    pub power_tol: f64,
    /// Safety factor on the power-iteration `λmax`.
    pub lambda_margin: f64,
}

impl Default for MampConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            damping_window: 3,
            tolerance: 1e-6,
            spectral: SpectralMode::Exact,
            xi_rule: XiRule::Optimal,
            divergence_patience: 5,
            power_steps: 50,
            power_tol: 1e-4,
            lambda_margin: 1.02,
        }
    }
}

impl MampConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        if self.damping_window == 0 {
            return Err(Error::InvalidArgument("damping_window must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Damped estimate variance entering the iteration.
    pub nu_gamma: f64,
    /// Linear estimate variance.
    pub nu_theta: f64,
    pub xi: f64,
    /// Convergence parameter `θ_t` of the scaled operator.
    pub theta: f64,
    /// NMSE of the posterior mean against the truth, when known.
    pub nmse: Option<f64>,
    /// Quadratic behind `xi`; not written to CSV.
    pub xi_terms: Option<XiTerms>,
}

#[derive(Debug, Clone)]
pub struct MampReport {
    pub estimate: Vec<C64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

/// Writes the iteration trace as CSV: `iteration,nu_gamma,nu_theta,xi,nmse`.
pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "nu_gamma", "nu_theta", "xi", "nmse"])?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{:e}", row.nu_gamma),
            format!("{:e}", row.nu_theta),
            format!("{:e}", row.xi),
            row.nmse.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Where the iteration gets its spectral moments.
#[derive(Debug, Clone)]
pub enum MomentSource {
    /// A precomputed table, long enough for every iteration.
    Fixed(SpectralMoments),
    /// Exact moments extended on demand.
    Exact(GramPowers),
}

impl MomentSource {
    fn get(&mut self, count: usize) -> Result<&SpectralMoments> {
        match self {
            MomentSource::Fixed(m) => {
                if m.count() < count {
                    return Err(Error::InvalidArgument(format!(
                        "moment table has order {}, iteration needs {count}",
                        m.count()
                    )));
                }
                Ok(m)
            }
            MomentSource::Exact(g) => Ok(g.moments(count)),
        }
    }
}

/// Scale `s` such that `Φ / s` has `λ̄ = 1`. The eigenvalue bounds are
/// `λmax` from power iteration times a safety margin and `λmin = 0`.
pub fn operator_scale<O: LinearOperator + ?Sized>(op: &O, config: &MampConfig) -> Result<f64> {
    let lmax = power_iteration(op, config.power_steps, config.power_tol) * config.lambda_margin;
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(Error::InvalidArgument("operator is identically zero".into()));
    }
    Ok((lmax / 2.0).sqrt())
}

/// [`operator_scale`] and the moment source of the scaled operator.
fn scaled_moments<O: LinearOperator + ?Sized>(op: &O, config: &MampConfig) -> Result<(f64, MomentSource)> {
    let s = operator_scale(op, config)?;
    let scaled = Scaled { inner: op, scale: s };
    let source = match config.spectral {
        SpectralMode::Exact => MomentSource::Exact(GramPowers::new(&scaled, 1.0)),
        SpectralMode::Hutchinson {
            rel_target,
            max_probes,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = 2 * config.max_iterations + 1;
            MomentSource::Fixed(SpectralMoments::hutchinson_adaptive(
                &scaled, 1.0, count, rel_target, max_probes, &mut rng,
            )?)
        }
    };
    Ok((s, source))
}

/// Estimates `x` from `y = Φ x + n` with `n ~ CN(0, noise_var I)` under a
/// Bernoulli-Gaussian prior.
///
/// Returns the posterior mean of the last iteration. `truth`, when given,
/// only feeds the NMSE column of the trace.
pub fn mamp_estimate<O: LinearOperator + ?Sized>(
    op: &O,
    y: &[C64],
    noise_var: f64,
    prior: &BgPrior,
    config: &MampConfig,
    truth: Option<&[C64]>,
) -> Result<MampReport> {
    config.validate()?;
    if y.len() != op.rows() {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, operator has {} rows",
            y.len(),
            op.rows()
        )));
    }
    if let Some(t) = truth {
        if t.len() != op.cols() {
            return Err(Error::DimensionMismatch("truth length".into()));
        }
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
    }
    let (scale, moments) = scaled_moments(op, config)?;
    let a = Scaled { inner: op, scale };
    let y: Vec<C64> = y.iter().map(|v| v / scale).collect();
    let sigma2 = noise_var / (scale * scale);
    iterate(&a, &y, sigma2, prior, moments, config, truth)
}

/// The iteration proper; `a` is already scaled to `λ̄ = 1`.
pub fn iterate<O: LinearOperator + ?Sized>(
    a: &O,
    y: &[C64],
    sigma2: f64,
    prior: &BgPrior,
    mut moments: MomentSource,
    config: &MampConfig,
    truth: Option<&[C64]>,
) -> Result<MampReport> {
    let rows = a.rows();
    let cols = a.cols();
    let first = moments.get(1)?.clone();
    let w0 = first.w[0];
    if !(w0 > 0.0) {
        return Err(Error::InvalidArgument("operator is identically zero".into()));
    }
    let truth_energy = truth.map(linalg::norm_sqr);

    let x1 = vec![prior.complex_mean(); cols];
    let ax1 = a.apply(&x1);
    let res1: Vec<C64> = y.iter().zip(&ax1).map(|(yi, ai)| yi - ai).collect();
    // With a sparse prior every covariance in the damping window comes from
    // residuals, so x_1 is measured the same way. A Gaussian prior never damps
    // and keeps the exact prior variance, which pins the LMMSE fixed point.
    let prior_var = prior.complex_variance().max(f64::MIN_POSITIVE);
    let nu11 = if prior.sparsity >= 1.0 {
        prior_var
    } else {
        let v = lle::residual_covariance(&res1, &res1, cols, sigma2, w0);
        if v > 0.0 {
            v
        } else {
            prior_var
        }
    };
    let mut xs = vec![x1];
    let mut residuals = vec![res1];
    let mut cov = Covariances::new();
    cov.push(vec![nu11]);

    let mut le = LongMemoryLle::new(first, rows, cols);
    let mut trace = Vec::new();
    let mut post_prev: Option<Vec<C64>> = None;
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut estimate = xs[0].clone();

    for t in 0..config.max_iterations {
        iterations = t + 1;
        let nu_gamma = cov.last_diag();
        le.extend_moments(moments.get(2 * t + 1)?);
        let out = le.step(a, &residuals[t], &xs, &cov, sigma2, config.xi_rule)?;
        let v_z = out.nu.max(1e-300);

        let (post, v_post) = nle_denoise(&out.mu, prior, v_z);
        // extrinsic (orthogonal) output
        let orth = if v_post < v_z && v_post > 0.0 {
            let g = 1.0 / v_post - 1.0 / v_z;
            post.iter()
                .zip(&out.mu)
                .map(|(p, z)| (p / v_post - z / v_z) / g)
                .collect()
        } else {
            post.clone()
        };
        let a_orth = a.apply(&orth);
        let res_orth: Vec<C64> = y.iter().zip(&a_orth).map(|(yi, ai)| yi - ai).collect();

        // damping window: the newest ℓ−1 damped estimates plus the new one
        let keep = (config.damping_window - 1).min(xs.len());
        let window: Vec<usize> = (xs.len() - keep..xs.len()).collect();
        let len = window.len() + 1;
        let mut v = vec![0.0; len * len];
        for (a_i, &i) in window.iter().enumerate() {
            for (b_i, &j) in window.iter().enumerate() {
                v[a_i * len + b_i] = cov.get(i, j);
            }
            let c = lle::residual_covariance(&residuals[i], &res_orth, cols, sigma2, w0);
            v[a_i * len + len - 1] = c;
            v[(len - 1) * len + a_i] = c;
        }
        v[len * len - 1] = lle::residual_covariance(&res_orth, &res_orth, cols, sigma2, w0);

        // A linear denoiser has an identically zero extrinsic output, so the
        // window carries no new information; keep the previous estimate.
        let damped = if prior.sparsity >= 1.0 {
            None
        } else {
            optimal_damping(&v, len)
        };
        let was_damped = damped.is_some();
        let (x_next, res_next, nu_next) = match damped {
            Some((weights, nu)) => {
                let mut x = vec![C64::default(); cols];
                let mut r = vec![C64::default(); rows];
                for (wi, &i) in weights.iter().zip(&window) {
                    axpy(&mut x, *wi, &xs[i]);
                    axpy(&mut r, *wi, &residuals[i]);
                }
                axpy(&mut x, weights[len - 1], &orth);
                axpy(&mut r, weights[len - 1], &res_orth);
                (x, r, nu)
            }
            None => (
                xs[xs.len() - 1].clone(),
                residuals[residuals.len() - 1].clone(),
                nu_gamma,
            ),
        };
        let mut row: Vec<f64> = if was_damped {
            residuals
                .iter()
                .map(|r| lle::residual_covariance(&res_next, r, cols, sigma2, w0))
                .collect()
        } else {
            let last = xs.len() - 1;
            (0..xs.len()).map(|i| cov.get(last, i)).collect()
        };
        row.push(nu_next);
        cov.push(row);
        xs.push(x_next);
        residuals.push(res_next);

        let nmse = match (truth, truth_energy) {
            (Some(t), Some(e)) if e > 0.0 => Some(post.iter().zip(t).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>() / e),
            _ => None,
        };
        trace.push(TraceRow {
            iteration: t + 1,
            nu_gamma,
            nu_theta: out.nu,
            xi: out.xi,
            theta: out.theta,
            nmse,
            xi_terms: out.xi_terms,
        });

        if nu_next > nu_gamma * (1.0 + 1e-12) {
            increases += 1;
            if increases >= config.divergence_patience {
                return Err(Error::Divergence {
                    iteration: t + 1,
                    consecutive: increases,
                    nu: nu_next,
                });
            }
        } else {
            increases = 0;
        }

        let change = post_prev.as_ref().map(|prev| {
            let diff: f64 = post.iter().zip(prev).map(|(p, q)| (p - q).norm_sqr()).sum();
            let base = linalg::norm_sqr(prev);
            if base == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (diff / base).sqrt()
            }
        });
        estimate = post.clone();
        post_prev = Some(post);
        if let Some(c) = change {
            if c < config.tolerance {
                converged = true;
                break;
            }
        }
    }

    Ok(MampReport {
        estimate,
        iterations,
        converged,
        trace,
    })
}

fn axpy(dst: &mut [C64], w: f64, src: &[C64]) {
    if w == 0.0 {
        return;
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * w;
    }
}
