//! Long-memory linear estimator.
//!
//! Keeps the recursion `r_t = θ_t B r_{t−1} + ξ_t (y − A x_t)` with
//! `B = λ̄ I − A A^H`, so that `A^H r_t` equals the memory sum
//! `Σ_i η_{t,i} A^H B^{t−i} (y − A x_i)` without any matrix inverse. The
//! coefficients are renormalized every step so the output is unbiased
//! (`ε_t = 1`); this leaves the estimate unchanged.

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::LinearOperator;
use crate::spectral::SpectralMoments;
use crate::C64;

/// Cap used when the optimal relaxation parameter is unbounded.
pub const XI_CAP: f64 = 1e6;

/// Symmetric covariance history `ν_{i,j}`, stored as lower-triangular rows.
#[derive(Debug, Clone, Default)]
pub struct Covariances {
    rows: Vec<Vec<f64>>,
}

impl Covariances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends row `k = len()`; `row[j]` is `ν_{k,j}` for `j ≤ k`.
    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.rows.len() + 1);
        self.rows.push(row);
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.rows[i][j]
        } else {
            self.rows[j][i]
        }
    }

    pub fn last_diag(&self) -> f64 {
        let k = self.rows.len() - 1;
        self.rows[k][k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiRule {
    /// Minimize the output variance at every step.
    Optimal,
    /// Fixed relaxation (the first step always uses 1).
    Fixed(f64),
}

/// Convergence parameter `θ = 1 / (λ̄ + ρ)`.
pub fn compute_theta(lambda_min: f64, lambda_max: f64, rho: f64) -> Result<f64> {
    if !(lambda_min >= 0.0) || !(lambda_max >= lambda_min) || !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "theta needs 0 <= lambda_min <= lambda_max and rho > 0, got {lambda_min}, {lambda_max}, {rho}"
        )));
    }
    Ok(1.0 / ((lambda_min + lambda_max) / 2.0 + rho))
}

/// Spectral radius bound of `θ B`: `(λmax − λmin) / (λmin + λmax + 2ρ)`.
pub fn theta_radius(lambda_min: f64, lambda_max: f64, rho: f64) -> f64 {
    (lambda_max - lambda_min) / (lambda_min + lambda_max + 2.0 * rho)
}

/// `r_t = C r_{t−1} + x` from `r_0 = 0`. Converges to `(I − C)^{-1} x`
/// when the spectral radius of `C` is below one; the LLE is this recursion
/// with `C = θ B`.
pub fn fixed_point_recursion<O: LinearOperator + ?Sized>(c: &O, x: &[C64], steps: usize) -> Vec<C64> {
    let mut r = vec![C64::default(); x.len()];
    for _ in 0..steps {
        r = c.apply(&r);
        for (ri, xi) in r.iter_mut().zip(x) {
            *ri += xi;
        }
    }
    r
}

/// Steps after which `rate^t` falls below `tol`, plus `margin`.
pub fn geometric_budget(rate: f64, tol: f64, margin: usize) -> usize {
    assert!(rate > 0.0 && rate < 1.0 && tol > 0.0 && tol < 1.0);
    (tol.ln() / rate.ln()).ceil() as usize + margin
}

/// Coefficients of `ν(ξ) = (c1 ξ² − 2 c2 ξ + c3) / (w0² (ξ + c0)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiTerms {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub w0: f64,
}

impl XiTerms {
    /// Terms at step `k` (zero based) from the already propagated memory
    /// weights `eta[..k]`.
    pub fn new(eta: &[f64], k: usize, moments: &SpectralMoments, cov: &Covariances, sigma2: f64) -> Self {
        let w = &moments.w;
        let w0 = w[0];
        let mut c0 = 0.0;
        let mut c2 = 0.0;
        let mut c3 = 0.0;
        for i in 0..k {
            c0 += eta[i] * w[k - i];
            c2 -= eta[i] * (sigma2 * w[k - i] + cov.get(k, i) * moments.w_bar(0, k - i));
            for j in 0..k {
                c3 += eta[i] * eta[j] * (sigma2 * w[2 * k - i - j] + cov.get(i, j) * moments.w_bar(k - i, k - j));
            }
        }
        Self {
            c0: c0 / w0,
            c1: sigma2 * w0 + cov.get(k, k) * moments.w_bar(0, 0),
            c2,
            c3,
            w0,
        }
    }

    pub fn variance(&self, xi: f64) -> f64 {
        let d = self.w0 * (xi + self.c0);
        (self.c1 * xi * xi - 2.0 * self.c2 * xi + self.c3) / (d * d)
    }

    /// Stationary point `(c2 c0 + c3) / (c1 c0 + c2)`, capped at
    /// [`XI_CAP`] when the denominator vanishes.
    pub fn optimal(&self) -> f64 {
        let num = self.c2 * self.c0 + self.c3;
        let den = self.c1 * self.c0 + self.c2;
        if den == 0.0 || !(num / den).is_finite() {
            return XI_CAP;
        }
        (num / den).clamp(-XI_CAP, XI_CAP)
    }
}

#[derive(Debug, Clone)]
pub struct LleOutput {
    /// Unbiased linear estimate.
    pub mu: Vec<C64>,
    /// Its error variance per complex entry.
    pub nu: f64,
    pub xi: f64,
    pub theta: f64,
    /// Normalization before rescaling.
    pub epsilon: f64,
    /// The `ν(ξ)` quadratic the optimal rule minimized, when it ran.
    pub xi_terms: Option<XiTerms>,
}

#[derive(Debug, Clone)]
pub struct LongMemoryLle {
    moments: SpectralMoments,
    r: Vec<C64>,
    ahr: Vec<C64>,
    eta: Vec<f64>,
}

impl LongMemoryLle {
    pub fn new(moments: SpectralMoments, rows: usize, cols: usize) -> Self {
        Self {
            moments,
            r: vec![C64::default(); rows],
            ahr: vec![C64::default(); cols],
            eta: Vec::new(),
        }
    }

    pub fn moments(&self) -> &SpectralMoments {
        &self.moments
    }

    /// Replaces the moments with a longer table of the same operator.
    pub fn extend_moments(&mut self, moments: &SpectralMoments) {
        debug_assert_eq!(moments.lambda_bar, self.moments.lambda_bar);
        if moments.w.len() > self.moments.w.len() {
            self.moments = moments.clone();
        }
    }

    /// Current memory weights `η_{t,i}`, in the normalized scale.
    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    /// `A^H r_t`.
    pub fn ahr(&self) -> &[C64] {
        &self.ahr
    }

    /// One step. `residual` is `y − A x_t`, `xs` holds `x_1 ..= x_t`, and
    /// `cov` the error covariances of those estimates.
    pub fn step<O: LinearOperator + ?Sized>(
        &mut self,
        op: &O,
        residual: &[C64],
        xs: &[Vec<C64>],
        cov: &Covariances,
        sigma2: f64,
        rule: XiRule,
    ) -> Result<LleOutput> {
        let k = self.eta.len();
        assert_eq!(xs.len(), k + 1);
        assert_eq!(cov.len(), k + 1);
        if self.moments.count() < 2 * k + 1 {
            return Err(Error::InvalidArgument(format!(
                "step {} needs spectral moments up to order {}",
                k + 1,
                2 * k + 1
            )));
        }
        let lambda_bar = self.moments.lambda_bar;
        let nu_tt = cov.get(k, k);
        let rho = if nu_tt > 0.0 { sigma2 / nu_tt } else { f64::INFINITY };
        let theta = 1.0 / (lambda_bar + rho);

        for e in self.eta.iter_mut() {
            *e *= theta;
        }
        // θ B r_{t−1}
        let aahr = op.apply(&self.ahr);
        let mut r: Vec<C64> = self
            .r
            .iter()
            .zip(&aahr)
            .map(|(ri, ai)| (ri * lambda_bar - ai) * theta)
            .collect();

        let mut xi_terms = None;
        let xi = if k == 0 {
            1.0
        } else {
            match rule {
                XiRule::Fixed(x) => x,
                XiRule::Optimal => {
                    let terms = XiTerms::new(&self.eta, k, &self.moments, cov, sigma2);
                    xi_terms = Some(terms);
                    let x = terms.optimal();
                    let v = terms.variance(x);
                    if v.is_finite() && v >= 0.0 {
                        x
                    } else {
                        1.0
                    }
                }
            }
        };
        self.eta.push(xi);
        for (ri, res) in r.iter_mut().zip(residual) {
            *ri += res * xi;
        }
        let ahr = op.adjoint(&r);

        let w = &self.moments.w;
        let epsilon: f64 = (0..=k).map(|i| self.eta[i] * w[k - i]).sum();
        if !(epsilon.abs() > f64::MIN_POSITIVE * 1e10) || !epsilon.is_finite() {
            return Err(Error::DegenerateNormalization(k + 1));
        }
        let mut mu = ahr.clone();
        for (i, x) in xs.iter().enumerate() {
            let p = self.eta[i] * w[k - i];
            if p != 0.0 {
                for (m, xv) in mu.iter_mut().zip(x) {
                    *m += xv * p;
                }
            }
        }
        let inv = 1.0 / epsilon;
        for m in mu.iter_mut() {
            *m *= inv;
        }

        let mut nu = 0.0;
        for i in 0..=k {
            for j in 0..=k {
                nu += self.eta[i]
                    * self.eta[j]
                    * (sigma2 * w[2 * k - i - j] + cov.get(i, j) * self.moments.w_bar(k - i, k - j));
            }
        }
        nu *= inv * inv;

        for e in self.eta.iter_mut() {
            *e *= inv;
        }
        self.r = r.into_iter().map(|v| v * inv).collect();
        self.ahr = ahr.into_iter().map(|v| v * inv).collect();

        Ok(LleOutput {
            mu,
            nu: nu.max(0.0),
            xi,
            theta,
            epsilon,
            xi_terms,
        })
    }
}

/// Residual-based error covariance estimate
/// `[(1/n) Re (y − A x_a)^H (y − A x_b) − (rows/n) σ²] / w_0`.
pub fn residual_covariance(ra: &[C64], rb: &[C64], cols: usize, sigma2: f64, w0: f64) -> f64 {
    let n = cols as f64;
    (linalg::dot(ra, rb).re / n - ra.len() as f64 / n * sigma2) / w0
}
