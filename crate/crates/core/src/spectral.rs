//! Spectral moments `w_k = (1/n) tr{A^H B^k A}` with `B = λ̄ I − A A^H`, where
//! `n` is the number of columns of `A` (the signal dimension).
//!
//! Two routes: exact, from the eigenvalues of the smaller Gram matrix
//! (`w_k = (1/n) Σ_i λ_i (λ̄ − λ_i)^k`), and a Hutchinson estimate that only
//! needs operator applications.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::LinearOperator;
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMoments {
    pub lambda_bar: f64,
    /// `w_0 ..= w_count`.
    pub w: Vec<f64>,
}

impl SpectralMoments {
    /// Moments from the non-zero spectrum of `A A^H`.
    pub fn from_eigenvalues(eigs: &[f64], ncols: usize, lambda_bar: f64, count: usize) -> Self {
        let mut w = vec![0.0; count + 1];
        for &lam in eigs {
            let lam = lam.max(0.0);
            let mut term = lam / ncols as f64;
            let step = lambda_bar - lam;
            for wk in w.iter_mut() {
                *wk += term;
                term *= step;
            }
        }
        Self { lambda_bar, w }
    }

    /// Exact moments through the eigenvalues of the smaller Gram matrix.
    /// Costs one dense eigen-decomposition.
    pub fn from_eigen_decomposition<O: LinearOperator + ?Sized>(op: &O, lambda_bar: f64, count: usize) -> Self {
        let gram = linalg::small_gram(&op.to_dense());
        let eigs = linalg::hermitian_eigenvalues(&gram);
        Self::from_eigenvalues(&eigs, op.cols(), lambda_bar, count)
    }

    /// Exact moments from matrix products only; see [`GramPowers`].
    pub fn exact<O: LinearOperator + ?Sized>(op: &O, lambda_bar: f64, count: usize) -> Self {
        GramPowers::new(op, lambda_bar).moments(count).clone()
    }

    /// Hutchinson estimate with `probes` random unit-phase probe vectors.
    ///
    /// For each probe `z`, `v = A z` and `u_i = B^i v`; then
    /// `z^H A^H B^{i+j} A z = u_i^H u_j`, so `⌈count/2⌉ + 1` applications of
    /// `B` per probe cover every moment up to `count`.
    pub fn hutchinson<O, R>(op: &O, lambda_bar: f64, count: usize, probes: usize, rng: &mut R) -> HutchinsonEstimate
    where
        O: LinearOperator + ?Sized,
        R: Rng + ?Sized,
    {
        let n = op.cols();
        let half = count / 2 + 1;
        let mut sum = vec![0.0; count + 1];
        let mut sum_sq = vec![0.0; count + 1];
        for _ in 0..probes.max(1) {
            let z: Vec<C64> = (0..n)
                .map(|_| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            let mut us = Vec::with_capacity(half + 1);
            us.push(op.apply(&z));
            for i in 0..half {
                let u = &us[i];
                let ahu = op.adjoint(u);
                let aahu = op.apply(&ahu);
                let next: Vec<C64> = u.iter().zip(&aahu).map(|(a, b)| a * lambda_bar - b).collect();
                us.push(next);
            }
            for k in 0..=count {
                let i = k / 2;
                let j = k - i;
                let est = linalg::dot(&us[i], &us[j]).re / n as f64;
                sum[k] += est;
                sum_sq[k] += est * est;
            }
        }
        let s = probes.max(1) as f64;
        let w: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let std_err = sum_sq
            .iter()
            .zip(&w)
            .map(|(sq, m)| {
                if s > 1.0 {
                    ((sq / s - m * m).max(0.0) / (s - 1.0)).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        HutchinsonEstimate {
            moments: SpectralMoments { lambda_bar, w },
            std_err,
        }
    }

    /// Doubles the probe count until every moment's standard error is below
    /// `rel_target · w_0 · λ̄^k` (the natural magnitude bound of `w_k` when the
    /// spectrum lies in `[0, 2λ̄]`), or fails after `max_probes`.
    pub fn hutchinson_adaptive<O, R>(
        op: &O,
        lambda_bar: f64,
        count: usize,
        rel_target: f64,
        max_probes: usize,
        rng: &mut R,
    ) -> Result<Self>
    where
        O: LinearOperator + ?Sized,
        R: Rng + ?Sized,
    {
        let mut probes = 16;
        loop {
            let est = Self::hutchinson(op, lambda_bar, count, probes, rng);
            let worst = est.worst_relative_error();
            if worst <= rel_target {
                return Ok(est.moments);
            }
            if probes >= max_probes {
                return Err(Error::TraceAccuracy {
                    achieved: worst,
                    target: rel_target,
                });
            }
            probes = (probes * 2).min(max_probes);
        }
    }

    pub fn count(&self) -> usize {
        self.w.len() - 1
    }

    /// `w̄_{i,j} = λ̄ w_{i+j} − w_{i+j+1} − w_i w_j`.
    pub fn w_bar(&self, i: usize, j: usize) -> f64 {
        self.lambda_bar * self.w[i + j] - self.w[i + j + 1] - self.w[i] * self.w[j]
    }
}

/// Exact moments computed on demand from powers of `C = λ̄ I − G`, `G` the
/// smaller Gram matrix.
///
/// `n w_k = tr(G C^k) = λ̄ tr(C^k) − tr(C^{k+1})`, and for Hermitian `C`
/// `tr(C^{a+b}) = ⟨C^a, C^b⟩_F`, so moments up to order `k` need powers up to
/// `⌈(k+1)/2⌉`. No factorization is involved. Products run on split real and
/// imaginary parts.
#[derive(Debug, Clone)]
pub struct GramPowers {
    c: (DMatrix<f64>, DMatrix<f64>),
    powers: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ncols: usize,
    moments: SpectralMoments,
}

impl GramPowers {
    pub fn new<O: LinearOperator + ?Sized>(op: &O, lambda_bar: f64) -> Self {
        let gram = linalg::small_gram(&op.to_dense());
        let d = gram.nrows();
        let c = DMatrix::<C64>::identity(d, d) * C64::new(lambda_bar, 0.0) - gram;
        Self {
            c: linalg::split(&c),
            powers: vec![(DMatrix::identity(d, d), DMatrix::zeros(d, d))],
            ncols: op.cols(),
            moments: SpectralMoments {
                lambda_bar,
                w: Vec::new(),
            },
        }
    }

    fn trace_power(&self, j: usize) -> f64 {
        let (a, b) = (&self.powers[j / 2], &self.powers[j - j / 2]);
        a.0.dot(&b.0) + a.1.dot(&b.1)
    }

    /// Moments `w_0 ..= w_count`, extending the power table as needed.
    pub fn moments(&mut self, count: usize) -> &SpectralMoments {
        let have = self.moments.w.len();
        if have <= count {
            let half = (count + 1).div_ceil(2);
            let (cr, ci) = &self.c;
            while self.powers.len() <= half {
                let (pr, pi) = self.powers.last().unwrap();
                let next = (pr * cr - pi * ci, pr * ci + pi * cr);
                self.powers.push(next);
            }
            let lambda_bar = self.moments.lambda_bar;
            let n = self.ncols as f64;
            for k in have..=count {
                let w = (lambda_bar * self.trace_power(k) - self.trace_power(k + 1)) / n;
                self.moments.w.push(w);
            }
        }
        &self.moments
    }
}

#[derive(Debug, Clone)]
pub struct HutchinsonEstimate {
    pub moments: SpectralMoments,
    pub std_err: Vec<f64>,
}

impl HutchinsonEstimate {
    pub fn worst_relative_error(&self) -> f64 {
        let m = &self.moments;
        let w0 = m.w[0].abs().max(f64::MIN_POSITIVE);
        self.std_err
            .iter()
            .enumerate()
            .map(|(k, se)| se / (w0 * m.lambda_bar.powi(k as i32)))
            .fold(0.0, f64::max)
    }
}
