//! Linear operators for `Φ̃`: a dense matrix, a matrix-free ODDM operator
//! generated from the pilot frames, and small adapters (scaling, counting).
//!
//! Column `(n_t, d1, d2)` of the ODDM operator is the noiseless received frame
//! for a unit impulse at that grid index with zero steering phase:
//!
//! ```text
//! Φ[(m,n), (n_t,d1,d2)] = e^{j2π d2 (m-d1)/(MN)} X_{n_t}[m-d1, n'']                 m ≥ d1
//!                       = e^{j2π d2 (m-d1)/(MN)} e^{-j2π n''/N} X_{n_t}[m-d1+M, n''] m < d1
//! n'' = (n - d2) mod N
//! ```

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::modem::{FrameSet, ModelDims};
use crate::C64;

/// Default element budget for materializing `Φ̃` (2^26 complex entries).
pub const DEFAULT_DENSE_BUDGET: usize = 1 << 26;

/// A complex linear map `C^cols -> C^rows` with its adjoint.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `out = A x`.
    fn apply_into(&self, x: &[C64], out: &mut [C64]);
    /// `out = A^H y`.
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]);

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.rows()];
        self.apply_into(x, &mut out);
        out
    }

    fn adjoint(&self, y: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.cols()];
        self.adjoint_into(y, &mut out);
        out
    }

    /// Squared Frobenius norm. The default probes every column.
    fn frobenius_sqr(&self) -> f64 {
        let mut e = vec![C64::default(); self.cols()];
        let mut total = 0.0;
        for j in 0..self.cols() {
            e[j] = C64::new(1.0, 0.0);
            total += self.apply(&e).iter().map(|v| v.norm_sqr()).sum::<f64>();
            e[j] = C64::default();
        }
        total
    }

    /// Dense copy, column by column.
    fn to_dense(&self) -> DMatrix<C64> {
        let mut mat = DMatrix::zeros(self.rows(), self.cols());
        let mut e = vec![C64::default(); self.cols()];
        for j in 0..self.cols() {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply(&e);
            mat.column_mut(j).copy_from_slice(&col);
            e[j] = C64::default();
        }
        mat
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        (**self).apply_into(x, out)
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        (**self).adjoint_into(y, out)
    }
    fn frobenius_sqr(&self) -> f64 {
        (**self).frobenius_sqr()
    }
    fn to_dense(&self) -> DMatrix<C64> {
        (**self).to_dense()
    }
}

/// Materialized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub mat: DMatrix<C64>,
}

impl DenseOperator {
    pub fn new(mat: DMatrix<C64>) -> Self {
        Self { mat }
    }

    /// I.i.d. `CN(0, variance)` entries.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let s = (variance / 2.0).sqrt();
        let mat = DMatrix::from_fn(rows, cols, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * s, im * s)
        });
        Self { mat }
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.mat.nrows()
    }
    fn cols(&self) -> usize {
        self.mat.ncols()
    }

    fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::default());
        for (j, col) in self.mat.column_iter().enumerate() {
            let xj = x[j];
            if xj == C64::default() {
                continue;
            }
            for (o, a) in out.iter_mut().zip(col.iter()) {
                *o += a * xj;
            }
        }
    }

    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        for (o, col) in out.iter_mut().zip(self.mat.column_iter()) {
            *o = col.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
        }
    }

    fn frobenius_sqr(&self) -> f64 {
        self.mat.iter().map(|v| v.norm_sqr()).sum()
    }

    fn to_dense(&self) -> DMatrix<C64> {
        self.mat.clone()
    }
}

/// Matrix-free `Φ̃` built from pilot frames.
#[derive(Debug, Clone)]
pub struct OddmOperator {
    dims: ModelDims,
    frames: FrameSet,
    /// `e^{j2π q/(MN)}` for `q in [0, MN)`.
    doppler_twiddle: Vec<C64>,
    /// `e^{-j2π q/N}` for `q in [0, N)`.
    wrap_twiddle: Vec<C64>,
}

impl OddmOperator {
    pub fn new(frames: FrameSet, delay_bins: usize, max_doppler_index: usize) -> Result<Self> {
        if delay_bins == 0 || delay_bins > frames.m {
            return Err(Error::DimensionMismatch(format!(
                "delay bins {delay_bins} must lie in [1, M = {}]",
                frames.m
            )));
        }
        let dims = ModelDims {
            m: frames.m,
            n: frames.n,
            num_antennas: frames.num_antennas,
            delay_bins,
            max_doppler_index,
        };
        let mn = dims.rows();
        let doppler_twiddle = (0..mn)
            .map(|q| C64::from_polar(1.0, 2.0 * PI * q as f64 / mn as f64))
            .collect();
        let wrap_twiddle = (0..frames.n)
            .map(|q| C64::from_polar(1.0, -2.0 * PI * q as f64 / frames.n as f64))
            .collect();
        Ok(Self {
            dims,
            frames,
            doppler_twiddle,
            wrap_twiddle,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn frames(&self) -> &FrameSet {
        &self.frames
    }

    /// Calls `f(row, value)` for every entry of column `col`.
    #[inline]
    fn for_column(&self, col: usize, mut f: impl FnMut(usize, C64)) {
        let d = self.dims;
        let idx = d.grid_index(col);
        let (m_len, n_len) = (d.m, d.n);
        let mn = (m_len * n_len) as i64;
        let x = self.frames.antenna(idx.antenna);
        let d1 = idx.delay;
        let d2 = idx.doppler;
        let step = d2.rem_euclid(mn) as usize;
        let start = (-d2 * d1 as i64).rem_euclid(mn) as usize;
        let mn = mn as usize;
        for n in 0..n_len {
            let nn = (n as i64 - d2).rem_euclid(n_len as i64) as usize;
            let src = &x[nn * m_len..(nn + 1) * m_len];
            let base = n * m_len;
            // phase index d2·(m − d1) mod MN, advanced incrementally
            let mut q = start;
            let wrap = self.wrap_twiddle[nn];
            for m in 0..d1 {
                f(base + m, src[m + m_len - d1] * self.doppler_twiddle[q] * wrap);
                q += step;
                if q >= mn {
                    q -= mn;
                }
            }
            for m in d1..m_len {
                f(base + m, src[m - d1] * self.doppler_twiddle[q]);
                q += step;
                if q >= mn {
                    q -= mn;
                }
            }
        }
    }

    pub fn column(&self, col: usize) -> Vec<C64> {
        let mut out = vec![C64::default(); self.dims.rows()];
        self.for_column(col, |r, v| out[r] = v);
        out
    }

    /// Materializes `Φ̃`, refusing when it exceeds `budget` complex entries.
    pub fn materialize(&self, budget: usize) -> Result<DenseOperator> {
        let needed = self.dims.rows().saturating_mul(self.dims.cols());
        if needed > budget {
            return Err(Error::MemoryBudget { needed, budget });
        }
        let mut mat = DMatrix::zeros(self.dims.rows(), self.dims.cols());
        for j in 0..self.dims.cols() {
            let mut col = mat.column_mut(j);
            self.for_column(j, |r, v| col[r] = v);
        }
        Ok(DenseOperator { mat })
    }
}

impl LinearOperator for OddmOperator {
    fn rows(&self) -> usize {
        self.dims.rows()
    }
    fn cols(&self) -> usize {
        self.dims.cols()
    }

    fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::default());
        for (j, &xj) in x.iter().enumerate() {
            if xj == C64::default() {
                continue;
            }
            self.for_column(j, |r, v| out[r] += v * xj);
        }
    }

    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = C64::default();
            self.for_column(j, |r, v| acc += v.conj() * y[r]);
            *o = acc;
        }
    }

    fn frobenius_sqr(&self) -> f64 {
        let per_antenna: Vec<f64> = (0..self.dims.num_antennas)
            .map(|a| self.frames.antenna(a).iter().map(|s| s.norm_sqr()).sum())
            .collect();
        // each column permutes one antenna frame up to unit-modulus phases
        per_antenna.iter().sum::<f64>() * self.dims.block_len() as f64
    }
}

/// `A / s`.
#[derive(Debug, Clone)]
pub struct Scaled<O> {
    pub inner: O,
    pub scale: f64,
}

impl<O: LinearOperator> LinearOperator for Scaled<O> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        self.inner.apply_into(x, out);
        let inv = 1.0 / self.scale;
        out.iter_mut().for_each(|v| *v *= inv);
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        self.inner.adjoint_into(y, out);
        let inv = 1.0 / self.scale;
        out.iter_mut().for_each(|v| *v *= inv);
    }
    fn frobenius_sqr(&self) -> f64 {
        self.inner.frobenius_sqr() / (self.scale * self.scale)
    }
    fn to_dense(&self) -> DMatrix<C64> {
        self.inner.to_dense() / C64::new(self.scale, 0.0)
    }
}

/// Wraps an operator and counts forward and adjoint applications.
#[derive(Debug)]
pub struct Counting<O> {
    pub inner: O,
    applies: AtomicU64,
    adjoints: AtomicU64,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            applies: AtomicU64::new(0),
            adjoints: AtomicU64::new(0),
        }
    }

    pub fn applies(&self) -> u64 {
        self.applies.load(Ordering::Relaxed)
    }

    pub fn adjoints(&self) -> u64 {
        self.adjoints.load(Ordering::Relaxed)
    }
}

impl<O: LinearOperator> LinearOperator for Counting<O> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        self.applies.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(x, out)
    }
    fn adjoint_into(&self, y: &[C64], out: &mut [C64]) {
        self.adjoints.fetch_add(1, Ordering::Relaxed);
        self.inner.adjoint_into(y, out)
    }
    fn frobenius_sqr(&self) -> f64 {
        self.inner.frobenius_sqr()
    }
}

/// Largest eigenvalue of `A A^H` by power iteration on `A^H A`.
///
/// Stops after `max_steps` or when the Rayleigh quotient changes by less than
/// `rel_tol` relative.
pub fn power_iteration<O: LinearOperator + ?Sized>(op: &O, max_steps: usize, rel_tol: f64) -> f64 {
    let n = op.cols();
    if n == 0 || op.rows() == 0 {
        return 0.0;
    }
    // deterministic start with energy in every coordinate
    let mut v: Vec<C64> = (0..n)
        .map(|j| C64::from_polar(1.0, 0.7 * j as f64 + 0.3 * (j * j) as f64))
        .collect();
    let norm = (v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..max_steps {
        let av = op.apply(&v);
        let w = op.adjoint(&av);
        let next: f64 = av.iter().map(|x| x.norm_sqr()).sum();
        let wn = (w.iter().map(|x| x.norm_sqr()).sum::<f64>()).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / wn).collect();
        let done = lambda > 0.0 && ((next - lambda) / next).abs() < rel_tol;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}
