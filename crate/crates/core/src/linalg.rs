//! Dense linear algebra used by the reference estimators and the spectral
//! setup, with per-thread operation counters.
//!
//! Every routine here that factorizes or inverts a matrix bumps a counter, so
//! callers can assert that a code path stays factorization-free.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::C64;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
    static INVERSIONS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the dense-operation counters of the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DenseOpCounts {
    pub factorizations: u64,
    pub inversions: u64,
}

impl DenseOpCounts {
    pub fn current() -> Self {
        Self {
            factorizations: FACTORIZATIONS.with(Cell::get),
            inversions: INVERSIONS.with(Cell::get),
        }
    }

    /// Operations performed since `earlier`.
    pub fn since(earlier: Self) -> Self {
        let now = Self::current();
        Self {
            factorizations: now.factorizations - earlier.factorizations,
            inversions: now.inversions - earlier.inversions,
        }
    }
}

fn bump_factorization() {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
}

fn bump_inversion() {
    INVERSIONS.with(|c| c.set(c.get() + 1));
}

/// Solves `A x = b` for Hermitian positive-definite `A` (Cholesky), falling
/// back to LU when the Cholesky factorization fails. `None` if singular.
pub fn hermitian_solve(a: &DMatrix<C64>, b: &DVector<C64>) -> Option<DVector<C64>> {
    bump_factorization();
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    bump_factorization();
    a.clone().lu().solve(b)
}

/// Solves `A X = B` column by column with a single factorization.
pub fn hermitian_solve_many(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    bump_factorization();
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    bump_factorization();
    a.clone().lu().solve(b)
}

/// Explicit inverse; only used by tests and oracles.
pub fn inverse(a: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    bump_inversion();
    a.clone().try_inverse()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &DMatrix<C64>) -> Vec<f64> {
    bump_factorization();
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Real and imaginary parts as separate real matrices.
pub fn split(a: &DMatrix<C64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|v| v.re), a.map(|v| v.im))
}

pub fn join(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<C64> {
    re.zip_map(im, C64::new)
}

/// `A B` through four real products, which take the blocked real kernel
/// instead of the generic complex loop.
pub fn matmul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    join(&(&ar * &br - &ai * &bi), &(&ar * &bi + &ai * &br))
}

/// `A^H B`, same route as [`matmul`].
pub fn ad_matmul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    join(&(ar.tr_mul(&br) + ai.tr_mul(&bi)), &(ar.tr_mul(&bi) - ai.tr_mul(&br)))
}

/// `A^H A` when `A` is tall, else `A A^H`: the smaller Gram matrix, which
/// carries all non-zero eigenvalues of both.
pub fn small_gram(a: &DMatrix<C64>) -> DMatrix<C64> {
    if a.nrows() >= a.ncols() {
        ad_matmul(a, a)
    } else {
        let ah = a.adjoint();
        ad_matmul(&ah, &ah)
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    // conjugate-linear in the first argument
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn to_dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}
