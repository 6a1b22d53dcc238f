//! Reference estimators: orthogonal matching pursuit, the LMMSE estimator
//! with a Gaussian prior, and a support-genie LMMSE. Also a frame-level
//! LMMSE data detector for checking estimated channels end to end.

use nalgebra::{DMatrix, DVector};

use crate::channel::DdGrid;
use crate::error::{Error, Result};
use crate::linalg;
use crate::modem::{apply_channel_noiseless, Constellation, FrameSet};
use crate::C64;

#[derive(Debug, Clone)]
pub struct OmpResult {
    pub estimate: Vec<C64>,
    pub support: Vec<usize>,
    /// `‖r‖²` after each selection, starting with `‖y‖²`.
    pub residual_norms: Vec<f64>,
}

/// Orthogonal matching pursuit: greedily add the column best correlated with
/// the residual (after column normalization), re-fit by least squares on the
/// support, stop at `sparsity` atoms or when `‖r‖² ≤ tol`.
pub fn omp_estimate(phi: &DMatrix<C64>, y: &[C64], sparsity: usize, tol: f64) -> Result<OmpResult> {
    if y.len() != phi.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, matrix has {} rows",
            y.len(),
            phi.nrows()
        )));
    }
    let cols = phi.ncols();
    let y = linalg::to_dvector(y);
    let norms: Vec<f64> = (0..cols).map(|j| phi.column(j).norm()).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut coef = DVector::<C64>::zeros(0);
    let mut r = y.clone();
    let mut residual_norms = vec![r.norm_squared()];
    let limit = sparsity.min(cols).min(phi.nrows());
    while support.len() < limit && r.norm_squared() > tol {
        let corr = phi.ad_mul(&r);
        let best = (0..cols)
            .filter(|j| norms[*j] > 0.0 && !support.contains(j))
            .map(|j| (j, corr[j].norm() / norms[j]))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = best else { break };
        support.push(j);
        let sub = phi.select_columns(&support);
        let gram = sub.ad_mul(&sub);
        let rhs = sub.ad_mul(&y);
        let Some(c) = linalg::hermitian_solve(&gram, &rhs) else {
            support.pop();
            break;
        };
        let new_r = &y - &sub * &c;
        if new_r.norm_squared() > r.norm_squared() * (1.0 + 1e-12) {
            // numerically dependent column; stop rather than grow the residual
            support.pop();
            break;
        }
        coef = c;
        r = new_r;
        residual_norms.push(r.norm_squared());
    }
    let mut estimate = vec![C64::default(); cols];
    for (k, &j) in support.iter().enumerate() {
        estimate[j] = coef[k];
    }
    Ok(OmpResult {
        estimate,
        support,
        residual_norms,
    })
}

/// `v_g Φ^H (v_g Φ Φ^H + δ² I)^{-1} y`, evaluated through whichever Gram
/// matrix is smaller. A singular system falls back to a small Tikhonov term.
pub fn lmmse_oracle(phi: &DMatrix<C64>, y: &[C64], prior_var: f64, noise_var: f64) -> Result<Vec<C64>> {
    if y.len() != phi.nrows() {
        return Err(Error::DimensionMismatch("y length".into()));
    }
    if !(prior_var > 0.0) || !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument("lmmse needs v_g > 0 and noise >= 0".into()));
    }
    let y = linalg::to_dvector(y);
    let ratio = noise_var / prior_var;
    let solve = |gram: DMatrix<C64>, rhs: DVector<C64>| -> Option<DVector<C64>> {
        let n = gram.nrows();
        linalg::hermitian_solve(&(gram.clone() + DMatrix::identity(n, n) * C64::new(ratio, 0.0)), &rhs)
            .filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
            .or_else(|| {
                let scale = gram.diagonal().iter().map(|d| d.re).fold(0.0, f64::max).max(1.0);
                let eps = ratio.max(1e-10 * scale);
                linalg::hermitian_solve(&(gram + DMatrix::identity(n, n) * C64::new(eps, 0.0)), &rhs)
            })
    };
    let x = if phi.nrows() <= phi.ncols() {
        let u = solve(phi * phi.adjoint(), y).ok_or_else(|| Error::InvalidArgument("singular lmmse system".into()))?;
        phi.ad_mul(&u)
    } else {
        solve(phi.ad_mul(phi), phi.ad_mul(&y)).ok_or_else(|| Error::InvalidArgument("singular lmmse system".into()))?
    };
    Ok(x.iter().copied().collect())
}

/// LMMSE restricted to a known support; zero elsewhere.
pub fn genie_support_lmmse(
    phi: &DMatrix<C64>,
    y: &[C64],
    support: &[usize],
    prior_var: f64,
    noise_var: f64,
) -> Result<Vec<C64>> {
    if let Some(&bad) = support.iter().find(|&&j| j >= phi.ncols()) {
        return Err(Error::OutOfBounds(format!("support index {bad} >= {}", phi.ncols())));
    }
    let mut out = vec![C64::default(); phi.ncols()];
    if support.is_empty() {
        return Ok(out);
    }
    let sub = phi.select_columns(support);
    let x = lmmse_oracle(&sub, y, prior_var, noise_var)?;
    for (k, &j) in support.iter().enumerate() {
        out[j] = x[k];
    }
    Ok(out)
}

/// Detects a single-antenna `m × n` data frame sent through `grid`: builds
/// the dense frame channel, applies LMMSE with unit symbol energy and slices
/// to the nearest constellation point. Dense in `MN`, so desk scale only.
pub fn lmmse_detect(
    grid: &DdGrid,
    m: usize,
    n: usize,
    y: &[C64],
    noise_var: f64,
    constellation: Constellation,
) -> Result<Vec<C64>> {
    let mn = m * n;
    if y.len() != mn {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, frame has {mn}",
            y.len()
        )));
    }
    let mut h = DMatrix::<C64>::zeros(mn, mn);
    let mut unit = vec![C64::default(); mn];
    for j in 0..mn {
        unit[j] = C64::new(1.0, 0.0);
        let col = apply_channel_noiseless(&FrameSet::from_symbols(1, m, n, unit.clone())?, grid)?;
        h.set_column(j, &linalg::to_dvector(&col));
        unit[j] = C64::default();
    }
    let soft = lmmse_oracle(&h, y, 1.0, noise_var.max(1e-12))?;
    let points = constellation.points();
    Ok(soft
        .iter()
        .map(|s| {
            *points
                .iter()
                .min_by(|a, b| (*a - s).norm_sqr().total_cmp(&(*b - s).norm_sqr()))
                .expect("constellation is non-empty")
        })
        .collect())
}

/// Fraction of symbols that differ.
pub fn symbol_error_rate(detected: &[C64], sent: &[C64]) -> f64 {
    let wrong = detected
        .iter()
        .zip(sent)
        .filter(|(a, b)| (*a - *b).norm() > 1e-9)
        .count();
    wrong as f64 / sent.len().max(1) as f64
}
