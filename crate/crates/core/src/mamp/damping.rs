//! Optimal damping over a window of estimates with a known error covariance.

/// Weights `ς = V⁻¹1 / (1ᵀV⁻¹1)` and the damped variance `1 / (1ᵀV⁻¹1)`.
///
/// `v` is a symmetric `ℓ×ℓ` matrix in row-major order. `None` when `V` is not
/// numerically positive definite; the caller then keeps its previous estimate.
pub fn optimal_damping(v: &[f64], len: usize) -> Option<(Vec<f64>, f64)> {
    assert_eq!(v.len(), len * len);
    let max_diag = (0..len).map(|i| v[i * len + i]).fold(0.0, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    // in-place Cholesky, lower triangle
    let mut l = vec![0.0; len * len];
    for i in 0..len {
        for j in 0..=i {
            let mut s = v[i * len + j];
            for k in 0..j {
                s -= l[i * len + k] * l[j * len + k];
            }
            if i == j {
                if s <= 1e-12 * max_diag {
                    return None;
                }
                l[i * len + i] = s.sqrt();
            } else {
                l[i * len + j] = s / l[j * len + j];
            }
        }
    }
    // solve L Lᵀ x = 1
    let mut x = vec![1.0; len];
    for i in 0..len {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * len + k] * x[k];
        }
        x[i] = s / l[i * len + i];
    }
    for i in (0..len).rev() {
        let mut s = x[i];
        for k in i + 1..len {
            s -= l[k * len + i] * x[k];
        }
        x[i] = s / l[i * len + i];
    }
    let total: f64 = x.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some((x.iter().map(|xi| xi / total).collect(), 1.0 / total))
}
