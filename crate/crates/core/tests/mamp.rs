use nalgebra::DMatrix;
use oddm_chanest::linalg;
use oddm_chanest::mamp::{
    bg_posterior, mamp_estimate, operator_scale, optimal_damping, BgPrior, Covariances, LongMemoryLle, MampConfig,
    XiRule,
};
use oddm_chanest::modem::{add_noise, nmse, noise_var_for_snr, Constellation, FrameSet};
use oddm_chanest::operator::{DenseOperator, LinearOperator, OddmOperator};
use oddm_chanest::spectral::SpectralMoments;
use oddm_chanest::C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cn_vec(rng: &mut ChaCha8Rng, n: usize, var: f64) -> Vec<C64> {
    let s = (var / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * s, im * s)
        })
        .collect()
}

fn to_vec(v: &nalgebra::DVector<C64>) -> Vec<C64> {
    v.iter().copied().collect()
}

#[test]
fn zero_channel_without_noise_gives_zero_at_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = FrameSet::random(2, 16, 8, Constellation::Qpsk, &mut rng);
    let op = OddmOperator::new(frames, 3, 1).unwrap();
    let y = vec![C64::default(); op.rows()];
    let cfg = MampConfig {
        max_iterations: 1,
        ..MampConfig::default()
    };
    let r = mamp_estimate(&op, &y, 0.0, &BgPrior::new(0.1, 0.0, 1.0), &cfg, None).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(r.estimate.iter().all(|v| v.norm() == 0.0));
}

/// The recursive step against `μ_t = Σ_i η_i (A^H B^{t−i} r_i + w_{t−i} x_i)`
/// with every power of `B` and every moment formed densely.
#[test]
fn recursion_matches_memory_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rows, cols) = (16, 24);
    let a = DenseOperator::gaussian(rows, cols, 1.0 / rows as f64, &mut rng);
    let lambda_bar = 1.3;
    let y = cn_vec(&mut rng, rows, 1.0);
    let b = DMatrix::<C64>::identity(rows, rows) * C64::new(lambda_bar, 0.0) - &a.mat * a.mat.adjoint();
    let mut b_pow = vec![DMatrix::<C64>::identity(rows, rows)];
    for k in 1..12 {
        b_pow.push(&b_pow[k - 1] * &b);
    }
    let w: Vec<f64> = b_pow
        .iter()
        .map(|bk| (a.mat.adjoint() * bk * &a.mat).trace().re / cols as f64)
        .collect();

    let moments = SpectralMoments::exact(&a, lambda_bar, 11);
    for (k, wk) in w.iter().enumerate() {
        assert!((moments.w[k] - wk).abs() < 1e-10 * wk.abs().max(1e-3), "w_{k}");
    }
    let mut le = LongMemoryLle::new(moments, rows, cols);
    let mut xs: Vec<Vec<C64>> = Vec::new();
    let mut res: Vec<Vec<C64>> = Vec::new();
    let mut cov = Covariances::new();
    for t in 0..5 {
        let x = cn_vec(&mut rng, cols, 0.5);
        res.push(y.iter().zip(a.apply(&x)).map(|(yi, ai)| yi - ai).collect());
        xs.push(x);
        cov.push((0..=t).map(|j| if j == t { 0.8 } else { 0.1 }).collect());
        let out = le.step(&a, &res[t], &xs, &cov, 0.05, XiRule::Optimal).unwrap();

        let eta = le.etas();
        let mut mu = nalgebra::DVector::<C64>::zeros(cols);
        for i in 0..=t {
            let ri = nalgebra::DVector::from_vec(res[i].clone());
            let xi = nalgebra::DVector::from_vec(xs[i].clone());
            mu += (a.mat.adjoint() * &b_pow[t - i] * ri + xi * C64::new(w[t - i], 0.0)) * C64::new(eta[i], 0.0);
        }
        let err = nmse(&out.mu, &to_vec(&mu)).unwrap().sqrt();
        assert!(err < 1e-10, "t = {}: {err:e}", t + 1);
    }
}

#[test]
fn theta_radius_stays_below_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nt = 4;
    let frames = FrameSet::random(nt, 32, 16, Constellation::Qpsk, &mut rng);
    let op = OddmOperator::new(frames, 5, 2).unwrap();
    let mut h = vec![C64::default(); op.cols()];
    for _ in 0..4 * nt {
        h[rng.random_range(0..op.cols())] = cn_vec(&mut rng, 1, 0.25)[0];
    }
    let mut y = op.apply(&h);
    let nv = noise_var_for_snr(&y, 15.0);
    add_noise(&mut y, nv, &mut rng);
    let cfg = MampConfig::default();
    let r = mamp_estimate(&op, &y, nv, &BgPrior::new(0.16, 0.0, 0.25), &cfg, Some(&h)).unwrap();

    let s = operator_scale(&op, &cfg).unwrap();
    let dense = op.materialize(1 << 26).unwrap().mat / C64::new(s, 0.0);
    let eigs = linalg::hermitian_eigenvalues(&linalg::small_gram(&dense));
    // B = I − A A^H also has eigenvalue 1 on the null space of A^H
    let spread = eigs.iter().map(|l| (1.0 - l).abs()).fold(1.0, f64::max);
    for row in &r.trace {
        assert!(
            row.theta * spread < 1.0,
            "iteration {}: {}",
            row.iteration,
            row.theta * spread
        );
    }
}

#[test]
fn gaussian_limit_example() {
    let p = bg_posterior(2.0, 1.0, 0.0, 1.0, 1.0);
    assert!((p.mean - 1.0).abs() < 1e-15);
    assert!((p.variance - 0.5).abs() < 1e-15);
    let p = bg_posterior(2.0, 1e-300, 0.0, 1.0, 1.0);
    assert!(p.mean.abs() < 1e-200);
}

/// The variance can exceed `max(v_g, δ²)`: a tiny activity prior and a large
/// observation leave the posterior split evenly between zero and `û`.
#[test]
fn posterior_variance_can_exceed_prior_and_noise() {
    let (v_g, s2) = (1.0, 1.0);
    // likelihood ratio N(6; 0, 2) / N(6; 0, 1) = e^9 / √2
    let p = bg_posterior(6.0, 2f64.sqrt() * (-9.0f64).exp(), 0.0, v_g, s2);
    assert!(p.activity > 0.2 && p.activity < 0.8, "{}", p.activity);
    assert!(p.variance > v_g.max(s2), "{}", p.variance);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn posterior_is_well_formed(
        y in -50.0f64..50.0,
        p in 0.0f64..=1.0,
        u in -3.0f64..3.0,
        v in 1e-3f64..10.0,
        s2 in 1e-3f64..10.0,
    ) {
        let post = bg_posterior(y, p, u, v, s2);
        prop_assert!((0.0..=1.0).contains(&post.activity));
        prop_assert!(post.mean.is_finite() && post.variance >= 0.0);
        // two-point mixture of δ_0 and N(û, v̂): at most v̂ + û²/4
        let v_hat = 1.0 / (1.0 / v + 1.0 / s2);
        let u_hat = v_hat * (u / v + y / s2);
        prop_assert!(post.variance <= v_hat + u_hat * u_hat / 4.0 + 1e-12 * (1.0 + u_hat * u_hat));
    }

    #[test]
    fn damping_never_loses_to_newest_entry(seed in 0u64..10_000, len in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..len * (len + 2)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = DMatrix::from_row_slice(len, len + 2, &f);
        let v = &f * f.transpose();
        let flat: Vec<f64> = v.transpose().iter().copied().collect();
        if let Some((weights, nu)) = optimal_damping(&flat, len) {
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(nu <= v[(len - 1, len - 1)] * (1.0 + 1e-9));
            for i in 0..len {
                prop_assert!(nu <= v[(i, i)] * (1.0 + 1e-9));
            }
        }
    }
}

/// First-step linear error `g = μ_1 − h` is less correlated with `h` on the
/// larger system.
#[test]
fn linear_error_decorrelates_with_size() {
    let corr = |m: usize, l: usize| {
        let mut total = 0.0;
        let trials = 100;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let frames = FrameSet::random(2, m, 16, Constellation::Qpsk, &mut rng);
            let op = OddmOperator::new(frames, l, 1).unwrap();
            let h = cn_vec(&mut rng, op.cols(), 1.0);
            let mut y = op.apply(&h);
            let nv = noise_var_for_snr(&y, 10.0);
            add_noise(&mut y, nv, &mut rng);
            let s = operator_scale(&op, &MampConfig::default()).unwrap();
            let a = DenseOperator::new(op.materialize(1 << 26).unwrap().mat / C64::new(s, 0.0));
            let ys: Vec<C64> = y.iter().map(|v| v / s).collect();
            let moments = SpectralMoments::exact(&a, 1.0, 1);
            let mut le = LongMemoryLle::new(moments, a.rows(), a.cols());
            let mut cov = Covariances::new();
            cov.push(vec![1.0]);
            let x1 = vec![C64::default(); a.cols()];
            let out = le.step(&a, &ys, &[x1], &cov, nv / (s * s), XiRule::Optimal).unwrap();
            let g: Vec<C64> = out.mu.iter().zip(&h).map(|(m, t)| m - t).collect();
            let dot: C64 = h.iter().zip(&g).map(|(a, b)| a.conj() * b).sum();
            total += dot.norm() / (linalg::norm_sqr(&h) * linalg::norm_sqr(&g)).sqrt();
        }
        total / trials as f64
    };
    let small = corr(32, 4);
    let large = corr(64, 8);
    assert!(large < small, "{large} vs {small}");
}
