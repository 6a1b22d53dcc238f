//! Departure-angle estimation from a spatial snapshot.
//!
//! The snapshot is taken to the beam domain with a normalized DFT, the
//! strongest peaks are picked with a one-bin guard, and each peak is refined
//! by a phase rotation `diag(e^{-jnΔ})` that recovers the off-grid part of
//! the spatial frequency. The refined frequency maps to an angle through the
//! arcsine of the ULA relation `α = (d/λ) sin θ`.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::C64;

/// Uniform grid points before the golden-section search.
pub const DEFAULT_GRID: usize = 64;
/// Final bracket width of the golden-section search.
pub const GOLDEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    /// Zero-based DFT bin of the peak.
    pub bin: usize,
    /// Rotation `Δ` in `[-π/N_t, π/N_t]`.
    pub rotation: f64,
    /// Spatial frequency `(bin + N_t Δ / 2π) / N_t`, folded to the branch
    /// used for the angle.
    pub alpha: f64,
    /// Radians.
    pub angle: f64,
    /// Rotated-bin power at `rotation`.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSearch {
    pub bins: Vec<usize>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    pub estimates: Vec<AngleEstimate>,
    pub diagnostics: Vec<String>,
}

/// `|U^H y|²` with `[U]_{n,k} = e^{j2πnk/N}/√N`; total power equals `‖y‖²`.
pub fn dft_spectrum(snapshot: &[C64]) -> Vec<f64> {
    let n = snapshot.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = snapshot.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|v| v.norm_sqr() / n as f64).collect()
}

fn circular_gap(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Maxima weaker than this fraction of the total power are rounding noise.
pub const PEAK_FLOOR: f64 = 1e-12;

/// The `count` strongest local maxima of a circular spectrum, no two closer
/// than two bins. Returns fewer bins with a diagnostic when the spectrum has
/// too few separated maxima.
pub fn find_peaks(power: &[f64], count: usize) -> Result<PeakSearch> {
    let n = power.len();
    if count == 0 || 2 * count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {count} peaks from {n} bins (need 1 <= P <= N_t/2)"
        )));
    }
    let mut maxima: Vec<usize> = if n < 3 {
        (0..n).collect()
    } else {
        (0..n)
            .filter(|&i| {
                let prev = power[(i + n - 1) % n];
                let next = power[(i + 1) % n];
                power[i] > prev && power[i] >= next
            })
            .collect()
    };
    let floor = PEAK_FLOOR * power.iter().sum::<f64>();
    maxima.retain(|&i| power[i] > floor);
    maxima.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    let mut bins: Vec<usize> = Vec::with_capacity(count);
    for i in maxima {
        if bins.len() == count {
            break;
        }
        if bins.iter().all(|&b| circular_gap(b, i, n) > 1) {
            bins.push(i);
        }
    }
    let diagnostic = (bins.len() < count).then(|| {
        format!(
            "found {} separated peaks, {count} requested; paths sharing a beam are merged",
            bins.len()
        )
    });
    Ok(PeakSearch { bins, diagnostic })
}

fn bin_sum(snapshot: &[C64], bin: usize, delta: f64) -> (C64, C64) {
    let n = snapshot.len();
    let mut s = C64::default();
    let mut ds = C64::default();
    for (i, y) in snapshot.iter().enumerate() {
        let phase = -2.0 * PI * ((i * bin) % n) as f64 / n as f64 - i as f64 * delta;
        let term = y * C64::from_polar(1.0, phase);
        s += term;
        ds += term * C64::new(0.0, -(i as f64));
    }
    let norm = (n as f64).sqrt();
    (s / norm, ds / norm)
}

/// `|U_{:,bin}^H diag(e^{-jnΔ}) y|²`.
pub fn rotated_power(snapshot: &[C64], bin: usize, delta: f64) -> f64 {
    bin_sum(snapshot, bin, delta).0.norm_sqr()
}

fn power_slope(snapshot: &[C64], bin: usize, delta: f64) -> f64 {
    let (s, ds) = bin_sum(snapshot, bin, delta);
    2.0 * (s.conj() * ds).re
}

/// Rotation maximizing the power of `bin`: a uniform grid of `grid_size`
/// points on `[-π/N_t, π/N_t]`, golden-section search around the best point,
/// then bisection on the derivative to reach full precision. Never returns a
/// rotation whose power is below that of `Δ = 0`.
pub fn refine_rotation(snapshot: &[C64], bin: usize, grid_size: usize) -> Result<f64> {
    let n = snapshot.len();
    if grid_size < 3 {
        return Err(Error::InvalidArgument("rotation grid needs at least 3 points".into()));
    }
    if bin >= n {
        return Err(Error::OutOfBounds(format!("bin {bin} >= {n}")));
    }
    let half = PI / n as f64;
    let step = 2.0 * half / (grid_size - 1) as f64;
    let f = |d: f64| rotated_power(snapshot, bin, d);
    let best = (0..grid_size)
        .map(|i| -half + i as f64 * step)
        .map(|d| (d, f(d)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(d, _)| d)
        .unwrap_or(0.0);

    let (mut a, mut b) = ((best - step).max(-half), (best + step).min(half));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    // the power is flat to first order at the peak, so finish on its slope
    let (mut lo, mut hi) = ((a - GOLDEN_TOL).max(-half), (b + GOLDEN_TOL).min(half));
    let mut delta = (a + b) / 2.0;
    let (slo, shi) = (power_slope(snapshot, bin, lo), power_slope(snapshot, bin, hi));
    if slo > 0.0 && shi < 0.0 {
        for _ in 0..60 {
            let mid = (lo + hi) / 2.0;
            if power_slope(snapshot, bin, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        delta = (lo + hi) / 2.0;
    }
    if f(delta) < f(0.0) {
        delta = 0.0;
    }
    Ok(delta)
}

/// Maps a refined peak to an angle. Frequencies at or above `spacing` belong
/// to negative angles and are folded by one period; an arcsine argument
/// outside `[-1, 1]` (reachable only through noise or `spacing < 1/2`) is
/// clamped with a diagnostic.
pub fn bin_to_angle(
    bin: usize,
    rotation: f64,
    num_antennas: usize,
    spacing: f64,
) -> Result<(f64, f64, Option<String>)> {
    if !(spacing > 0.0 && spacing <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "antenna spacing {spacing} outside (0, 1/2]"
        )));
    }
    let n = num_antennas as f64;
    let mut alpha = (bin as f64 + n * rotation / (2.0 * PI)) / n;
    if alpha >= spacing {
        alpha -= 1.0;
    }
    let arg = alpha / spacing;
    if arg.abs() > 1.0 {
        let note = format!("bin {bin}: arcsine argument {arg:.4} clamped");
        return Ok((alpha, arg.clamp(-1.0, 1.0).asin(), Some(note)));
    }
    Ok((alpha, arg.asin(), None))
}

/// [`bin_to_angle`] for a list of `(bin, rotation)` pairs.
pub fn bins_to_angles(peaks: &[(usize, f64)], num_antennas: usize, spacing: f64) -> Result<(Vec<f64>, Vec<String>)> {
    let mut angles = Vec::with_capacity(peaks.len());
    let mut notes = Vec::new();
    for &(bin, rot) in peaks {
        let (_, theta, note) = bin_to_angle(bin, rot, num_antennas, spacing)?;
        angles.push(theta);
        notes.extend(note);
    }
    Ok((angles, notes))
}

/// Full pipeline: spectrum, peaks, rotation refinement and angle mapping.
pub fn estimate_angles(snapshot: &[C64], num_paths: usize, spacing: f64, grid_size: usize) -> Result<AngleReport> {
    let n = snapshot.len();
    let power = dft_spectrum(snapshot);
    let peaks = find_peaks(&power, num_paths)?;
    let mut diagnostics: Vec<String> = peaks.diagnostic.into_iter().collect();
    let mut estimates = Vec::with_capacity(peaks.bins.len());
    for bin in peaks.bins {
        let rotation = refine_rotation(snapshot, bin, grid_size)?;
        let (alpha, angle, note) = bin_to_angle(bin, rotation, n, spacing)?;
        diagnostics.extend(note);
        estimates.push(AngleEstimate {
            bin,
            rotation,
            alpha,
            angle,
            power: rotated_power(snapshot, bin, rotation),
        });
    }
    Ok(AngleReport { estimates, diagnostics })
}
