//! Sampled-waveform reference for the discrete ODDM relation.
//!
//! The frame is synthesized as a continuous-time ODDM signal on a fine
//! sampling grid, passed through the delay-Doppler channel and demodulated by
//! the matched filter, all from scratch. The transmit signal is treated as
//! periodic in `NT`, which is the assumption behind the cyclic wrap term of
//! the discrete model. Only small frames are accepted.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::channel::{DdGrid, PathParams};
use crate::error::{Error, Result};
use crate::modem::{apply_channel_noiseless, FrameSet};
use crate::C64;

pub const MAX_M: usize = 64;
pub const MAX_N: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformConfig {
    /// Samples per delay resolution `T/M`.
    pub oversampling: usize,
    /// Pulse half-length in units of `T/M`.
    pub q: usize,
    /// Roll-off of the square-root raised cosine pulse.
    pub rolloff: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            oversampling: 8,
            q: 20,
            rolloff: 0.5,
        }
    }
}

/// Square-root raised cosine with unit symbol period, `t` in symbols.
pub fn srrc(t: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
    }
    if t == 0.0 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let edge = 1.0 / (4.0 * beta);
    if ((t.abs() - edge) / edge).abs() < 1e-9 {
        let s = (PI / (4.0 * beta)).sin();
        let c = (PI / (4.0 * beta)).cos();
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * s + (1.0 - 2.0 / PI) * c);
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    num / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
}

/// Samples of the pulse train over one period of `M·N·os` samples, with
/// `∫|a|² = 1/N` and the pulse copies spaced `T` apart folded onto the period.
fn periodic_train(m: usize, n: usize, cfg: &WaveformConfig) -> Vec<f64> {
    let os = cfg.oversampling as i64;
    let half = cfg.q as i64 * os;
    let ts = 1.0 / cfg.oversampling as f64;
    let pulse: Vec<f64> = (-half..=half).map(|k| srrc(k as f64 * ts, cfg.rolloff)).collect();
    let energy: f64 = pulse.iter().map(|v| v * v).sum::<f64>() * ts;
    let scale = (1.0 / (n as f64 * energy)).sqrt();
    let period = (m * n) as i64 * os;
    let block = m as i64 * os;
    let mut g = vec![0.0; period as usize];
    for copy in 0..n as i64 {
        for (i, v) in pulse.iter().enumerate() {
            let k = copy * block + i as i64 - half;
            g[k.rem_euclid(period) as usize] += v * scale;
        }
    }
    g
}

fn check(m: usize, n: usize, cfg: &WaveformConfig) -> Result<()> {
    if m > MAX_M || n > MAX_N {
        return Err(Error::InvalidArgument(format!(
            "waveform reference is limited to M <= {MAX_M}, N <= {MAX_N}; got {m} x {n}"
        )));
    }
    if cfg.oversampling < 4 {
        return Err(Error::InvalidArgument("oversampling must be at least 4".into()));
    }
    if !(0.0..=1.0).contains(&cfg.rolloff) {
        return Err(Error::InvalidArgument("rolloff must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Modulate, propagate and demodulate one antenna's frame. Output is
/// vectorized with index `n·M + m`.
pub fn waveform_oracle(frames: &FrameSet, paths: &[PathParams], cfg: &WaveformConfig) -> Result<Vec<C64>> {
    let chain = Chain::new(frames, paths, cfg)?;
    Ok(chain.run(frames.antenna(0), paths))
}

struct Chain {
    m: usize,
    n: usize,
    os: usize,
    g: Vec<f64>,
    /// `e^{j2πk/P}` over one period.
    twiddle: Vec<C64>,
}

impl Chain {
    fn new(frames: &FrameSet, paths: &[PathParams], cfg: &WaveformConfig) -> Result<Self> {
        let (m, n) = (frames.m, frames.n);
        if frames.num_antennas != 1 {
            return Err(Error::InvalidArgument(
                "waveform reference takes a single antenna".into(),
            ));
        }
        check(m, n, cfg)?;
        for p in paths {
            if p.delay_index >= m {
                return Err(Error::OutOfBounds(format!("delay index {} >= M", p.delay_index)));
            }
        }
        let period = m * n * cfg.oversampling;
        Ok(Self {
            m,
            n,
            os: cfg.oversampling,
            g: periodic_train(m, n, cfg),
            twiddle: (0..period)
                .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / period as f64))
                .collect(),
        })
    }

    fn carrier(&self, k: i64) -> C64 {
        self.twiddle[k.rem_euclid(self.twiddle.len() as i64) as usize]
    }

    fn run(&self, symbols: &[C64], paths: &[PathParams]) -> Vec<C64> {
        let (m_len, n_len, os) = (self.m, self.n, self.os);
        let period = self.twiddle.len() as i64;

        // x(t) = Σ X[m,n] g(t − mT/M) e^{j2π n (t − mT/M)/NT}
        let mut x = vec![C64::default(); period as usize];
        for m in 0..m_len {
            for n in 0..n_len {
                let s = symbols[n * m_len + m];
                if s == C64::default() {
                    continue;
                }
                for (k, xk) in x.iter_mut().enumerate() {
                    let u = (k as i64 - (m * os) as i64).rem_euclid(period);
                    let gv = self.g[u as usize];
                    if gv != 0.0 {
                        *xk += s * gv * self.carrier(n as i64 * u);
                    }
                }
            }
        }

        // y(t) = Σ h_p x(t − τ_p) e^{j2π ν_p (t − τ_p)}
        let mut y = vec![C64::default(); period as usize];
        for p in paths {
            let shift = (p.delay_index * os) as i64;
            for (k, yk) in y.iter_mut().enumerate() {
                let u = (k as i64 - shift).rem_euclid(period);
                *yk += p.gain * x[u as usize] * self.carrier(p.doppler_index * u);
            }
        }

        // Y[m,n] = ∫ e^{−j2π n (t − mT/M)/NT} g(t − mT/M) y(t) dt
        let ts = 1.0 / os as f64;
        let mut out = vec![C64::default(); m_len * n_len];
        for m in 0..m_len {
            let win: Vec<(i64, C64)> = y
                .iter()
                .enumerate()
                .filter_map(|(k, yk)| {
                    let u = (k as i64 - (m * os) as i64).rem_euclid(period);
                    let gv = self.g[u as usize];
                    (gv != 0.0).then(|| (u, yk * gv))
                })
                .collect();
            for n in 0..n_len {
                let acc: C64 = win.iter().map(|(u, v)| v * self.carrier(-(n as i64) * u)).sum();
                out[n * m_len + m] = acc * ts;
            }
        }
        out
    }
}

/// Error bound of the waveform reference against the discrete model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveBound {
    /// Largest singular value of the map from a frame to the difference
    /// between the waveform output and the discrete model.
    pub residual_norm: f64,
    /// `‖L‖² ‖X‖² / ‖Y‖²`, an upper bound on the relative squared error of
    /// `frames` under `paths`.
    pub tau: f64,
}

/// The frame-to-error map `L` is linear, so its matrix is assembled from the
/// impulse responses of the waveform chain minus those of the discrete
/// model. Since `‖L X‖ ≤ ‖L‖ ‖X‖`, the bound holds for every frame of the
/// same energy, not only the one given.
pub fn tau_wave(frames: &FrameSet, paths: &[PathParams], cfg: &WaveformConfig) -> Result<WaveBound> {
    let chain = Chain::new(frames, paths, cfg)?;
    let (m, n) = (frames.m, frames.n);
    let mn = m * n;
    let k = paths
        .iter()
        .map(|p| p.doppler_index.unsigned_abs() as usize)
        .max()
        .unwrap_or(0);
    let delays = paths.iter().map(|p| p.delay_index + 1).max().unwrap_or(1);
    let mut grid = DdGrid::zeros(k, delays);
    for p in paths {
        grid.insert(p.delay_index, p.doppler_index, p.gain, 0.0)?;
    }
    let mut l = DMatrix::<C64>::zeros(mn, mn);
    for j in 0..mn {
        let mut e = vec![C64::default(); mn];
        e[j] = C64::new(1.0, 0.0);
        let wave = chain.run(&e, paths);
        let model = apply_channel_noiseless(&FrameSet::from_symbols(1, m, n, e)?, &grid)?;
        for i in 0..mn {
            l[(i, j)] = wave[i] - model[i];
        }
    }
    let residual_norm = l.singular_values().max();
    let model = apply_channel_noiseless(frames, &grid)?;
    let energy: f64 = model.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let frame_energy: f64 = frames.antenna(0).iter().map(|v| v.norm_sqr()).sum();
    Ok(WaveBound {
        residual_norm,
        tau: residual_norm * residual_norm * frame_energy / energy,
    })
}
