//! Discrete ODDM input-output relation, pilot frames and the equivalent
//! channel vector.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::DdGrid;
use crate::error::{Error, Result};
use crate::C64;

/// Pilot constellations, all scaled to unit average energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constellation {
    Bpsk,
    #[default]
    Qpsk,
    Qam16,
}

impl Constellation {
    pub fn points(self) -> Vec<C64> {
        match self {
            Constellation::Bpsk => vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            Constellation::Qpsk => [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .iter()
                .map(|&(re, im)| C64::new(re, im) * FRAC_1_SQRT_2)
                .collect(),
            Constellation::Qam16 => {
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let scale = 1.0 / 10f64.sqrt();
                levels
                    .iter()
                    .flat_map(|&re| levels.iter().map(move |&im| C64::new(re, im) * scale))
                    .collect()
            }
        }
    }

    pub fn is_unit_modulus(self) -> bool {
        !matches!(self, Constellation::Qam16)
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bpsk" => Some(Self::Bpsk),
            "qpsk" | "4qam" | "4-qam" => Some(Self::Qpsk),
            "16qam" | "16-qam" | "qam16" => Some(Self::Qam16),
            _ => None,
        }
    }
}

/// Per-antenna pilot frames `X_{n_t}[m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub num_antennas: usize,
    pub m: usize,
    pub n: usize,
    /// `vec(X_{n_t})` blocks, column-major: index `n_t·MN + n·M + m`.
    symbols: Vec<C64>,
}

impl FrameSet {
    pub fn from_symbols(num_antennas: usize, m: usize, n: usize, symbols: Vec<C64>) -> Result<Self> {
        if symbols.len() != num_antennas * m * n || m == 0 || n == 0 || num_antennas == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} symbols for {num_antennas}x{m}x{n} frames",
                symbols.len()
            )));
        }
        Ok(Self {
            num_antennas,
            m,
            n,
            symbols,
        })
    }

    /// I.i.d. draws from `constellation`.
    pub fn random<R: Rng + ?Sized>(
        num_antennas: usize,
        m: usize,
        n: usize,
        constellation: Constellation,
        rng: &mut R,
    ) -> Self {
        let pts = constellation.points();
        let symbols = (0..num_antennas * m * n)
            .map(|_| pts[rng.random_range(0..pts.len())])
            .collect();
        Self {
            num_antennas,
            m,
            n,
            symbols,
        }
    }

    #[inline]
    pub fn get(&self, antenna: usize, m: usize, n: usize) -> C64 {
        self.symbols[antenna * self.m * self.n + n * self.m + m]
    }

    pub fn symbols(&self) -> &[C64] {
        &self.symbols
    }

    /// `vec(X_{n_t})`.
    pub fn antenna(&self, antenna: usize) -> &[C64] {
        let mn = self.m * self.n;
        &self.symbols[antenna * mn..(antenna + 1) * mn]
    }

    pub fn mean_energy(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Dimensions of the effective model `y = Φ̃ h̃ + n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub m: usize,
    pub n: usize,
    pub num_antennas: usize,
    /// Delay bins `L`.
    pub delay_bins: usize,
    /// Maximum Doppler index `K`.
    pub max_doppler_index: usize,
}

impl ModelDims {
    pub fn doppler_bins(&self) -> usize {
        2 * self.max_doppler_index + 1
    }

    /// `(2K+1) L`.
    pub fn block_len(&self) -> usize {
        self.doppler_bins() * self.delay_bins
    }

    /// Rows `MN`.
    pub fn rows(&self) -> usize {
        self.m * self.n
    }

    /// Columns `(2K+1) L N_t`.
    pub fn cols(&self) -> usize {
        self.block_len() * self.num_antennas
    }

    pub fn index(&self, idx: GridIndex) -> usize {
        idx.flat(self)
    }

    pub fn grid_index(&self, flat: usize) -> GridIndex {
        let block = self.block_len();
        let rows = self.doppler_bins();
        let antenna = flat / block;
        let rem = flat % block;
        GridIndex {
            antenna,
            delay: rem / rows,
            doppler: (rem % rows) as i64 - self.max_doppler_index as i64,
        }
    }
}

/// Column label of `Φ̃`: antenna-major, delay-middle, Doppler-minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridIndex {
    pub antenna: usize,
    pub delay: usize,
    pub doppler: i64,
}

impl GridIndex {
    pub fn flat(&self, dims: &ModelDims) -> usize {
        let rows = dims.doppler_bins();
        self.antenna * dims.block_len() + self.delay * rows + (self.doppler + dims.max_doppler_index as i64) as usize
    }
}

/// Received frame `Y[m, n]` (vectorized column-major, index `n·M + m`) for the
/// channel in `grid`, evaluated term by term from the discrete ODDM relation.
/// Complex Gaussian noise of variance `noise_var` per entry is added when
/// `noise_var > 0`.
pub fn apply_channel<R: Rng + ?Sized>(
    frames: &FrameSet,
    grid: &DdGrid,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let mut y = apply_channel_noiseless(frames, grid)?;
    if noise_var > 0.0 {
        add_noise(&mut y, noise_var, rng);
    }
    Ok(y)
}

pub fn apply_channel_noiseless(frames: &FrameSet, grid: &DdGrid) -> Result<Vec<C64>> {
    let (m_len, n_len) = (frames.m, frames.n);
    if grid.delay_bins > m_len {
        return Err(Error::DimensionMismatch(format!(
            "{} delay bins exceed M = {m_len}",
            grid.delay_bins
        )));
    }
    let taps = grid.nonzeros();
    let mn = (m_len * n_len) as f64;
    let mut y = vec![C64::new(0.0, 0.0); m_len * n_len];
    for n in 0..n_len {
        for m in 0..m_len {
            let mut acc = C64::new(0.0, 0.0);
            for &(d1, d2, h, alpha) in &taps {
                let nn = (n as i64 - d2).rem_euclid(n_len as i64) as usize;
                let shift = m as i64 - d1 as i64;
                let doppler = 2.0 * PI * d2 as f64 * shift as f64 / mn;
                for nt in 0..frames.num_antennas {
                    let spatial = 2.0 * PI * nt as f64 * alpha;
                    let term = if shift >= 0 {
                        frames.get(nt, shift as usize, nn) * C64::from_polar(1.0, doppler + spatial)
                    } else {
                        let wrap = -2.0 * PI * nn as f64 / n_len as f64;
                        frames.get(nt, (shift + m_len as i64) as usize, nn)
                            * C64::from_polar(1.0, doppler + spatial + wrap)
                    };
                    acc += h * term;
                }
            }
            y[n * m_len + m] = acc;
        }
    }
    Ok(y)
}

/// Adds circular complex Gaussian noise of variance `noise_var` per entry.
pub fn add_noise<R: Rng + ?Sized>(y: &mut [C64], noise_var: f64, rng: &mut R) {
    let s = (noise_var / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += C64::new(re * s, im * s);
    }
}

/// Noise variance giving `snr_db` for a noiseless observation, with
/// `SNR = ‖Φ̃h̃‖² / (MN δ²)`.
pub fn noise_var_for_snr(noiseless: &[C64], snr_db: f64) -> f64 {
    let p: f64 = noiseless.iter().map(|v| v.norm_sqr()).sum::<f64>() / noiseless.len() as f64;
    p / 10f64.powf(snr_db / 10.0)
}

/// Equivalent channel `h̃`: block `n_t` is `vec(G ⊙ F_{n_t})` with
/// `[F_{n_t}] = e^{j2π n_t α}` on occupied cells.
pub fn build_h_tilde(grid: &DdGrid, num_antennas: usize) -> Vec<C64> {
    let g = grid.vec_gains();
    let alpha = grid.vec_alpha();
    let mut h = Vec::with_capacity(g.len() * num_antennas);
    for nt in 0..num_antennas {
        h.extend(
            g.iter()
                .zip(alpha)
                .map(|(&gain, &a)| gain * C64::from_polar(1.0, 2.0 * PI * nt as f64 * a)),
        );
    }
    h
}

/// `‖ĥ − h‖² / ‖h‖²`.
pub fn nmse(estimate: &[C64], truth: &[C64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} entries, truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / denom)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DdGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(nt: usize, m: usize, n: usize, seed: u64) -> FrameSet {
        FrameSet::random(nt, m, n, Constellation::Qpsk, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn one_path(k: usize, l_max: usize, d1: usize, d2: i64, h: f64, alpha: f64) -> DdGrid {
        let mut g = DdGrid::zeros(k, l_max);
        g.insert(d1, d2, C64::new(h, 0.0), alpha).unwrap();
        g
    }

    #[test]
    fn constellations_have_unit_energy() {
        for c in [Constellation::Bpsk, Constellation::Qpsk, Constellation::Qam16] {
            let pts = c.points();
            let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_channel_returns_frame() {
        let x = frames(1, 8, 4, 1);
        let g = one_path(1, 2, 0, 0, 1.0, 0.0);
        let y = apply_channel_noiseless(&x, &g).unwrap();
        for (a, b) in y.iter().zip(x.antenna(0)) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn unit_delay_wraps_with_phase() {
        let (m, n) = (8, 4);
        let x = frames(1, m, n, 2);
        let g = one_path(1, 2, 1, 0, 1.0, 0.0);
        let y = apply_channel_noiseless(&x, &g).unwrap();
        for nn in 0..n {
            let expect = x.get(0, m - 1, nn) * C64::from_polar(1.0, -2.0 * PI * nn as f64 / n as f64);
            assert!((y[nn * m] - expect).norm() < 1e-13);
            for mm in 1..m {
                assert!((y[nn * m + mm] - x.get(0, mm - 1, nn)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn unit_doppler_shifts_and_rotates() {
        let (m, n) = (8, 4);
        let x = frames(1, m, n, 3);
        let h = 0.7;
        let g = one_path(1, 2, 0, 1, h, 0.0);
        let y = apply_channel_noiseless(&x, &g).unwrap();
        for nn in 0..n {
            for mm in 0..m {
                let expect = x.get(0, mm, (nn + n - 1) % n) * C64::from_polar(h, 2.0 * PI * mm as f64 / (m * n) as f64);
                assert!((y[nn * m + mm] - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn h_tilde_blocks() {
        let g = one_path(1, 2, 0, 0, 2.0, 0.25);
        let h = build_h_tilde(&g, 2);
        assert_eq!(h.len(), 2 * 3 * 2);
        assert_eq!(&h[..6], g.vec_gains());
        let idx = ModelDims {
            m: 4,
            n: 4,
            num_antennas: 2,
            delay_bins: 2,
            max_doppler_index: 1,
        }
        .index(GridIndex {
            antenna: 1,
            delay: 0,
            doppler: 0,
        });
        assert!((h[idx] - C64::new(0.0, 2.0)).norm() < 1e-12);
        for (a, b) in h[6..].iter().zip(&h[..6]) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn nmse_examples() {
        let t = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0)];
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert!((nmse(&[C64::default(); 2], &t).unwrap() - 1.0).abs() < 1e-15);
        let twice: Vec<C64> = t.iter().map(|v| v * 2.0).collect();
        assert!((nmse(&twice, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&t, &[C64::default(); 2]), Err(Error::ZeroTruth)));
        assert!(nmse(&t[..1], &t).is_err());
    }

    #[test]
    fn grid_index_roundtrip() {
        let dims = ModelDims {
            m: 8,
            n: 4,
            num_antennas: 3,
            delay_bins: 4,
            max_doppler_index: 2,
        };
        for flat in 0..dims.cols() {
            assert_eq!(dims.grid_index(flat).flat(&dims), flat);
        }
        let first = dims.grid_index(0);
        assert_eq!((first.antenna, first.delay, first.doppler), (0, 0, -2));
    }

    #[test]
    fn noise_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let signal = vec![C64::new(1.0, 0.0); 20000];
        let var = noise_var_for_snr(&signal, 10.0);
        assert!((var - 0.1).abs() < 1e-15);
        let mut y = vec![C64::default(); 20000];
        add_noise(&mut y, var, &mut rng);
        let p = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        assert!((p / var - 1.0).abs() < 0.05);
    }
}
