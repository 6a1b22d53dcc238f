//! Physical multipath channels on the integer delay-Doppler grid.
//!
//! A channel is a small set of paths, each with a real gain, an integer delay
//! index `k_p` (multiples of the delay resolution `1/W = 1/(M Δf)`), an integer
//! Doppler index `l_p` (multiples of `Δf / N`) and a departure angle seen by a
//! uniform linear array at the base station.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::C64;

/// Speed of light used for Doppler conversion.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Attempts per path before a grid-cell collision is reported.
pub const MAX_COLLISION_RETRIES: usize = 100;

/// Power-delay profile: tap delays in nanoseconds and tap powers in dB.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PowerProfile {
    pub name: String,
    pub delay_ns: Vec<f64>,
    pub power_db: Vec<f64>,
}

impl PowerProfile {
    /// 3GPP Extended Vehicular A.
    pub fn eva() -> Self {
        Self {
            name: "EVA".into(),
            delay_ns: vec![0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0],
            power_db: vec![0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9],
        }
    }

    /// Looks up a built-in profile by (case-insensitive) name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "eva" => Some(Self::eva()),
            _ => None,
        }
    }

    /// Parses the key-value profile format:
    ///
    /// ```text
    /// name = "EVA"
    /// delay_ns = [0, 30, 150]
    /// power_db = [0.0, -1.5, -1.4]
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let profile: PowerProfile = toml::from_str(text).map_err(|e| Error::Config(format!("profile: {e}")))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_ns.is_empty() {
            return Err(Error::InvalidSpec("power profile has no taps".into()));
        }
        if self.delay_ns.len() != self.power_db.len() {
            return Err(Error::InvalidSpec(format!(
                "profile has {} delays but {} powers",
                self.delay_ns.len(),
                self.power_db.len()
            )));
        }
        if self.delay_ns.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidSpec("profile delays must be non-negative".into()));
        }
        if self.delay_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec("profile delays must be strictly increasing".into()));
        }
        if self.power_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec("profile powers must be finite".into()));
        }
        Ok(())
    }
}

/// Scenario parameters for drawing channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub speed_kmh: f64,
    pub num_paths: usize,
    /// Number of delay bins `L`; delay indices live in `[0, L-1]`.
    pub max_delay_index: usize,
    /// Doppler indices live in `[-K, K]`.
    pub max_doppler_index: usize,
    pub num_antennas: usize,
    /// `d_BS / λ_c`, at most one half.
    pub antenna_spacing: f64,
    /// Delay slots `M` per frame.
    pub num_delay_slots: usize,
    /// Doppler slots `N` per frame.
    pub num_doppler_slots: usize,
    pub profile: PowerProfile,
    /// Draw circular complex gains instead of real ones.
    pub complex_gains: bool,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if self.num_paths == 0 {
            return bad("need at least one path");
        }
        if self.max_delay_index == 0 {
            return bad("need at least one delay bin");
        }
        if self.num_antennas == 0 {
            return bad("need at least one antenna");
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing <= 0.5) {
            return bad("antenna spacing over wavelength must lie in (0, 0.5]");
        }
        if self.num_delay_slots == 0 || self.num_doppler_slots == 0 {
            return bad("frame dimensions must be positive");
        }
        if !(self.carrier_freq_hz > 0.0 && self.subcarrier_spacing_hz > 0.0) {
            return bad("carrier frequency and subcarrier spacing must be positive");
        }
        if !(self.speed_kmh >= 0.0) {
            return bad("speed must be non-negative");
        }
        if self.max_delay_index > self.num_delay_slots {
            return bad("delay bins exceed frame delay slots");
        }
        self.profile.validate()?;

        let max_tap = self
            .profile
            .delay_ns
            .iter()
            .map(|&d| self.quantize_delay(d))
            .max()
            .unwrap_or(0);
        if max_tap >= self.max_delay_index {
            return Err(Error::InvalidSpec(format!(
                "profile delay quantizes to index {max_tap}, beyond L-1 = {}",
                self.max_delay_index - 1
            )));
        }
        let max_doppler = (self.max_doppler_hz() / self.doppler_resolution_hz()).round();
        if max_doppler > self.max_doppler_index as f64 {
            return Err(Error::InvalidSpec(format!(
                "maximum Doppler {:.1} Hz quantizes to index {max_doppler}, beyond K = {}",
                self.max_doppler_hz(),
                self.max_doppler_index
            )));
        }
        let grid_cells = (2 * self.max_doppler_index + 1) * self.max_delay_index;
        if self.num_paths > grid_cells {
            return bad("more paths than delay-Doppler grid cells");
        }
        Ok(())
    }

    /// Delay resolution `1/W = 1/(M Δf)` in seconds.
    pub fn delay_resolution_s(&self) -> f64 {
        1.0 / (self.num_delay_slots as f64 * self.subcarrier_spacing_hz)
    }

    /// Doppler resolution `1/(N T) = Δf / N` in Hz.
    pub fn doppler_resolution_hz(&self) -> f64 {
        self.subcarrier_spacing_hz / self.num_doppler_slots as f64
    }

    /// `ν_max = v f_c / c`.
    pub fn max_doppler_hz(&self) -> f64 {
        max_doppler_hz(self.speed_kmh, self.carrier_freq_hz)
    }

    pub fn quantize_delay(&self, delay_ns: f64) -> usize {
        (delay_ns * 1e-9 / self.delay_resolution_s()).round() as usize
    }

    /// Number of Doppler rows `2K + 1`.
    pub fn doppler_bins(&self) -> usize {
        2 * self.max_doppler_index + 1
    }
}

pub fn max_doppler_hz(speed_kmh: f64, carrier_freq_hz: f64) -> f64 {
    speed_kmh / 3.6 * carrier_freq_hz / SPEED_OF_LIGHT
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: C64,
    pub delay_index: usize,
    pub doppler_index: i64,
    /// Departure angle in radians, in `(-π/2, π/2)`.
    pub angle: f64,
}

pub type PathSet = Vec<PathParams>;

/// Merges profile taps that fall into the same delay bin. Returns
/// `(delay_index, linear_power)` pairs in increasing delay order.
pub fn quantized_profile(spec: &ChannelSpec) -> Vec<(usize, f64)> {
    let mut bins: Vec<(usize, f64)> = Vec::new();
    for (&d, &p) in spec.profile.delay_ns.iter().zip(&spec.profile.power_db) {
        let k = spec.quantize_delay(d);
        let lin = 10f64.powf(p / 10.0);
        match bins.last_mut() {
            Some(last) if last.0 == k => last.1 += lin,
            _ => bins.push((k, lin)),
        }
    }
    bins
}

/// Draws a random channel for `spec`.
///
/// Taps sharing a delay bin are merged. Paths occupy distinct bins chosen
/// uniformly at random; when `P` exceeds the number of bins the surplus paths
/// share bins and are separated by Doppler. Each path's Doppler index is
/// `round(ν_max cos φ / (Δf/N))` with `φ ~ U[0, 2π)`; a colliding cell triggers
/// a redraw of `φ`, at most [`MAX_COLLISION_RETRIES`] times.
pub fn sample_paths<R: Rng + ?Sized>(spec: &ChannelSpec, rng: &mut R) -> Result<PathSet> {
    spec.validate()?;
    let bins = quantized_profile(spec);
    let p = spec.num_paths;

    // bin assignment per path
    let mut order: Vec<usize> = (0..bins.len()).collect();
    shuffle(&mut order, rng);
    let mut assignment: Vec<usize> = order.iter().copied().take(p).collect();
    while assignment.len() < p {
        assignment.push(rng.random_range(0..bins.len()));
    }
    let mut share = vec![0usize; bins.len()];
    for &b in &assignment {
        share[b] += 1;
    }
    let variances: Vec<f64> = assignment.iter().map(|&b| bins[b].1 / share[b] as f64).collect();
    let total: f64 = variances.iter().sum();

    let nu_max = spec.max_doppler_hz();
    let res = spec.doppler_resolution_hz();
    let k = spec.max_doppler_index as i64;
    let mut occupied: Vec<(usize, i64)> = Vec::with_capacity(p);
    let mut paths = Vec::with_capacity(p);
    for (&b, &var) in assignment.iter().zip(&variances) {
        let delay_index = bins[b].0;
        let mut placed = None;
        for _ in 0..MAX_COLLISION_RETRIES {
            let phi = rng.random_range(0.0..2.0 * PI);
            let l = ((nu_max * phi.cos() / res).round() as i64).clamp(-k, k);
            if !occupied.contains(&(delay_index, l)) {
                placed = Some(l);
                break;
            }
        }
        let doppler_index = placed.ok_or(Error::PathCollision {
            paths: p,
            attempts: MAX_COLLISION_RETRIES,
        })?;
        occupied.push((delay_index, doppler_index));

        let std = (var / total).sqrt();
        let gain = if spec.complex_gains {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im) * (std / 2f64.sqrt())
        } else {
            let g: f64 = StandardNormal.sample(rng);
            C64::new(g * std, 0.0)
        };
        let angle = loop {
            let a = rng.random_range(-PI / 2.0..PI / 2.0);
            if a > -PI / 2.0 {
                break a;
            }
        };
        paths.push(PathParams {
            gain,
            delay_index,
            doppler_index,
            angle,
        });
    }
    Ok(paths)
}

fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Gain grid `G` with `2K+1` Doppler rows and `L` delay columns, plus the
/// per-cell spatial frequency `α = (d/λ) sin θ` of the dominant path.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    pub max_doppler_index: usize,
    pub delay_bins: usize,
    gains: Vec<C64>,
    alpha: Vec<f64>,
    occupied: Vec<bool>,
}

impl DdGrid {
    pub fn zeros(max_doppler_index: usize, delay_bins: usize) -> Self {
        let len = (2 * max_doppler_index + 1) * delay_bins;
        Self {
            max_doppler_index,
            delay_bins,
            gains: vec![C64::new(0.0, 0.0); len],
            alpha: vec![0.0; len],
            occupied: vec![false; len],
        }
    }

    pub fn doppler_bins(&self) -> usize {
        2 * self.max_doppler_index + 1
    }

    fn cell(&self, delay: usize, doppler: i64) -> Result<usize> {
        let k = self.max_doppler_index as i64;
        if delay >= self.delay_bins || doppler < -k || doppler > k {
            return Err(Error::OutOfBounds(format!(
                "cell (delay {delay}, doppler {doppler}) outside {}x{} grid",
                self.doppler_bins(),
                self.delay_bins
            )));
        }
        // column-major in (doppler row, delay column)
        Ok(delay * self.doppler_bins() + (doppler + k) as usize)
    }

    pub fn gain(&self, delay: usize, doppler: i64) -> C64 {
        self.cell(delay, doppler).map(|c| self.gains[c]).unwrap_or_default()
    }

    pub fn alpha(&self, delay: usize, doppler: i64) -> f64 {
        self.cell(delay, doppler).map(|c| self.alpha[c]).unwrap_or(0.0)
    }

    /// Grid holding `gains` in `vec(G)` order with zero spatial frequency,
    /// e.g. one antenna block of an estimated `h̃`.
    pub fn from_gains(max_doppler_index: usize, delay_bins: usize, gains: &[C64]) -> Result<Self> {
        let mut grid = Self::zeros(max_doppler_index, delay_bins);
        if gains.len() != grid.gains.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for a grid of {} cells",
                gains.len(),
                grid.gains.len()
            )));
        }
        for (c, &g) in gains.iter().enumerate() {
            if g != C64::default() {
                grid.occupied[c] = true;
                grid.gains[c] = g;
            }
        }
        Ok(grid)
    }

    /// Places a gain, rejecting already occupied cells.
    pub fn insert(&mut self, delay: usize, doppler: i64, gain: C64, alpha: f64) -> Result<()> {
        let c = self.cell(delay, doppler)?;
        if self.occupied[c] {
            return Err(Error::DuplicateCell { delay, doppler });
        }
        self.occupied[c] = true;
        self.gains[c] = gain;
        self.alpha[c] = alpha;
        Ok(())
    }

    /// `vec(G)` in column-major order: delay-major, Doppler-minor.
    pub fn vec_gains(&self) -> &[C64] {
        &self.gains
    }

    pub fn vec_alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Occupied cells as `(delay, doppler, gain, alpha)`.
    pub fn nonzeros(&self) -> Vec<(usize, i64, C64, f64)> {
        let rows = self.doppler_bins();
        let k = self.max_doppler_index as i64;
        (0..self.gains.len())
            .filter(|&c| self.occupied[c])
            .map(|c| (c / rows, (c % rows) as i64 - k, self.gains[c], self.alpha[c]))
            .collect()
    }

    /// Flat indices (into [`DdGrid::vec_gains`]) of occupied cells.
    pub fn support(&self) -> Vec<usize> {
        (0..self.occupied.len()).filter(|&c| self.occupied[c]).collect()
    }
}

/// Places every path on the grid: `G[l_p + K, k_p] = h_p`, `α = (d/λ) sin θ_p`.
pub fn to_grid(paths: &[PathParams], spec: &ChannelSpec) -> Result<DdGrid> {
    let mut grid = DdGrid::zeros(spec.max_doppler_index, spec.max_delay_index);
    for p in paths {
        let alpha = spec.antenna_spacing * p.angle.sin();
        grid.insert(p.delay_index, p.doppler_index, p.gain, alpha)?;
    }
    Ok(grid)
}

/// ULA response `[1, e^{j2π s sinθ}, …, e^{j2π (N_t-1) s sinθ}]`.
pub fn steering_vector(angle: f64, num_antennas: usize, spacing: f64) -> Vec<C64> {
    let alpha = spacing * angle.sin();
    spatial_tone(alpha, num_antennas)
}

/// `[e^{j2π n α}]_{n < N_t}`.
pub fn spatial_tone(alpha: f64, num_antennas: usize) -> Vec<C64> {
    (0..num_antennas)
        .map(|n| C64::from_polar(1.0, 2.0 * PI * n as f64 * alpha))
        .collect()
}
