//! Experiment configuration: built-in presets overridden by a TOML file.
//!
//! ```toml
//! [scenario]
//! m = 32
//! n = 16
//! num_antennas = 8
//! delay_bins = 5          # L
//! max_doppler_index = 2   # K
//! num_paths = 4
//! speed_kmh = 250.0
//! profile = "eva"         # or profile_file = "my_profile.toml"
//!
//! [experiment]
//! estimators = ["mamp", "omp"]
//! snr_db = [0.0, 10.0, 20.0]
//! trials = 50
//! seed = 1
//! sweep = "snr"           # snr | speed | antennas | paths | iterations
//!
//! [mamp]
//! damping_window = 3
//! ```
//!
//! Every key is optional; missing keys come from the preset.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::{ChannelSpec, PowerProfile};
use crate::error::{Error, Result};
use crate::mamp::{BgPrior, MampConfig, SpectralMode};
use crate::modem::Constellation;
use crate::operator::DEFAULT_DENSE_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Small enough for CI: `M=32, N=16, N_t=8, L=5, K=2, P=4`.
    Desk,
    /// The published setting: `M=512, N=32, N_t=128`. Long running.
    Paper,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "desk" => Some(Self::Desk),
            "paper" => Some(Self::Paper),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Mamp,
    Omp,
    /// Dense LMMSE with a Gaussian prior of the same variance.
    Lmmse,
    /// LMMSE on the true support.
    Genie,
}

impl Estimator {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mamp" => Ok(Self::Mamp),
            "omp" => Ok(Self::Omp),
            "lmmse" => Ok(Self::Lmmse),
            "genie" => Ok(Self::Genie),
            _ => Err(Error::UnknownEstimator(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mamp => "mamp",
            Self::Omp => "omp",
            Self::Lmmse => "lmmse",
            Self::Genie => "genie",
        }
    }

    pub fn needs_dense(self) -> bool {
        !matches!(self, Self::Mamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Snr,
    Speed,
    Antennas,
    Paths,
    Iterations,
}

impl Sweep {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "snr" => Some(Self::Snr),
            "speed" => Some(Self::Speed),
            "antennas" => Some(Self::Antennas),
            "paths" => Some(Self::Paths),
            "iterations" => Some(Self::Iterations),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::Speed => "speed",
            Self::Antennas => "antennas",
            Self::Paths => "paths",
            Self::Iterations => "iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    pub num_antennas: usize,
    /// `L`.
    pub delay_bins: usize,
    /// `K`.
    pub max_doppler_index: usize,
    pub num_paths: usize,
    pub constellation: Constellation,
    pub speed_kmh: f64,
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub antenna_spacing: f64,
    pub profile: PowerProfile,
    pub complex_gains: bool,
}

impl Scenario {
    pub fn spec(&self) -> ChannelSpec {
        ChannelSpec {
            carrier_freq_hz: self.carrier_freq_hz,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            speed_kmh: self.speed_kmh,
            num_paths: self.num_paths,
            max_delay_index: self.delay_bins,
            max_doppler_index: self.max_doppler_index,
            num_antennas: self.num_antennas,
            antenna_spacing: self.antenna_spacing,
            num_delay_slots: self.m,
            num_doppler_slots: self.n,
            profile: self.profile.clone(),
            complex_gains: self.complex_gains,
        }
    }

    /// Unknowns per antenna, `(2K+1) L`.
    pub fn block_len(&self) -> usize {
        (2 * self.max_doppler_index + 1) * self.delay_bins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MampSettings {
    pub config: MampConfig,
    /// Prior activity; `P / ((2K+1) L)` when unset.
    pub sparsity: Option<f64>,
    pub prior_mean: f64,
    /// Prior variance of an active entry; `1 / P` when unset.
    pub prior_variance: Option<f64>,
}

impl MampSettings {
    pub fn prior(&self, scenario: &Scenario) -> BgPrior {
        let p = scenario.num_paths as f64;
        BgPrior::new(
            self.sparsity.unwrap_or(p / scenario.block_len() as f64).min(1.0),
            self.prior_mean,
            self.prior_variance.unwrap_or(1.0 / p),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpSettings {
    /// Atoms to select; `P·N_t` when unset.
    pub sparsity: Option<usize>,
    /// Stop once `‖r‖²` drops to this value.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub estimators: Vec<Estimator>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Sweep,
    /// Sweep values for every sweep except `snr`, which uses `snr_db`.
    pub values: Vec<f64>,
    pub output: Option<PathBuf>,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
    /// Fill the wall-time column. Off by default so output is reproducible.
    pub record_time: bool,
    /// Largest dense matrix, in complex entries, the baselines may build.
    pub dense_budget: usize,
    pub mamp: MampSettings,
    pub omp: OmpSettings,
    /// Rotation search grid of the angle experiment.
    pub angle_grid: usize,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let scenario = match preset {
            Preset::Desk => Scenario {
                m: 32,
                n: 16,
                num_antennas: 8,
                delay_bins: 5,
                max_doppler_index: 2,
                num_paths: 4,
                constellation: Constellation::Qpsk,
                speed_kmh: 250.0,
                carrier_freq_hz: 5e9,
                subcarrier_spacing_hz: 48e3,
                antenna_spacing: 0.5,
                profile: PowerProfile::eva(),
                complex_gains: false,
            },
            Preset::Paper => Scenario {
                m: 512,
                n: 32,
                num_antennas: 128,
                delay_bins: 20,
                max_doppler_index: 3,
                num_paths: 4,
                constellation: Constellation::Qpsk,
                speed_kmh: 250.0,
                carrier_freq_hz: 5e9,
                subcarrier_spacing_hz: 15e3,
                antenna_spacing: 0.5,
                profile: PowerProfile::eva(),
                complex_gains: false,
            },
        };
        let (estimators, trials, spectral) = match preset {
            Preset::Desk => (vec![Estimator::Mamp, Estimator::Omp], 50, SpectralMode::Exact),
            Preset::Paper => (
                vec![Estimator::Mamp],
                10,
                SpectralMode::Hutchinson {
                    rel_target: 0.01,
                    max_probes: 1 << 12,
                    seed: 0,
                },
            ),
        };
        Self {
            scenario,
            estimators,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials,
            seed: 1,
            sweep: Sweep::Snr,
            values: Vec::new(),
            output: None,
            workers: 0,
            record_time: false,
            dense_budget: DEFAULT_DENSE_BUDGET,
            mamp: MampSettings {
                config: MampConfig {
                    spectral,
                    ..MampConfig::default()
                },
                sparsity: None,
                prior_mean: 0.0,
                prior_variance: None,
            },
            omp: OmpSettings {
                sparsity: None,
                tolerance: 0.0,
            },
            angle_grid: crate::angle::DEFAULT_GRID,
        }
    }

    /// Parses `text` on top of `preset`. Relative paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, preset: Preset) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::preset(preset);
        file.apply(&mut cfg, base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, preset)
    }

    /// Sweep points as `(value, snr_db)` pairs, in output order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        match self.sweep {
            Sweep::Snr => self.snr_db.iter().map(|&s| (s, s)).collect(),
            _ => self
                .values
                .iter()
                .flat_map(|&v| self.snr_db.iter().map(move |&s| (v, s)))
                .collect(),
        }
    }

    /// Scenario and MAMP settings at one sweep value.
    pub fn at(&self, value: f64) -> (Scenario, MampConfig) {
        let mut s = self.scenario.clone();
        let mut m = self.mamp.config.clone();
        match self.sweep {
            Sweep::Snr => {}
            Sweep::Speed => s.speed_kmh = value,
            Sweep::Antennas => s.num_antennas = value as usize,
            Sweep::Paths => s.num_paths = value as usize,
            Sweep::Iterations => m.max_iterations = value as usize,
        }
        (s, m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        if self.snr_db.is_empty() {
            return bad("snr_db must not be empty".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return bad("snr_db contains NaN".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep != Sweep::Snr && self.values.is_empty() {
            return bad(format!("sweep '{}' needs a non-empty values list", self.sweep.name()));
        }
        if self.angle_grid < 3 {
            return bad("angle_grid must be at least 3".into());
        }
        let integral = matches!(self.sweep, Sweep::Antennas | Sweep::Paths | Sweep::Iterations);
        for &v in &self.values {
            if !v.is_finite() || (integral && (v < 1.0 || v.fract() != 0.0)) {
                return bad(format!("invalid {} value {v}", self.sweep.name()));
            }
        }
        let s = &self.scenario;
        if s.m == 0 || s.n == 0 || s.num_antennas == 0 || s.delay_bins == 0 || s.num_paths == 0 {
            return bad("scenario dimensions must be positive".into());
        }
        let values = if self.sweep == Sweep::Snr {
            vec![0.0]
        } else {
            self.values.clone()
        };
        for v in values {
            let (scenario, mamp) = self.at(v);
            scenario
                .spec()
                .validate()
                .map_err(|e| Error::Config(format!("scenario at {} = {v}: {e}", self.sweep.name())))?;
            mamp.validate().map_err(|e| Error::Config(e.to_string()))?;
            let prior = self.mamp.prior(&scenario);
            if !(prior.sparsity > 0.0 && prior.variance > 0.0) {
                return bad("MAMP prior needs sparsity in (0, 1] and positive variance".into());
            }
        }
        if self.omp.sparsity == Some(0) {
            return bad("omp sparsity must be at least 1".into());
        }
        if !(self.omp.tolerance >= 0.0) {
            return bad("omp tolerance must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<ScenarioFile>,
    experiment: Option<ExperimentFile>,
    mamp: Option<MampFile>,
    omp: Option<OmpFile>,
    angles: Option<AnglesFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    m: Option<usize>,
    n: Option<usize>,
    num_antennas: Option<usize>,
    delay_bins: Option<usize>,
    max_doppler_index: Option<usize>,
    num_paths: Option<usize>,
    constellation: Option<String>,
    speed_kmh: Option<f64>,
    carrier_freq_hz: Option<f64>,
    subcarrier_spacing_hz: Option<f64>,
    antenna_spacing: Option<f64>,
    profile: Option<String>,
    profile_file: Option<PathBuf>,
    complex_gains: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    estimators: Option<Vec<String>>,
    snr_db: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    sweep: Option<String>,
    values: Option<Vec<f64>>,
    output: Option<PathBuf>,
    workers: Option<usize>,
    record_time: Option<bool>,
    dense_budget: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MampFile {
    max_iterations: Option<usize>,
    damping_window: Option<usize>,
    tolerance: Option<f64>,
    divergence_patience: Option<usize>,
    spectral: Option<String>,
    hutchinson_rel_target: Option<f64>,
    hutchinson_max_probes: Option<usize>,
    sparsity: Option<f64>,
    prior_mean: Option<f64>,
    prior_variance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OmpFile {
    sparsity: Option<usize>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnglesFile {
    grid_size: Option<usize>,
}

fn set<T>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

impl ConfigFile {
    fn apply(self, cfg: &mut ExperimentConfig, base_dir: &Path) -> Result<()> {
        if let Some(s) = self.scenario {
            let d = &mut cfg.scenario;
            set(&mut d.m, s.m);
            set(&mut d.n, s.n);
            set(&mut d.num_antennas, s.num_antennas);
            set(&mut d.delay_bins, s.delay_bins);
            set(&mut d.max_doppler_index, s.max_doppler_index);
            set(&mut d.num_paths, s.num_paths);
            set(&mut d.speed_kmh, s.speed_kmh);
            set(&mut d.carrier_freq_hz, s.carrier_freq_hz);
            set(&mut d.subcarrier_spacing_hz, s.subcarrier_spacing_hz);
            set(&mut d.antenna_spacing, s.antenna_spacing);
            set(&mut d.complex_gains, s.complex_gains);
            if let Some(name) = s.constellation {
                d.constellation = Constellation::parse(&name)
                    .ok_or_else(|| Error::Config(format!("unknown constellation '{name}'")))?;
            }
            match (s.profile, s.profile_file) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("give either profile or profile_file, not both".into()))
                }
                (Some(name), None) => {
                    d.profile = PowerProfile::builtin(&name)
                        .ok_or_else(|| Error::Config(format!("unknown profile '{name}'")))?;
                }
                (None, Some(path)) => {
                    let path = base_dir.join(path);
                    d.profile = PowerProfile::load(&path)
                        .map_err(|e| Error::Config(format!("profile {}: {e}", path.display())))?;
                }
                (None, None) => {}
            }
        }
        if let Some(e) = self.experiment {
            if let Some(names) = e.estimators {
                cfg.estimators = names.iter().map(|n| Estimator::parse(n)).collect::<Result<_>>()?;
            }
            set(&mut cfg.snr_db, e.snr_db);
            set(&mut cfg.trials, e.trials);
            set(&mut cfg.seed, e.seed);
            if let Some(name) = e.sweep {
                cfg.sweep = Sweep::parse(&name).ok_or_else(|| Error::Config(format!("unknown sweep '{name}'")))?;
            }
            set(&mut cfg.values, e.values);
            if let Some(p) = e.output {
                cfg.output = Some(base_dir.join(p));
            }
            set(&mut cfg.workers, e.workers);
            set(&mut cfg.record_time, e.record_time);
            set(&mut cfg.dense_budget, e.dense_budget);
        }
        if let Some(m) = self.mamp {
            let c = &mut cfg.mamp.config;
            set(&mut c.max_iterations, m.max_iterations);
            set(&mut c.damping_window, m.damping_window);
            set(&mut c.tolerance, m.tolerance);
            set(&mut c.divergence_patience, m.divergence_patience);
            let (target, probes) = match c.spectral {
                SpectralMode::Hutchinson {
                    rel_target, max_probes, ..
                } => (rel_target, max_probes),
                SpectralMode::Exact => (0.01, 1 << 12),
            };
            let target = m.hutchinson_rel_target.unwrap_or(target);
            let probes = m.hutchinson_max_probes.unwrap_or(probes);
            let mode = m.spectral.unwrap_or_else(|| match c.spectral {
                SpectralMode::Exact => "exact".into(),
                SpectralMode::Hutchinson { .. } => "hutchinson".into(),
            });
            c.spectral = match mode.to_ascii_lowercase().as_str() {
                "exact" => SpectralMode::Exact,
                "hutchinson" => SpectralMode::Hutchinson {
                    rel_target: target,
                    max_probes: probes,
                    seed: 0,
                },
                other => return Err(Error::Config(format!("unknown spectral mode '{other}'"))),
            };
            if m.sparsity.is_some() {
                cfg.mamp.sparsity = m.sparsity;
            }
            set(&mut cfg.mamp.prior_mean, m.prior_mean);
            if m.prior_variance.is_some() {
                cfg.mamp.prior_variance = m.prior_variance;
            }
        }
        if let Some(o) = self.omp {
            if o.sparsity.is_some() {
                cfg.omp.sparsity = o.sparsity;
            }
            set(&mut cfg.omp.tolerance, o.tolerance);
        }
        if let Some(a) = self.angles {
            set(&mut cfg.angle_grid, a.grid_size);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::preset(Preset::Desk).validate().unwrap();
        ExperimentConfig::preset(Preset::Paper).validate().unwrap();
    }

    #[test]
    fn file_overrides_preset() {
        let text = r#"
            [scenario]
            num_antennas = 4
            [experiment]
            estimators = ["mamp", "genie"]
            sweep = "speed"
            values = [50.0, 350.0]
            snr_db = [10.0]
            [mamp]
            damping_window = 2
        "#;
        let cfg = ExperimentConfig::from_toml(text, Path::new("."), Preset::Desk).unwrap();
        assert_eq!(cfg.scenario.num_antennas, 4);
        assert_eq!(cfg.scenario.m, 32);
        assert_eq!(cfg.estimators, vec![Estimator::Mamp, Estimator::Genie]);
        assert_eq!(cfg.points(), vec![(50.0, 10.0), (350.0, 10.0)]);
        assert_eq!(cfg.mamp.config.damping_window, 2);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new(".");
        assert!(matches!(
            ExperimentConfig::from_toml("[experiment]\nestimators = [\"amp\"]", p, Preset::Desk),
            Err(Error::UnknownEstimator(_))
        ));
        assert!(ExperimentConfig::from_toml("[experiment]\ntrials = 0", p, Preset::Desk).is_err());
        assert!(ExperimentConfig::from_toml("[scenario]\nbogus = 1", p, Preset::Desk).is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nsweep = \"speed\"", p, Preset::Desk).is_err());
        // 2000 km/h needs more Doppler bins than K = 2 at desk scale
        let fast = "[experiment]\nsweep = \"speed\"\nvalues = [2000.0]";
        assert!(ExperimentConfig::from_toml(fast, p, Preset::Desk).is_err());
    }
}
