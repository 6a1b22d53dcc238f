//! Seeded Monte-Carlo experiments over the effective channel model.
//!
//! Every trial draws pilots, a channel and noise from independent streams of
//! one trial seed, and the trial seed depends only on the base seed and the
//! trial index. Two sweep points therefore see the same random numbers
//! wherever their shapes agree, and output rows come out in the order of the
//! sweep points no matter how the worker pool schedules them.

pub mod config;

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::angle::estimate_angles;
use crate::baselines::{genie_support_lmmse, lmmse_oracle, omp_estimate};
use crate::channel::{sample_paths, to_grid, DdGrid, PathSet};
use crate::error::{Error, Result};
use crate::mamp::mamp_estimate;
use crate::modem::{add_noise, apply_channel_noiseless, build_h_tilde, nmse, noise_var_for_snr, to_db, FrameSet};
use crate::operator::{DenseOperator, LinearOperator, OddmOperator};
use crate::C64;

pub use config::{Estimator, ExperimentConfig, MampSettings, OmpSettings, Preset, Scenario, Sweep};

const STREAM_PILOTS: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_MATRIX: u64 = 3;

/// Seed of trial `index` under `base`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One random draw of the observation model.
#[derive(Debug, Clone)]
pub struct Trial {
    pub seed: u64,
    pub paths: PathSet,
    pub grid: DdGrid,
    pub operator: OddmOperator,
    /// `h̃`.
    pub truth: Vec<C64>,
    pub noiseless: Vec<C64>,
    pub y: Vec<C64>,
    pub noise_var: f64,
}

impl Trial {
    pub fn new(scenario: &Scenario, seed: u64, snr_db: f64) -> Result<Self> {
        let spec = scenario.spec();
        let frames = FrameSet::random(
            scenario.num_antennas,
            scenario.m,
            scenario.n,
            scenario.constellation,
            &mut stream(seed, STREAM_PILOTS),
        );
        let paths = sample_paths(&spec, &mut stream(seed, STREAM_CHANNEL))?;
        let grid = to_grid(&paths, &spec)?;
        let truth = build_h_tilde(&grid, scenario.num_antennas);
        let noiseless = apply_channel_noiseless(&frames, &grid)?;
        let operator = OddmOperator::new(frames, scenario.delay_bins, scenario.max_doppler_index)?;
        let (y, noise_var) = observe(&noiseless, snr_db, seed);
        Ok(Self {
            seed,
            paths,
            grid,
            operator,
            truth,
            noiseless,
            y,
            noise_var,
        })
    }

    /// Indices of the nonzero entries of `h̃`.
    pub fn support(&self) -> Vec<usize> {
        let block = self.grid.vec_gains().len();
        let cells = self.grid.support();
        (0..self.operator.dims().num_antennas)
            .flat_map(|nt| cells.iter().map(move |c| nt * block + c))
            .collect()
    }
}

/// Adds noise at `snr_db` (infinite for none) from the trial's noise stream.
fn observe(noiseless: &[C64], snr_db: f64, seed: u64) -> (Vec<C64>, f64) {
    let noise_var = noise_var_for_snr(noiseless, snr_db);
    let mut y = noiseless.to_vec();
    if noise_var > 0.0 {
        add_noise(&mut y, noise_var, &mut stream(seed, STREAM_NOISE));
    }
    (y, noise_var)
}

/// One CSV row of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub sweep: &'static str,
    pub value: f64,
    pub snr_db: f64,
    pub estimator: &'static str,
    pub seed: u64,
    pub nmse: f64,
    pub nmse_db: f64,
    pub iterations: usize,
    /// Empty unless timing was requested.
    pub wall_time_s: Option<f64>,
}

pub const METRIC_HEADER: &str = "sweep,value,snr_db,estimator,seed,nmse,nmse_db,iterations,wall_time_s";

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

/// Runs `job` on every `(point, trial)` pair in the pool and returns the
/// results in point-major order.
fn for_each_trial<T, F>(cfg: &ExperimentConfig, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, (f64, f64), usize) -> Result<T> + Sync,
{
    let points = cfg.points();
    let items: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    pool(cfg.workers)?.install(|| {
        items
            .par_iter()
            .map(|&(p, t)| job(p, points[p], t))
            .collect::<Result<Vec<T>>>()
    })
}

fn estimate(
    est: Estimator,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    mamp: &crate::mamp::MampConfig,
    trial: &Trial,
    dense: Option<&DenseOperator>,
) -> Result<(Vec<C64>, usize)> {
    let prior = cfg.mamp.prior(scenario);
    let dense = || dense.ok_or_else(|| Error::InvalidArgument("dense operator missing".into()));
    match est {
        Estimator::Mamp => {
            let r = mamp_estimate(&trial.operator, &trial.y, trial.noise_var, &prior, mamp, None)?;
            Ok((r.estimate, r.iterations))
        }
        Estimator::Omp => {
            let k = cfg.omp.sparsity.unwrap_or(scenario.num_paths * scenario.num_antennas);
            let r = omp_estimate(&dense()?.mat, &trial.y, k, cfg.omp.tolerance)?;
            let n = r.support.len();
            Ok((r.estimate, n))
        }
        Estimator::Lmmse => {
            let var = prior.complex_variance();
            Ok((lmmse_oracle(&dense()?.mat, &trial.y, var, trial.noise_var)?, 1))
        }
        Estimator::Genie => {
            let x = genie_support_lmmse(
                &dense()?.mat,
                &trial.y,
                &trial.support(),
                prior.variance,
                trial.noise_var,
            )?;
            Ok((x, 1))
        }
    }
}

/// NMSE of every selected estimator at every sweep point and trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let nested = for_each_trial(cfg, |_, (value, snr_db), t| {
        let (scenario, mamp) = cfg.at(value);
        let seed = trial_seed(cfg.seed, t);
        let trial = Trial::new(&scenario, seed, snr_db)?;
        let dense = if cfg.estimators.iter().any(|e| e.needs_dense()) {
            Some(trial.operator.materialize(cfg.dense_budget)?)
        } else {
            None
        };
        let mut rows = Vec::with_capacity(cfg.estimators.len());
        for &est in &cfg.estimators {
            let start = Instant::now();
            let (x, iterations) = estimate(est, cfg, &scenario, &mamp, &trial, dense.as_ref())?;
            let elapsed = start.elapsed().as_secs_f64();
            let e = nmse(&x, &trial.truth)?;
            rows.push(MetricRow {
                sweep: cfg.sweep.name(),
                value,
                snr_db,
                estimator: est.name(),
                seed,
                nmse: e,
                nmse_db: to_db(e),
                iterations,
                wall_time_s: cfg.record_time.then_some(elapsed),
            });
        }
        Ok(rows)
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Mean MAMP NMSE per iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub value: f64,
    pub snr_db: f64,
    pub iteration: usize,
    pub nmse: f64,
    pub nmse_db: f64,
}

/// Per-iteration NMSE of MAMP averaged over trials. A run that stops early
/// holds its last value for the remaining iterations.
pub fn convergence_trace(cfg: &ExperimentConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let traces = for_each_trial(cfg, |_, (value, snr_db), t| {
        let (scenario, mamp) = cfg.at(value);
        let trial = Trial::new(&scenario, trial_seed(cfg.seed, t), snr_db)?;
        let prior = cfg.mamp.prior(&scenario);
        let r = mamp_estimate(
            &trial.operator,
            &trial.y,
            trial.noise_var,
            &prior,
            &mamp,
            Some(&trial.truth),
        )?;
        let mut curve: Vec<f64> = r.trace.iter().filter_map(|row| row.nmse).collect();
        let last = curve.last().copied().unwrap_or(1.0);
        curve.resize(mamp.max_iterations.max(curve.len()), last);
        Ok(curve)
    })?;
    let mut rows = Vec::new();
    for (p, &(value, snr_db)) in cfg.points().iter().enumerate() {
        let group = &traces[p * cfg.trials..(p + 1) * cfg.trials];
        let len = group.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..len {
            let mean = group.iter().map(|c| c[i.min(c.len() - 1)]).sum::<f64>() / group.len() as f64;
            rows.push(TraceRow {
                value,
                snr_db,
                iteration: i + 1,
                nmse: mean,
                nmse_db: to_db(mean),
            });
        }
    }
    Ok(rows)
}

/// One trial of [`random_matrix_reference`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub value: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub nmse_oddm: f64,
    pub nmse_random: f64,
    /// `nmse_oddm − nmse_random` in dB.
    pub gap_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub value: f64,
    pub snr_db: f64,
    pub median_gap_db: f64,
    /// Median of `|gap_db|`, the distance between the two runs. The signed
    /// median hovers near zero once the structured runs catch up.
    pub median_abs_gap_db: f64,
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub summary: Vec<GapSummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// MAMP on the structured operator and on an i.i.d. `CN(0, 1)` matrix of the
/// same shape, with the same `h̃`, prior and SNR.
pub fn random_matrix_reference(cfg: &ExperimentConfig) -> Result<GapReport> {
    cfg.validate()?;
    let rows = for_each_trial(cfg, |_, (value, snr_db), t| {
        let (scenario, mamp) = cfg.at(value);
        let seed = trial_seed(cfg.seed, t);
        let trial = Trial::new(&scenario, seed, snr_db)?;
        let (rows_n, cols_n) = (trial.operator.rows(), trial.operator.cols());
        let needed = rows_n.saturating_mul(cols_n);
        if needed > cfg.dense_budget {
            return Err(Error::MemoryBudget {
                needed,
                budget: cfg.dense_budget,
            });
        }
        let prior = cfg.mamp.prior(&scenario);
        let r = mamp_estimate(&trial.operator, &trial.y, trial.noise_var, &prior, &mamp, None)?;
        let nmse_oddm = nmse(&r.estimate, &trial.truth)?;

        let g = DenseOperator::gaussian(rows_n, cols_n, 1.0, &mut stream(seed, STREAM_MATRIX));
        let (y, noise_var) = observe(&g.apply(&trial.truth), snr_db, seed);
        let r = mamp_estimate(&g, &y, noise_var, &prior, &mamp, None)?;
        let nmse_random = nmse(&r.estimate, &trial.truth)?;
        Ok(GapRow {
            value,
            snr_db,
            seed,
            nmse_oddm,
            nmse_random,
            gap_db: to_db(nmse_oddm) - to_db(nmse_random),
        })
    })?;
    let summary = cfg
        .points()
        .iter()
        .enumerate()
        .map(|(p, &(value, snr_db))| {
            let mut gaps: Vec<f64> = rows[p * cfg.trials..(p + 1) * cfg.trials]
                .iter()
                .map(|r| r.gap_db)
                .collect();
            let mut abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
            GapSummary {
                value,
                snr_db,
                median_gap_db: median(&mut gaps),
                median_abs_gap_db: median(&mut abs),
            }
        })
        .collect();
    Ok(GapReport { rows, summary })
}

/// One path of [`angle_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleRow {
    pub value: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub path: usize,
    pub theta_deg: f64,
    pub theta_hat_deg: f64,
    pub error_deg: f64,
}

/// Spatial snapshot of one delay-Doppler cell: for each antenna, the
/// least-squares fit of `y` onto that antenna's column of the cell. Other
/// paths leak in through the cross-correlation of the pilots.
pub fn cell_snapshot(trial: &Trial, delay: usize, doppler: i64) -> Vec<C64> {
    let dims = trial.operator.dims();
    let block = dims.block_len();
    let k = dims.max_doppler_index as i64;
    let cell = delay * (2 * dims.max_doppler_index + 1) + (doppler + k) as usize;
    (0..dims.num_antennas)
        .map(|nt| {
            let col = trial.operator.column(nt * block + cell);
            let energy: f64 = col.iter().map(|v| v.norm_sqr()).sum();
            let corr: C64 = col.iter().zip(&trial.y).map(|(c, y)| c.conj() * y).sum();
            if energy > 0.0 {
                corr / energy
            } else {
                C64::default()
            }
        })
        .collect()
}

/// Angle of every path from its own cell snapshot.
pub fn angle_experiment(cfg: &ExperimentConfig) -> Result<Vec<AngleRow>> {
    cfg.validate()?;
    let nested = for_each_trial(cfg, |_, (value, snr_db), t| {
        let (scenario, _) = cfg.at(value);
        let seed = trial_seed(cfg.seed, t);
        let trial = Trial::new(&scenario, seed, snr_db)?;
        trial
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let snap = cell_snapshot(&trial, p.delay_index, p.doppler_index);
                let report = estimate_angles(&snap, 1, scenario.antenna_spacing, cfg.angle_grid)?;
                let theta = p.angle.to_degrees();
                let hat = report.estimates.first().map_or(f64::NAN, |e| e.angle.to_degrees());
                Ok(AngleRow {
                    value,
                    snr_db,
                    seed,
                    path: i,
                    theta_deg: theta,
                    theta_hat_deg: hat,
                    error_deg: (hat - theta).abs(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Writes rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
