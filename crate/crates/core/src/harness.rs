//! Seeded Monte-Carlo sweep driver.
//!
//! Trial `t` at sweep index `k` draws everything from its own ChaCha stream
//! seeded by a hash of `(seed, k, t)`, so results do not depend on how the
//! trials are scheduled. Reductions run in trial-index order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::draw_realization;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::scenario::{
    build_scenario, run_trial_with, DecodeCase, Scheme, TrialResult, RECHECK_FAILED,
};

/// z for a two-sided 95% normal interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// One curve: a scheme, plus the decode case in scenario 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Series {
    pub scheme: Scheme,
    pub case: Option<DecodeCase>,
}

impl Series {
    pub fn label(&self) -> String {
        match self.case {
            Some(case) => format!("{}/{case}", self.scheme),
            None => self.scheme.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub series: Series,
    /// bits/s/Hz.
    pub mean_se: f64,
    pub ci95: f64,
    /// Mean SE of the OMA baseline on the same trials.
    pub mean_oma_se: f64,
    pub infeasible_fraction: f64,
    pub trials: usize,
    /// Smallest relative surplus of a guaranteed rate over its OMA rate,
    /// `+inf` when nothing was guaranteed.
    pub worst_guarantee_margin: f64,
    /// Per-trial values that were NaN or infinite.
    pub non_finite: usize,
    /// Trials whose allocation claimed feasibility but missed a guarantee
    /// on recomputation (and were demoted to OMA).
    pub recheck_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sweep_value: f64,
    pub series: Vec<SeriesStats>,
}

impl SweepPoint {
    pub fn get(&self, scheme: Scheme, case: Option<DecodeCase>) -> Option<&SeriesStats> {
        self.series
            .iter()
            .find(|s| s.series == Series { scheme, case })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn sweep_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sweep_value).collect()
    }

    /// Mean SE of one series across the sweep.
    pub fn curve(&self, scheme: Scheme, case: Option<DecodeCase>) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|p| p.get(scheme, case).map(|s| s.mean_se))
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream for one trial.
pub fn trial_seed(master: u64, sweep_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ sweep_index as u64) ^ trial as u64)
}

pub fn trial_rng(master: u64, sweep_index: usize, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(master, sweep_index, trial))
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    values.iter().for_each(|v| s.add(*v));
    s.value() / values.len() as f64
}

/// Mean and 95% CI half-width `z s / sqrt(N)` with the unbiased sample
/// deviation; the half-width is 0 for a single sample.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = compensated_mean(values);
    if n < 2 {
        return (mean, 0.0);
    }
    let mut ss = CompensatedSum::default();
    values.iter().for_each(|v| ss.add((v - mean) * (v - mean)));
    let sd = (ss.value() / (n - 1) as f64).sqrt();
    (mean, Z_95 * sd / (n as f64).sqrt())
}

/// The curves a config asks for, in output order.
pub fn series_of(config: &ExperimentConfig) -> Vec<Series> {
    let cases = config.cases();
    config
        .schemes
        .iter()
        .flat_map(|scheme| {
            cases.iter().map(move |case| Series {
                scheme: *scheme,
                case: *case,
            })
        })
        .collect()
}

/// Runs every series on one trial's draw. All series share the topology and
/// the channel realization.
pub fn evaluate_trial(
    config: &ExperimentConfig,
    sweep_index: usize,
    sweep_value: f64,
    trial: usize,
    series: &[Series],
) -> Result<Vec<TrialResult>> {
    let radio = config.radio.params()?;
    let geometry = config.placement;
    let mut rng = trial_rng(config.seed, sweep_index, trial);
    let first_case = series.iter().find_map(|s| s.case);
    let topology = build_scenario(
        config.scenario,
        sweep_value,
        first_case,
        &geometry,
        radio.tx_power,
        &mut rng,
    )?;
    let gains = draw_realization(&topology, &radio, &mut rng)?;
    series
        .iter()
        .map(|s| {
            let t = match s.case {
                Some(case) if Some(case) != topology.decode_case => topology.with_case(case),
                _ => topology.clone(),
            };
            run_trial_with(
                &t,
                &gains,
                s.scheme,
                &radio,
                config.interference_mode,
                config.jt_split,
            )
        })
        .collect()
}

fn aggregate(series: Series, results: &[&TrialResult]) -> SeriesStats {
    let se: Vec<f64> = results.iter().map(|r| r.se()).collect();
    let oma: Vec<f64> = results.iter().map(|r| r.oma_se).collect();
    let (mean_se, ci95) = mean_ci95(&se);
    let infeasible = results.iter().filter(|r| !r.feasible).count();
    let non_finite = results
        .iter()
        .filter(|r| !(r.noma_se.is_finite() && r.oma_se.is_finite()))
        .count();
    SeriesStats {
        series,
        mean_se,
        ci95,
        mean_oma_se: compensated_mean(&oma),
        infeasible_fraction: infeasible as f64 / results.len() as f64,
        trials: results.len(),
        worst_guarantee_margin: results
            .iter()
            .filter(|r| r.feasible)
            .map(|r| r.guarantee_margin())
            .fold(f64::INFINITY, f64::min),
        non_finite,
        recheck_failures: results
            .iter()
            .filter(|r| r.diagnostics.iter().any(|d| d.ends_with(RECHECK_FAILED)))
            .count(),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs the configured sweep; `on_point` sees each point as it finishes.
pub fn run_sweep_with(
    config: &ExperimentConfig,
    mut on_point: impl FnMut(&SweepPoint),
) -> Result<SweepResult> {
    config.validate()?;
    let series = series_of(config);
    let pool = pool(config.workers)?;
    let mut points = Vec::new();
    for (k, sweep_value) in config.sweep.values().into_iter().enumerate() {
        let per_trial: Vec<Vec<TrialResult>> = pool.install(|| {
            (0..config.trials)
                .into_par_iter()
                .map(|t| evaluate_trial(config, k, sweep_value, t, &series))
                .collect::<Result<Vec<_>>>()
        })?;
        let stats = series
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let column: Vec<&TrialResult> = per_trial.iter().map(|r| &r[i]).collect();
                aggregate(*s, &column)
            })
            .collect();
        let point = SweepPoint {
            sweep_value,
            series: stats,
        };
        on_point(&point);
        points.push(point);
    }
    Ok(SweepResult { points })
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep_with(config, |_| {})
}
