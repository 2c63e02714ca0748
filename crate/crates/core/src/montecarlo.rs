//! Ensembles of independent trajectories and the statistics drawn from them.
//!
//! Sample `i` uses the stream seeded with `base_seed + i`. Samples run on a
//! rayon pool whose size comes from `STFE_THREADS`; results are gathered in
//! sample order and reduced sequentially, so the output does not depend on
//! the worker count.

use log::warn;
use rayon::prelude::*;

use crate::diagnostics::{TestFunction, Trajectory, TrajectoryStatus};
use crate::error::{Result, StfeError};
use crate::grid::Field;
use crate::model::{functionals, ModelParams};
use crate::stepper::{run, Problem, RunOptions, StepperConfig};

/// Fraction of failed samples above which an ensemble is marked invalid.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_samples: usize,
    pub base_seed: u64,
    pub q_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub phi_modes: Vec<i64>,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(StfeError::Config(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if self.base_seed.checked_add(self.n_samples as u64 - 1).is_none() {
            return Err(StfeError::Config(format!(
                "seeds base_seed + i overflow for base_seed = {} and n = {}; seeds would collide",
                self.base_seed, self.n_samples
            )));
        }
        if let Some(q) = self.q_list.iter().find(|&&q| !(q >= 1.0 && q.is_finite())) {
            return Err(StfeError::Config(format!("moment exponents must be >= 1, got {q}")));
        }
        Ok(())
    }

    pub fn seed(&self, i: usize) -> u64 {
        self.base_seed + i as u64
    }

    pub fn test_functions(&self) -> Vec<TestFunction> {
        self.phi_modes.iter().map(|&k| TestFunction::mode(k)).collect()
    }
}

/// Per-sample scalar statistics entering the moment estimates.
pub const STATISTICS: [&str; 6] = [
    "sup_e1",
    "sup_h",
    "int_quartic",
    "int_hessian",
    "int_potential",
    "int_pressure",
];

/// Reduced data of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub seed: u64,
    pub status: TrajectoryStatus,
    /// Values in the order of [`STATISTICS`].
    pub stats: [f64; 6],
    pub e1_initial: f64,
    pub sup_e2: f64,
    pub min_u: f64,
    pub min_bound_violations: usize,
    pub rejections: u64,
    /// `[phi][record] -> (M, int qv)`
    pub martingale: Vec<Vec<(f64, f64)>>,
    pub times: Vec<f64>,
}

impl SampleSummary {
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let recs = &tr.records;
        let sup_e1 = tr.sup(|r| r.functionals.e1);
        let sup_h = tr.sup(|r| r.functionals.h_eps);
        let stats = [
            sup_e1,
            sup_h,
            tr.time_integral(|r| r.dissipation.quartic),
            tr.time_integral(|r| r.dissipation.hessian),
            tr.time_integral(|r| r.dissipation.potential),
            tr.time_integral(|r| r.dissipation.pressure),
        ];
        let n_phi = recs[0].martingale.len();
        let martingale = (0..n_phi)
            .map(|j| recs.iter().map(|r| (r.martingale[j], r.qv_integral[j])).collect())
            .collect();
        Self {
            seed: tr.metadata.seed,
            status: tr.status,
            stats,
            e1_initial: recs[0].functionals.e1,
            sup_e2: tr.sup(|r| r.functionals.e2),
            min_u: recs.iter().map(|r| r.functionals.min_u).fold(f64::INFINITY, f64::min),
            min_bound_violations: recs.iter().filter(|r| r.min_bound == Some(false)).count(),
            rejections: tr.rejections(),
            martingale,
            times: recs.iter().map(|r| r.t).collect(),
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub eps: f64,
    pub q: f64,
    pub statistic: &'static str,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleRow {
    pub phi: i64,
    pub t: f64,
    pub mean_m: f64,
    pub se_m: f64,
    pub mean_m2: f64,
    pub mean_qv: f64,
    /// `mean(M^2) / mean(int qv)`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub eps: f64,
    pub n_requested: usize,
    pub n_used: usize,
    pub n_failed: usize,
    pub n_stopped: usize,
    pub total_rejections: u64,
    /// False when more than 5% of the samples failed.
    pub valid: bool,
    pub moments: Vec<MomentRow>,
    pub martingale: Vec<MartingaleRow>,
    pub mean_e1_initial: f64,
    pub se_e1_initial: f64,
    pub mean_sup_e2: f64,
    /// Smallest film height over all records of all used samples.
    pub min_u: f64,
    pub min_bound_violations: usize,
    /// `e2` and `int Pi_eps` of the initial datum.
    pub initial_e2: f64,
    pub initial_pi: f64,
    pub samples: Vec<SampleSummary>,
}

impl EnsembleStats {
    pub fn moment(&self, statistic: &str, q: f64) -> Option<&MomentRow> {
        self.moments
            .iter()
            .find(|r| r.statistic == statistic && r.q == q)
    }
}

/// Worker count from `STFE_THREADS`; 0 lets rayon pick.
pub fn worker_count() -> usize {
    std::env::var("STFE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| StfeError::InvalidParameter(format!("thread pool: {e}")))
}

/// Run every sample of one ensemble and reduce.
pub fn run_ensemble(
    config: &EnsembleConfig,
    problem: &Problem,
    stepper: &StepperConfig,
    options: &RunOptions,
    u0: &Field,
) -> Result<EnsembleStats> {
    config.validate()?;
    let mut options = options.clone();
    options.test_functions = config.test_functions();
    let results: Vec<Result<SampleSummary>> = pool()?.install(|| {
        (0..config.n_samples)
            .into_par_iter()
            .map(|i| {
                run(u0.clone(), &options, problem, stepper, config.seed(i))
                    .map(|tr| SampleSummary::from_trajectory(&tr))
            })
            .collect()
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    reduce(config, problem.params, u0, problem, samples)
}

fn reduce(
    config: &EnsembleConfig,
    params: ModelParams,
    u0: &Field,
    problem: &Problem,
    samples: Vec<SampleSummary>,
) -> Result<EnsembleStats> {
    let n_failed = samples
        .iter()
        .filter(|s| s.status == TrajectoryStatus::Failed)
        .count();
    let used: Vec<&SampleSummary> = samples
        .iter()
        .filter(|s| s.status != TrajectoryStatus::Failed)
        .collect();
    if used.is_empty() {
        return Err(StfeError::AllSamplesFailed);
    }
    let valid = (n_failed as f64) <= MAX_FAILED_FRACTION * samples.len() as f64;
    if !valid {
        warn!(
            "{n_failed} of {} samples failed; ensemble marked invalid",
            samples.len()
        );
    }

    let mut moments = Vec::new();
    for &q in &config.q_list {
        for (j, name) in STATISTICS.iter().enumerate() {
            let vals: Vec<f64> = used.iter().map(|s| s.stats[j].powf(q)).collect();
            let (estimate, se) = mean_se(&vals);
            moments.push(MomentRow {
                eps: params.eps,
                q,
                statistic: name,
                estimate,
                se,
            });
        }
    }

    let mut martingale = Vec::new();
    let times = &used[0].times;
    for (j, &k) in config.phi_modes.iter().enumerate() {
        for (r, &t) in times.iter().enumerate() {
            let m: Vec<f64> = used.iter().map(|s| s.martingale[j][r].0).collect();
            let m2: Vec<f64> = m.iter().map(|v| v * v).collect();
            let qv: Vec<f64> = used.iter().map(|s| s.martingale[j][r].1).collect();
            let (mean_m, se_m) = mean_se(&m);
            let mean_m2 = mean_se(&m2).0;
            let mean_qv = mean_se(&qv).0;
            martingale.push(MartingaleRow {
                phi: k,
                t,
                mean_m,
                se_m,
                mean_m2,
                mean_qv,
                ratio: if mean_qv > 0.0 { mean_m2 / mean_qv } else { f64::NAN },
            });
        }
    }

    let e1: Vec<f64> = used.iter().map(|s| s.e1_initial).collect();
    let (mean_e1_initial, se_e1_initial) = mean_se(&e1);
    let sup_e2: Vec<f64> = used.iter().map(|s| s.sup_e2).collect();
    let init = functionals(u0, &params, &problem.grid);
    Ok(EnsembleStats {
        eps: params.eps,
        n_requested: samples.len(),
        n_used: used.len(),
        n_failed,
        n_stopped: used
            .iter()
            .filter(|s| s.status == TrajectoryStatus::Stopped)
            .count(),
        total_rejections: samples.iter().map(|s| s.rejections).sum(),
        valid,
        moments,
        martingale,
        mean_e1_initial,
        se_e1_initial,
        mean_sup_e2: mean_se(&sup_e2).0,
        min_u: used.iter().map(|s| s.min_u).fold(f64::INFINITY, f64::min),
        min_bound_violations: used.iter().map(|s| s.min_bound_violations).sum(),
        initial_e2: init.e2,
        initial_pi: init.energy - init.e1,
        samples,
    })
}

/// Largest over smallest ensemble-mean value of one statistic across the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpread {
    pub statistic: &'static str,
    pub q: f64,
    pub ratio: f64,
    /// Ratio exceeds [`SWEEP_GROWTH_LIMIT`].
    pub flagged: bool,
}

pub const SWEEP_GROWTH_LIMIT: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub ensembles: Vec<EnsembleStats>,
    pub spreads: Vec<SweepSpread>,
}

impl SweepReport {
    pub fn any_flagged(&self) -> bool {
        self.spreads.iter().any(|s| s.flagged)
    }
}

/// Run one ensemble per eps with shared seeds, so sample `i` sees the same
/// Brownian increments for every eps as long as no step is rejected.
/// `initial` builds the (eps-dependent) initial datum.
pub fn eps_sweep(
    config: &EnsembleConfig,
    problem: &Problem,
    stepper: &StepperConfig,
    options: &RunOptions,
    initial: impl Fn(&ModelParams) -> Result<Field>,
) -> Result<SweepReport> {
    config.validate()?;
    if config.eps_list.len() < 3 {
        return Err(StfeError::Config("eps sweep needs at least 3 eps values".into()));
    }
    let (lo, hi) = config
        .eps_list
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    if !(lo > 0.0 && hi / lo >= 100.0 * (1.0 - 1e-12)) {
        return Err(StfeError::Config(
            "eps sweep values must be positive and span at least two decades".into(),
        ));
    }
    let mut ensembles = Vec::with_capacity(config.eps_list.len());
    for &eps in &config.eps_list {
        let p = problem.with_eps(eps)?;
        let u0 = initial(&p.params)?;
        ensembles.push(run_ensemble(config, &p, stepper, options, &u0)?);
    }
    let mut spreads = Vec::new();
    for &q in &config.q_list {
        for name in STATISTICS {
            let vals: Vec<f64> = ensembles
                .iter()
                .filter_map(|e| e.moment(name, q).map(|r| r.estimate))
                .collect();
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = if min > 0.0 {
                max / min
            } else if max == 0.0 {
                1.0
            } else {
                f64::INFINITY
            };
            spreads.push(SweepSpread {
                statistic: name,
                q,
                ratio,
                flagged: !(ratio <= SWEEP_GROWTH_LIMIT),
            });
        }
    }
    Ok(SweepReport { ensembles, spreads })
}
