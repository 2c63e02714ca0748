//! Euler-Maruyama integration of the Ito form
//!
//! ```text
//! du = [ -(u^2 (u_xx - eps F'(u))_x)_x + C_Strat u_xx ] dt + (u dW)_x
//! ```
//!
//! The drift is treated implicitly through one cyclic pentadiagonal solve
//! per step (or Newton iterations for the fully implicit variant), the noise
//! explicitly. Steps that would produce a nonpositive film when `eps > 0`
//! are rejected and retried with half the step and a fresh increment.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::banded::CyclicBand;
use crate::diagnostics::{
    evaluate_state, DiagnosticsRecord, MartingaleTracker, TestFunction, Trajectory, TrajectoryMeta,
    TrajectoryStatus,
};
use crate::error::{Result, StfeError};
use crate::grid::{Field, Grid};
use crate::model::{functionals, mobility_mean, ModelParams};
use crate::noise::{sample_increment, stream_for_seed, NoiseOperator, NoiseSpec, NoiseStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    SemiImplicit,
    FullyImplicit,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SemiImplicit => "semi_implicit",
            Self::FullyImplicit => "fully_implicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub sigma: f64,
    pub scheme: Scheme,
}

impl StepperConfig {
    pub fn new(dt_init: f64, dt_min: f64, sigma: f64) -> Result<Self> {
        let c = Self {
            dt_init,
            dt_min,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            sigma,
            scheme: Scheme::SemiImplicit,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_init.is_finite() && self.dt_init > 0.0) {
            return Err(StfeError::InvalidTimeStep(self.dt_init));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_init) {
            return Err(StfeError::InvalidParameter(format!(
                "dt_min = {} must lie in (0, dt_init = {})",
                self.dt_min, self.dt_init
            )));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(StfeError::InvalidParameter(
                "newton_tol and newton_max_iter must be positive".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(StfeError::InvalidParameter(format!(
                "sigma must lie in (0, 1], got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Grid, model parameters and noise operator of one simulation.
/// `params.c_strat` is always the value implied by the noise spectrum.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub params: ModelParams,
    pub noise: NoiseOperator,
}

impl Problem {
    pub fn new(grid: Grid, spec: NoiseSpec, mut params: ModelParams) -> Result<Self> {
        let noise = NoiseOperator::new(spec, grid)?;
        params.c_strat = noise.c_strat();
        params.validate()?;
        Ok(Self {
            grid,
            params,
            noise,
        })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut out = self.clone();
        out.params = self.params.with_eps(eps)?;
        Ok(out)
    }

    pub fn spec(&self) -> &NoiseSpec {
        self.noise.spec()
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub u: Field,
    pub dt_current: f64,
    pub stream: NoiseStream,
    pub stopped_at: Option<f64>,
    pub frozen_u: Option<Field>,
    pub rejections: u64,
    pub accepted: u64,
    pub failed: bool,
}

impl SimState {
    pub fn new(u: Field, seed: u64, config: &StepperConfig) -> Self {
        Self {
            t: 0.0,
            u,
            dt_current: config.dt_init,
            stream: stream_for_seed(seed),
            stopped_at: None,
            frozen_u: None,
            rejections: 0,
            accepted: 0,
            failed: false,
        }
    }
}

fn require_positive(u: &[f64], params: &ModelParams) -> Result<()> {
    if params.eps > 0.0 {
        if let Some(&v) = u.iter().find(|&&v| !(v > 0.0)) {
            return Err(StfeError::NonPositive(v));
        }
    }
    Ok(())
}

/// `D-(M D+ p) + C_Strat d2(u)` with `p = -d2(u) + eps F'(u)` and the edge
/// mobility `M_{i+1/2} = u_i u_{i+1}`.
pub fn drift(u: &[f64], params: &ModelParams, grid: &Grid) -> Result<Field> {
    require_positive(u, params)?;
    let n = u.len();
    let d2u = grid.d2(u);
    let mut p: Vec<f64> = d2u.iter().map(|v| -v).collect();
    if params.eps > 0.0 {
        for (pi, &ui) in p.iter_mut().zip(u) {
            *pi -= params.eps * params.p * ui.powf(-params.p - 1.0);
        }
    }
    let dp = grid.d1_forward(&p);
    let flux: Vec<f64> = (0..n)
        .map(|i| -mobility_mean(u[i], u[(i + 1) % n]) * dp[i])
        .collect();
    let mut out = grid.d1_backward(&flux);
    for (o, d) in out.iter_mut().zip(d2u.iter()) {
        *o = -*o + params.c_strat * d;
    }
    Ok(out)
}

/// Linearized implicit drift stage. Mobility is frozen at `u`, and
/// `eps F'` is linearized about `u`:
///
/// ```text
/// (I - dt L) u* = u + dt D-(M D+ q),
/// L v = D-(M D+ (-d2 v + d v)) + C d2 v,
/// d = eps F''(u),  q = eps F'(u) - eps F''(u) u
/// ```
fn semi_implicit_stage(u: &[f64], dt: f64, params: &ModelParams, grid: &Grid) -> Result<Vec<f64>> {
    let n = u.len();
    let mob: Vec<f64> = (0..n).map(|i| mobility_mean(u[i], u[(i + 1) % n])).collect();
    let eps_on = params.eps > 0.0;
    let (d, q): (Vec<f64>, Vec<f64>) = if eps_on {
        u.iter()
            .map(|&v| {
                let f1 = -params.p * v.powf(-params.p - 1.0);
                let f2 = params.p * (params.p + 1.0) * v.powf(-params.p - 2.0);
                (params.eps * f2, params.eps * (f1 - f2 * v))
            })
            .unzip()
    } else {
        (vec![0.0; n], vec![0.0; n])
    };
    let c = params.c_strat;
    let flux_div = |w: &[f64]| -> Field {
        let dw = grid.d1_forward(w);
        let f: Vec<f64> = dw.iter().zip(&mob).map(|(a, m)| a * m).collect();
        grid.d1_backward(&f)
    };
    let apply = |v: &[f64]| -> Vec<f64> {
        let d2v = grid.d2(v);
        let inner: Vec<f64> = (0..n).map(|i| -d2v[i] + d[i] * v[i]).collect();
        let lv = flux_div(&inner);
        (0..n).map(|i| v[i] - dt * (lv[i] + c * d2v[i])).collect()
    };
    let a = CyclicBand::from_operator(n, apply);
    let mut rhs = u.to_vec();
    if eps_on {
        let fq = flux_div(&q);
        for (r, f) in rhs.iter_mut().zip(fq.iter()) {
            *r += dt * f;
        }
    }
    a.solve(&rhs)
}

/// Newton iteration on `v - u - dt drift(v) = 0`, started from the
/// semi-implicit stage, with a finite-difference pentadiagonal Jacobian.
fn fully_implicit_stage(
    u: &[f64],
    dt: f64,
    params: &ModelParams,
    grid: &Grid,
    config: &StepperConfig,
) -> Result<Vec<f64>> {
    let n = u.len();
    let residual = |v: &[f64]| -> Result<Vec<f64>> {
        let dr = drift(v, params, grid)?;
        Ok((0..n).map(|i| v[i] - u[i] - dt * dr[i]).collect())
    };
    let mut v = semi_implicit_stage(u, dt, params, grid)?;
    let scale = u.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for _ in 0..config.newton_max_iter {
        let r = residual(&v)?;
        let norm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm <= config.newton_tol * scale {
            return Ok(v);
        }
        let h = 1e-7 * scale;
        let mut jac_err = None;
        let jac = CyclicBand::from_operator(n, |probe| {
            let shifted: Vec<f64> = v.iter().zip(probe).map(|(a, b)| a + h * b).collect();
            match residual(&shifted) {
                Ok(rs) => rs.iter().zip(&r).map(|(a, b)| (a - b) / h).collect(),
                Err(e) => {
                    jac_err = Some(e);
                    vec![0.0; n]
                }
            }
        });
        if let Some(e) = jac_err {
            return Err(e);
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = jac.solve(&neg)?;
        for (vi, di) in v.iter_mut().zip(delta) {
            *vi += di;
        }
    }
    Err(StfeError::Singular)
}

/// Result of one call to [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Accepted { dt: f64 },
    /// The trajectory is stopped; nothing changed.
    Frozen,
    /// `dt_current` dropped below `dt_min`.
    Failed,
}

/// Advance by one accepted step of at most `max_dt`.
pub fn step(state: &mut SimState, problem: &Problem, config: &StepperConfig, max_dt: f64) -> Result<StepOutcome> {
    if state.failed {
        return Err(StfeError::InvalidParameter("stepping a failed trajectory".into()));
    }
    if state.stopped_at.is_some() {
        return Ok(StepOutcome::Frozen);
    }
    let params = &problem.params;
    let grid = &problem.grid;
    let spec = problem.spec();
    loop {
        let dt = state.dt_current.min(max_dt);
        if !(dt > 0.0) {
            return Err(StfeError::InvalidTimeStep(dt));
        }
        let stage = match config.scheme {
            Scheme::SemiImplicit => semi_implicit_stage(&state.u, dt, params, grid),
            Scheme::FullyImplicit => fully_implicit_stage(&state.u, dt, params, grid, config),
        };
        let mut next = match stage {
            Ok(v) => Some(v),
            Err(StfeError::Singular) | Err(StfeError::NonPositive(_)) => None,
            Err(e) => return Err(e),
        };
        if let Some(v) = next.as_mut() {
            if !spec.is_silent() {
                let inc = sample_increment(spec, dt, &mut state.stream)?;
                let noise = problem.noise.noise_term(&state.u, &inc);
                for (a, b) in v.iter_mut().zip(noise.iter()) {
                    *a += b;
                }
            }
        }
        let ok = next.as_ref().is_some_and(|v| {
            v.iter().all(|x| x.is_finite()) && (params.eps == 0.0 || v.iter().all(|&x| x > 0.0))
        });
        if ok {
            state.u = Field(next.unwrap());
            state.t += dt;
            state.accepted += 1;
            state.dt_current = (state.dt_current * 1.2).min(config.dt_init);
            return Ok(StepOutcome::Accepted { dt });
        }
        state.rejections += 1;
        state.dt_current *= 0.5;
        debug!("step rejected at t = {:e}, dt -> {:e}", state.t, state.dt_current);
        if state.dt_current < config.dt_min {
            state.failed = true;
            return Ok(StepOutcome::Failed);
        }
    }
}

/// Set the stopping time once `E_eps(u) >= 1/sigma`. Returns whether the
/// state is stopped.
pub fn check_stop(state: &mut SimState, problem: &Problem, config: &StepperConfig) -> bool {
    if state.stopped_at.is_some() {
        return true;
    }
    let e = functionals(&state.u, &problem.params, &problem.grid).energy;
    if !(e < 1.0 / config.sigma) {
        state.stopped_at = Some(state.t);
        state.frozen_u = Some(state.u.clone());
        return true;
    }
    false
}

/// Horizon, record cadence and optional per-record extras of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub horizon: f64,
    /// Records after `t = 0`, equally spaced in time.
    pub records: usize,
    pub keep_snapshots: bool,
    pub test_functions: Vec<TestFunction>,
}

impl RunOptions {
    pub fn new(horizon: f64, records: usize) -> Self {
        Self {
            horizon,
            records,
            keep_snapshots: false,
            test_functions: Vec::new(),
        }
    }

    pub fn with_snapshots(mut self) -> Self {
        self.keep_snapshots = true;
        self
    }

    pub fn with_test_functions(mut self, phis: Vec<TestFunction>) -> Self {
        self.test_functions = phis;
        self
    }
}

struct Recorder<'a> {
    problem: &'a Problem,
    trackers: Vec<MartingaleTracker>,
    records: Vec<DiagnosticsRecord>,
    snapshots: Vec<(f64, Field)>,
    keep_snapshots: bool,
}

impl Recorder<'_> {
    fn push(&mut self, state: &SimState) -> Result<()> {
        let (functionals, dissipation, fixed_eps, min_bound) =
            evaluate_state(&state.u, &self.problem.params, &self.problem.grid)?;
        let mut martingale = Vec::with_capacity(self.trackers.len());
        let mut qv_integral = Vec::with_capacity(self.trackers.len());
        for tr in &mut self.trackers {
            let (m, q) = tr.update(&state.u, state.t, &self.problem.params, &self.problem.noise);
            martingale.push(m);
            qv_integral.push(q);
            if state.stopped_at.is_some() {
                tr.freeze();
            }
        }
        self.records.push(DiagnosticsRecord {
            t: state.t,
            functionals,
            dissipation,
            fixed_eps,
            martingale,
            qv_integral,
            min_bound,
            rejections: state.rejections,
            stopped: state.stopped_at.is_some(),
        });
        if self.keep_snapshots {
            self.snapshots.push((state.t, state.u.clone()));
        }
        Ok(())
    }
}

/// Integrate from `u0` to the horizon. Deterministic in all arguments.
pub fn run(u0: Field, options: &RunOptions, problem: &Problem, config: &StepperConfig, seed: u64) -> Result<Trajectory> {
    config.validate()?;
    problem.grid.check(&u0)?;
    require_positive(&u0, &problem.params)?;
    if !(options.horizon >= 0.0 && options.horizon.is_finite()) {
        return Err(StfeError::InvalidParameter(format!(
            "horizon must be nonnegative, got {}",
            options.horizon
        )));
    }
    let records = if options.horizon == 0.0 { 0 } else { options.records.max(1) };
    let spacing = if records > 0 { options.horizon / records as f64 } else { 0.0 };
    let sparse_cadence = spacing > 10.0 * config.dt_init;

    let mut state = SimState::new(u0, seed, config);
    let trackers = options
        .test_functions
        .iter()
        .map(|phi| MartingaleTracker::new(phi, &state.u, 0.0, &problem.params, &problem.noise))
        .collect();
    let mut rec = Recorder {
        problem,
        trackers,
        records: Vec::with_capacity(records + 1),
        snapshots: Vec::new(),
        keep_snapshots: options.keep_snapshots,
    };
    check_stop(&mut state, problem, config);
    rec.push(&state)?;

    let mut failure = None;
    'outer: for j in 1..=records {
        let target = options.horizon * j as f64 / records as f64;
        loop {
            let remaining = target - state.t;
            if remaining <= 1e-12 * target.max(1e-300) || state.stopped_at.is_some() {
                break;
            }
            match step(&mut state, problem, config, remaining)? {
                StepOutcome::Accepted { .. } => {
                    check_stop(&mut state, problem, config);
                }
                StepOutcome::Frozen => break,
                StepOutcome::Failed => {
                    failure = Some(format!("time step underflow at t = {:e}", state.t));
                    break 'outer;
                }
            }
        }
        // land exactly on the record grid; a stopped state stays frozen
        state.t = target;
        rec.push(&state)?;
    }

    let status = if state.failed {
        TrajectoryStatus::Failed
    } else if state.stopped_at.is_some() {
        TrajectoryStatus::Stopped
    } else {
        TrajectoryStatus::Completed
    };
    Ok(Trajectory {
        records: rec.records,
        status,
        stopped_at: state.stopped_at,
        failure,
        metadata: TrajectoryMeta {
            seed,
            params: problem.params,
            n_cells: problem.grid.n_cells(),
            length: problem.grid.length(),
            k_max: problem.spec().k_max(),
            dt_init: config.dt_init,
            sigma: config.sigma,
            scheme: config.scheme.as_str(),
            stop_detection: "post-step",
        },
        snapshots: rec.snapshots,
        final_state: state.u,
        sparse_cadence,
    })
}
