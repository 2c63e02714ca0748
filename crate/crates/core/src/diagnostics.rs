//! Functionals and integrals evaluated along trajectories: the dissipation
//! terms of the combined alpha-entropy/energy estimate, the weak-form
//! martingale `M_{eps,phi}` with its quadratic variation, and touchdown
//! exponent fits near (almost) dry spots.

use log::warn;

use crate::error::{Result, StfeError};
use crate::grid::{Field, Grid};
use crate::model::{functionals, min_bound_check, mobility_mean, FunctionalRecord, ModelParams};
use crate::noise::{basis_value, NoiseOperator};

/// The four nonnegative dissipation integrals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dissipation {
    /// `int u^2 ((u_xx - eps F'(u))_x)^2`
    pub pressure: f64,
    /// `int ((u^((a+3)/4))_x)^4`
    pub quartic: f64,
    /// `int ((u^((a+3)/2))_xx)^2`
    pub hessian: f64,
    /// `int u^(a+1) u_x^2 eps F''(u)`
    pub potential: f64,
}

/// Integrals that are finite for every fixed `eps > 0` but carry no
/// eps-uniform bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FixedEpsIntegrals {
    /// `int (u^2 p_x)^2`
    pub flux_sq: f64,
    /// `int u_xx^2`
    pub curvature_sq: f64,
    /// `int u^(-p-2) u_x^2`
    pub weighted_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub functionals: FunctionalRecord,
    pub dissipation: Dissipation,
    pub fixed_eps: Option<FixedEpsIntegrals>,
    /// `M_{eps,phi}(t)` per tracked test function.
    pub martingale: Vec<f64>,
    /// `int_0^t qv_rate ds` per tracked test function.
    pub qv_integral: Vec<f64>,
    /// Whether the pointwise minimum bound holds; `None` when `eps = 0`.
    pub min_bound: Option<bool>,
    /// Total step rejections up to `t`.
    pub rejections: u64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    Stopped,
    Failed,
}

impl TrajectoryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::Stopped => "stopped",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub params: ModelParams,
    pub n_cells: usize,
    pub length: f64,
    pub k_max: usize,
    pub dt_init: f64,
    pub sigma: f64,
    pub scheme: &'static str,
    /// The stopping time is detected on the state after the noise update.
    pub stop_detection: &'static str,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub status: TrajectoryStatus,
    pub stopped_at: Option<f64>,
    pub failure: Option<String>,
    pub metadata: TrajectoryMeta,
    /// `(t, u)` at every record when snapshots were requested.
    pub snapshots: Vec<(f64, Field)>,
    pub final_state: Field,
    /// Largest record spacing exceeded ten initial time steps.
    pub sparse_cadence: bool,
}

impl Trajectory {
    pub fn last(&self) -> &DiagnosticsRecord {
        self.records.last().expect("trajectory has at least one record")
    }

    /// Trapezoid rule over the records.
    pub fn time_integral(&self, f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
        self.records
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])))
            .sum()
    }

    /// Supremum over the recorded cadence.
    pub fn sup(&self, f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
        self.records.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rejections(&self) -> u64 {
        self.records.last().map_or(0, |r| r.rejections)
    }
}

fn check_nonnegative(u: &[f64]) -> Result<()> {
    match u.iter().copied().find(|&v| v < 0.0 || v.is_nan()) {
        Some(v) => Err(StfeError::Negative(v)),
        None => Ok(()),
    }
}

/// The discrete pressure `p = -d2(u) + eps F'(u)`.
pub fn pressure(u: &[f64], params: &ModelParams, grid: &Grid) -> Field {
    let mut p = grid.d2(u);
    for (pi, &ui) in p.iter_mut().zip(u) {
        *pi = -*pi;
        if params.eps > 0.0 {
            *pi += -params.eps * params.p * ui.powf(-params.p - 1.0);
        }
    }
    p
}

/// Evaluate the four dissipation integrals. Powers of `u` are taken nodewise
/// and then differenced; half-node integrands use the edge mobility mean or
/// the average of the two endpoint weights.
pub fn dissipation_terms(u: &[f64], params: &ModelParams, grid: &Grid) -> Result<Dissipation> {
    check_nonnegative(u)?;
    let n = u.len();
    let a = params.alpha;
    let dx = grid.dx();
    let eps_active = params.eps > 0.0;
    if eps_active {
        if let Some(&v) = u.iter().find(|&&v| v <= 0.0) {
            return Err(StfeError::NonPositive(v));
        }
    }

    let p = pressure(u, params, grid);
    let dp = grid.d1_forward(&p);
    let pressure_term: f64 = (0..n)
        .map(|i| mobility_mean(u[i], u[(i + 1) % n]) * dp[i] * dp[i])
        .sum::<f64>()
        * dx;

    let w = Field(u.iter().map(|v| v.powf((a + 3.0) / 4.0)).collect());
    let quartic = grid.d1_forward(&w).iter().map(|d| d.powi(4)).sum::<f64>() * dx;

    let v = Field(u.iter().map(|v| v.powf((a + 3.0) / 2.0)).collect());
    let hessian = grid.d2(&v).iter().map(|d| d * d).sum::<f64>() * dx;

    let potential = if eps_active {
        let weight: Vec<f64> = u
            .iter()
            .map(|&v| v.powf(a + 1.0) * params.eps * params.p * (params.p + 1.0) * v.powf(-params.p - 2.0))
            .collect();
        let du = grid.d1_forward(u);
        (0..n)
            .map(|i| 0.5 * (weight[i] + weight[(i + 1) % n]) * du[i] * du[i])
            .sum::<f64>()
            * dx
    } else {
        0.0
    };

    Ok(Dissipation {
        pressure: pressure_term,
        quartic,
        hessian,
        potential,
    })
}

/// Fixed-eps integrals; `None` unless `eps > 0` and `u > 0`.
pub fn fixed_eps_integrals(u: &[f64], params: &ModelParams, grid: &Grid) -> Option<FixedEpsIntegrals> {
    if params.eps <= 0.0 || u.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let n = u.len();
    let dx = grid.dx();
    let p = pressure(u, params, grid);
    let dp = grid.d1_forward(&p);
    let flux_sq = (0..n)
        .map(|i| (mobility_mean(u[i], u[(i + 1) % n]) * dp[i]).powi(2))
        .sum::<f64>()
        * dx;
    let curvature_sq = grid.d2(u).iter().map(|v| v * v).sum::<f64>() * dx;
    let du = grid.d1_forward(u);
    let weighted_slope = (0..n)
        .map(|i| {
            let wl = u[i].powf(-params.p - 2.0);
            let wr = u[(i + 1) % n].powf(-params.p - 2.0);
            0.5 * (wl + wr) * du[i] * du[i]
        })
        .sum::<f64>()
        * dx;
    Some(FixedEpsIntegrals {
        flux_sq,
        curvature_sq,
        weighted_slope,
    })
}

/// Smooth periodic test function given as a combination of basis modes,
/// so that its derivatives are available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub terms: Vec<(i64, f64)>,
}

impl TestFunction {
    pub fn mode(k: i64) -> Self {
        Self {
            terms: vec![(k, 1.0)],
        }
    }

    /// Add a constant offset (the `k = 0` mode carries `1/sqrt(L)`).
    pub fn shifted(mut self, c: f64, length: f64) -> Self {
        self.terms.push((0, c * length.sqrt()));
        self
    }

    pub fn derivative(&self, order: u32, grid: &Grid) -> Field {
        let l = grid.length();
        grid.sample(|x| {
            self.terms
                .iter()
                .map(|&(k, c)| c * basis_value(k, order, x, l))
                .sum()
        })
    }
}

/// Instantaneous quadratic-variation rate `sum_k lambda_k^2 (int D0(u g_k) phi)^2`.
pub fn qv_rate(u: &[f64], phi: &[f64], noise: &NoiseOperator) -> f64 {
    let grid = noise.grid();
    let spec = noise.spec();
    spec.modes()
        .zip(noise.basis())
        .map(|(k, g)| {
            let l2 = spec.lambda(k).powi(2);
            if l2 == 0.0 {
                return 0.0;
            }
            let pairing = grid.inner(&grid.d1_central(&g.mul(u)), phi);
            l2 * pairing * pairing
        })
        .sum()
}

/// Precomputed test-function data and running time integrals for
/// `M_{eps,phi}`.
#[derive(Debug, Clone)]
pub struct MartingaleTracker {
    phi: [Field; 4],
    initial_pairing: f64,
    last_t: f64,
    last_drift: f64,
    last_qv: f64,
    drift_integral: f64,
    qv_integral: f64,
    frozen: bool,
}

impl MartingaleTracker {
    pub fn new(phi: &TestFunction, u0: &[f64], t0: f64, params: &ModelParams, noise: &NoiseOperator) -> Self {
        let grid = noise.grid();
        let derivs: [Field; 4] = std::array::from_fn(|o| phi.derivative(o as u32, grid));
        let initial_pairing = grid.inner(u0, &derivs[0]);
        let last_drift = weak_drift_integrand(u0, &derivs, params, noise);
        let last_qv = qv_rate(u0, &derivs[0], noise);
        Self {
            phi: derivs,
            initial_pairing,
            last_t: t0,
            last_drift,
            last_qv,
            drift_integral: 0.0,
            qv_integral: 0.0,
            frozen: false,
        }
    }

    /// Advance the running integrals to time `t`; after `freeze` the
    /// integrands vanish (the trajectory is stopped).
    pub fn update(&mut self, u: &[f64], t: f64, params: &ModelParams, noise: &NoiseOperator) -> (f64, f64) {
        let grid = noise.grid();
        if !self.frozen {
            let drift = weak_drift_integrand(u, &self.phi, params, noise);
            let qv = qv_rate(u, &self.phi[0], noise);
            let h = t - self.last_t;
            self.drift_integral += 0.5 * h * (self.last_drift + drift);
            self.qv_integral += 0.5 * h * (self.last_qv + qv);
            self.last_drift = drift;
            self.last_qv = qv;
            self.last_t = t;
        }
        let m = grid.inner(u, &self.phi[0]) - self.initial_pairing - self.drift_integral;
        (m, self.qv_integral)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Spatial integrand of the deterministic part of `M_{eps,phi}`:
///
/// ```text
/// int u_x^3 phi_x + 3 int u u_x^2 phi_xx + int u^2 u_x phi_xxx
///   - int u^2 u_x eps F''(u) phi_x - 1/2 int sum_k lambda_k^2 g_k (g_k u)_x phi_x
/// ```
///
/// with `u_x` and `(g_k u)_x` from central differences.
pub fn weak_drift_integrand(u: &[f64], phi: &[Field; 4], params: &ModelParams, noise: &NoiseOperator) -> f64 {
    let grid = noise.grid();
    let ux = grid.d1_central(u);
    let mut cubic = 0.0;
    for i in 0..u.len() {
        let (v, d) = (u[i], ux[i]);
        cubic += d * d * d * phi[1][i] + 3.0 * v * d * d * phi[2][i] + v * v * d * phi[3][i];
        if params.eps > 0.0 {
            let f2 = params.p * (params.p + 1.0) * v.powf(-params.p - 2.0);
            cubic -= v * v * d * params.eps * f2 * phi[1][i];
        }
    }
    cubic *= grid.dx();
    let spec = noise.spec();
    let mut strat = 0.0;
    for (k, g) in spec.modes().zip(noise.basis()) {
        let l2 = spec.lambda(k).powi(2);
        if l2 == 0.0 {
            continue;
        }
        let dgu = grid.d1_central(&g.mul(u));
        strat += l2 * (0..u.len()).map(|i| g[i] * dgu[i] * phi[1][i]).sum::<f64>();
    }
    strat *= 0.5 * grid.dx();
    cubic - strat
}

/// One point of the martingale time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingalePoint {
    pub t: f64,
    pub value: f64,
    pub qv_integral: f64,
}

/// `M_{eps,phi}` along a trajectory's stored snapshots.
pub fn martingale_residual(
    trajectory: &Trajectory,
    phi: &TestFunction,
    params: &ModelParams,
    noise: &NoiseOperator,
) -> Result<Vec<MartingalePoint>> {
    let snaps = &trajectory.snapshots;
    if snaps.is_empty() {
        return Err(StfeError::InvalidParameter(
            "trajectory stores no snapshots".into(),
        ));
    }
    let spacing = snaps
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .fold(0.0, f64::max);
    if spacing > 10.0 * trajectory.metadata.dt_init {
        warn!(
            "snapshot spacing {spacing:e} exceeds 10 dt = {:e}; time integrals are coarse",
            10.0 * trajectory.metadata.dt_init
        );
    }
    let (t0, u0) = &snaps[0];
    let mut tracker = MartingaleTracker::new(phi, u0, *t0, params, noise);
    let mut out = Vec::with_capacity(snaps.len());
    for (t, u) in snaps {
        if let Some(ts) = trajectory.stopped_at {
            if *t > ts {
                tracker.freeze();
            }
        }
        let (value, qv) = tracker.update(u, *t, params, noise);
        out.push(MartingalePoint {
            t: *t,
            value,
            qv_integral: qv,
        });
    }
    Ok(out)
}

/// Functionals, dissipation terms, fixed-eps integrals and the minimum-bound
/// check of one state.
pub fn evaluate_state(
    u: &Field,
    params: &ModelParams,
    grid: &Grid,
) -> Result<(FunctionalRecord, Dissipation, Option<FixedEpsIntegrals>, Option<bool>)> {
    let f = functionals(u, params, grid);
    let d = dissipation_terms(u, params, grid)?;
    let bound = if params.eps > 0.0 {
        Some(min_bound_check(u, params, grid, None).is_ok_and(|r| r.satisfied))
    } else {
        None
    };
    Ok((f, d, fixed_eps_integrals(u, params, grid), bound))
}

/// Fitted local power law `u - u_min ~ |x - x0|^beta` at a near-touchdown minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchdownFit {
    pub location: f64,
    pub u_min: f64,
    pub exponent: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TouchdownResult {
    Fit(TouchdownFit),
    Skipped {
        location: f64,
        u_min: f64,
        n_points: usize,
        reason: SkipReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Window held fewer than six usable points.
    TooFewPoints,
    /// The minimum is a run of `width` equal nodes, not an isolated point.
    Plateau { width: usize },
}

/// Nodes adjacent to the minimum excluded from the fit.
pub const TOUCHDOWN_EXCLUDED: usize = 1;

/// Fit touchdown exponents at every local minimum below `threshold`.
///
/// For each minimum `x0` the window extends outwards on both sides while
/// `u <= 10 threshold`; the minimum itself and its nearest neighbours are
/// dropped, as are points with `u - u_min` below a rounding floor. The slope
/// of `log(u - u_min)` against `log |x - x0|` is the exponent.
pub fn touchdown_exponent(u: &[f64], grid: &Grid, threshold: f64) -> Result<Vec<TouchdownResult>> {
    touchdown_exponent_with(u, grid, threshold, TOUCHDOWN_EXCLUDED)
}

pub fn touchdown_exponent_with(
    u: &[f64],
    grid: &Grid,
    threshold: f64,
    excluded: usize,
) -> Result<Vec<TouchdownResult>> {
    if !(threshold > 0.0) {
        return Err(StfeError::InvalidParameter(format!(
            "touchdown threshold must be positive, got {threshold}"
        )));
    }
    let n = u.len();
    let at = |i: isize| u[i.rem_euclid(n as isize) as usize];
    let upper = 10.0 * threshold;
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < n {
        let ui = u[i];
        let is_min = ui < threshold && at(i as isize - 1) >= ui && at(i as isize + 1) >= ui;
        if !is_min {
            i += 1;
            continue;
        }
        let mut run = 1;
        while run < n && at((i + run) as isize) == ui {
            run += 1;
        }
        if i == 0 {
            // a run crossing the periodic seam was already counted from its start
            let mut back = 1;
            while back < n && at(-(back as isize)) == ui {
                back += 1;
            }
            if back > 1 && back < n {
                i += run;
                continue;
            }
        }
        if run > 1 {
            out.push(TouchdownResult::Skipped {
                location: grid.node(i),
                u_min: ui,
                n_points: 0,
                reason: SkipReason::Plateau { width: run },
            });
            i += run;
            continue;
        }
        let floor = 1e-12 * u_max.abs().max(1.0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for dir in [-1isize, 1] {
            for step in 1..=(n / 2) as isize {
                let j = i as isize + dir * step;
                let v = at(j);
                if v > upper {
                    break;
                }
                if (step as usize) <= excluded {
                    continue;
                }
                let dv = v - ui;
                if dv <= floor {
                    continue;
                }
                xs.push((step as f64 * grid.dx()).ln());
                ys.push(dv.ln());
            }
        }
        let location = grid.node(i);
        if xs.len() < 6 {
            out.push(TouchdownResult::Skipped {
                location,
                u_min: ui,
                n_points: xs.len(),
                reason: SkipReason::TooFewPoints,
            });
        } else {
            let (slope, r2) = linear_fit(&xs, &ys);
            out.push(TouchdownResult::Fit(TouchdownFit {
                location,
                u_min: ui,
                exponent: slope,
                r_squared: r2,
                n_points: xs.len(),
            }));
        }
        i += run;
    }
    Ok(out)
}

/// Least-squares slope and coefficient of determination.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{basis_eval, NoiseSpec};
    use std::f64::consts::PI;

    fn params(eps: f64) -> ModelParams {
        ModelParams::new(eps, 3.0, 0.2, -0.25, 0.0).unwrap()
    }

    #[test]
    fn constant_state_has_no_dissipation() {
        let g = Grid::new(1.0, 32).unwrap();
        let d = dissipation_terms(&g.constant(0.8), &params(0.01), &g).unwrap();
        assert!(d.pressure.abs() < 1e-20 && d.quartic == 0.0 && d.hessian < 1e-20 && d.potential == 0.0);
    }

    #[test]
    fn potential_term_vanishes_without_eps() {
        let g = Grid::new(1.0, 128).unwrap();
        let g1 = basis_eval(1, &g).unwrap();
        let u = g1.map(|v| 1.0 + 0.1 * v);
        let d = dissipation_terms(&u, &params(0.0), &g).unwrap();
        assert_eq!(d.potential, 0.0);
        assert!(d.pressure > 0.0 && d.quartic > 0.0 && d.hessian > 0.0);
    }

    #[test]
    fn negative_nodes_rejected() {
        let g = Grid::new(1.0, 16).unwrap();
        let mut u = g.constant(1.0);
        u[4] = -1e-3;
        assert!(matches!(dissipation_terms(&u, &params(0.0), &g), Err(StfeError::Negative(_))));
    }

    /// Midpoint quadrature at 10^6 points with the analytic derivative of
    /// `(1 + 0.1 g_1)^((a+3)/4)`.
    fn quartic_oracle(alpha: f64) -> f64 {
        let m = 1_000_000;
        let h = 1.0 / m as f64;
        let a = 0.1 * 2f64.sqrt();
        let w = 2.0 * PI;
        let e = (alpha + 3.0) / 4.0;
        (0..m)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                let u = 1.0 + a * (w * x).sin();
                let ux = a * w * (w * x).cos();
                (e * u.powf(e - 1.0) * ux).powi(4)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn quartic_term_matches_quadrature_oracle() {
        let g = Grid::new(1.0, 128).unwrap();
        let g1 = basis_eval(1, &g).unwrap();
        let u = g1.map(|v| 1.0 + 0.1 * v);
        let d = dissipation_terms(&u, &params(0.0), &g).unwrap();
        let oracle = quartic_oracle(-0.25);
        assert!((d.quartic - oracle).abs() / oracle < 5e-3, "{} vs {oracle}", d.quartic);
    }

    #[test]
    fn qv_rate_edge_cases() {
        let g = Grid::new(1.0, 64).unwrap();
        let spec = NoiseSpec::power_law(0.5, 3.0, 8).unwrap();
        let op = NoiseOperator::new(spec, g).unwrap();
        let phi = TestFunction::mode(1).derivative(0, &g);
        assert_eq!(qv_rate(&g.zeros(), &phi, &op), 0.0);
        let u = g.sample(|x| 1.0 + 0.3 * (2.0 * PI * x).cos());
        assert!(qv_rate(&u, &g.constant(2.0), &op).abs() < 1e-24);
    }

    #[test]
    fn qv_rate_single_constant_mode_matches_direct_sum() {
        let g = Grid::new(1.0, 64).unwrap();
        let l: f64 = 1.0;
        let op = NoiseOperator::new(NoiseSpec::explicit(vec![l.sqrt(), 0.0]).unwrap(), g).unwrap();
        let u = g.sample(|x| 1.0 + 0.2 * (2.0 * PI * x).sin() + 0.1 * (4.0 * PI * x).cos());
        let phi = TestFunction::mode(1).derivative(0, &g);
        // lambda_0^2 = L, g_0 = 1/sqrt(L): rate = L * (int D0(u)/sqrt(L) phi)^2
        let n = u.len();
        let mut pairing = 0.0;
        for i in 0..n {
            let du = (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2.0 * g.dx());
            pairing += du / l.sqrt() * phi[i] * g.dx();
        }
        let oracle = l * pairing * pairing;
        let got = qv_rate(&u, &phi, &op);
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn qv_rate_invariant_under_constant_shift() {
        let g = Grid::new(1.0, 64).unwrap();
        let op = NoiseOperator::new(NoiseSpec::power_law(0.5, 3.0, 8).unwrap(), g).unwrap();
        let u = g.sample(|x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let phi = TestFunction::mode(2);
        let a = qv_rate(&u, &phi.derivative(0, &g), &op);
        let b = qv_rate(&u, &phi.clone().shifted(3.0, 1.0).derivative(0, &g), &op);
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn test_function_shift_keeps_derivatives() {
        let g = Grid::new(2.0, 32).unwrap();
        let phi = TestFunction::mode(-1).shifted(1.5, 2.0);
        let base = TestFunction::mode(-1);
        assert!(phi.derivative(0, &g).max_abs_diff(&base.derivative(0, &g).map(|v| v + 1.5)) < 1e-14);
        for o in 1..4 {
            assert!(phi.derivative(o, &g).max_abs_diff(&base.derivative(o, &g)) < 1e-12);
        }
    }

    fn synthetic(beta: f64) -> (Grid, Field) {
        let g = Grid::new(1.0, 512).unwrap();
        let x0 = 0.5;
        let u = g.sample(|x| (x - x0).abs().powf(beta));
        (g, u)
    }

    fn single_fit(beta: f64) -> TouchdownFit {
        let (g, u) = synthetic(beta);
        let res = touchdown_exponent(&u, &g, 0.01).unwrap();
        let fits: Vec<_> = res
            .into_iter()
            .filter_map(|r| match r {
                TouchdownResult::Fit(f) => Some(f),
                _ => None,
            })
            .collect();
        assert_eq!(fits.len(), 1);
        fits[0].clone()
    }

    #[test]
    fn touchdown_recovers_parabola() {
        let f = single_fit(2.0);
        assert!((f.exponent - 2.0).abs() < 0.05, "{}", f.exponent);
        assert!((f.location - 0.5).abs() < 1e-12);
    }

    #[test]
    fn touchdown_recovers_wedge() {
        let f = single_fit(1.0);
        assert!((f.exponent - 1.0).abs() < 0.05);
        assert!(f.exponent <= 1.05);
    }

    #[test]
    fn touchdown_recovers_borderline_exponent() {
        let f = single_fit(9.0 / 8.0);
        assert!((f.exponent - 1.125).abs() < 0.05, "{}", f.exponent);
    }

    #[test]
    fn touchdown_window_exclusion_sensitivity() {
        // profile with a smooth bottom of width ~ dx: excluding more nodes
        // moves the fit towards the outer exponent
        let g = Grid::new(1.0, 512).unwrap();
        let d = g.dx();
        let u = g.sample(|x| ((x - 0.5).powi(2) + d * d).powf(0.75) - d.powf(1.5));
        let fit = |excl| match &touchdown_exponent_with(&u, &g, 0.01, excl).unwrap()[0] {
            TouchdownResult::Fit(f) => f.exponent,
            other => panic!("{other:?}"),
        };
        let (e1, e4) = (fit(1), fit(4));
        assert!((e4 - 1.5).abs() < (e1 - 1.5).abs() + 1e-9);
        assert!((e1 - 1.5).abs() < 0.1);
    }

    #[test]
    fn touchdown_skips_tiny_windows() {
        let g = Grid::new(1.0, 64).unwrap();
        let u = g.sample(|x| if (x - 0.5).abs() < 0.02 { 1e-4 } else { 1.0 });
        let res = touchdown_exponent(&u, &g, 0.01).unwrap();
        assert!(matches!(
            res[0],
            TouchdownResult::Skipped {
                reason: SkipReason::Plateau { width: 3 },
                ..
            }
        ));
        // isolated narrow dip: too few points inside the window
        let u = g.sample(|x| if (x - 0.5).abs() < 1e-9 { 1e-4 } else if (x - 0.5).abs() < 0.05 { 0.05 + 0.01 * (x - 0.5).abs() } else { 1.0 });
        let res = touchdown_exponent(&u, &g, 0.01).unwrap();
        assert!(matches!(
            res[0],
            TouchdownResult::Skipped {
                reason: SkipReason::TooFewPoints,
                ..
            }
        ));
        assert!(touchdown_exponent(&u, &g, 0.0).is_err());
    }

    #[test]
    fn martingale_is_zero_at_start() {
        let g = Grid::new(1.0, 32).unwrap();
        let op = NoiseOperator::new(NoiseSpec::power_law(0.1, 3.0, 4).unwrap(), g).unwrap();
        let p = params(0.01);
        let u0 = g.sample(|x| 1.0 + 0.1 * (2.0 * PI * x).sin());
        let mut tr = MartingaleTracker::new(&TestFunction::mode(1), &u0, 0.0, &p, &op);
        let (m, qv) = tr.update(&u0, 0.0, &p, &op);
        assert_eq!(m, 0.0);
        assert_eq!(qv, 0.0);
    }

    #[test]
    fn weak_drift_matches_integration_by_parts() {
        // for smooth u the weak form pairing equals <drift_continuous, phi>
        // computed from the analytic expression via quadrature
        let g = Grid::new(1.0, 256).unwrap();
        let op = NoiseOperator::new(NoiseSpec::silent(4), g).unwrap();
        let p = params(0.0);
        let a = 0.1;
        let w = 2.0 * PI;
        let u = g.sample(|x| 1.0 + a * (w * x).sin());
        let phi = TestFunction::mode(1);
        let d: [Field; 4] = std::array::from_fn(|o| phi.derivative(o as u32, &g));
        let got = weak_drift_integrand(&u, &d, &p, &op);
        // -(u^2 u_xxx)_x paired with phi = int u^2 u_xxx phi_x
        let m = 200_000;
        let h = 1.0 / m as f64;
        let oracle: f64 = (0..m)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                let uu = 1.0 + a * (w * x).sin();
                let uxxx = -a * w.powi(3) * (w * x).cos();
                let phix = 2f64.sqrt() * w * (w * x).cos();
                uu * uu * uxxx * phix
            })
            .sum::<f64>()
            * h;
        assert!((got - oracle).abs() / oracle.abs() < 1e-3, "{got} vs {oracle}");
    }
}
