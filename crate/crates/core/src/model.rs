//! Constitutive functions and the energy-type functionals of the regularized
//! thin-film model with mobility `m(u) = u^2`, interface potential
//! `F(u) = u^-p` and Stratonovich potential `S(u) = C_Strat (u - ln u)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StfeError};
use crate::grid::{Field, Grid};

/// Model parameters. `eps = 0` switches the regularizing potential off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub eps: f64,
    pub p: f64,
    pub theta: f64,
    pub alpha: f64,
    pub c_strat: f64,
}

impl ModelParams {
    pub fn new(eps: f64, p: f64, theta: f64, alpha: f64, c_strat: f64) -> Result<Self> {
        let params = Self {
            eps,
            p,
            theta,
            alpha,
            c_strat,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && (0.0..=1.0).contains(&self.eps)) {
            return Err(StfeError::InvalidParameter(format!(
                "eps must lie in [0, 1], got {}",
                self.eps
            )));
        }
        if !(self.p.is_finite() && self.p > 2.0) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H4ε)",
                message: format!("potential exponent p = {} must exceed 2", self.p),
            });
        }
        if !(self.theta > 0.0 && self.theta * self.p < 1.0) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H2ε)",
                message: format!(
                    "shift exponent theta = {} must lie in (0, 1/p) = (0, {})",
                    self.theta,
                    1.0 / self.p
                ),
            });
        }
        if !(self.alpha > -1.0 / 3.0 && self.alpha < 0.0) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(alpha-entropy)",
                message: format!("alpha = {} must lie in (-1/3, 0)", self.alpha),
            });
        }
        if !(self.c_strat.is_finite() && self.c_strat >= 0.0) {
            return Err(StfeError::InvalidParameter(format!(
                "C_Strat must be nonnegative, got {}",
                self.c_strat
            )));
        }
        Ok(())
    }

    /// Additive floor `eps^theta` applied to initial data; zero when `eps = 0`.
    pub fn initial_floor(&self) -> f64 {
        if self.eps > 0.0 {
            self.eps.powf(self.theta)
        } else {
            0.0
        }
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(eps, self.p, self.theta, self.alpha, self.c_strat)
    }

    // -- scalar functions -------------------------------------------------

    /// `F(u) = u^-p`.
    pub fn potential_f(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(u.powf(-self.p))
    }

    pub fn f_prime(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(-self.p * u.powf(-self.p - 1.0))
    }

    pub fn f_second(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(self.p * (self.p + 1.0) * u.powf(-self.p - 2.0))
    }

    /// `S(u) = C_Strat (u - ln u)`.
    pub fn strat_potential(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(self.c_strat * (u - u.ln()))
    }

    pub fn strat_potential_prime(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(self.c_strat * (1.0 - 1.0 / u))
    }

    pub fn strat_potential_second(&self, u: f64) -> Result<f64> {
        positive(u)?;
        Ok(self.c_strat / (u * u))
    }

    /// `Pi_eps(u) = eps F(u) + S(u)`, `+inf` for `u <= 0`.
    pub fn pi_eps(&self, u: f64) -> f64 {
        if u <= 0.0 || u.is_nan() {
            return f64::INFINITY;
        }
        let f = if self.eps > 0.0 {
            self.eps * u.powf(-self.p)
        } else {
            0.0
        };
        f + self.c_strat * (u - u.ln())
    }

    /// `G_alpha(u) = u^(a+1)/(a(a+1)) - u/a + 1/(a+1)`, with `G_alpha(0) = 1/(a+1)`.
    pub fn g_alpha(&self, u: f64) -> Result<f64> {
        g_alpha(self.alpha, u)
    }
}

fn positive(u: f64) -> Result<()> {
    if u > 0.0 {
        Ok(())
    } else {
        Err(StfeError::NonPositive(u))
    }
}

pub fn g_alpha(alpha: f64, u: f64) -> Result<f64> {
    if u < 0.0 || u.is_nan() {
        return Err(StfeError::Negative(u));
    }
    let a = alpha;
    if u == 0.0 {
        return Ok(1.0 / (a + 1.0));
    }
    Ok(u.powf(a + 1.0) / (a * (a + 1.0)) - u / a + 1.0 / (a + 1.0))
}

pub fn g_alpha_prime(alpha: f64, u: f64) -> f64 {
    (u.powf(alpha) - 1.0) / alpha
}

/// `m(u) = u^2`.
pub fn mobility(u: f64) -> f64 {
    u * u
}

/// Mean mobility on the edge between two nodes,
/// `( (1/(b-a)) int_a^b s^-2 ds )^-1`, which for `m = u^2` is `a b`.
pub fn mobility_mean(a: f64, b: f64) -> f64 {
    (a * b).max(0.0)
}

/// Energy-type quantities of a single state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FunctionalRecord {
    pub mass: f64,
    /// `1/2 int u_x^2`
    pub e1: f64,
    /// `eps int F(u)`
    pub e2: f64,
    /// `int G_alpha(u)`
    pub g_alpha: f64,
    /// `E_eps = e1 + int Pi_eps(u)`
    pub energy: f64,
    /// `H_eps = e1 + e2`
    pub h_eps: f64,
    pub min_u: f64,
}

/// Evaluate every functional of `u`. Nonpositive nodes make `e2`, `energy`
/// and `h_eps` infinite when `eps > 0`; negative nodes make `g_alpha` NaN.
pub fn functionals(u: &Field, params: &ModelParams, grid: &Grid) -> FunctionalRecord {
    let mass = grid.integrate(u);
    let du = grid.d1_forward(u);
    let e1 = 0.5 * grid.inner(&du, &du);
    let min_u = u.min();
    let positive = min_u > 0.0;
    let e2 = if params.eps == 0.0 {
        0.0
    } else if positive {
        params.eps * grid.integrate(&u.map(|v| v.powf(-params.p)))
    } else {
        f64::INFINITY
    };
    let strat = if params.c_strat == 0.0 {
        0.0
    } else if positive {
        params.c_strat * grid.integrate(&u.map(|v| v - v.ln()))
    } else {
        f64::INFINITY
    };
    let g = if min_u >= 0.0 {
        grid.integrate(&u.map(|v| g_alpha(params.alpha, v).unwrap_or(f64::NAN)))
    } else {
        f64::NAN
    };
    FunctionalRecord {
        mass,
        e1,
        e2,
        g_alpha: g,
        energy: e1 + e2 + strat,
        h_eps: e1 + e2,
        min_u,
    }
}

/// Outcome of the pointwise lower bound on the film height.
///
/// The inequality checked is
///
/// ```text
/// sup u^-1 <= kappa (mean u)^-1 + C_p eps^(1/(2-p)) H_eps^(2/(p-2))
/// ```
///
/// with `w = u^-(p-2)/2`, `sup w - inf w <= c1 eps^-1/2 H_eps`,
/// `c1 = (p-2)/4` (half the periodic total variation, with a factor
/// `sqrt 2` covering the discrete mean-value step), `gamma = 2/(p-2)`,
/// `kappa = max(1, 2^(gamma-1))` from `(a+b)^gamma <= kappa (a^gamma + b^gamma)`
/// and `C_p = kappa c1^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub c_p: f64,
    pub kappa: f64,
    /// `min u` guaranteed when `H_eps <= 1/sigma`:
    /// `eps^(1/(p-2)) sigma^(2/(p-2)) / (C_p + kappa eps^(1/(p-2)) sigma^(2/(p-2)) / mean u)`.
    pub min_guaranteed: Option<f64>,
}

pub fn min_bound_constants(p: f64) -> (f64, f64) {
    let gamma = 2.0 / (p - 2.0);
    let c1 = (p - 2.0) / 4.0;
    let kappa = 1.0f64.max(2.0f64.powf(gamma - 1.0));
    (kappa * c1.powf(gamma), kappa)
}

pub fn min_bound_check(
    u: &Field,
    params: &ModelParams,
    grid: &Grid,
    sigma: Option<f64>,
) -> Result<MinBoundReport> {
    if params.eps <= 0.0 {
        return Err(StfeError::InvalidParameter(
            "the minimum bound needs eps > 0".into(),
        ));
    }
    let min_u = u.min();
    positive(min_u)?;
    let rec = functionals(u, params, grid);
    let p = params.p;
    let gamma = 2.0 / (p - 2.0);
    let (c_p, kappa) = min_bound_constants(p);
    let mean = grid.mean(u);
    let lhs = 1.0 / min_u;
    let rhs = kappa / mean + c_p * params.eps.powf(1.0 / (2.0 - p)) * rec.h_eps.powf(gamma);
    let min_guaranteed = sigma.filter(|&s| rec.h_eps <= 1.0 / s).map(|s| {
        let scale = params.eps.powf(1.0 / (p - 2.0)) * s.powf(gamma);
        scale / (c_p + kappa * scale / mean)
    });
    Ok(MinBoundReport {
        lhs,
        rhs,
        satisfied: lhs <= rhs * (1.0 + 1e-12),
        c_p,
        kappa,
        min_guaranteed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::basis_eval;
    use rand::Rng;
    use std::f64::consts::PI;

    fn params(p: f64) -> ModelParams {
        ModelParams::new(0.01, p, 0.2 / (p / 3.0), -0.25, 0.5).unwrap()
    }

    fn central(f: impl Fn(f64) -> f64, u: f64, h: f64) -> f64 {
        (f(u + h) - f(u - h)) / (2.0 * h)
    }

    #[test]
    fn hypotheses_are_enforced() {
        let e = ModelParams::new(0.01, 2.0, 0.1, -0.25, 0.0).unwrap_err();
        assert!(e.to_string().contains("(H4ε)"));
        let e = ModelParams::new(0.01, 3.0, 0.4, -0.25, 0.0).unwrap_err();
        assert!(e.to_string().contains("(H2ε)"));
        assert!(ModelParams::new(0.01, 3.0, 0.2, -0.4, 0.0).is_err());
        assert!(ModelParams::new(0.01, 3.0, 0.2, 0.1, 0.0).is_err());
        assert!(ModelParams::new(0.0, 3.0, 0.2, -0.1, 0.0).is_ok());
        assert!(ModelParams::new(1.5, 3.0, 0.2, -0.1, 0.0).is_err());
    }

    #[test]
    fn mobility_values() {
        assert_eq!(mobility(3.0), 9.0);
        assert_eq!(mobility_mean(2.5, 2.5), 6.25);
        // closed-form oracle: int_1^4 s^-2 ds = 3/4, so (3 / (3/4)) = 4
        let oracle = 1.0 / ((1.0 - 0.25) / 3.0);
        assert!((mobility_mean(1.0, 4.0) - oracle).abs() < 1e-14);
    }

    #[test]
    fn mobility_mean_between_endpoint_mobilities() {
        let mut rng = crate::noise::stream_for_seed(11);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(1e-3..5.0);
            let b: f64 = rng.random_range(1e-3..5.0);
            let m = mobility_mean(a, b);
            assert!(m >= a.min(b).powi(2) && m <= a.max(b).powi(2));
        }
    }

    #[test]
    fn potential_values() {
        let m = params(3.0);
        assert_eq!(m.potential_f(1.0).unwrap(), 1.0);
        assert_eq!(m.f_prime(1.0).unwrap(), -3.0);
        assert_eq!(m.f_second(1.0).unwrap(), 12.0);
        let m4 = ModelParams::new(0.01, 4.0, 0.2, -0.25, 0.0).unwrap();
        assert!((m4.potential_f(2.0).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!((m4.f_second(2.0).unwrap() - 0.3125).abs() < 1e-15);
        let fd = central(|u| m4.f_prime(u).unwrap(), 2.0, 1e-5);
        assert!((fd - 0.3125).abs() < 1e-6);
        assert!(m.potential_f(0.0).is_err());
        assert!(m.f_prime(-1.0).is_err());
    }

    #[test]
    fn strat_potential_values() {
        let m = params(3.0);
        assert_eq!(m.strat_potential_prime(1.0).unwrap(), 0.0);
        assert_eq!(m.strat_potential(1.0).unwrap(), 0.5);
        assert!((m.strat_potential(2.0).unwrap() - 0.5 * (2.0 - 2f64.ln())).abs() < 1e-15);
        assert!((m.strat_potential(2.0).unwrap() - 0.653426).abs() < 1e-6);
        assert!(m.strat_potential(0.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for p in [2.5, 3.0, 4.0] {
            let m = params(p);
            for i in 0..20 {
                let u = 0.1 + 0.25 * i as f64;
                let pairs: [(f64, f64); 4] = [
                    (central(|v| m.potential_f(v).unwrap(), u, h), m.f_prime(u).unwrap()),
                    (central(|v| m.f_prime(v).unwrap(), u, h), m.f_second(u).unwrap()),
                    (
                        central(|v| m.strat_potential(v).unwrap(), u, h),
                        m.strat_potential_prime(u).unwrap(),
                    ),
                    (
                        central(|v| m.strat_potential_prime(v).unwrap(), u, h),
                        m.strat_potential_second(u).unwrap(),
                    ),
                ];
                for (fd, an) in pairs {
                    let scale = an.abs().max(1e-3);
                    assert!((fd - an).abs() / scale <= 1e-6, "p={p} u={u} fd={fd} an={an}");
                }
                let fd = central(|v| g_alpha(m.alpha, v).unwrap(), u, h);
                let an = g_alpha_prime(m.alpha, u);
                assert!((fd - an).abs() / an.abs().max(1e-3) <= 1e-6);
            }
        }
    }

    #[test]
    fn pi_eps_values() {
        let m = ModelParams::new(0.01, 3.0, 0.2, -0.25, 0.5).unwrap();
        assert_eq!(m.pi_eps(0.0), f64::INFINITY);
        assert_eq!(m.pi_eps(-1.0), f64::INFINITY);
        assert!((m.pi_eps(1.0) - 0.51).abs() < 1e-15);
        for i in 1..200 {
            let u = 0.01 * i as f64 * 3.0;
            // S(u) >= C_Strat >= 0 so Pi_eps >= eps u^-p
            assert!(m.strat_potential(u).unwrap() >= m.c_strat - 1e-15);
            assert!(m.pi_eps(u) >= m.eps * u.powf(-m.p));
        }
    }

    #[test]
    fn g_alpha_values() {
        for a in [-0.05, -0.15, -0.25, -0.3] {
            // cancellation of terms of size 1/|a|
            assert!(g_alpha(a, 1.0).unwrap().abs() < 1e-13);
            assert!((g_alpha(a, 0.0).unwrap() - 1.0 / (a + 1.0)).abs() < 1e-15);
            for i in 1..=500 {
                let u = i as f64 * 0.01;
                let g = g_alpha(a, u).unwrap();
                if (u - 1.0).abs() > 1e-9 {
                    assert!(g > 0.0, "a={a} u={u} g={g}");
                }
            }
        }
        assert!((g_alpha(-0.25, 0.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(g_alpha(-0.25, -0.1).is_err());
    }

    #[test]
    fn g_alpha_convex() {
        let a = -0.25;
        let h = 1e-4;
        for i in 0..20 {
            let u = 0.2 + 0.2 * i as f64;
            let fd = (g_alpha(a, u + h).unwrap() - 2.0 * g_alpha(a, u).unwrap() + g_alpha(a, u - h).unwrap()) / (h * h);
            let an = u.powf(a - 1.0);
            assert!(fd > 0.0);
            assert!((fd - an).abs() / an < 1e-4);
        }
    }

    #[test]
    fn functionals_of_constant_state() {
        let grid = Grid::new(1.0, 32).unwrap();
        let m = ModelParams::new(0.01, 3.0, 0.2, -0.25, 0.5).unwrap();
        let r = functionals(&grid.constant(1.0), &m, &grid);
        assert!((r.mass - 1.0).abs() < 1e-14);
        assert_eq!(r.e1, 0.0);
        assert!((r.e2 - 0.01).abs() < 1e-15);
        assert!(r.g_alpha.abs() < 1e-14);
        assert!((r.energy - 0.51).abs() < 1e-14);
        assert!(r.h_eps >= r.e1);
        assert_eq!(functionals(&grid.constant(2.3), &m, &grid).e1, 0.0);
    }

    #[test]
    fn functionals_of_sine_perturbation() {
        let grid = Grid::new(1.0, 128).unwrap();
        let m = ModelParams::new(0.0, 3.0, 0.2, -0.25, 0.0).unwrap();
        let g1 = basis_eval(1, &grid).unwrap();
        let u = g1.map(|v| 1.0 + 0.1 * v);
        let r = functionals(&u, &m, &grid);
        let expected = 0.5 * 0.01 * (2.0 * PI).powi(2);
        assert!((r.e1 - expected).abs() / expected < 1e-3);
        assert_eq!(r.e2, 0.0);
    }

    #[test]
    fn nonpositive_state_has_infinite_energy() {
        let grid = Grid::new(1.0, 16).unwrap();
        let m = ModelParams::new(0.01, 3.0, 0.2, -0.25, 0.1).unwrap();
        let mut u = grid.constant(1.0);
        u[3] = 0.0;
        let r = functionals(&u, &m, &grid);
        assert!(r.e2.is_infinite() && r.energy.is_infinite());
        assert!(r.g_alpha.is_finite());
    }

    #[test]
    fn min_bound_constant_field() {
        let grid = Grid::new(1.0, 32).unwrap();
        let m = ModelParams::new(0.01, 4.0, 0.2, -0.25, 0.0).unwrap();
        let rep = min_bound_check(&grid.constant(0.7), &m, &grid, None).unwrap();
        assert!((rep.lhs - 1.0 / 0.7).abs() < 1e-12);
        assert!(rep.satisfied);
        assert_eq!(rep.kappa, 1.0);
        assert!(min_bound_check(&grid.constant(0.0), &m, &grid, None).is_err());
    }

    #[test]
    fn min_bound_random_trig_fields() {
        let grid = Grid::new(1.0, 64).unwrap();
        let mut rng = crate::noise::stream_for_seed(2024);
        for p in [2.5, 3.0, 4.0] {
            let m = ModelParams::new(0.01, p, 0.9 / p, -0.25, 0.0).unwrap();
            for _ in 0..200 {
                let coeffs: Vec<(f64, f64)> = (1..=4)
                    .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                let raw = grid.sample(|x| {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(j, (a, b))| {
                            let w = 2.0 * PI * (j + 1) as f64 * x;
                            a * w.sin() + b * w.cos()
                        })
                        .sum()
                });
                let target_min: f64 = rng.random_range(1e-3..1.0);
                let shift = target_min - raw.min();
                let u = raw.map(|v| v + shift);
                let rep = min_bound_check(&u, &m, &grid, None).unwrap();
                assert!(rep.satisfied, "p={p}: lhs {} > rhs {}", rep.lhs, rep.rhs);
            }
        }
    }

    #[test]
    fn min_bound_deep_dip() {
        let grid = Grid::new(1.0, 128).unwrap();
        let m = ModelParams::new(0.01, 3.0, 0.2, -0.25, 0.0).unwrap();
        let u = grid.sample(|x| 1e-3 + 0.5 * (1.0 - (2.0 * PI * x).cos()).powi(2));
        assert!((u.min() - 1e-3).abs() < 1e-12);
        let rep = min_bound_check(&u, &m, &grid, None).unwrap();
        assert!(rep.satisfied);
    }

    #[test]
    fn min_bound_guarantee_under_energy_cap() {
        let grid = Grid::new(1.0, 64).unwrap();
        let m = ModelParams::new(0.01, 3.0, 0.2, -0.25, 0.0).unwrap();
        let u = grid.sample(|x| 0.3 + 0.2 * (2.0 * PI * x).sin());
        let h = functionals(&u, &m, &grid).h_eps;
        let rep = min_bound_check(&u, &m, &grid, Some(0.5 / h)).unwrap();
        let guaranteed = rep.min_guaranteed.unwrap();
        assert!(u.min() >= guaranteed);
    }
}
