//! Colored Q-Wiener noise `W = sum_k lambda_k g_k beta_k` on the periodic cell.
//!
//! The basis is the real Fourier basis
//!
//! ```text
//! g_k(x) = sqrt(2/L) sin(2 pi k x / L)   k > 0
//!          1 / sqrt(L)                   k = 0
//!          sqrt(2/L) cos(2 pi k x / L)   k < 0
//! ```
//!
//! truncated to `|k| <= k_max`. Every closed-form sum over the basis used by
//! the Ito/Stratonovich conversion is checked in [`verify_identities`] with
//! analytic derivatives, while [`NoiseOperator::strat_correction_operator`]
//! measures the same conversion through difference stencils.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StfeError};
use crate::grid::{Field, Grid};

/// Per-trajectory random stream. ChaCha is counter based, so one seed fixes
/// the full increment sequence independently of other trajectories.
pub type NoiseStream = ChaCha8Rng;

pub fn stream_for_seed(seed: u64) -> NoiseStream {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayLaw {
    /// `lambda_k` listed for `k = 0..=k_max`.
    Explicit,
    /// `lambda_k = amplitude * (1 + |k|)^(-exponent)`.
    PowerLaw { amplitude: f64, exponent: f64 },
}

/// Truncated noise spectrum. `lambdas[k]` holds `lambda_k = lambda_{-k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    k_max: usize,
    lambdas: Vec<f64>,
    law: DecayLaw,
}

impl NoiseSpec {
    pub fn power_law(amplitude: f64, exponent: f64, k_max: usize) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H3)",
                message: format!("noise amplitude must be nonnegative, got {amplitude}"),
            });
        }
        if !(exponent.is_finite() && exponent > 2.5) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H3)",
                message: format!(
                    "power-law exponent s = {exponent} must exceed 5/2 so that sum k^4 lambda_k^2 converges"
                ),
            });
        }
        let lambdas = (0..=k_max)
            .map(|k| amplitude * (1.0 + k as f64).powf(-exponent))
            .collect();
        Ok(Self {
            k_max,
            lambdas,
            law: DecayLaw::PowerLaw { amplitude, exponent },
        })
    }

    /// Explicit spectrum `lambda_0, lambda_1, ..., lambda_kmax`.
    pub fn explicit(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H3)",
                message: "explicit spectrum needs at least lambda_0".into(),
            });
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(StfeError::Hypothesis {
                hypothesis: "(H3)",
                message: format!("lambda_k must be finite and nonnegative, got {bad}"),
            });
        }
        Ok(Self {
            k_max: lambdas.len() - 1,
            lambdas,
            law: DecayLaw::Explicit,
        })
    }

    /// All `lambda_k = 0`.
    pub fn silent(k_max: usize) -> Self {
        Self {
            k_max,
            lambdas: vec![0.0; k_max + 1],
            law: DecayLaw::Explicit,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn law(&self) -> &DecayLaw {
        &self.law
    }

    /// `lambda_k` for `k = 0..=k_max`.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda(&self, k: i64) -> f64 {
        self.lambdas
            .get(k.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// Number of retained modes `2 k_max + 1`.
    pub fn n_modes(&self) -> usize {
        2 * self.k_max + 1
    }

    /// Retained modes in storage order `-k_max..=k_max`.
    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let k = self.k_max as i64;
        -k..=k
    }

    pub fn is_silent(&self) -> bool {
        self.lambdas.iter().all(|&l| l == 0.0)
    }

    /// Reject spectra whose modes (or their pairwise products) the grid
    /// cannot resolve.
    pub fn validate_for(&self, grid: &Grid) -> Result<()> {
        if 2 * self.k_max >= grid.n_cells() / 2 {
            return Err(StfeError::ModeBeyondNyquist {
                k: self.k_max as i64,
                n: grid.n_cells(),
            });
        }
        Ok(())
    }

    /// `C_Strat = 1/2 (lambda_0^2 / L + sum_{k>=1} 2 lambda_k^2 / L)`.
    pub fn c_strat(&self, length: f64) -> f64 {
        let tail: f64 = self.lambdas[1..].iter().map(|l| 2.0 * l * l / length).sum();
        0.5 * (self.lambdas[0] * self.lambdas[0] / length + tail)
    }
}

/// `g_k(x)` and its derivatives of order 0..=2, evaluated analytically.
pub fn basis_value(k: i64, order: u32, x: f64, length: f64) -> f64 {
    if k == 0 {
        return if order == 0 { 1.0 / length.sqrt() } else { 0.0 };
    }
    let w = 2.0 * PI * k as f64 / length;
    let amp = (2.0 / length).sqrt() * w.powi(order as i32);
    let phase = w * x;
    // d/dx sin = cos, d/dx cos = -sin; k < 0 uses cos(w x) with w < 0,
    // which equals cos(|w| x).
    let (s, c) = phase.sin_cos();
    if k > 0 {
        amp * match order % 4 {
            0 => s,
            1 => c,
            2 => -s,
            _ => -c,
        }
    } else {
        amp * match order % 4 {
            0 => c,
            1 => -s,
            2 => -c,
            _ => s,
        }
    }
}

/// `g_k` sampled at the grid nodes.
pub fn basis_eval(k: i64, grid: &Grid) -> Result<Field> {
    if 2 * k.unsigned_abs() as usize >= grid.n_cells() / 2 {
        return Err(StfeError::ModeBeyondNyquist {
            k,
            n: grid.n_cells(),
        });
    }
    Ok(grid.sample(|x| basis_value(k, 0, x, grid.length())))
}

/// Independent Brownian increments, one per retained mode, stored in the
/// order `k = -k_max..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrement {
    pub dt: f64,
    pub d_beta: Vec<f64>,
}

impl BrownianIncrement {
    pub fn get(&self, k: i64, k_max: usize) -> f64 {
        self.d_beta[(k + k_max as i64) as usize]
    }
}

/// Draw `d_beta_k ~ N(0, dt)` for every retained mode, advancing `stream`.
pub fn sample_increment<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    dt: f64,
    stream: &mut R,
) -> Result<BrownianIncrement> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(StfeError::InvalidTimeStep(dt));
    }
    let sd = dt.sqrt();
    let d_beta = (0..spec.n_modes())
        .map(|_| sd * stream.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(BrownianIncrement { dt, d_beta })
}

/// Noise spectrum bound to a grid, with the basis functions cached.
#[derive(Debug, Clone)]
pub struct NoiseOperator {
    spec: NoiseSpec,
    grid: Grid,
    basis: Vec<Field>,
    basis_half: Vec<Field>,
    c_strat: f64,
}

impl NoiseOperator {
    pub fn new(spec: NoiseSpec, grid: Grid) -> Result<Self> {
        spec.validate_for(&grid)?;
        let basis = spec
            .modes()
            .map(|k| basis_eval(k, &grid))
            .collect::<Result<Vec<_>>>()?;
        let half = 0.5 * grid.dx();
        let basis_half = spec
            .modes()
            .map(|k| grid.sample(|x| basis_value(k, 0, x - half, grid.length())))
            .collect();
        let c_strat = spec.c_strat(grid.length());
        Ok(Self {
            spec,
            grid,
            basis,
            basis_half,
            c_strat,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn c_strat(&self) -> f64 {
        self.c_strat
    }

    /// Cached `g_k` in storage order.
    pub fn basis(&self) -> &[Field] {
        &self.basis
    }

    pub fn mode_index(&self, k: i64) -> usize {
        (k + self.spec.k_max as i64) as usize
    }

    /// Spatial increment `dW = sum_k lambda_k g_k d_beta_k`.
    pub fn increment_field(&self, inc: &BrownianIncrement) -> Field {
        let mut w = vec![0.0; self.grid.n_cells()];
        for (idx, k) in self.spec.modes().enumerate() {
            let a = self.spec.lambda(k) * inc.d_beta[idx];
            if a == 0.0 {
                continue;
            }
            for (wi, gi) in w.iter_mut().zip(self.basis[idx].iter()) {
                *wi += a * gi;
            }
        }
        Field(w)
    }

    /// `sum_k lambda_k D0(g_k u) d_beta_k`, assembled as `D0(u dW)`.
    pub fn noise_term(&self, u: &[f64], inc: &BrownianIncrement) -> Field {
        let dw = self.increment_field(inc);
        self.grid.d1_central(&dw.mul(u))
    }

    /// Direct-sum Stratonovich drift `1/2 sum_k lambda_k^2 D+(g_k D-(g_k u))`
    /// with the outer `g_k` taken on the half nodes where `D-` lives.
    /// Verification only; the stepper uses `C_Strat d2(u)`.
    pub fn strat_correction_operator(&self, u: &[f64]) -> Field {
        let n = self.grid.n_cells();
        let mut acc = vec![0.0; n];
        for (idx, k) in self.spec.modes().enumerate() {
            let l2 = self.spec.lambda(k).powi(2);
            if l2 == 0.0 {
                continue;
            }
            let gu = self.basis[idx].mul(u);
            let inner = self.grid.d1_backward(&gu).mul(&self.basis_half[idx]);
            let outer = self.grid.d1_forward(&inner);
            for (a, o) in acc.iter_mut().zip(outer.iter()) {
                *a += 0.5 * l2 * o;
            }
        }
        Field(acc)
    }
}

/// Residual of one closed-form basis identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResidual {
    pub id: &'static str,
    pub description: &'static str,
    /// Closed-form right-hand side (constant in x).
    pub expected: f64,
    /// `max_x |lhs(x) - expected|`.
    pub max_abs_residual: f64,
    /// Absolute residual divided by `max(1, max_x sum_k |term_k(x)|)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityResidual>,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.residual <= tol)
    }
}

/// Evaluate the six basis sums nodewise with analytic derivatives of `g_k`
/// and compare each against its closed form.
pub fn verify_identities(spec: &NoiseSpec, grid: &Grid) -> IdentityReport {
    let l = grid.length();
    let sum_k = |pow: i32| -> f64 {
        (1..=spec.k_max())
            .map(|k| spec.lambda(k as i64).powi(2) * (k as f64).powi(pow))
            .sum()
    };
    let l0 = spec.lambda(0);
    let s0: f64 = sum_k(0);
    let s2 = sum_k(2);
    let s4 = sum_k(4);
    let pi2 = PI * PI;
    let cases: [(&'static str, &'static str, (u32, u32), f64); 6] = [
        ("gg", "sum l^2 g g", (0, 0), l0 * l0 / l + 2.0 * s0 / l),
        ("d1d1", "sum l^2 g' g'", (1, 1), 8.0 * pi2 * s2 / l.powi(3)),
        ("d1g", "sum l^2 g' g", (1, 0), 0.0),
        ("d2d2", "sum l^2 g'' g''", (2, 2), 32.0 * pi2 * pi2 * s4 / l.powi(5)),
        ("d1d2", "sum l^2 g' g''", (1, 2), 0.0),
        ("d2g", "sum l^2 g'' g", (2, 0), -8.0 * pi2 * s2 / l.powi(3)),
    ];
    let rows = cases
        .iter()
        .map(|&(id, description, (a, b), expected)| {
            let mut max_abs: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for x in grid.nodes() {
                let mut lhs = 0.0;
                let mut mag = 0.0;
                for k in spec.modes() {
                    let t = spec.lambda(k).powi(2) * basis_value(k, a, x, l) * basis_value(k, b, x, l);
                    lhs += t;
                    mag += t.abs();
                }
                max_abs = max_abs.max((lhs - expected).abs());
                scale = scale.max(mag);
            }
            IdentityResidual {
                id,
                description,
                expected,
                max_abs_residual: max_abs,
                residual: max_abs / scale,
            }
        })
        .collect();
    IdentityReport { rows }
}
