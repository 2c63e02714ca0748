//! Uniform periodic mesh on `[0, L)` and the finite-difference operators used
//! throughout the crate.
//!
//! The forward and backward differences form a summation-by-parts pair on the
//! periodic grid:
//!
//! ```text
//! sum_i (D+ f)_i g_i dx = - sum_i f_i (D- g)_i dx
//! ```
//!
//! which is what makes mass conservation and the discrete energy pairings
//! exact identities rather than truncation-error accidents. Higher stencils
//! are built by composition: `d2 = D+ D-`, `d3 = D0 d2`, `d4 = d2 d2`.

use std::ops::{Deref, DerefMut};

use crate::error::{Result, StfeError};

/// Periodic 1D mesh with `n_cells` nodes at `x_i = i * dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    length: f64,
    n_cells: usize,
    dx: f64,
}

impl Grid {
    /// Build a grid; `n_cells` must be even and at least 8.
    pub fn new(length: f64, n_cells: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(StfeError::InvalidGrid(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        if n_cells < 8 || n_cells % 2 != 0 {
            return Err(StfeError::InvalidGrid(format!(
                "cell count must be even and >= 8, got {n_cells}"
            )));
        }
        Ok(Self {
            length,
            n_cells,
            dx: length / n_cells as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Largest |k| for which `g_k` and products of two basis functions stay
    /// below the grid Nyquist frequency.
    pub fn max_resolved_mode(&self) -> usize {
        // 2k < N/2  <=>  k < N/4
        (self.n_cells / 2 - 1) / 2
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |i| self.node(i))
    }

    /// Sample a function at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.nodes().map(f).collect())
    }

    pub fn constant(&self, value: f64) -> Field {
        Field(vec![value; self.n_cells])
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    pub fn check(&self, f: &Field) -> Result<()> {
        if f.len() != self.n_cells {
            return Err(StfeError::ShapeMismatch {
                expected: self.n_cells,
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `(f_{i+1} - f_i) / dx`; value `i` lives on the half node `x_{i+1/2}`.
    pub fn d1_forward(&self, f: &[f64]) -> Field {
        let n = f.len();
        let inv = 1.0 / self.dx;
        Field((0..n).map(|i| (f[(i + 1) % n] - f[i]) * inv).collect())
    }

    /// `(f_i - f_{i-1}) / dx`; value `i` lives on the half node `x_{i-1/2}`.
    pub fn d1_backward(&self, f: &[f64]) -> Field {
        let n = f.len();
        let inv = 1.0 / self.dx;
        Field((0..n).map(|i| (f[i] - f[(i + n - 1) % n]) * inv).collect())
    }

    /// `(f_{i+1} - f_{i-1}) / (2 dx)`.
    pub fn d1_central(&self, f: &[f64]) -> Field {
        let n = f.len();
        let inv = 0.5 / self.dx;
        Field(
            (0..n)
                .map(|i| (f[(i + 1) % n] - f[(i + n - 1) % n]) * inv)
                .collect(),
        )
    }

    /// Three-point Laplacian, equal to `d1_forward(d1_backward(f))`.
    pub fn d2(&self, f: &[f64]) -> Field {
        let n = f.len();
        let inv = 1.0 / (self.dx * self.dx);
        Field(
            (0..n)
                .map(|i| (f[(i + 1) % n] - 2.0 * f[i] + f[(i + n - 1) % n]) * inv)
                .collect(),
        )
    }

    pub fn d3(&self, f: &[f64]) -> Field {
        self.d1_central(&self.d2(f))
    }

    pub fn d4(&self, f: &[f64]) -> Field {
        self.d2(&self.d2(f))
    }

    /// Rectangle rule `sum_i f_i dx`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.dx
    }

    /// Discrete L2 pairing `sum_i f_i g_i dx`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.dx
    }

    /// Domain average `(1/L) * integrate(f)`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.length
    }
}

/// Nodal values of a periodic scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Nodewise product.
    pub fn mul(&self, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a * b).collect())
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
