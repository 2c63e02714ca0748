//! Periodic pentadiagonal systems.
//!
//! A cyclic band matrix `A` is split into its open band part `B` (entries with
//! `|i - j| <= 2` without wrap-around) and the rank-4 corner correction
//! `U V^T`. `B` is factored with partial pivoting and the corners are handled
//! by the Sherman-Morrison-Woodbury formula.

use crate::error::{Result, StfeError};

/// Half bandwidth.
pub const BW: usize = 2;
const WIDTH: usize = 2 * BW + 1;

/// Cyclic matrix with nonzeros at column offsets `-2..=2` from the diagonal.
/// `rows[i][o + 2]` holds `A[i][(i + o) mod n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicBand {
    n: usize,
    rows: Vec<[f64; WIDTH]>,
}

impl CyclicBand {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 8, "cyclic band needs n >= 8");
        Self {
            n,
            rows: vec![[0.0; WIDTH]; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for r in &mut m.rows {
            r[BW] = 1.0;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, offset: isize) -> f64 {
        self.rows[i][(offset + BW as isize) as usize]
    }

    pub fn add(&mut self, i: usize, offset: isize, v: f64) {
        self.rows[i][(offset + BW as isize) as usize] += v;
    }

    /// Extract the band of a linear operator whose stencil spans at most two
    /// neighbours on each side. Columns are probed in interleaved groups so
    /// only `m` applications are needed, with `m >= 5` the smallest divisor
    /// of `n`.
    pub fn from_operator(n: usize, mut apply: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let mut m = Self::zeros(n);
        let stride = (WIDTH..=n).find(|s| n % s == 0).unwrap_or(n);
        let mut probe = vec![0.0; n];
        for color in 0..stride {
            probe.iter_mut().for_each(|v| *v = 0.0);
            for j in (color..n).step_by(stride) {
                probe[j] = 1.0;
            }
            let y = apply(&probe);
            for j in (color..n).step_by(stride) {
                for o in -(BW as isize)..=BW as isize {
                    let i = (j as isize + o).rem_euclid(n as isize) as usize;
                    // A[i][j] sits at offset j - i = -o in row i
                    m.rows[i][(BW as isize - o) as usize] = y[i];
                }
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (k, a) in self.rows[i].iter().enumerate() {
                    let j = (i as isize + k as isize - BW as isize).rem_euclid(n as isize) as usize;
                    s += a * x[j];
                }
                s
            })
            .collect()
    }

    pub fn factor(&self) -> Result<CyclicBandLu> {
        CyclicBandLu::new(self)
    }

    /// Solve `A x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let lu = self.factor()?;
        let mut x = lu.solve(b);
        let ax = self.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(StfeError::Singular)
        }
    }
}

/// Open-band LU with partial pivoting, `kl = 2` sub-diagonals and up to
/// `kl + ku = 4` super-diagonals after fill-in.
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    // row r covers columns r-2 ..= r+4
    u: Vec<[f64; 7]>,
    lower: Vec<[f64; BW]>,
    perm: Vec<usize>,
}

impl BandLu {
    fn idx(r: usize, c: usize) -> usize {
        c + BW - r
    }

    fn new(a: &CyclicBand) -> Result<Self> {
        let n = a.n;
        let mut u = vec![[0.0; 7]; n];
        for i in 0..n {
            for o in -(BW as isize)..=BW as isize {
                let j = i as isize + o;
                if j >= 0 && (j as usize) < n {
                    u[i][Self::idx(i, j as usize)] = a.get(i, o);
                }
            }
        }
        let scale = u
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        let mut lower = vec![[0.0; BW]; n];
        let mut perm = vec![0; n];
        for k in 0..n {
            let last_row = (k + BW).min(n - 1);
            let last_col = (k + 2 * BW).min(n - 1);
            let mut p = k;
            let mut best = u[k][Self::idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = u[r][Self::idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(StfeError::Singular);
            }
            perm[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (ik, ip) = (Self::idx(k, c), Self::idx(p, c));
                    let t = u[k][ik];
                    u[k][ik] = u[p][ip];
                    u[p][ip] = t;
                }
            }
            let piv = u[k][Self::idx(k, k)];
            for r in k + 1..=last_row {
                let l = u[r][Self::idx(r, k)] / piv;
                lower[k][r - k - 1] = l;
                u[r][Self::idx(r, k)] = 0.0;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let ukc = u[k][Self::idx(k, c)];
                        u[r][Self::idx(r, c)] -= l * ukc;
                    }
                }
            }
        }
        Ok(Self { n, u, lower, perm })
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..=(k + BW).min(n - 1) {
                b[r] -= self.lower[k][r - k - 1] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + 2 * BW).min(n - 1) {
                s -= self.u[k][Self::idx(k, c)] * b[c];
            }
            b[k] = s / self.u[k][Self::idx(k, k)];
        }
    }
}

/// Factorization of a cyclic band matrix.
#[derive(Debug, Clone)]
pub struct CyclicBandLu {
    band: BandLu,
    // V^T: wrap-around entries of the corner rows as (column, value)
    corners: [Vec<(usize, f64)>; 4],
    // Z = B^-1 U, stored column-major
    z: [Vec<f64>; 4],
    cap: [[f64; 4]; 4],
    cap_perm: [usize; 4],
}

impl CyclicBandLu {
    fn new(a: &CyclicBand) -> Result<Self> {
        let n = a.n;
        let band = BandLu::new(a)?;
        let corner_rows = [0, 1, n - 2, n - 1];
        let corners: [Vec<(usize, f64)>; 4] = std::array::from_fn(|q| {
            let i = corner_rows[q];
            (-(BW as isize)..=BW as isize)
                .filter_map(|o| {
                    let j = i as isize + o;
                    if j < 0 || j >= n as isize {
                        Some((j.rem_euclid(n as isize) as usize, a.get(i, o)))
                    } else {
                        None
                    }
                })
                .collect()
        });
        let z: [Vec<f64>; 4] = std::array::from_fn(|q| {
            let mut e = vec![0.0; n];
            e[corner_rows[q]] = 1.0;
            band.solve_in_place(&mut e);
            e
        });
        // capacitance S = I + V^T Z
        let mut cap = [[0.0; 4]; 4];
        for (r, row) in cap.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                let vz: f64 = corners[r].iter().map(|&(j, v)| v * z[c][j]).sum();
                *entry = if r == c { 1.0 } else { 0.0 } + vz;
            }
        }
        let cap_perm = lu4(&mut cap)?;
        Ok(Self {
            band,
            corners,
            z,
            cap,
            cap_perm,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        self.band.solve_in_place(&mut y);
        let mut w: [f64; 4] = std::array::from_fn(|q| {
            self.corners[q].iter().map(|&(j, v)| v * y[j]).sum()
        });
        solve4(&self.cap, &self.cap_perm, &mut w);
        for q in 0..4 {
            if w[q] != 0.0 {
                for (yi, zi) in y.iter_mut().zip(&self.z[q]) {
                    *yi -= w[q] * zi;
                }
            }
        }
        y
    }
}

fn lu4(a: &mut [[f64; 4]; 4]) -> Result<[usize; 4]> {
    let mut perm = [0usize; 4];
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..4 {
        let p = (k..4)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap_or(k);
        if !(a[p][k].abs() > 1e-12 * scale) || !a[p][k].is_finite() {
            return Err(StfeError::Singular);
        }
        perm[k] = p;
        a.swap(k, p);
        for r in k + 1..4 {
            let l = a[r][k] / a[k][k];
            a[r][k] = l;
            for c in k + 1..4 {
                a[r][c] -= l * a[k][c];
            }
        }
    }
    Ok(perm)
}

fn solve4(lu: &[[f64; 4]; 4], perm: &[usize; 4], b: &mut [f64; 4]) {
    // row swaps in lu4 carry the stored multipliers along, so permute first
    for k in 0..4 {
        b.swap(k, perm[k]);
    }
    for k in 0..4 {
        for r in k + 1..4 {
            b[r] -= lu[r][k] * b[k];
        }
    }
    for k in (0..4).rev() {
        let mut s = b[k];
        for c in k + 1..4 {
            s -= lu[k][c] * b[c];
        }
        b[k] = s / lu[k][k];
    }
}
