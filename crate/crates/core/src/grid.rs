//! Radial mesh, conservative Laplacian and quadrature.
//!
//! Interior nodes sit at `r_i = r_inner + i*h`, `i = 1..m`, with
//! `h = (r_outer - r_inner)/(m + 1)`. Dirichlet values are implicit zeros.
//! On a ball (`r_inner == 0`) the centre is a symmetry point: the flux through
//! `r = 0` vanishes and the first control volume is `[0, 3h/2]`.
//!
//! The operator is written in flux form, `(L u)_i = (F_{i+1/2} - F_{i-1/2}) / V_i`
//! with `F_{k+1/2} = r_{k+1/2}^{n-1} (u_{k+1} - u_k) / h` and `V_i` the exact
//! `r^{n-1} dr` measure of the control volume, so that `L` is self-adjoint in the
//! `V`-weighted inner product and exact on quadratics.

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};

pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialDomain {
    pub dim: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub m: usize,
}

impl RadialDomain {
    pub fn ball(dim: usize, radius: f64, m: usize) -> Self {
        Self {
            dim,
            r_inner: 0.0,
            r_outer: radius,
            m,
        }
    }

    pub fn annulus(dim: usize, r_inner: f64, r_outer: f64, m: usize) -> Self {
        Self {
            dim,
            r_inner,
            r_outer,
            m,
        }
    }

    pub fn is_ball(&self) -> bool {
        self.r_inner == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(NodalError::InvalidDomain(format!(
                "dim must be 1, 2 or 3 (got {})",
                self.dim
            )));
        }
        if !(self.r_inner >= 0.0) || !self.r_inner.is_finite() {
            return Err(NodalError::InvalidDomain(format!(
                "r_inner must be a finite non-negative radius (got {})",
                self.r_inner
            )));
        }
        if !(self.r_outer > self.r_inner) || !self.r_outer.is_finite() {
            return Err(NodalError::InvalidDomain(format!(
                "r_outer must exceed r_inner (got {} <= {})",
                self.r_outer, self.r_inner
            )));
        }
        if self.m < MIN_POINTS {
            return Err(NodalError::InvalidDomain(format!(
                "need at least {MIN_POINTS} interior points (got {})",
                self.m
            )));
        }
        Ok(())
    }
}

/// Immutable discretisation of a radial domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: RadialDomain,
    pub h: f64,
    pub nodes: Vec<f64>,
    /// Control-volume measures `V_i`; the mass matrix of every state inner product.
    pub cell_volumes: Vec<f64>,
    /// Weights of `integrate`: exact for `f` linear in `r` against `r^{n-1} dr`.
    pub quad_weights: Vec<f64>,
    /// `face_coeff[k] = r_{k-1/2}^{n-1}/h` for the face between node `k-1` and
    /// node `k` (0-based, node `-1` = inner boundary, node `m` = outer boundary).
    pub face_coeff: Vec<f64>,
    pub lap_lower: Vec<f64>,
    pub lap_diag: Vec<f64>,
    pub lap_upper: Vec<f64>,
}

fn moment(a: f64, b: f64, k: i32) -> f64 {
    // int_a^b r^(k-1) dr
    (b.powi(k) - a.powi(k)) / k as f64
}

/// Weights `(w1, w2)` with `int_a^b l(r) r^(n-1) dr = w1 f(x1) + w2 f(x2)` for the
/// line `l` through `(x1, f(x1))`, `(x2, f(x2))`.
fn linear_weights(a: f64, b: f64, x1: f64, x2: f64, n: i32) -> (f64, f64) {
    let m0 = moment(a, b, n);
    let m1 = moment(a, b, n + 1);
    let d = x2 - x1;
    ((x2 * m0 - m1) / d, (m1 - x1 * m0) / d)
}

pub fn build_grid(domain: RadialDomain) -> Result<Grid> {
    domain.validate()?;
    let m = domain.m;
    let n = domain.dim as i32;
    let h = (domain.r_outer - domain.r_inner) / (m + 1) as f64;
    let nodes: Vec<f64> = (1..=m).map(|i| domain.r_inner + i as f64 * h).collect();
    let ball = domain.is_ball();

    let cell_volumes: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(a, &r)| {
            let lo = if ball && a == 0 { 0.0 } else { r - 0.5 * h };
            moment(lo, r + 0.5 * h, n)
        })
        .collect();

    let face_coeff: Vec<f64> = (0..=m)
        .map(|k| {
            if ball && k == 0 {
                0.0
            } else {
                let rf = domain.r_inner + (k as f64 + 0.5) * h;
                rf.powi(n - 1) / h
            }
        })
        .collect();

    let mut lap_lower = vec![0.0; m];
    let mut lap_diag = vec![0.0; m];
    let mut lap_upper = vec![0.0; m];
    for a in 0..m {
        let v = cell_volumes[a];
        lap_lower[a] = face_coeff[a] / v;
        lap_upper[a] = face_coeff[a + 1] / v;
        lap_diag[a] = -(face_coeff[a] + face_coeff[a + 1]) / v;
    }
    lap_lower[0] = 0.0;
    lap_upper[m - 1] = 0.0;

    let mut quad_weights = vec![0.0; m];
    let (w1, w2) = linear_weights(domain.r_inner, nodes[0], nodes[0], nodes[1], n);
    quad_weights[0] += w1;
    quad_weights[1] += w2;
    for a in 0..m - 1 {
        let (w1, w2) = linear_weights(nodes[a], nodes[a + 1], nodes[a], nodes[a + 1], n);
        quad_weights[a] += w1;
        quad_weights[a + 1] += w2;
    }
    let (w1, w2) = linear_weights(
        nodes[m - 1],
        domain.r_outer,
        nodes[m - 2],
        nodes[m - 1],
        n,
    );
    quad_weights[m - 2] += w1;
    quad_weights[m - 1] += w2;

    Ok(Grid {
        domain,
        h,
        nodes,
        cell_volumes,
        quad_weights,
        face_coeff,
        lap_lower,
        lap_diag,
        lap_upper,
    })
}

impl Grid {
    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    /// `int r^{n-1} dr` over the whole interval.
    pub fn measure(&self) -> f64 {
        moment(self.domain.r_inner, self.domain.r_outer, self.domain.dim as i32)
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.m() {
            return Err(NodalError::LengthMismatch {
                expected: self.m(),
                got: len,
            });
        }
        Ok(())
    }

    /// Discrete radial Laplacian; `out` and `u` must both have length `m`.
    pub fn apply_laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let m = self.m();
        debug_assert_eq!(u.len(), m);
        debug_assert_eq!(out.len(), m);
        for a in 0..m {
            let left = if a > 0 { u[a - 1] } else { 0.0 };
            let right = if a + 1 < m { u[a + 1] } else { 0.0 };
            out[a] = self.lap_lower[a] * left + self.lap_diag[a] * u[a] + self.lap_upper[a] * right;
        }
    }

    pub fn apply_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_laplacian_into(u, &mut out);
        out
    }

    /// Discrete Dirichlet form `sum_k c_k (u_k - u_{k-1})(v_k - v_{k-1})`, i.e. `-<L u, v>`.
    pub fn stiffness(&self, u: &[f64], v: &[f64]) -> f64 {
        let m = self.m();
        let mut acc = 0.0;
        for k in 0..=m {
            let du = if k < m { u[k] } else { 0.0 } - if k > 0 { u[k - 1] } else { 0.0 };
            let dv = if k < m { v[k] } else { 0.0 } - if k > 0 { v[k - 1] } else { 0.0 };
            acc += self.face_coeff[k] * du * dv;
        }
        acc
    }

    /// `V`-weighted inner product.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cell_volumes
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `V`-weighted sum of arbitrary per-node values.
    pub fn mass_sum(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.cell_volumes
            .iter()
            .enumerate()
            .map(|(i, w)| w * f(i))
            .sum()
    }

    /// Value of `u` at `r`, with zero Dirichlet data and even reflection at a ball centre.
    pub fn sample_linear(&self, u: &[f64], r: f64) -> f64 {
        let m = self.m();
        let s = (r - self.domain.r_inner) / self.h;
        if s <= 1.0 {
            if self.domain.is_ball() {
                return u[0];
            }
            return (s.max(0.0)) * u[0];
        }
        if s >= m as f64 {
            return (m as f64 + 1.0 - s).max(0.0) * u[m - 1];
        }
        let k = s.floor() as usize; // node k at s == k, 0-based index k-1
        let t = s - k as f64;
        (1.0 - t) * u[k - 1] + t * u[k]
    }
}

/// `sum_i quad_weights_i * values_i` in fixed node order.
pub fn integrate(grid: &Grid, values: &[f64]) -> Result<f64> {
    grid.check_len(values.len())?;
    Ok(grid
        .quad_weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum())
}

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// Solves in place. Returns `false` on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> bool {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return false;
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i];
        if beta == 0.0 || !beta.is_finite() {
            return false;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(dim: usize, a: f64, b: f64, m: usize) -> Grid {
        build_grid(RadialDomain::annulus(dim, a, b, m)).unwrap()
    }

    #[test]
    fn node_placement() {
        let g = grid(3, 0.0, 1.0, 200);
        assert_eq!(g.m(), 200);
        assert!((g.h - 1.0 / 201.0).abs() < 1e-15);
        assert!((g.nodes[0] - 1.0 / 201.0).abs() < 1e-15);
        assert!((g.nodes[199] - 200.0 / 201.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(build_grid(RadialDomain::ball(3, 1.0, 15)).is_err());
        assert!(build_grid(RadialDomain::annulus(2, 1.0, 1.0, 32)).is_err());
        assert!(build_grid(RadialDomain::ball(4, 1.0, 32)).is_err());
        assert!(build_grid(RadialDomain::ball(0, 1.0, 32)).is_err());
    }

    #[test]
    fn laplacian_of_paraboloid_on_ball() {
        for dim in 1..=3 {
            let g = grid(dim, 0.0, 1.0, 200);
            let u: Vec<f64> = g.nodes.iter().map(|r| 1.0 - r * r).collect();
            let lu = g.apply_laplacian(&u);
            for v in lu {
                assert!((v + 2.0 * dim as f64).abs() < 1e-3, "dim {dim}: {v}");
            }
        }
    }

    #[test]
    fn constant_rows_sum_to_zero_in_interior() {
        let g = grid(2, 0.5, 2.0, 64);
        let ones = vec![1.0; g.m()];
        let lu = g.apply_laplacian(&ones);
        for v in &lu[1..g.m() - 1] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = grid(3, 0.0, 1.0, 200);
        let q = integrate(&g, &vec![1.0; 200]).unwrap();
        assert!((q - 1.0 / 3.0).abs() < 1e-12 / 3.0);

        let g = grid(1, 0.0, 1.0, 200);
        assert_eq!(integrate(&g, &vec![0.0; 200]).unwrap(), 0.0);
        let q = integrate(&g, &g.nodes.clone()).unwrap();
        assert!((q - 0.5).abs() < 1e-10);

        let g = grid(2, 1.0, 2.0, 100);
        let q = integrate(&g, &vec![1.0; 100]).unwrap();
        assert!((q - 1.5).abs() < 1e-10);

        assert!(integrate(&g, &[1.0; 3]).is_err());
    }

    #[test]
    fn quadrature_exact_for_linear_integrands() {
        for dim in 1..=3 {
            for &(a, b) in &[(0.0, 1.0), (0.3, 2.5)] {
                let g = grid(dim, a, b, 37);
                let f: Vec<f64> = g.nodes.iter().map(|r| 2.0 - 3.0 * r).collect();
                let n = dim as i32;
                let exact = 2.0 * moment(a, b, n) - 3.0 * moment(a, b, n + 1);
                let q = integrate(&g, &f).unwrap();
                assert!((q - exact).abs() <= 1e-12 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn laplacian_second_order_on_interval() {
        let err = |m: usize| {
            let g = grid(1, 0.5, 1.5, m);
            let k = 2.0;
            let u: Vec<f64> = g.nodes.iter().map(|r| (k * PI * (r - 0.5)).sin()).collect();
            let lu = g.apply_laplacian(&u);
            let e: Vec<f64> = lu
                .iter()
                .zip(&u)
                .map(|(l, v)| l + (k * PI).powi(2) * v)
                .collect();
            g.inner(&e, &e).sqrt()
        };
        let e1 = err(63);
        let e2 = err(127);
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn laplacian_self_adjoint() {
        for dim in 1..=3 {
            let g = grid(dim, 0.0, 1.0, 50);
            let u: Vec<f64> = g.nodes.iter().map(|r| (3.0 * r).cos() * (1.0 - r)).collect();
            let v: Vec<f64> = g.nodes.iter().map(|r| r * r - r.powi(3) + 0.2).collect();
            let a = g.inner(&g.apply_laplacian(&u), &v);
            let b = g.inner(&u, &g.apply_laplacian(&v));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert!((a + g.stiffness(&u, &v)).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn thomas_matches_dense() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut rhs: Vec<f64> = (0..4)
            .map(|i| {
                diag[i] * x[i]
                    + if i > 0 { lower[i] * x[i - 1] } else { 0.0 }
                    + if i < 3 { upper[i] * x[i + 1] } else { 0.0 }
            })
            .collect();
        assert!(solve_tridiagonal(&lower, &diag, &upper, &mut rhs));
        for i in 0..4 {
            assert!((rhs[i] - x[i]).abs() < 1e-14);
        }
    }
}
