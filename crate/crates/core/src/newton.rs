//! Damped Newton iteration on the discrete residual, used to polish states
//! that edge tracking has brought close to an equilibrium.

use serde::{Deserialize, Serialize};

use crate::field::{self, State};
use crate::grid::Grid;
use crate::system::SystemParams;

/// General band matrix with room for the fill-in of partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
        }
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.kl + self.ku);
        row * self.width + col + self.kl - row
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.slot(row, col)]
    }

    /// Adds `v` at `(row, col)`, which must lie inside the declared band.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        assert!(col + self.kl >= row && col <= row + self.ku, "entry outside band");
        let s = self.slot(row, col);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                let lo = r.saturating_sub(self.kl);
                let hi = (r + self.ku).min(self.n - 1);
                (lo..=hi).map(|c| self.get(r, c) * x[c]).sum()
            })
            .collect()
    }

    /// In-place LU with row pivoting. Returns `false` on a singular pivot.
    pub fn factor(&mut self) -> bool {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut piv = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return false;
            }
            self.pivots[k] = piv;
            if piv != k {
                for c in k..=last_col {
                    let (a, b) = (self.slot(k, c), self.slot(piv, c));
                    self.data.swap(a, b);
                }
            }
            let d = self.get(k, k);
            for r in k + 1..=last_row {
                let s = self.slot(r, k);
                let l = self.data[s] / d;
                self.data[s] = l;
                if l == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let src = self.data[self.slot(k, c)];
                    let dst = self.slot(r, c);
                    self.data[dst] -= l * src;
                }
            }
        }
        true
    }

    /// Solves with the factors from `factor`, in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                b[r] -= self.get(r, k) * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..=(k + kl + ku).min(n - 1) {
                acc -= self.get(k, c) * b[c];
            }
            b[k] = acc / self.get(k, k);
        }
    }
}

/// Jacobian of the residual in node-interleaved order (`node * N + comp`).
pub fn residual_jacobian(params: &SystemParams, grid: &Grid, state: &State) -> BandMatrix {
    let n = state.n_comp();
    let m = state.m();
    let mut jac = BandMatrix::zeros(n * m, n, n);
    for k in 0..m {
        for j in 0..n {
            let row = k * n + j;
            let uj = state.component(j)[k];
            if k > 0 {
                jac.add(row, row - n, grid.lap_lower[k]);
            }
            if k + 1 < m {
                jac.add(row, row + n, grid.lap_upper[k]);
            }
            let mut diag = grid.lap_diag[k] - params.lambda[j];
            for i in 0..n {
                let ui = state.component(i)[k];
                diag += params.beta(j, i) * ui * ui;
                if i != j {
                    jac.add(row, k * n + i, 2.0 * params.beta(j, i) * uj * ui);
                }
            }
            diag += 2.0 * params.beta(j, j) * uj * uj;
            jac.add(row, row, diag);
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 2e-10,
            max_iter: 40,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub state: State,
    pub residual_l2: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn to_interleaved(s: &State) -> Vec<f64> {
    let (n, m) = (s.n_comp(), s.m());
    let mut v = vec![0.0; n * m];
    for j in 0..n {
        for (k, x) in s.component(j).iter().enumerate() {
            v[k * n + j] = *x;
        }
    }
    v
}

fn add_interleaved(s: &State, v: &[f64], scale: f64) -> State {
    let n = s.n_comp();
    let mut out = s.clone();
    for j in 0..n {
        for (k, x) in out.component_mut(j).iter_mut().enumerate() {
            *x += scale * v[k * n + j];
        }
    }
    out
}

/// Newton steps with backtracking on the residual `L^2` norm.
pub fn polish(params: &SystemParams, grid: &Grid, start: &State, opts: &NewtonOptions) -> NewtonOutcome {
    let mut state = start.clone();
    let mut res = field::residual(params, grid, &state);
    let mut norm = field::l2(grid, &res);
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter && norm.is_finite() {
        iterations += 1;
        let mut jac = residual_jacobian(params, grid, &state);
        if !jac.factor() {
            break;
        }
        let mut step = to_interleaved(&res);
        jac.solve(&mut step);
        let mut scale = -1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = add_interleaved(&state, &step, scale);
            let r = field::residual(params, grid, &trial);
            let n = field::l2(grid, &r);
            if n.is_finite() && n < (1.0 - 0.25 * scale.abs()) * norm {
                accepted = Some((trial, r, n));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((s, r, n)) => {
                state = s;
                res = r;
                norm = n;
            }
            None => break,
        }
    }
    NewtonOutcome {
        converged: norm <= opts.tol,
        state,
        residual_l2: norm,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, RadialDomain};
    use proptest::prelude::*;

    fn dense_mul(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        rows.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    proptest! {
        #[test]
        fn band_solve_matches_product(
            n in 3usize..40,
            kl in 0usize..4,
            ku in 0usize..4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut dense = vec![vec![0.0; n]; n];
            let mut band = BandMatrix::zeros(n, kl, ku);
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    let v: f64 = rng.gen_range(-1.0..1.0) + if r == c { 0.1 } else { 0.0 };
                    dense[r][c] = v;
                    band.add(r, c, v);
                }
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = dense_mul(&dense, &x);
            prop_assert_eq!(band.mul_vec(&x).len(), n);
            if band.factor() {
                let mut y = b.clone();
                band.solve(&mut y);
                let resid: f64 = dense_mul(&dense, &y).iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
                prop_assert!(resid < 1e-8 * (1.0 + b.iter().fold(0.0f64, |a, v| a.max(v.abs()))));
            }
        }
    }

    #[test]
    fn jacobian_matches_difference_quotient() {
        let g = build_grid(RadialDomain::ball(3, 1.0, 30)).unwrap();
        let p = SystemParams::new(vec![1.0, 2.0], vec![1.0, -0.7, -0.7, 2.0]).unwrap();
        let u: Vec<f64> = g.nodes.iter().map(|r| (1.0 - r * r) * 2.0).collect();
        let v: Vec<f64> = g.nodes.iter().map(|r| (3.0 * r).sin()).collect();
        let s = State::from_components(vec![u, v]).unwrap();
        let dir: Vec<f64> = (0..60).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let jv = residual_jacobian(&p, &g, &s).mul_vec(&dir);
        let h = 1e-6;
        let plus = to_interleaved(&field::residual(&p, &g, &add_interleaved(&s, &dir, h)));
        let minus = to_interleaved(&field::residual(&p, &g, &add_interleaved(&s, &dir, -h)));
        for i in 0..60 {
            let fd = (plus[i] - minus[i]) / (2.0 * h);
            assert!((fd - jv[i]).abs() < 1e-5 * (1.0 + jv[i].abs()), "{i}: {fd} {}", jv[i]);
        }
    }

    #[test]
    fn polishes_perturbed_ground_state() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 100)).unwrap();
        let p = SystemParams::new(vec![1.0], vec![1.0]).unwrap();
        // positive solution on [0,1] has u(0) a bit above 3; start from a nearby bump
        let u: Vec<f64> = g.nodes.iter().map(|r| 3.5 * (std::f64::consts::PI * r / 2.0).cos()).collect();
        let out = polish(&p, &g, &State::from_components(vec![u]).unwrap(), &NewtonOptions::default());
        assert!(out.converged, "{}", out.residual_l2);
        assert!(out.state.component(0).iter().all(|v| *v > 0.0));
    }
}
