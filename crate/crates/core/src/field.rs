//! Vector-valued grid functions and the variational core: energy, residual
//! (negative `V`-gradient of the energy) and norms.

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::grid::Grid;
use crate::system::SystemParams;

/// `N` components of length `m`, stored component-major. Boundary values are
/// implicit zeros and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    n_comp: usize,
    m: usize,
    data: Vec<f64>,
}

impl State {
    pub fn zeros(n_comp: usize, m: usize) -> Self {
        Self {
            n_comp,
            m,
            data: vec![0.0; n_comp * m],
        }
    }

    pub fn from_components(comps: Vec<Vec<f64>>) -> Result<Self> {
        let n_comp = comps.len();
        if n_comp == 0 {
            return Err(NodalError::InvalidParams("state needs a component".into()));
        }
        let m = comps[0].len();
        let mut data = Vec::with_capacity(n_comp * m);
        for c in comps {
            if c.len() != m {
                return Err(NodalError::LengthMismatch {
                    expected: m,
                    got: c.len(),
                });
            }
            data.extend(c);
        }
        Ok(Self { n_comp, m, data })
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn components(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `(1 - tau) * self + tau * other`.
    pub fn lerp(&self, other: &State, tau: f64) -> Self {
        let mut out = self.clone();
        for (o, (a, b)) in out.data.iter_mut().zip(self.data.iter().zip(&other.data)) {
            *o = (1.0 - tau) * a + tau * b;
        }
        out
    }

    pub fn sub(&self, other: &State) -> Self {
        let mut out = self.clone();
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        out
    }

    pub fn add_scaled(&mut self, s: f64, other: &State) {
        for (o, b) in self.data.iter_mut().zip(&other.data) {
            *o += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_len(self.m)
    }
}

/// `V`-weighted `L^2` inner product summed over components.
pub fn inner(grid: &Grid, a: &State, b: &State) -> f64 {
    a.components()
        .zip(b.components())
        .map(|(x, y)| grid.inner(x, y))
        .sum()
}

pub fn l2(grid: &Grid, a: &State) -> f64 {
    inner(grid, a, a).sqrt()
}

/// `sum_j int |grad u_j|^2 + u_j^2`, square-rooted.
pub fn h1(grid: &Grid, a: &State) -> f64 {
    a.components()
        .map(|u| grid.stiffness(u, u) + grid.inner(u, u))
        .sum::<f64>()
        .sqrt()
}

/// Quadratic part `1/2 sum_j (|grad u_j|^2 + lambda_j u_j^2)`.
pub fn quadratic_part(params: &SystemParams, grid: &Grid, state: &State) -> f64 {
    state
        .components()
        .enumerate()
        .map(|(j, u)| grid.stiffness(u, u) + params.lambda[j] * grid.inner(u, u))
        .sum::<f64>()
        * 0.5
}

/// Quartic part `1/4 sum_{i,j} B_ij int u_i^2 u_j^2`.
pub fn quartic_part(params: &SystemParams, grid: &Grid, state: &State) -> f64 {
    let n = state.n_comp();
    grid.mass_sum(|k| {
        let mut acc = 0.0;
        for j in 0..n {
            let uj2 = state.component(j)[k].powi(2);
            let mut row = 0.0;
            for i in 0..n {
                row += params.beta(j, i) * state.component(i)[k].powi(2);
            }
            acc += uj2 * row;
        }
        acc
    }) * 0.25
}

pub fn energy(params: &SystemParams, grid: &Grid, state: &State) -> f64 {
    quadratic_part(params, grid, state) - quartic_part(params, grid, state)
}

/// `Delta u_j - lambda_j u_j + u_j sum_i B_ji u_i^2`; zero exactly at equilibria.
pub fn residual(params: &SystemParams, grid: &Grid, state: &State) -> State {
    let mut out = State::zeros(state.n_comp(), state.m());
    residual_into(params, grid, state, &mut out);
    out
}

pub fn residual_into(params: &SystemParams, grid: &Grid, state: &State, out: &mut State) {
    let n = state.n_comp();
    let m = state.m();
    for j in 0..n {
        let lam = params.lambda[j];
        {
            let dst = out.component_mut(j);
            grid.apply_laplacian_into(state.component(j), dst);
        }
        for k in 0..m {
            let uj = state.component(j)[k];
            let mut coup = 0.0;
            for i in 0..n {
                coup += params.beta(j, i) * state.component(i)[k].powi(2);
            }
            out.component_mut(j)[k] += -lam * uj + uj * coup;
        }
    }
}

pub fn residual_l2(params: &SystemParams, grid: &Grid, state: &State) -> f64 {
    l2(grid, &residual(params, grid, state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentNorms {
    pub l2: f64,
    pub l4: f64,
    pub h1: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub per_component: Vec<ComponentNorms>,
    pub total: ComponentNorms,
}

pub fn l4_of(grid: &Grid, u: &[f64]) -> f64 {
    grid.mass_sum(|k| u[k].powi(4)).powf(0.25)
}

pub fn norms(grid: &Grid, state: &State) -> Norms {
    let per_component: Vec<ComponentNorms> = state
        .components()
        .map(|u| {
            let l2sq = grid.inner(u, u);
            ComponentNorms {
                l2: l2sq.sqrt(),
                l4: l4_of(grid, u),
                h1: (grid.stiffness(u, u) + l2sq).sqrt(),
                linf: u.iter().fold(0.0, |a, v| a.max(v.abs())),
            }
        })
        .collect();
    let total = ComponentNorms {
        l2: per_component.iter().map(|c| c.l2 * c.l2).sum::<f64>().sqrt(),
        l4: per_component.iter().map(|c| c.l4.powi(4)).sum::<f64>().powf(0.25),
        h1: per_component.iter().map(|c| c.h1 * c.h1).sum::<f64>().sqrt(),
        linf: per_component.iter().fold(0.0, |a, c| a.max(c.linf)),
    };
    Norms {
        per_component,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, integrate, RadialDomain};
    use crate::system::{example_four_component, sigma, BlockStructure};
    use std::f64::consts::PI;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn smooth_random(grid: &Grid, n: usize, seed: &mut u64) -> State {
        let comps = (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..5).map(|_| lcg(seed)).collect();
                grid.nodes
                    .iter()
                    .map(|r| {
                        let x = (r - grid.domain.r_inner) / (grid.domain.r_outer - grid.domain.r_inner);
                        c.iter()
                            .enumerate()
                            .map(|(k, a)| a * ((k as f64 + 0.5) * PI * x).cos())
                            .sum::<f64>()
                            * (1.0 - x)
                    })
                    .collect()
            })
            .collect();
        State::from_components(comps).unwrap()
    }

    #[test]
    fn zero_state() {
        let g = build_grid(RadialDomain::ball(2, 1.0, 40)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -1.0).unwrap();
        let z = State::zeros(2, 40);
        assert_eq!(energy(&p, &g, &z), 0.0);
        assert_eq!(residual(&p, &g, &z), z);
        let nm = norms(&g, &z);
        assert_eq!(nm.total.l2, 0.0);
        assert_eq!(nm.total.h1, 0.0);
        assert_eq!(nm.total.linf, 0.0);
    }

    #[test]
    fn energy_of_cosine_profile() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 400)).unwrap();
        let p = SystemParams { lambda: vec![1.0], coupling: vec![0.0] };
        let u: Vec<f64> = g.nodes.iter().map(|r| (PI * r / 2.0).cos()).collect();
        let s = State::from_components(vec![u]).unwrap();
        let exact = PI * PI / 16.0 + 0.25;
        assert!((energy(&p, &g, &s) - exact).abs() < 1e-4);
    }

    #[test]
    fn residual_of_linear_eigenfunction() {
        let g = build_grid(RadialDomain::annulus(1, 1.0, 2.0, 300)).unwrap();
        let lam = 2.0;
        let p = SystemParams { lambda: vec![lam], coupling: vec![0.0] };
        let u: Vec<f64> = g.nodes.iter().map(|r| (PI * (r - 1.0)).sin()).collect();
        let s = State::from_components(vec![u.clone()]).unwrap();
        let res = residual(&p, &g, &s);
        for (rv, uv) in res.component(0).iter().zip(&u) {
            assert!((rv + (PI * PI + lam) * uv).abs() < 1e-3);
        }
    }

    #[test]
    fn gradient_matches_central_difference() {
        let g = build_grid(RadialDomain::ball(3, 1.0, 60)).unwrap();
        let p = example_four_component([1.0, 2.0], [-1.0, -2.0], -0.5, [1.0, 2.0]).unwrap();
        let mut seed = 7u64;
        for _ in 0..10 {
            let u = smooth_random(&g, 4, &mut seed).scaled(2.0);
            let v = smooth_random(&g, 4, &mut seed);
            let eps = 1e-5;
            let mut up = u.clone();
            up.add_scaled(eps, &v);
            let mut um = u.clone();
            um.add_scaled(-eps, &v);
            let fd = (energy(&p, &g, &up) - energy(&p, &g, &um)) / (2.0 * eps);
            let an = -inner(&g, &residual(&p, &g, &u), &v);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn energy_scaling_law() {
        let g = build_grid(RadialDomain::ball(2, 1.0, 50)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -1.5).unwrap();
        let mut seed = 3u64;
        let u = smooth_random(&g, 2, &mut seed);
        let q = quadratic_part(&p, &g, &u);
        let c = quartic_part(&p, &g, &u);
        for s in [0.5, 1.0, 2.0] {
            let j = energy(&p, &g, &u.scaled(s));
            let expect = s * s * q - s.powi(4) * c;
            assert!((j - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn energy_sigma_invariant_under_block_symmetric_coupling() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 80)).unwrap();
        let p = example_four_component([1.0, 2.0], [-1.0, -2.0], -0.5, [1.0, 2.0]).unwrap();
        let blocks = BlockStructure::new(2, vec![0, 0]).unwrap();
        let mut seed = 11u64;
        for _ in 0..5 {
            let u = smooth_random(&g, 4, &mut seed);
            let su = sigma(&blocks, &u);
            let (a, b) = (energy(&p, &g, &u), energy(&p, &g, &su));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            let ru = sigma(&blocks, &residual(&p, &g, &u));
            let rs = residual(&p, &g, &su);
            assert!(l2(&g, &ru.sub(&rs)) <= 1e-12 * l2(&g, &rs));
            let (n1, n2) = (norms(&g, &u), norms(&g, &su));
            assert_eq!(n1.total.linf, n2.total.linf);
        }
    }

    #[test]
    fn sign_flip_negates_one_residual_component() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 40)).unwrap();
        let p = SystemParams::uniform(3, 1.0, 1.0, -0.7).unwrap();
        let mut seed = 5u64;
        let u = smooth_random(&g, 3, &mut seed);
        let mut f = u.clone();
        f.component_mut(1).iter_mut().for_each(|v| *v = -*v);
        let (r0, r1) = (residual(&p, &g, &u), residual(&p, &g, &f));
        for j in 0..3 {
            let sgn = if j == 1 { -1.0 } else { 1.0 };
            for (a, b) in r0.component(j).iter().zip(r1.component(j)) {
                assert!((sgn * a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn l2_of_constant_versus_integrate() {
        let g = build_grid(RadialDomain::ball(3, 1.0, 100)).unwrap();
        let s = State::from_components(vec![vec![1.0; 100]]).unwrap();
        let l2sq = norms(&g, &s).total.l2.powi(2);
        let q = integrate(&g, &vec![1.0; 100]).unwrap();
        // the unassigned half cell next to the Dirichlet boundary
        let half = (1.0 - (1.0 - g.h / 2.0_f64).powi(3)) / 3.0;
        assert!((q - l2sq - half).abs() < 1e-12);
    }
}
