//! Property suite: dissipation, monotone nodal numbers, small-bump invariance,
//! equivariance, gradient and operator consistency.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basin::EdgeRun;
use crate::error::Result;
use crate::field::{self, State};
use crate::flow::{self, FlowPolicy};
use crate::grid::{self, build_grid, Grid, RadialDomain};
use crate::nodal;
use crate::system::{self, BlockStructure, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Measured worst case.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, value: f64, threshold: f64, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value,
            threshold,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<24} value {:.3e} threshold {:.3e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// Sum of the first `modes` boundary-compatible profiles with amplitudes in
/// `[-amp, amp]`, one draw per component.
pub fn random_state(grid: &Grid, n_comp: usize, modes: usize, amp: f64, rng: &mut ChaCha8Rng) -> State {
    let d = grid.domain;
    let len = d.r_outer - d.r_inner;
    let comps = (0..n_comp)
        .map(|_| {
            let coef: Vec<f64> = (0..modes).map(|_| rng.gen_range(-amp..=amp)).collect();
            grid.nodes
                .iter()
                .map(|r| {
                    coef.iter()
                        .enumerate()
                        .map(|(k, c)| {
                            let k = k as f64 + 1.0;
                            if d.is_ball() {
                                c * ((k - 0.5) * PI * r / d.r_outer).cos()
                            } else {
                                c * (k * PI * (r - d.r_inner) / len).sin()
                            }
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    State::from_components(comps).expect("equal lengths")
}

fn ball_1d(m: usize) -> Grid {
    build_grid(RadialDomain::ball(1, 1.0, m)).expect("valid domain")
}

/// Discrete energy slope against `-|dU/dt|^2` on random coupled runs at the
/// default step `dt0` and at `dt0 / 2`.
pub fn dissipation(n_traj: usize, m: usize, steps: usize, rng_seed: u64) -> Result<PropertyResult> {
    let g = ball_1d(m);
    let params = SystemParams::uniform(2, 1.0, 1.0, -1.5)?;
    let dt0 = FlowPolicy::for_grid(&g).dt0;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (mut full, mut half) = (0.0f64, 0.0f64);
    for _ in 0..n_traj {
        let u0 = random_state(&g, 2, 4, 3.0, &mut rng);
        let run = |dt: f64, n: usize| -> Result<f64> {
            let pol = FlowPolicy::for_grid(&g).fixed(dt).with_horizon(dt * n as f64);
            Ok(flow::dissipation_check(&flow::integrate(&params, &g, &u0, &pol)?))
        };
        full = full.max(run(dt0, steps)?);
        half = half.max(run(dt0 / 2.0, 2 * steps)?);
    }
    Ok(PropertyResult::new(
        "dissipation",
        full,
        1e-3,
        full <= 1e-3 && half <= 5e-4,
        format!("dt0 {dt0:.2e}: {full:.3e}, dt0/2: {half:.3e} (bar 5e-4), ratio {:.3}", full / half),
    ))
}

/// Energy along an edge-tracked run: non-increasing per flow step, never below
/// `-1e-9`.
pub fn edge_energy(run: &EdgeRun) -> PropertyResult {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut min_j = f64::INFINITY;
    for &(_, before, after) in &run.step_energies {
        worst_rise = worst_rise.max((after - before) / (1.0 + before.abs()));
        min_j = min_j.min(after).min(before);
    }
    if run.step_energies.is_empty() {
        worst_rise = 0.0;
        min_j = 0.0;
    }
    PropertyResult::new(
        "edge_energy",
        worst_rise,
        1e-12,
        worst_rise <= 1e-12 && min_j >= -1e-9,
        format!("{} steps, min J {min_j:.6e}", run.step_energies.len()),
    )
}

/// Random flows for `N = 1, 2, 4`, cycling over the seeds: no component's
/// nodal number may rise between consecutive samples.
pub fn nodal_monotonicity(n_seeds: usize, m: usize, rng_seed: u64) -> Result<PropertyResult> {
    let g = ball_1d(m);
    let systems = [
        SystemParams::new(vec![1.0], vec![1.0])?,
        SystemParams::uniform(2, 1.0, 1.0, -1.5)?,
        system::example_four_component([1.0, 2.0], [-1.0, -2.0], -0.5, [1.0, 2.0])?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut rises = 0usize;
    let mut samples = 0usize;
    let mut worst = 0.0f64;
    for i in 0..n_seeds {
        let params = &systems[i % systems.len()];
        let amp = rng.gen_range(0.5..=8.0);
        let u0 = random_state(&g, params.n_comp(), 6, amp, &mut rng);
        let pol = FlowPolicy {
            sample_every: 5,
            ..FlowPolicy::for_grid(&g).with_horizon(2.0)
        };
        let traj = flow::integrate(params, &g, &u0, &pol)?;
        samples += traj.samples.len();
        for w in traj.samples.windows(2) {
            for (a, b) in w[0].signature.counts.iter().zip(&w[1].signature.counts) {
                if b > a {
                    rises += 1;
                    worst = worst.max((b - a) as f64);
                }
            }
        }
    }
    Ok(PropertyResult::new(
        "nodal_monotonicity",
        worst,
        0.0,
        rises == 0,
        format!("{n_seeds} runs, {samples} samples, {rises} rises"),
    ))
}

/// Two-bump components with one bump started below the calibrated `rho`: the
/// small bump's `L^4` norm stays below `rho` as long as its slot persists.
pub fn bump_invariance(n_runs: usize, m: usize, rng_seed: u64) -> Result<PropertyResult> {
    let g = ball_1d(m);
    let cal = nodal::calibrate_rho(&g, 1.0, 1.0);
    let rho = cal.rho;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..n_runs {
        let beta = -rng.gen_range(0.0..=2.0);
        let params = SystemParams::uniform(2, 1.0, 1.0, beta)?;
        let split = rng.gen_range(0.3..=0.7);
        let big = rng.gen_range(1.0..=6.0);
        let frac = rng.gen_range(0.3..=0.95);
        let small_inner = rng.gen_bool(0.5);
        let shape = |a: f64, b: f64| -> Vec<f64> {
            g.nodes
                .iter()
                .map(|r| if *r > a && *r < b { ((r - a) * (b - r)).powi(2) } else { 0.0 })
                .collect()
        };
        let (inner, outer) = (shape(0.0, split), shape(split, 1.0));
        let scale_to = |u: &[f64], target: f64| -> Vec<f64> {
            let n = field::l4_of(&g, u);
            u.iter().map(|v| v * target / n).collect()
        };
        let (small_q, u) = if small_inner {
            let s = scale_to(&inner, frac * rho);
            let b = scale_to(&outer, big);
            (1, s.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<f64>>())
        } else {
            let b = scale_to(&inner, big);
            let s = scale_to(&outer, frac * rho);
            (2, b.iter().zip(&s).map(|(x, y)| x - y).collect::<Vec<f64>>())
        };
        let v = random_state(&g, 1, 3, 2.0, &mut rng).component(0).to_vec();
        let u0 = State::from_components(vec![u, v])?;
        let pol = FlowPolicy {
            sample_every: 2,
            ..FlowPolicy::for_grid(&g).with_horizon(1.0)
        };
        let traj = flow::integrate(&params, &g, &u0, &pol)?;
        let n0 = traj.samples[0].signature.counts[0];
        for s in &traj.samples {
            if s.signature.counts[0] != n0 || s.bump_l4[0].len() != n0 + 1 {
                break;
            }
            checked += 1;
            worst = worst.max(s.bump_l4[0][small_q - 1] / rho);
        }
    }
    Ok(PropertyResult::new(
        "bump_invariance",
        worst,
        1.0,
        worst < 1.0,
        format!("rho {rho}, {checked} samples, worst |u_q|_4 / rho"),
    ))
}

/// `|eta_t(sigma U) - sigma eta_t(U)|` over `t in [0, 1]` for the four-component
/// example system with a fixed step.
pub fn equivariance(n_states: usize, m: usize, rng_seed: u64) -> Result<PropertyResult> {
    let g = ball_1d(m);
    let params = system::example_four_component([1.0, 2.0], [-1.0, -2.0], -0.5, [1.0, 2.0])?;
    let blocks = BlockStructure::new(2, vec![0, 0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pol = FlowPolicy {
        sample_every: 1,
        ..FlowPolicy::for_grid(&g).fixed(1.0 / 256.0).with_horizon(1.0)
    };
    let mut worst = 0.0f64;
    for _ in 0..n_states {
        let u0 = random_state(&g, 4, 4, 2.0, &mut rng);
        let a = flow::integrate(&params, &g, &system::sigma(&blocks, &u0), &pol)?;
        let b = flow::integrate(&params, &g, &u0, &pol)?;
        for (x, y) in a.samples.iter().zip(&b.samples) {
            let d = field::l2(&g, &x.state.sub(&system::sigma(&blocks, &y.state)));
            worst = worst.max(d);
        }
    }
    Ok(PropertyResult::new(
        "equivariance",
        worst,
        1e-12,
        worst <= 1e-12,
        format!("{n_states} states"),
    ))
}

/// Central difference of the energy against `-<residual, v>`.
pub fn gradient_consistency(pairs: usize, m: usize, rng_seed: u64) -> Result<PropertyResult> {
    let g = build_grid(RadialDomain::ball(3, 1.0, m))?;
    let params = SystemParams::new(vec![1.0, 2.0], vec![1.0, -0.7, -0.7, 2.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let u = random_state(&g, 2, 4, 2.0, &mut rng);
        let v = random_state(&g, 2, 4, 1.0, &mut rng);
        let h = 1e-5;
        let mut up = u.clone();
        up.add_scaled(h, &v);
        let mut dn = u.clone();
        dn.add_scaled(-h, &v);
        let fd = (field::energy(&params, &g, &up) - field::energy(&params, &g, &dn)) / (2.0 * h);
        let an = -field::inner(&g, &field::residual(&params, &g, &u), &v);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    Ok(PropertyResult::new(
        "gradient_consistency",
        worst,
        1e-5,
        worst <= 1e-5,
        format!("{pairs} pairs"),
    ))
}

/// `<L u, v> = <u, L v>` in the mass inner product on several domains.
pub fn self_adjointness(pairs: usize, m: usize, rng_seed: u64) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let domains = [
        RadialDomain::ball(1, 1.0, m),
        RadialDomain::ball(2, 1.0, m),
        RadialDomain::ball(3, 1.0, m),
        RadialDomain::annulus(2, 1.0, 2.0, m),
    ];
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let g = build_grid(domains[i % domains.len()])?;
        let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = g.inner(&g.apply_laplacian(&u), &v);
        let b = g.inner(&u, &g.apply_laplacian(&v));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
    }
    Ok(PropertyResult::new(
        "self_adjointness",
        worst,
        1e-12,
        worst <= 1e-12,
        format!("{pairs} random pairs, relative"),
    ))
}

/// Ratio of discrete Laplacian errors on `sin(k pi r)` under halving of `h`.
pub fn laplacian_order(m: usize) -> Result<PropertyResult> {
    let err = |m: usize| -> Result<f64> {
        let g = build_grid(RadialDomain::annulus(1, 0.0 + 1.0, 2.0, m))?;
        let k = 3.0;
        let u: Vec<f64> = g.nodes.iter().map(|r| (k * PI * (r - 1.0)).sin()).collect();
        let lu = g.apply_laplacian(&u);
        let e: Vec<f64> = lu.iter().zip(&u).map(|(a, b)| a + (k * PI).powi(2) * b).collect();
        Ok(g.inner(&e, &e).sqrt())
    };
    let (a, b) = (err(m)?, err(2 * m + 1)?);
    let ratio = a / b;
    Ok(PropertyResult::new(
        "laplacian_order",
        ratio,
        3.5,
        ratio >= 3.5,
        format!("errors {a:.3e} -> {b:.3e}"),
    ))
}

/// Quadrature of a few closed-form integrals.
pub fn quadrature() -> Result<PropertyResult> {
    let cases = [
        (RadialDomain::ball(1, 1.0, 200), 1usize, 0.5),
        (RadialDomain::annulus(2, 1.0, 2.0, 200), 0, 1.5),
        (RadialDomain::ball(3, 1.0, 200), 0, 1.0 / 3.0),
    ];
    let mut worst = 0.0f64;
    for (d, power, exact) in cases {
        let g = build_grid(d)?;
        let f: Vec<f64> = g.nodes.iter().map(|r| r.powi(power as i32)).collect();
        worst = worst.max((grid::integrate(&g, &f)? - exact).abs());
    }
    Ok(PropertyResult::new("quadrature", worst, 1e-10, worst <= 1e-10, String::new()))
}

/// Sizes for the suite; `full` matches the acceptance bars.
#[derive(Debug, Clone, Copy)]
pub struct SuiteScale {
    pub dissipation_runs: usize,
    pub nodal_seeds: usize,
    pub bump_runs: usize,
    pub equivariance_states: usize,
    pub gradient_pairs: usize,
}

impl SuiteScale {
    pub fn full() -> Self {
        Self {
            dissipation_runs: 20,
            nodal_seeds: 100,
            bump_runs: 50,
            equivariance_states: 10,
            gradient_pairs: 100,
        }
    }
}

/// The whole suite in a fixed order.
pub fn run_suite(scale: SuiteScale, rng_seed: u64) -> Result<Vec<PropertyResult>> {
    Ok(vec![
        dissipation(scale.dissipation_runs, 200, 400, rng_seed)?,
        nodal_monotonicity(scale.nodal_seeds, 120, rng_seed + 1)?,
        bump_invariance(scale.bump_runs, 200, rng_seed + 2)?,
        equivariance(scale.equivariance_states, 100, rng_seed + 3)?,
        gradient_consistency(scale.gradient_pairs, 100, rng_seed + 4)?,
        self_adjointness(scale.gradient_pairs, 100, rng_seed + 5)?,
        laplacian_order(50)?,
        quadrature()?,
    ])
}

/// Gradient and dissipation checks on a user system.
pub fn system_checks(params: &SystemParams, grid: &Grid, rng_seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = random_state(grid, params.n_comp(), 4, 2.0, &mut rng);
        let v = random_state(grid, params.n_comp(), 4, 1.0, &mut rng);
        let h = 1e-5;
        let mut up = u.clone();
        up.add_scaled(h, &v);
        let mut dn = u.clone();
        dn.add_scaled(-h, &v);
        let fd = (field::energy(params, grid, &up) - field::energy(params, grid, &dn)) / (2.0 * h);
        let an = -field::inner(grid, &field::residual(params, grid, &u), &v);
        worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
    }
    let grad = PropertyResult::new(
        "config_gradient",
        worst,
        1e-5,
        worst <= 1e-5,
        "20 pairs on the configured system".into(),
    );
    let u0 = random_state(grid, params.n_comp(), 4, 3.0, &mut rng);
    let dt0 = FlowPolicy::for_grid(grid).dt0;
    let pol = FlowPolicy::for_grid(grid).fixed(dt0).with_horizon(200.0 * dt0);
    let gap = flow::dissipation_check(&flow::integrate(params, grid, &u0, &pol)?);
    let diss = PropertyResult::new(
        "config_dissipation",
        gap,
        1e-3,
        gap <= 1e-3,
        format!("dt0 {dt0:.2e}, 200 steps"),
    );
    Ok(vec![grad, diss])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_checks_pass() {
        assert!(self_adjointness(20, 60, 1).unwrap().passed);
        assert!(laplacian_order(40).unwrap().passed);
        assert!(quadrature().unwrap().passed);
        assert!(gradient_consistency(10, 60, 2).unwrap().passed);
    }

    #[test]
    fn small_suite_passes() {
        assert!(dissipation(2, 100, 100, 3).unwrap().passed);
        assert!(nodal_monotonicity(6, 80, 4).unwrap().passed);
        assert!(bump_invariance(4, 120, 5).unwrap().passed);
        assert!(equivariance(2, 60, 6).unwrap().passed);
    }

    #[test]
    fn random_state_respects_boundary() {
        let g = ball_1d(100);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&g, 2, 5, 1.0, &mut rng);
        assert!(s.component(0)[99].abs() < 0.2);
        let line = quadrature().unwrap().line();
        assert!(line.starts_with("PASS"));
    }
}
