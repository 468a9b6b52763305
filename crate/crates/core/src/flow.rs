//! Semi-implicit integration of the parabolic system
//! `d/dt u_j = Delta u_j - lambda_j u_j + u_j sum_i B_ji u_i^2`
//! with an energy guard, fate detection and the trajectory record.

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::field::{self, State};
use crate::grid::{solve_tridiagonal, Grid};
use crate::nodal::{self, NodalSignature};
use crate::system::SystemParams;

/// Relative slack of the energy guard per accepted step.
pub const ENERGY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_max: f64,
    /// `L^inf` level declaring blow-up.
    pub blow_threshold: f64,
    /// `H^1` level declaring decay to the origin.
    pub zero_threshold: f64,
    /// Residual `L^2` level declaring stationarity.
    pub stat_tol: f64,
    pub sample_every: usize,
    /// Treat `J < 0` as blow-up. Exact for basin classification: the origin has
    /// zero energy and the energy never increases.
    #[serde(default)]
    pub negative_energy_exit: bool,
    /// Treat `L^inf` below the contraction level of `small_data_level` as decay.
    /// Exact: the discrete maximum principle makes `L^inf` strictly decrease
    /// from there on.
    #[serde(default)]
    pub small_data_exit: bool,
}

impl FlowPolicy {
    pub fn for_grid(grid: &Grid) -> Self {
        let dt0 = (1e-3 * grid.h * grid.h).clamp(1e-9, 1e-2);
        Self {
            dt0,
            dt_min: 1e-9_f64.min(dt0),
            dt_max: 1e-2,
            t_max: 1e3,
            blow_threshold: 1e4,
            zero_threshold: 1e-6,
            stat_tol: 1e-9,
            sample_every: 50,
            negative_energy_exit: false,
            small_data_exit: false,
        }
    }

    /// Constant step, no adaptivity.
    pub fn fixed(self, dt: f64) -> Self {
        Self {
            dt0: dt,
            dt_min: dt,
            dt_max: dt,
            ..self
        }
    }

    pub fn with_horizon(self, t_max: f64) -> Self {
        Self { t_max, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt0
            && self.dt0 <= self.dt_max
            && self.blow_threshold > 0.0
            && self.zero_threshold > 0.0
            && self.stat_tol > 0.0
            && self.t_max > 0.0
            && self.sample_every >= 1;
        if ok {
            Ok(())
        } else {
            Err(NodalError::Config(format!("inconsistent flow policy {self:?}")))
        }
    }

    fn adaptive(&self) -> bool {
        self.dt_min < self.dt_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fate", rename_all = "snake_case")]
pub enum Fate {
    Decayed,
    BlowUp { nonfinite: bool, negative_energy: bool },
    Stationary,
    HorizonReached,
}

impl Fate {
    pub fn is_decayed(&self) -> bool {
        matches!(self, Fate::Decayed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub energy: f64,
    pub residual_l2: f64,
    pub signature: NodalSignature,
    pub bump_l4: Vec<Vec<f64>>,
    pub h1: f64,
    pub l2: f64,
}

impl Sample {
    pub fn new(params: &SystemParams, grid: &Grid, t: f64, state: State) -> Self {
        let bumps = nodal::bump_set(grid, &state, None);
        Self {
            t,
            energy: field::energy(params, grid, &state),
            residual_l2: field::residual_l2(params, grid, &state),
            signature: nodal::signature(&state, None),
            bump_l4: bumps.norms(),
            h1: field::h1(grid, &state),
            l2: field::l2(grid, &state),
            state,
        }
    }
}

/// One accepted step: time at its start, step size, energies before and after and
/// `|(U+ - U)/dt|^2_{L^2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub velocity_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub steps: Vec<StepRecord>,
    pub fate: Fate,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always holds the initial sample")
    }
}

/// One semi-implicit step: `Delta - lambda_j` and the negative part of the
/// potential `sum_i B_ji u_i^2` taken implicitly, the positive part explicitly.
/// Each component needs one tridiagonal solve with coefficients from the
/// previous time level. The implicit matrix is an M-matrix and the explicit
/// factor is positive, so the step never creates sign changes.
pub fn step(params: &SystemParams, grid: &Grid, state: &State, dt: f64) -> State {
    assert!(dt > 0.0, "time step must be positive");
    let n = state.n_comp();
    let m = state.m();
    let mut out = State::zeros(n, m);
    let lower: Vec<f64> = grid.lap_lower.iter().map(|v| -dt * v).collect();
    let upper: Vec<f64> = grid.lap_upper.iter().map(|v| -dt * v).collect();
    let mut diag = vec![0.0; m];
    for j in 0..n {
        let lam = params.lambda[j];
        let rhs = out.component_mut(j);
        for k in 0..m {
            let (mut gain, mut loss) = (0.0, 0.0);
            for i in 0..n {
                let c = params.beta(j, i) * state.component(i)[k].powi(2);
                if c > 0.0 {
                    gain += c;
                } else {
                    loss -= c;
                }
            }
            diag[k] = 1.0 - dt * (grid.lap_diag[k] - lam - loss);
            rhs[k] = state.component(j)[k] * (1.0 + dt * gain);
        }
        let ok = solve_tridiagonal(&lower, &diag, &upper, rhs);
        assert!(ok, "implicit operator is an M-matrix for dt > 0");
    }
    out
}

/// Squared `L^inf` level below which every step contracts `L^inf`:
/// `min_j lambda_j / max_j sum_i |B_ji|`.
pub fn small_data_level(params: &SystemParams) -> f64 {
    let n = params.n_comp();
    let lam = params.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let c = (0..n)
        .map(|j| (0..n).map(|i| params.beta(j, i).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if c == 0.0 {
        f64::INFINITY
    } else {
        lam / c
    }
}

/// Energy, `H^1` norm and `L^inf` norm in one pass.
pub fn diagnostics(params: &SystemParams, grid: &Grid, state: &State) -> (f64, f64, f64) {
    let mut quad = 0.0;
    let mut h1sq = 0.0;
    for (j, u) in state.components().enumerate() {
        let s = grid.stiffness(u, u);
        let l = grid.inner(u, u);
        quad += s + params.lambda[j] * l;
        h1sq += s + l;
    }
    let energy = 0.5 * quad - field::quartic_part(params, grid, state);
    (energy, h1sq.sqrt(), state.linf())
}

fn within_guard(before: f64, after: f64) -> bool {
    after <= before + ENERGY_SLACK * (1.0 + before.abs())
}

/// Step-size controller shared by every integrator in the crate: halve on an
/// energy increase, double after ten consecutive accepted steps.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub dt: f64,
    accepted_run: usize,
    policy: FlowPolicy,
}

impl StepControl {
    pub fn new(policy: &FlowPolicy) -> Self {
        Self {
            dt: policy.dt0,
            accepted_run: 0,
            policy: *policy,
        }
    }

    fn reject(&mut self, t: f64, energy: f64, linf: f64) -> Result<()> {
        let next = self.dt * 0.5;
        if !self.policy.adaptive() || next < self.policy.dt_min {
            return Err(NodalError::StepUnderflow {
                t,
                dt: next,
                energy,
                linf,
            });
        }
        self.dt = next;
        self.accepted_run = 0;
        Ok(())
    }

    fn accept(&mut self) {
        self.accepted_run += 1;
        if self.policy.adaptive() && self.accepted_run >= 10 {
            self.dt = (self.dt * 2.0).min(self.policy.dt_max);
            self.accepted_run = 0;
        }
    }
}

/// Result of advancing several states with one shared step.
pub struct GroupStep {
    pub states: Vec<State>,
    pub energies: Vec<f64>,
    pub dt: f64,
    pub nonfinite: bool,
}

/// Advances every state with the same `dt`, retrying with smaller steps until the
/// energy guard holds for all of them. `horizon_left` caps the step.
pub fn guarded_group_step(
    params: &SystemParams,
    grid: &Grid,
    states: &[State],
    energies: &[f64],
    control: &mut StepControl,
    t: f64,
    horizon_left: f64,
) -> Result<GroupStep> {
    loop {
        let dt = control.dt.min(horizon_left);
        let next: Vec<State> = states.iter().map(|s| step(params, grid, s, dt)).collect();
        if next.iter().any(|s| !s.is_finite()) {
            return Ok(GroupStep {
                energies: vec![f64::NAN; next.len()],
                states: next,
                dt,
                nonfinite: true,
            });
        }
        let e: Vec<f64> = next
            .iter()
            .map(|s| diagnostics(params, grid, s).0)
            .collect();
        if e.iter().zip(energies).all(|(a, b)| within_guard(*b, *a)) {
            control.accept();
            return Ok(GroupStep {
                states: next,
                energies: e,
                dt,
                nonfinite: false,
            });
        }
        let linf = states.iter().map(|s| s.linf()).fold(0.0, f64::max);
        control.reject(t, energies[0], linf)?;
    }
}

/// Integrates until a fate triggers. With `record == false` only the initial
/// and final samples are kept and no step log is written.
pub fn integrate_with(
    params: &SystemParams,
    grid: &Grid,
    state0: &State,
    policy: &FlowPolicy,
    record: bool,
) -> Result<Trajectory> {
    policy.validate()?;
    state0.check_grid(grid)?;
    let mut state = state0.clone();
    let (mut energy, h1, linf) = diagnostics(params, grid, &state);
    let mut samples = vec![Sample::new(params, grid, 0.0, state.clone())];
    let mut steps = Vec::new();
    let mut t = 0.0;

    let small = if policy.small_data_exit {
        small_data_level(params)
    } else {
        0.0
    };
    let initial_fate = if h1 < policy.zero_threshold || linf * linf < small {
        Some(Fate::Decayed)
    } else if !state.is_finite() || linf > policy.blow_threshold {
        Some(Fate::BlowUp {
            nonfinite: !state.is_finite(),
            negative_energy: false,
        })
    } else if policy.negative_energy_exit && energy < 0.0 {
        Some(Fate::BlowUp {
            nonfinite: false,
            negative_energy: true,
        })
    } else if samples[0].residual_l2 < policy.stat_tol {
        Some(Fate::Stationary)
    } else {
        None
    };
    if let Some(fate) = initial_fate {
        return Ok(Trajectory {
            samples,
            steps,
            fate,
            rejected_steps: 0,
        });
    }

    let mut control = StepControl::new(policy);
    let mut rejected = 0;
    let mut accepted = 0usize;
    let fate = loop {
        let left = policy.t_max - t;
        if left <= 1e-12 * policy.t_max.max(1.0) {
            break Fate::HorizonReached;
        }
        let before = control.dt;
        let g = guarded_group_step(params, grid, &[state.clone()], &[energy], &mut control, t, left)?;
        if control.dt < before {
            rejected += 1;
        }
        let dt = g.dt;
        let next = g.states.into_iter().next().unwrap();
        if g.nonfinite {
            t += dt;
            state = next;
            break Fate::BlowUp {
                nonfinite: true,
                negative_energy: false,
            };
        }
        let (e_new, h1, linf) = diagnostics(params, grid, &next);
        if record {
            let mut vsq = 0.0;
            for (a, b) in next.components().zip(state.components()) {
                vsq += grid.mass_sum(|k| ((a[k] - b[k]) / dt).powi(2));
            }
            steps.push(StepRecord {
                t,
                dt,
                energy_before: energy,
                energy_after: e_new,
                velocity_sq: vsq,
            });
        }
        t += dt;
        state = next;
        energy = e_new;
        accepted += 1;

        if h1 < policy.zero_threshold || linf * linf < small {
            break Fate::Decayed;
        }
        if linf > policy.blow_threshold {
            break Fate::BlowUp {
                nonfinite: false,
                negative_energy: false,
            };
        }
        if policy.negative_energy_exit && energy < 0.0 {
            break Fate::BlowUp {
                nonfinite: false,
                negative_energy: true,
            };
        }
        if accepted % policy.sample_every == 0 {
            let res = field::residual_l2(params, grid, &state);
            if record {
                samples.push(Sample::new(params, grid, t, state.clone()));
            }
            if res < policy.stat_tol {
                break Fate::Stationary;
            }
        }
    };
    let need_final = samples.last().map_or(true, |s| s.t != t);
    if need_final {
        samples.push(Sample::new(params, grid, t, state));
    }
    Ok(Trajectory {
        samples,
        steps,
        fate,
        rejected_steps: rejected,
    })
}

pub fn integrate(
    params: &SystemParams,
    grid: &Grid,
    state0: &State,
    policy: &FlowPolicy,
) -> Result<Trajectory> {
    integrate_with(params, grid, state0, policy, true)
}

/// Worst relative gap between the discrete energy slope `(J+ - J)/dt` and
/// `-|dU/dt|^2` over the step log. Steps with no motion count as zero.
pub fn dissipation_check(traj: &Trajectory) -> f64 {
    traj.steps
        .iter()
        .map(|s| {
            let slope = (s.energy_after - s.energy_before) / s.dt;
            let target = -s.velocity_sq;
            if target.abs() <= f64::MIN_POSITIVE && slope.abs() <= f64::MIN_POSITIVE {
                0.0
            } else if target == 0.0 {
                f64::INFINITY
            } else {
                ((slope - target) / target).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub l2_max: f64,
    pub h1_max: f64,
    pub l2_argmax: f64,
    pub h1_argmax: f64,
}

pub fn boundedness_monitor(traj: &Trajectory) -> Bounds {
    let mut b = Bounds {
        l2_max: 0.0,
        h1_max: 0.0,
        l2_argmax: 0.0,
        h1_argmax: 0.0,
    };
    for s in &traj.samples {
        if s.l2 > b.l2_max {
            b.l2_max = s.l2;
            b.l2_argmax = s.t;
        }
        if s.h1 > b.h1_max {
            b.h1_max = s.h1;
            b.h1_argmax = s.t;
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, RadialDomain};
    use std::f64::consts::PI;

    fn linear(lam: f64) -> SystemParams {
        SystemParams {
            lambda: vec![lam],
            coupling: vec![0.0],
        }
    }

    fn bump(grid: &Grid, amp: f64) -> State {
        State::from_components(vec![grid
            .nodes
            .iter()
            .map(|r| amp * (PI * r / 2.0).cos())
            .collect()])
        .unwrap()
    }

    #[test]
    fn origin_is_fixed() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 50)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -1.0).unwrap();
        let z = State::zeros(2, 50);
        assert_eq!(step(&p, &g, &z, 0.1), z);
    }

    #[test]
    fn linear_step_scales_discrete_eigenfunction() {
        let g = build_grid(RadialDomain::annulus(1, 1.0, 2.0, 200)).unwrap();
        let lam = 1.0;
        let dt = 1e-3;
        let u: Vec<f64> = g.nodes.iter().map(|r| (PI * (r - 1.0)).sin()).collect();
        let s = State::from_components(vec![u.clone()]).unwrap();
        let next = step(&linear(lam), &g, &s, dt);
        let disc = (2.0 - 2.0 * (PI * g.h).cos()) / (g.h * g.h);
        let factor = 1.0 / (1.0 + dt * (disc + lam));
        for (a, b) in next.component(0).iter().zip(&u) {
            assert!((a - factor * b).abs() < 1e-12);
        }
        let cont = 1.0 / (1.0 + dt * (PI * PI + lam));
        assert!((factor - cont).abs() < 1e-5);
    }

    #[test]
    fn small_start_decays_at_linear_rate() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 100)).unwrap();
        let p = SystemParams::new(vec![1.0], vec![1.0]).unwrap();
        let policy = FlowPolicy {
            dt0: 1e-4,
            dt_max: 1e-4,
            dt_min: 1e-4,
            ..FlowPolicy::for_grid(&g)
        };
        let traj = integrate(&p, &g, &bump(&g, 0.01), &policy).unwrap();
        assert_eq!(traj.fate, Fate::Decayed);
        // log-fit of the late samples against the first Dirichlet eigenvalue + lambda
        let pts: Vec<(f64, f64)> = traj
            .samples
            .iter()
            .filter(|s| s.t > 0.5)
            .map(|s| (s.t, s.l2.ln()))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let rate = PI * PI / 4.0 + 1.0;
        assert!((slope + rate).abs() < 0.01 * rate, "slope {slope}");
    }

    #[test]
    fn large_start_blows_up() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 100)).unwrap();
        let p = SystemParams::new(vec![1.0], vec![1.0]).unwrap();
        let traj = integrate(&p, &g, &bump(&g, 100.0), &FlowPolicy::for_grid(&g)).unwrap();
        assert!(matches!(traj.fate, Fate::BlowUp { .. }), "{:?}", traj.fate);
        let b = boundedness_monitor(&traj);
        assert_eq!(b.h1_argmax, traj.last().t);
    }

    #[test]
    fn decayed_run_peaks_at_start() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 60)).unwrap();
        let p = SystemParams::new(vec![1.0], vec![1.0]).unwrap();
        let traj = integrate(&p, &g, &bump(&g, 0.1), &FlowPolicy::for_grid(&g)).unwrap();
        assert_eq!(traj.fate, Fate::Decayed);
        let b = boundedness_monitor(&traj);
        assert_eq!(b.h1_argmax, 0.0);
        assert_eq!(b.l2_argmax, 0.0);
    }

    #[test]
    fn energy_never_increases() {
        let g = build_grid(RadialDomain::ball(3, 1.0, 80)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -1.5).unwrap();
        let u: Vec<f64> = g.nodes.iter().map(|r| 6.0 * (PI * r / 2.0).cos()).collect();
        let v: Vec<f64> = g.nodes.iter().map(|r| 4.0 * (3.0 * PI * r / 2.0).cos()).collect();
        let s = State::from_components(vec![u, v]).unwrap();
        let traj = integrate(&p, &g, &s, &FlowPolicy::for_grid(&g).with_horizon(2.0)).unwrap();
        for st in &traj.steps {
            assert!(st.energy_after <= st.energy_before + ENERGY_SLACK * (1.0 + st.energy_before.abs()));
        }
        for w in traj.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn dissipation_first_order_for_linear_problem() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 100)).unwrap();
        let run = |dt: f64| {
            let pol = FlowPolicy::for_grid(&g).fixed(dt).with_horizon(0.05);
            let traj = integrate(&linear(1.0), &g, &bump(&g, 1.0), &pol).unwrap();
            dissipation_check(&traj)
        };
        let (a, b) = (run(1e-3), run(5e-4));
        assert!((a / b - 2.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn stationary_trajectory_reports_zero() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 40)).unwrap();
        let p = SystemParams::new(vec![1.0], vec![1.0]).unwrap();
        let z = State::zeros(1, 40);
        let traj = Trajectory {
            samples: vec![Sample::new(&p, &g, 0.0, z)],
            steps: vec![StepRecord {
                t: 0.0,
                dt: 0.1,
                energy_before: 0.0,
                energy_after: 0.0,
                velocity_sq: 0.0,
            }],
            fate: Fate::Stationary,
            rejected_steps: 0,
        };
        assert_eq!(dissipation_check(&traj), 0.0);
    }

    #[test]
    fn strong_repulsion_creates_no_sign_changes() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 80)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -2.0).unwrap();
        let u: Vec<f64> = g.nodes.iter().map(|r| (3.0 * PI * r / 2.0).cos()).collect();
        let v: Vec<f64> = g.nodes.iter().map(|r| 300.0 * (PI * r / 2.0).cos()).collect();
        let s = State::from_components(vec![u, v]).unwrap();
        let before = crate::nodal::nodal_number(s.component(0), 0.0);
        for dt in [1e-4, 1e-2, 1.0] {
            let next = step(&p, &g, &s, dt);
            assert!(crate::nodal::nodal_number(next.component(0), 0.0) <= before);
        }
    }

    #[test]
    fn semigroup_with_fixed_step() {
        let g = build_grid(RadialDomain::ball(2, 1.0, 60)).unwrap();
        let p = SystemParams::uniform(2, 1.0, 1.0, -1.0).unwrap();
        let u: Vec<f64> = g.nodes.iter().map(|r| 2.0 * (PI * r / 2.0).cos()).collect();
        let v: Vec<f64> = g.nodes.iter().map(|r| (3.0 * PI * r / 2.0).cos()).collect();
        let s = State::from_components(vec![u, v]).unwrap();
        let base = FlowPolicy::for_grid(&g).fixed(1.0 / 1024.0);
        let direct = integrate_with(&p, &g, &s, &base.with_horizon(0.5), false).unwrap();
        let half = integrate_with(&p, &g, &s, &base.with_horizon(0.25), false).unwrap();
        let rest = integrate_with(&p, &g, &half.last().state, &base.with_horizon(0.25), false).unwrap();
        let d = field::l2(&g, &direct.last().state.sub(&rest.last().state));
        assert!(d < 1e-8, "{d}");
    }
}
