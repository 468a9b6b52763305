//! Fate of flow lines relative to the basin of the origin, ray crossings of
//! the basin boundary and two-sided edge tracking along it.

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::field::{self, State};
use crate::flow::{self, Fate, FlowPolicy, StepControl};
use crate::grid::Grid;
use crate::nodal::{self, Degeneracy};
use crate::system::{self, BlockStructure, SystemParams};

pub const PROBE_BUDGET: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FateClass {
    Decayed,
    NotDecayed,
    Ambiguous,
}

/// Probes always leave through `J < 0` (the origin has zero energy and energy
/// is non-increasing, so such a state never decays) and through the
/// small-data contraction level.
pub fn classify_fate(
    params: &SystemParams,
    grid: &Grid,
    state: &State,
    policy: &FlowPolicy,
) -> FateClass {
    let probe = FlowPolicy {
        negative_energy_exit: true,
        small_data_exit: true,
        ..*policy
    };
    match flow::integrate_with(params, grid, state, &probe, false) {
        Ok(traj) => match traj.fate {
            Fate::Decayed => FateClass::Decayed,
            Fate::BlowUp { .. } => FateClass::NotDecayed,
            Fate::Stationary => {
                if traj.last().h1 >= policy.zero_threshold {
                    FateClass::NotDecayed
                } else {
                    FateClass::Decayed
                }
            }
            Fate::HorizonReached => FateClass::Ambiguous,
        },
        Err(_) => FateClass::Ambiguous,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// Ray scale or segment parameter.
    pub param: f64,
    pub fate: FateClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayBracket {
    pub s_star: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub probes: Vec<ProbeRecord>,
}

/// Unit `H^1` copy of `state`, or `None` for the origin.
pub fn unit_direction(grid: &Grid, state: &State) -> Option<State> {
    let n = field::h1(grid, state);
    (n > 0.0 && n.is_finite()).then(|| state.scaled(1.0 / n))
}

/// Scale `s*` where the ray `s * direction` crosses the basin boundary.
pub fn ray_bisect(
    params: &SystemParams,
    grid: &Grid,
    direction: &State,
    policy: &FlowPolicy,
    tol_s: f64,
) -> Result<RayBracket> {
    let mut probes = Vec::new();
    let dir_linf = direction.linf();
    if dir_linf == 0.0 || !direction.is_finite() {
        return Err(NodalError::NoBracket { probes: 0 });
    }
    let probe = |s: f64, probes: &mut Vec<ProbeRecord>| {
        let fate = classify_fate(params, grid, &direction.scaled(s), policy);
        probes.push(ProbeRecord { param: s, fate });
        fate
    };

    let mut s = 1.0;
    let first = probe(s, &mut probes);
    let (mut s_lo, mut s_hi) = match first {
        FateClass::Decayed => {
            let mut lo = s;
            loop {
                s *= 2.0;
                if probes.len() >= PROBE_BUDGET || s * dir_linf > policy.blow_threshold {
                    return Err(NodalError::NoBracket {
                        probes: probes.len(),
                    });
                }
                match probe(s, &mut probes) {
                    FateClass::Decayed => lo = s,
                    FateClass::NotDecayed => break (lo, s),
                    FateClass::Ambiguous => {}
                }
            }
        }
        _ => {
            let mut hi = if first == FateClass::NotDecayed { Some(s) } else { None };
            loop {
                s *= 0.5;
                if probes.len() >= PROBE_BUDGET {
                    return Err(NodalError::NoBracket {
                        probes: probes.len(),
                    });
                }
                match probe(s, &mut probes) {
                    FateClass::Decayed => match hi {
                        Some(h) => break (s, h),
                        None => {
                            return Err(NodalError::NoBracket {
                                probes: probes.len(),
                            })
                        }
                    },
                    FateClass::NotDecayed => hi = Some(s),
                    FateClass::Ambiguous => {}
                }
            }
        }
    };
    while s_hi - s_lo > tol_s * s_lo {
        let mid = 0.5 * (s_lo + s_hi);
        if mid <= s_lo || mid >= s_hi {
            break;
        }
        match probe(mid, &mut probes) {
            FateClass::Decayed => s_lo = mid,
            _ => s_hi = mid,
        }
    }
    Ok(RayBracket {
        s_star: 0.5 * (s_lo + s_hi),
        s_lo,
        s_hi,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBracket {
    pub lo: State,
    pub hi: State,
    pub t: f64,
    pub width: f64,
}

impl EdgeBracket {
    pub fn new(grid: &Grid, lo: State, hi: State, t: f64) -> Self {
        let width = field::h1(grid, &hi.sub(&lo));
        Self { lo, hi, t, width }
    }

    pub fn from_ray(grid: &Grid, direction: &State, ray: &RayBracket) -> Self {
        Self::new(grid, direction.scaled(ray.s_lo), direction.scaled(ray.s_hi), 0.0)
    }

    pub fn midpoint(&self) -> State {
        self.lo.lerp(&self.hi, 0.5)
    }

    pub fn relative_width(&self, grid: &Grid) -> f64 {
        self.width / field::h1(grid, &self.midpoint()).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeOptions {
    /// Relative `H^1` width restored by each re-bisection.
    pub bracket_tol: f64,
    /// Relative `H^1` width that triggers a re-bisection.
    pub sep_threshold: f64,
    pub epsilon: f64,
    pub eps_node: Option<f64>,
    /// Stop early once the midpoint residual falls below this level.
    pub handoff_residual: Option<f64>,
    /// Monitor the midpoint every this many flow steps.
    pub monitor_every: usize,
    /// Check standalone lo/hi fates every this many re-bisections.
    pub spot_check_every: usize,
    pub confirm_at_end: bool,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        Self {
            bracket_tol: 1e-9,
            sep_threshold: 1e-6,
            epsilon: 0.1,
            eps_node: None,
            handoff_residual: None,
            monitor_every: 10,
            spot_check_every: 10,
            confirm_at_end: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub t: f64,
    pub energy: f64,
    pub residual_l2: f64,
    pub h1: f64,
    pub rel_width: f64,
    pub signature: Vec<usize>,
    pub bump_l4: Vec<Vec<f64>>,
}

/// Energy change of the midpoint across one re-bisection; not a flow step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebisectionJump {
    pub t: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EdgeEnd {
    Stationary(State),
    Handoff(State),
    Degenerate { t: f64, kind: Degeneracy, state: State },
    HorizonReached(State),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRun {
    pub path: Vec<EdgePoint>,
    /// Midpoint energy across every flow step: `(t after, before, after)`.
    /// Re-bisections happen between steps and are logged in `jumps`.
    pub step_energies: Vec<(f64, f64, f64)>,
    pub jumps: Vec<RebisectionJump>,
    pub end: EdgeEnd,
    pub rebisections: usize,
    pub probes: Vec<ProbeRecord>,
    /// Midpoints at local minima of the residual along the run, best first.
    pub candidates: Vec<(f64, State)>,
    /// Spot checks of the standalone lo/hi fates that disagreed with the bracket.
    pub failed_spot_checks: usize,
    pub h1_max: f64,
    /// Monitored midpoints, thinned to at most `MAX_SNAPSHOTS` evenly spaced entries.
    pub snapshots: Vec<(f64, State)>,
}

impl EdgeRun {
    pub fn equilibrium(&self) -> Option<&State> {
        match &self.end {
            EdgeEnd::Stationary(s) | EdgeEnd::Handoff(s) => Some(s),
            _ => None,
        }
    }
}

const MAX_CANDIDATES: usize = 6;
const MAX_SNAPSHOTS: usize = 64;

fn probe_policy(policy: &FlowPolicy) -> FlowPolicy {
    policy.with_horizon(policy.t_max / 10.0)
}

/// Bisects the segment `(1 - tau) lo + tau hi` until the bracket is narrower
/// than `bracket_tol` relative to the midpoint. A probe left ambiguous by the
/// short horizon is rerun to the full horizon, and counts as not decayed if
/// still unresolved.
pub fn rebisect(
    params: &SystemParams,
    grid: &Grid,
    bracket: &mut EdgeBracket,
    policy: &FlowPolicy,
    bracket_tol: f64,
    probes: &mut Vec<ProbeRecord>,
) -> Result<()> {
    let short = probe_policy(policy);
    let mut lo = bracket.lo.clone();
    let mut hi = bracket.hi.clone();
    let mut width = bracket.width;
    let mut n = 0;
    while width > bracket_tol * field::h1(grid, &lo.lerp(&hi, 0.5)) {
        if n >= PROBE_BUDGET {
            return Err(NodalError::ProbeBudget { t: bracket.t });
        }
        let mid = lo.lerp(&hi, 0.5);
        let mut fate = classify_fate(params, grid, &mid, &short);
        if fate == FateClass::Ambiguous {
            fate = classify_fate(params, grid, &mid, policy);
        }
        probes.push(ProbeRecord { param: bracket.t, fate });
        if fate == FateClass::Decayed {
            lo = mid;
        } else {
            hi = mid;
        }
        width *= 0.5;
        n += 1;
    }
    *bracket = EdgeBracket::new(grid, lo, hi, bracket.t);
    Ok(())
}

/// Shadows the flow on the basin boundary from `bracket` until the midpoint is
/// stationary, degenerates persistently, or the horizon is reached.
pub fn edge_track(
    params: &SystemParams,
    grid: &Grid,
    mut bracket: EdgeBracket,
    policy: &FlowPolicy,
    blocks: &BlockStructure,
    opts: &EdgeOptions,
) -> Result<EdgeRun> {
    policy.validate()?;
    let short = probe_policy(policy);
    let mut probes = Vec::new();
    let mut path = Vec::new();
    let mut step_energies = Vec::new();
    let mut jumps = Vec::new();
    let mut rebisections = 0;
    let mut failed_spot_checks = 0;
    let mut candidates: Vec<(f64, State)> = Vec::new();
    let mut h1_max: f64 = 0.0;
    let mut snapshots: Vec<(f64, State)> = Vec::new();
    let mut snap_stride = 1usize;
    let mut monitors = 0usize;
    if bracket.relative_width(grid) > opts.bracket_tol {
        rebisect(params, grid, &mut bracket, policy, opts.bracket_tol, &mut probes)?;
    }
    let mut energies = [
        field::energy(params, grid, &bracket.lo),
        field::energy(params, grid, &bracket.hi),
    ];
    let mut control = StepControl::new(policy);
    let mut steps = 0usize;
    let mut pending_drop = false;
    let mut prev_res = f64::INFINITY;
    let mut prev_prev_res = f64::INFINITY;
    let mut prev_mid: Option<State> = None;

    let end = loop {
        let mid = bracket.midpoint();
        if steps % opts.monitor_every == 0 {
            let (energy, h1, _) = flow::diagnostics(params, grid, &mid);
            let res = field::residual_l2(params, grid, &mid);
            h1_max = h1_max.max(h1);
            if monitors % snap_stride == 0 {
                snapshots.push((bracket.t, mid.clone()));
                if snapshots.len() > MAX_SNAPSHOTS {
                    let mut keep = 0;
                    snapshots.retain(|_| {
                        keep += 1;
                        keep % 2 == 1
                    });
                    snap_stride *= 2;
                }
            }
            monitors += 1;
            path.push(EdgePoint {
                t: bracket.t,
                energy,
                residual_l2: res,
                h1,
                rel_width: bracket.relative_width(grid),
                signature: nodal::signature(&mid, opts.eps_node).counts,
                bump_l4: nodal::bump_set(grid, &mid, opts.eps_node).norms(),
            });
            if res < policy.stat_tol {
                break EdgeEnd::Stationary(mid);
            }
            if opts.handoff_residual.map_or(false, |h| res < h) {
                break EdgeEnd::Handoff(mid);
            }
            if prev_res < res && prev_res < prev_prev_res {
                if let Some(pm) = prev_mid.take() {
                    push_candidate(&mut candidates, prev_res, pm);
                }
            }
            prev_prev_res = prev_res;
            prev_res = res;
            prev_mid = Some(mid.clone());

            match nodal::degeneracy_check(grid, &mid, blocks, opts.epsilon / 2.0, opts.eps_node) {
                Degeneracy::Ok => pending_drop = false,
                kind @ Degeneracy::SmallBump { .. } => {
                    break EdgeEnd::Degenerate { t: bracket.t, kind, state: mid };
                }
                kind @ Degeneracy::NodeDrop { .. } => {
                    if pending_drop {
                        break EdgeEnd::Degenerate { t: bracket.t, kind, state: mid };
                    }
                    pending_drop = true;
                }
            }
        }
        let left = policy.t_max - bracket.t;
        if left <= 1e-12 * policy.t_max.max(1.0) {
            break EdgeEnd::HorizonReached(mid);
        }

        let before = field::energy(params, grid, &mid);
        let g = flow::guarded_group_step(
            params,
            grid,
            &[bracket.lo.clone(), bracket.hi.clone()],
            &energies,
            &mut control,
            bracket.t,
            left,
        )?;
        if g.nonfinite {
            return Err(NodalError::StepUnderflow {
                t: bracket.t,
                dt: g.dt,
                energy: energies[1],
                linf: bracket.hi.linf(),
            });
        }
        let mut it = g.states.into_iter();
        let (lo, hi) = (it.next().unwrap(), it.next().unwrap());
        energies = [g.energies[0], g.energies[1]];
        bracket = EdgeBracket::new(grid, lo, hi, bracket.t + g.dt);
        steps += 1;
        step_energies.push((bracket.t, before, field::energy(params, grid, &bracket.midpoint())));

        if bracket.relative_width(grid) > opts.sep_threshold {
            let before = field::energy(params, grid, &bracket.midpoint());
            rebisect(params, grid, &mut bracket, policy, opts.bracket_tol, &mut probes)?;
            rebisections += 1;
            energies = [
                field::energy(params, grid, &bracket.lo),
                field::energy(params, grid, &bracket.hi),
            ];
            let after = field::energy(params, grid, &bracket.midpoint());
            jumps.push(RebisectionJump {
                t: bracket.t,
                energy_before: before,
                energy_after: after,
            });
            if opts.spot_check_every > 0 && rebisections % opts.spot_check_every == 0 {
                let lo_f = classify_fate(params, grid, &bracket.lo, &short);
                let hi_f = classify_fate(params, grid, &bracket.hi, &short);
                if lo_f != FateClass::Decayed || hi_f == FateClass::Decayed {
                    failed_spot_checks += 1;
                }
            }
        }
    };

    if opts.confirm_at_end && matches!(end, EdgeEnd::Stationary(_) | EdgeEnd::Handoff(_)) {
        let lo_f = classify_fate(params, grid, &bracket.lo, policy);
        let hi_f = classify_fate(params, grid, &bracket.hi, policy);
        if lo_f != FateClass::Decayed || hi_f == FateClass::Decayed {
            failed_spot_checks += 1;
        }
    }
    if let Some(s) = end_state(&end) {
        push_candidate(&mut candidates, field::residual_l2(params, grid, s), s.clone());
    }
    Ok(EdgeRun {
        path,
        step_energies,
        jumps,
        end,
        rebisections,
        probes,
        candidates,
        failed_spot_checks,
        h1_max,
        snapshots,
    })
}

fn end_state(end: &EdgeEnd) -> Option<&State> {
    match end {
        EdgeEnd::Stationary(s) | EdgeEnd::Handoff(s) | EdgeEnd::HorizonReached(s) => Some(s),
        EdgeEnd::Degenerate { .. } => None,
    }
}

fn push_candidate(list: &mut Vec<(f64, State)>, res: f64, state: State) {
    list.push((res, state));
    list.sort_by(|a, b| a.0.total_cmp(&b.0));
    list.truncate(MAX_CANDIDATES);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
    /// Whether the seed could be placed on the basin boundary along its ray.
    pub ray_bracketed: bool,
}

/// Least-squares line through `(t, y)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(NodalError::FitWindow(points.len()));
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(NodalError::FitWindow(points.len()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mt))
}

/// Decay of the first component's `L^4` norm along the flow from a
/// permutation-fixed state. `None` when the state is not fixed by the
/// permutation or pair condition (D) fails.
///
/// Under (D) a fixed ray never reaches the basin boundary (its energy is
/// bounded below by the quadratic part), so when the ray bisection finds no
/// bracket the flow starts from `seed` itself.
pub fn fixed_point_decay_test(
    params: &SystemParams,
    grid: &Grid,
    blocks: &BlockStructure,
    seed: &State,
    policy: &FlowPolicy,
) -> Result<Option<DecayFit>> {
    let report = system::validate(params, blocks)?;
    let fixed = system::sigma(blocks, seed) == *seed;
    if !report.holds_d || !fixed || blocks.p < 2 {
        return Ok(None);
    }
    let (start, bracketed) = match unit_direction(grid, seed)
        .map(|d| ray_bisect(params, grid, &d, &probe_policy(policy), 1e-6).map(|r| d.scaled(r.s_star)))
    {
        Some(Ok(s)) => (s, true),
        _ => (seed.clone(), false),
    };
    let run_policy = FlowPolicy {
        sample_every: 1.max(policy.sample_every / 5),
        ..*policy
    };
    let traj = flow::integrate(params, grid, &start, &run_policy)?;
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter_map(|s| {
            let l4 = field::l4_of(grid, s.state.component(0));
            (l4 > 0.0).then(|| (s.t, l4.ln()))
        })
        .collect();
    let (slope, intercept) = fit_line(&pts)?;
    Ok(Some(DecayFit {
        slope,
        intercept,
        t_start: pts.first().map_or(0.0, |p| p.0),
        t_end: pts.last().map_or(0.0, |p| p.0),
        points: pts.len(),
        ray_bracketed: bracketed,
    }))
}
