//! Seed-to-solution driver: ray crossing, edge tracking, per-bump weight
//! correction and Newton polishing, plus harvesting of distinct solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basin::{self, EdgeBracket, EdgeEnd, EdgeOptions, EdgeRun};
use crate::error::{NodalError, Result};
use crate::field::{self, State};
use crate::flow::{self, FlowPolicy};
use crate::grid::{build_grid, Grid, RadialDomain};
use crate::newton::{self, NewtonOptions};
use crate::nodal::{self, Degeneracy};
use crate::seeds::{self, BumpBasis, PhaseVector};
use crate::system::{self, BlockStructure, SymmetryTransform, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Bump floor: accepted solutions keep every bump `L^4` norm at or above `epsilon / 2`.
    pub epsilon: f64,
    pub eps_node: Option<f64>,
    pub tol_distinct: f64,
    /// Weight-correction rounds per seed.
    pub rounds: usize,
    /// Initial log-weight bracket half-width for each bump.
    pub weight_span: f64,
    pub newton: NewtonOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eps_node: None,
            tol_distinct: 1e-3,
            rounds: 8,
            weight_span: 4.0,
            newton: NewtonOptions::default(),
        }
    }
}

impl SearchOptions {
    pub fn edge(&self) -> EdgeOptions {
        EdgeOptions {
            epsilon: self.epsilon,
            eps_node: self.eps_node,
            handoff_residual: Some(1e-6),
            monitor_every: 1,
            ..EdgeOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rng_seed: u64,
    pub seed_index: usize,
    pub phase: Option<PhaseVector>,
    pub s_star: f64,
    pub round: usize,
    pub edge_steps: usize,
    /// Which state along the run was polished: `equilibrium`, `residual_min`,
    /// `snapshot`, or `ray`.
    pub origin: String,
    pub origin_t: f64,
}

/// Serializes as metadata only; the profile travels separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionRecord {
    pub id: String,
    pub energy: f64,
    pub residual_l2: f64,
    pub signature: Vec<usize>,
    pub bump_l4: Vec<Vec<f64>>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub state: State,
}

/// Hex SHA-256 of the little-endian profile bytes, first 16 digits.
pub fn profile_id(state: &State) -> String {
    let mut h = Sha256::new();
    h.update((state.n_comp() as u64).to_le_bytes());
    for v in state.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// A weight-correction round that ended in a collapsing bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateEvent {
    pub round: usize,
    pub t_star: f64,
    pub kind: Degeneracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    /// Distinct accepted solutions, in the order found. Empty means the seed
    /// degenerated in every round.
    pub records: Vec<SolutionRecord>,
    pub degenerate: Vec<DegenerateEvent>,
    pub rounds: usize,
}

/// Why a polished state was refused, or `None` if accepted.
pub fn rejection(
    params: &SystemParams,
    grid: &Grid,
    blocks: &BlockStructure,
    state: &State,
    stat_tol: f64,
    opts: &SearchOptions,
) -> Option<String> {
    if !state.is_finite() {
        return Some("non-finite".into());
    }
    let res = field::residual_l2(params, grid, state);
    if !(res < stat_tol) {
        return Some(format!("residual {res:.3e}"));
    }
    let sig = nodal::signature(state, opts.eps_node);
    if !sig.matches(blocks) {
        return Some(format!("signature {:?}", sig.counts));
    }
    let floor = nodal::bump_set(grid, state, opts.eps_node).min_norm().unwrap_or(0.0);
    if floor < opts.epsilon / 2.0 {
        return Some(format!("bump floor {floor:.3e}"));
    }
    let orbit = field::residual_l2(params, grid, &system::sigma(blocks, state));
    if !(orbit < stat_tol) {
        return Some(format!("sigma image residual {orbit:.3e}"));
    }
    None
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|x, y| a[*x][k].abs().total_cmp(&a[*y][k].abs()))?;
        if a[piv][k] == 0.0 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            for c in k..n {
                a[i][c] -= l * a[k][c];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Rescales each bump piece by `t_q > 0` so that the derivative of the energy
/// vanishes along every piece. Pieces of one component must have disjoint
/// supports, which makes the conditions `A t - t .* (C t^2) = 0` exact.
pub fn balance_pieces(params: &SystemParams, grid: &Grid, pieces: &[State]) -> Option<State> {
    let n = pieces.len();
    if n == 0 {
        return None;
    }
    let nc = pieces[0].n_comp();
    let mut quad = vec![vec![0.0; n]; n];
    let mut quart = vec![vec![0.0; n]; n];
    for q in 0..n {
        for r in q..n {
            let mut a = 0.0;
            for j in 0..nc {
                let (x, y) = (pieces[q].component(j), pieces[r].component(j));
                a += grid.stiffness(x, y) + params.lambda[j] * grid.inner(x, y);
            }
            let c = grid.mass_sum(|k| {
                let mut acc = 0.0;
                for j in 0..nc {
                    for i in 0..nc {
                        acc += params.beta(j, i)
                            * pieces[q].component(j)[k].powi(2)
                            * pieces[r].component(i)[k].powi(2);
                    }
                }
                acc
            });
            quad[q][r] = a;
            quad[r][q] = a;
            quart[q][r] = c;
            quart[r][q] = c;
        }
    }
    let diag: Vec<f64> = (0..n).map(|q| quad[q][q]).collect();
    let sq = solve_dense(quart.clone(), diag.clone())?;
    if sq.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut t: Vec<f64> = sq.iter().map(|v| v.sqrt()).collect();
    let eval = |t: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|q| {
                let lin: f64 = (0..n).map(|r| quad[q][r] * t[r]).sum();
                let cub: f64 = (0..n).map(|r| quart[q][r] * t[r] * t[r]).sum();
                lin - t[q] * cub
            })
            .collect()
    };
    let size = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale: f64 = diag.iter().zip(&t).map(|(a, x)| a * x).sum::<f64>().abs().max(1e-300);
    let mut f = eval(&t);
    for _ in 0..50 {
        if size(&f) <= 1e-13 * scale {
            break;
        }
        let jac: Vec<Vec<f64>> = (0..n)
            .map(|q| {
                let cub: f64 = (0..n).map(|r| quart[q][r] * t[r] * t[r]).sum();
                (0..n)
                    .map(|r| {
                        let d = if q == r { cub } else { 0.0 };
                        quad[q][r] - d - 2.0 * t[q] * quart[q][r] * t[r]
                    })
                    .collect()
            })
            .collect();
        let step = solve_dense(jac, f.iter().map(|v| -v).collect())?;
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = t.iter().zip(&step).map(|(a, b)| a + s * b).collect();
            if trial.iter().all(|v| *v > 0.0) {
                let ft = eval(&trial);
                if size(&ft) < size(&f) {
                    t = trial;
                    f = ft;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-8 {
                return None;
            }
        }
    }
    let mut out = State::zeros(nc, pieces[0].m());
    for (p, w) in pieces.iter().zip(&t) {
        out.add_scaled(*w, p);
    }
    Some(out)
}

/// Rescales the bumps of `state` onto their individual balance conditions.
pub fn balance_bumps(
    params: &SystemParams,
    grid: &Grid,
    state: &State,
    eps_node: Option<f64>,
) -> Option<State> {
    balance_pieces(params, grid, &nodal::bump_pieces(grid, state, eps_node))
}

/// Index of the collapsing bump in the flat component-major bump order.
fn collapse_label(blocks: &BlockStructure, run: &EdgeRun) -> Option<usize> {
    let offset = |comp: usize| (0..comp).map(|j| blocks.nodes_for(j) + 1).sum::<usize>();
    match &run.end {
        EdgeEnd::Degenerate {
            kind: Degeneracy::SmallBump { comp, q },
            ..
        } => Some(offset(*comp) + q - 1),
        EdgeEnd::Degenerate { .. } => {
            let expected: usize = (0..blocks.n_comp()).map(|j| blocks.nodes_for(j) + 1).sum();
            let last = run.path.iter().rev().find(|p| {
                p.bump_l4.iter().map(|c| c.len()).sum::<usize>() == expected
                    && p.signature.iter().enumerate().all(|(j, c)| *c == blocks.nodes_for(j))
            })?;
            let flat = last.bump_l4.concat();
            (0..flat.len()).min_by(|a, b| flat[*a].total_cmp(&flat[*b]))
        }
        _ => None,
    }
}

fn candidate_states(
    params: &SystemParams,
    grid: &Grid,
    run: &EdgeRun,
    crossing: &State,
    eps_node: Option<f64>,
) -> Vec<(String, f64, State)> {
    let mut out = Vec::new();
    if let Some(s) = run.equilibrium() {
        out.push(("equilibrium".to_string(), run.path.last().map_or(0.0, |p| p.t), s.clone()));
    }
    for (res, s) in &run.candidates {
        out.push(("residual_min".to_string(), *res, s.clone()));
    }
    for (t, s) in &run.snapshots {
        if let Some(b) = balance_bumps(params, grid, s, eps_node) {
            out.push(("snapshot".to_string(), *t, b));
        }
    }
    if let Some(b) = balance_bumps(params, grid, crossing, eps_node) {
        out.push(("ray".to_string(), 0.0, b));
    }
    out.push(("ray".to_string(), 0.0, crossing.clone()));
    out
}

/// Quotient distance `min_g |a - g b| / (|a| + |b|)` over `group`.
pub fn distinctness(
    grid: &Grid,
    a: &State,
    b: &State,
    group: &[SymmetryTransform],
) -> Result<f64> {
    a.check_grid(grid)?;
    b.check_grid(grid)?;
    if a.n_comp() != b.n_comp() {
        return Err(NodalError::LengthMismatch {
            expected: a.n_comp(),
            got: b.n_comp(),
        });
    }
    let denom = field::l2(grid, a) + field::l2(grid, b);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(group
        .iter()
        .map(|g| field::l2(grid, &a.sub(&g.apply(b))) / denom)
        .fold(f64::INFINITY, f64::min))
}

fn is_new(grid: &Grid, have: &[SolutionRecord], s: &State, group: &[SymmetryTransform], tol: f64) -> bool {
    have.iter()
        .all(|r| distinctness(grid, &r.state, s, group).map_or(true, |d| d > tol))
}

/// Runs one seed to solutions: crosses the basin boundary along the seed ray,
/// tracks the edge, polishes every promising state along the way and, if
/// nothing is accepted, reweights the seed bumps against the one that
/// collapsed and tries again.
#[allow(clippy::too_many_arguments)]
pub fn find_solution(
    params: &SystemParams,
    grid: &Grid,
    blocks: &BlockStructure,
    seed_state: &State,
    policy: &FlowPolicy,
    opts: &SearchOptions,
    rng_seed: u64,
    seed_index: usize,
    phase: Option<PhaseVector>,
) -> Result<SeedResult> {
    seed_state.check_grid(grid)?;
    blocks.check_against(params)?;
    let group = system::symmetry_group(blocks);
    let pieces = nodal::bump_pieces(grid, seed_state, opts.eps_node);
    let expected: usize = (0..blocks.n_comp()).map(|j| blocks.nodes_for(j) + 1).sum();
    let correctable = pieces.len() == expected;
    let mut logw = vec![0.0f64; pieces.len()];
    let mut lo = vec![-opts.weight_span; pieces.len()];
    let mut hi = vec![opts.weight_span; pieces.len()];
    let mut records: Vec<SolutionRecord> = Vec::new();
    let mut degenerate = Vec::new();
    let mut rounds = 0;

    for round in 0..opts.rounds.max(1) {
        rounds = round + 1;
        let start = if correctable {
            let mut s = State::zeros(seed_state.n_comp(), seed_state.m());
            for (p, w) in pieces.iter().zip(&logw) {
                s.add_scaled(w.exp(), p);
            }
            s
        } else {
            seed_state.clone()
        };
        let dir = basin::unit_direction(grid, &start).ok_or(NodalError::NoBracket { probes: 0 })?;
        let ray = basin::ray_bisect(params, grid, &dir, policy, 1e-9)?;
        let crossing = dir.scaled(ray.s_star);
        let run = basin::edge_track(
            params,
            grid,
            EdgeBracket::from_ray(grid, &dir, &ray),
            policy,
            blocks,
            &opts.edge(),
        )?;
        let edge_steps = run.step_energies.len();

        for (origin, origin_t, s) in candidate_states(params, grid, &run, &crossing, opts.eps_node) {
            let out = newton::polish(params, grid, &s, &opts.newton);
            if rejection(params, grid, blocks, &out.state, policy.stat_tol, opts).is_some() {
                continue;
            }
            if !is_new(grid, &records, &out.state, &group, opts.tol_distinct) {
                continue;
            }
            records.push(SolutionRecord {
                id: profile_id(&out.state),
                energy: field::energy(params, grid, &out.state),
                residual_l2: out.residual_l2,
                signature: nodal::signature(&out.state, opts.eps_node).counts,
                bump_l4: nodal::bump_set(grid, &out.state, opts.eps_node).norms(),
                provenance: Provenance {
                    rng_seed,
                    seed_index,
                    phase: phase.clone(),
                    s_star: ray.s_star,
                    round,
                    edge_steps,
                    origin,
                    origin_t,
                },
                state: out.state,
            });
        }

        if let EdgeEnd::Degenerate { t, kind, .. } = &run.end {
            degenerate.push(DegenerateEvent {
                round,
                t_star: *t,
                kind: *kind,
            });
        }
        if !records.is_empty() || !correctable {
            break;
        }
        let Some(label) = collapse_label(blocks, &run) else {
            break;
        };
        // The first bump is the reference weight; a collapse there means the
        // others are too heavy, anywhere else that one is too light.
        if label == 0 {
            for q in 1..logw.len() {
                hi[q] = logw[q];
            }
        } else {
            lo[label] = logw[label];
        }
        for q in 1..logw.len() {
            if hi[q] - lo[q] < 1e-9 {
                lo[q] -= opts.weight_span;
                hi[q] += opts.weight_span;
            }
            logw[q] = 0.5 * (lo[q] + hi[q]);
        }
    }
    Ok(SeedResult {
        records,
        degenerate,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub records: Vec<SolutionRecord>,
    /// Energies of all accepted solutions before deduplication.
    pub energies: Vec<f64>,
    pub degenerate: Vec<(usize, DegenerateEvent)>,
    pub failures: Vec<(usize, String)>,
    pub seeds_tried: usize,
    pub shortfall: bool,
}

/// Worker count from `NODALFLOW_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("NODALFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Samples `budget` seeds and runs them in batches of `workers`; results are
/// merged in seed order, so the output does not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn find_multiple(
    params: &SystemParams,
    grid: &Grid,
    blocks: &BlockStructure,
    basis: &BumpBasis,
    count_target: usize,
    budget: usize,
    policy: &FlowPolicy,
    opts: &SearchOptions,
    rng_seed: u64,
    workers: usize,
) -> Result<SearchReport> {
    let mut report = SearchReport {
        records: Vec::new(),
        energies: Vec::new(),
        degenerate: Vec::new(),
        failures: Vec::new(),
        seeds_tried: 0,
        shortfall: false,
    };
    if count_target == 0 {
        return Ok(report);
    }
    let seeds = seeds::sample_seeds(basis, budget, rng_seed)?;
    let group = system::symmetry_group(blocks);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| NodalError::Config(e.to_string()))?;
    for (b, batch) in seeds.chunks(workers.max(1)).enumerate() {
        let base = b * workers.max(1);
        let results: Vec<Result<SeedResult>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(i, (z, s))| {
                    find_solution(params, grid, blocks, s, policy, opts, rng_seed, base + i, Some(z.clone()))
                })
                .collect()
        });
        for (i, r) in results.into_iter().enumerate() {
            report.seeds_tried += 1;
            match r {
                Ok(res) => {
                    for e in res.degenerate {
                        report.degenerate.push((base + i, e));
                    }
                    for rec in res.records {
                        report.energies.push(rec.energy);
                        if report.records.len() < count_target
                            && is_new(grid, &report.records, &rec.state, &group, opts.tol_distinct)
                        {
                            report.records.push(rec);
                        }
                    }
                }
                Err(e) => report.failures.push((base + i, e.to_string())),
            }
        }
        if report.records.len() >= count_target {
            break;
        }
    }
    report.shortfall = report.records.len() < count_target;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<RecordCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&RecordCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Grid with half the spacing and every old node kept.
pub fn refined_grid(grid: &Grid) -> Result<Grid> {
    let d = grid.domain;
    build_grid(RadialDomain { m: 2 * d.m + 1, ..d })
}

/// Linear interpolation of a state onto another grid over the same domain.
pub fn transfer(from: &Grid, state: &State, to: &Grid) -> State {
    let comps = state
        .components()
        .map(|u| to.nodes.iter().map(|r| from.sample_linear(u, *r)).collect())
        .collect();
    State::from_components(comps).expect("components share one length")
}

/// Re-checks a record independently of how it was found.
pub fn verify_record(
    params: &SystemParams,
    grid: &Grid,
    blocks: &BlockStructure,
    record: &SolutionRecord,
    policy: &FlowPolicy,
    opts: &SearchOptions,
) -> Result<VerifyReport> {
    record.state.check_grid(grid)?;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, value: f64, detail: String| {
        checks.push(RecordCheck {
            name: name.to_string(),
            passed,
            value,
            detail,
        })
    };
    let u = &record.state;

    let res = field::residual_l2(params, grid, u);
    push("residual", res < policy.stat_tol, res, format!("stat_tol {:.1e}", policy.stat_tol));

    // Self-convergence under two halvings of h, compared on the coarse nodes.
    let g2 = refined_grid(grid)?;
    let g4 = refined_grid(&g2)?;
    let loose = NewtonOptions {
        tol: 1e-9,
        ..opts.newton
    };
    let u2 = newton::polish(params, &g2, &transfer(grid, u, &g2), &loose);
    let u4 = newton::polish(params, &g4, &transfer(&g2, &u2.state, &g4), &loose);
    let restrict = |s: &State, stride: usize| -> State {
        let comps = s
            .components()
            .map(|c| (0..grid.m()).map(|k| c[(k + 1) * stride - 1]).collect())
            .collect();
        State::from_components(comps).expect("components share one length")
    };
    let d1 = field::l2(grid, &u.sub(&restrict(&u2.state, 2)));
    let d2 = field::l2(grid, &restrict(&u2.state, 2).sub(&restrict(&u4.state, 4)));
    let ratio = d1 / d2;
    let same_sig = nodal::signature(&u2.state, opts.eps_node).matches(blocks)
        && nodal::signature(&u4.state, opts.eps_node).matches(blocks);
    push(
        "refinement",
        same_sig && u2.residual_l2 < 1e-6 && u4.residual_l2 < 1e-6 && ratio >= 3.0,
        ratio,
        format!(
            "|u_h-u_h/2| {d1:.3e}, |u_h/2-u_h/4| {d2:.3e}, fine residuals {:.2e} {:.2e}",
            u2.residual_l2, u4.residual_l2
        ),
    );

    let j = field::energy(params, grid, u);
    push("energy_nonnegative", j >= -1e-9, j, String::new());

    let sig_ok = [10.0, 0.1].iter().all(|f| {
        u.components().enumerate().all(|(c, comp)| {
            let eps = nodal::node_threshold(comp, opts.eps_node) * f;
            nodal::nodal_number(comp, eps) == blocks.nodes_for(c)
        })
    });
    let floor = nodal::bump_set(grid, u, opts.eps_node).min_norm().unwrap_or(0.0);
    push(
        "signature",
        sig_ok && nodal::signature(u, opts.eps_node).matches(blocks),
        floor,
        "node gate x10 and /10".into(),
    );
    push("bump_floor", floor >= opts.epsilon / 2.0, floor, format!("epsilon/2 = {}", opts.epsilon / 2.0));

    let orbit = field::residual_l2(params, grid, &system::sigma(blocks, u));
    push("sigma_orbit", orbit < policy.stat_tol, orbit, String::new());

    let short = policy.with_horizon(1.0);
    let traj = flow::integrate(params, grid, u, &short)?;
    let drift = traj
        .samples
        .iter()
        .map(|s| field::l2(grid, &s.state.sub(u)))
        .fold(0.0, f64::max);
    push("flow_rest", drift <= 1e-6, drift, "max L2 drift over t in [0, 1]".into());

    Ok(VerifyReport { checks })
}
