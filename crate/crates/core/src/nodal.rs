//! Sign-change counts, bump decomposition and the degenerate sets used to
//! stop or discard flow lines.

use serde::{Deserialize, Serialize};

use crate::field::State;
use crate::grid::Grid;
use crate::system::BlockStructure;

/// Relative noise gate applied when no explicit threshold is given.
pub const DEFAULT_REL_GATE: f64 = 1e-8;
pub const GATE_FLOOR: f64 = 1e-12;

/// Amplitude below which a grid value is ignored for sign detection.
pub fn node_threshold(u: &[f64], eps_node: Option<f64>) -> f64 {
    match eps_node {
        Some(e) => e,
        None => {
            let linf = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (DEFAULT_REL_GATE * linf).max(GATE_FLOOR)
        }
    }
}

/// Number of sign alternations among the nodes with `|u_i| > eps_node`.
pub fn nodal_number(u: &[f64], eps_node: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in u.iter().filter(|v| v.abs() > eps_node) {
        if last != 0.0 && v.signum() != last {
            count += 1;
        }
        last = v.signum();
    }
    count
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodalSignature {
    pub counts: Vec<usize>,
}

impl NodalSignature {
    pub fn matches(&self, blocks: &BlockStructure) -> bool {
        self.counts.len() == blocks.n_comp()
            && self
                .counts
                .iter()
                .enumerate()
                .all(|(j, &c)| c == blocks.nodes_for(j))
    }
}

pub fn signature(state: &State, eps_node: Option<f64>) -> NodalSignature {
    NodalSignature {
        counts: state
            .components()
            .map(|u| nodal_number(u, node_threshold(u, eps_node)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    /// 1-based position counted from the inner end.
    pub q: usize,
    pub a: f64,
    pub b: f64,
    pub sign: i8,
    pub l4_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSet {
    pub components: Vec<Vec<Bump>>,
}

impl BumpSet {
    pub fn norms(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| c.iter().map(|b| b.l4_norm).collect())
            .collect()
    }

    pub fn min_norm(&self) -> Option<f64> {
        self.components
            .iter()
            .flatten()
            .map(|b| b.l4_norm)
            .fold(None, |a, v| Some(a.map_or(v, |x: f64| x.min(v))))
    }
}

/// Splits `u` at linearly interpolated zeros between consecutive above-gate nodes
/// of opposite sign. Each bump keeps only the part of `u` carrying its sign.
pub fn bump_decomposition(grid: &Grid, u: &[f64], eps_node: f64) -> Vec<Bump> {
    let kept: Vec<usize> = (0..u.len()).filter(|&i| u[i].abs() > eps_node).collect();
    if kept.is_empty() {
        return Vec::new();
    }
    let mut crossings = Vec::new();
    for w in kept.windows(2) {
        let (i, k) = (w[0], w[1]);
        if u[i].signum() != u[k].signum() {
            let (ri, rk) = (grid.nodes[i], grid.nodes[k]);
            crossings.push(ri + (rk - ri) * u[i] / (u[i] - u[k]));
        }
    }
    let first_sign = u[kept[0]].signum() as i8;
    let mut edges = Vec::with_capacity(crossings.len() + 2);
    edges.push(grid.domain.r_inner);
    edges.extend(crossings);
    edges.push(grid.domain.r_outer);

    let mut sums = vec![0.0; edges.len() - 1];
    let mut q = 0;
    for (i, (&r, &v)) in grid.nodes.iter().zip(u).enumerate() {
        while q + 1 < sums.len() && r >= edges[q + 1] {
            q += 1;
        }
        let sign = if q % 2 == 0 { first_sign } else { -first_sign };
        if v * sign as f64 > 0.0 {
            sums[q] += grid.cell_volumes[i] * v.powi(4);
        }
    }
    sums.iter()
        .enumerate()
        .map(|(q, s)| Bump {
            q: q + 1,
            a: edges[q],
            b: edges[q + 1],
            sign: if q % 2 == 0 { first_sign } else { -first_sign },
            l4_norm: s.powf(0.25),
        })
        .collect()
}

/// Splits a state into one state per bump, each zero outside its bump.
/// Order follows `bump_set`: component-major, inner bump first.
pub fn bump_pieces(grid: &Grid, state: &State, eps_node: Option<f64>) -> Vec<State> {
    let mut out = Vec::new();
    for (j, u) in state.components().enumerate() {
        for b in bump_decomposition(grid, u, node_threshold(u, eps_node)) {
            let mut piece = State::zeros(state.n_comp(), state.m());
            let last = b.b >= grid.domain.r_outer;
            for (k, (&r, &v)) in grid.nodes.iter().zip(u).enumerate() {
                if r >= b.a && (r < b.b || last) && v * b.sign as f64 > 0.0 {
                    piece.component_mut(j)[k] = v;
                }
            }
            out.push(piece);
        }
    }
    out
}

pub fn bump_set(grid: &Grid, state: &State, eps_node: Option<f64>) -> BumpSet {
    BumpSet {
        components: state
            .components()
            .map(|u| bump_decomposition(grid, u, node_threshold(u, eps_node)))
            .collect(),
    }
}

/// Every component carries exactly its prescribed sign-change count.
pub fn in_prescribed_d(state: &State, blocks: &BlockStructure, eps_node: Option<f64>) -> bool {
    signature(state, eps_node).matches(blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degeneracy {
    Ok,
    /// 0-based component, 1-based bump.
    SmallBump { comp: usize, q: usize },
    NodeDrop { comp: usize },
}

impl Degeneracy {
    pub fn is_ok(&self) -> bool {
        matches!(self, Degeneracy::Ok)
    }
}

/// First component whose count fell below its prescription, or first bump whose
/// `L^4` norm is below `eps`.
pub fn degeneracy_check(
    grid: &Grid,
    state: &State,
    blocks: &BlockStructure,
    eps: f64,
    eps_node: Option<f64>,
) -> Degeneracy {
    for (j, u) in state.components().enumerate() {
        let gate = node_threshold(u, eps_node);
        if nodal_number(u, gate) < blocks.nodes_for(j) {
            return Degeneracy::NodeDrop { comp: j };
        }
        for b in bump_decomposition(grid, u, gate) {
            if b.l4_norm < eps {
                return Degeneracy::SmallBump { comp: j, q: b.q };
            }
        }
    }
    Degeneracy::Ok
}

/// First sample time at which the flow line enters `F_{eps/2}`. A node drop
/// only counts once it persists over two consecutive samples; the reported
/// time is the first of the two.
pub fn arriving_time<'a>(
    grid: &Grid,
    samples: impl IntoIterator<Item = (f64, &'a State)>,
    blocks: &BlockStructure,
    eps: f64,
    eps_node: Option<f64>,
) -> Option<f64> {
    let mut pending_drop: Option<f64> = None;
    for (t, s) in samples {
        match degeneracy_check(grid, s, blocks, eps / 2.0, eps_node) {
            Degeneracy::Ok => pending_drop = None,
            Degeneracy::SmallBump { .. } => return Some(t),
            Degeneracy::NodeDrop { .. } => match pending_drop {
                Some(t0) => return Some(t0),
                None => pending_drop = Some(t),
            },
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCalibration {
    pub rho: f64,
    /// Largest observed `int u^6 / ((|grad u^2|^2 + lambda |u^2|^2) |u|_4^2)`.
    pub sobolev_const: f64,
    /// `4 mu C / 3`: the bump `L^4` norm decreases while `1 - coeff * rho^2 > 0`.
    pub coeff: f64,
}

/// Brute-force scan of single-bump profiles `((r-a)(b-r))^k` over sub-intervals
/// of the grid for the constant controlling small-bump decay, then the largest
/// dyadic `rho` for which the decay inequality holds.
pub fn calibrate_rho(grid: &Grid, lambda: f64, mu: f64) -> RhoCalibration {
    let m = grid.m();
    let stride = (m / 120).max(1);
    let mut best: f64 = 0.0;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; m];
    let edges: Vec<f64> = std::iter::once(grid.domain.r_inner)
        .chain(grid.nodes.iter().copied())
        .chain(std::iter::once(grid.domain.r_outer))
        .collect();
    for ia in (0..edges.len()).step_by(stride) {
        for ib in (ia + 4..edges.len()).step_by(stride) {
            let (a, b) = (edges[ia], edges[ib]);
            for power in [1, 2, 3] {
                for i in 0..m {
                    let r = grid.nodes[i];
                    u[i] = if r > a && r < b {
                        ((r - a) * (b - r)).powi(power)
                    } else {
                        0.0
                    };
                    v[i] = u[i] * u[i];
                }
                let l4sq = grid.inner(&v, &v).sqrt();
                if l4sq == 0.0 {
                    continue;
                }
                let six = grid.mass_sum(|i| v[i] * v[i] * v[i]);
                let q = grid.stiffness(&v, &v) + lambda * grid.inner(&v, &v);
                best = best.max(six / (q * l4sq));
            }
        }
    }
    let coeff = 4.0 * mu * best / 3.0;
    let mut rho = 1.0;
    while 1.0 - coeff * rho * rho <= 0.0 {
        rho *= 0.5;
    }
    RhoCalibration {
        rho,
        sobolev_const: best,
        coeff,
    }
}
