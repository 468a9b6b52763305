//! Initial data: the cone of signed bumps and the cyclically symmetric family
//! built from phase-shifted slot profiles.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::field::{self, State};
use crate::grid::Grid;
use crate::system::BlockStructure;

/// Fraction of each phase arc left empty so that the profiles at phases `t`
/// and `t + 2 pi / p` never share support.
pub const PHASE_GAP: f64 = 0.1;

/// Sampled phases stay within this fraction of the arc half-width.
const PHASE_SPREAD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub a: f64,
    pub b: f64,
    /// Constant `c` in `c ((r-a)(b-r))^2`.
    pub scale: f64,
    #[serde(skip)]
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymCell {
    pub a: f64,
    pub b: f64,
    /// `p` equal sub-cells, slot `m` active around phase `2 pi m / p`.
    pub slots: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpBasis {
    pub p: usize,
    pub k: usize,
    pub prescription: Vec<usize>,
    /// `[component][bump]` cells of the cone.
    pub cone: Vec<Vec<Cell>>,
    /// `[block][bump][k]` cells of the symmetric family.
    pub sym: Vec<Vec<Vec<SymCell>>>,
    pub phase_gap: f64,
}

fn split(a: f64, b: f64, parts: usize) -> Vec<(f64, f64)> {
    let w = (b - a) / parts as f64;
    (0..parts)
        .map(|i| {
            let hi = if i + 1 == parts { b } else { a + w * (i + 1) as f64 };
            (a + w * i as f64, hi)
        })
        .collect()
}

fn make_cell(grid: &Grid, a: f64, b: f64) -> Result<Cell> {
    if b - a < 4.0 * grid.h {
        return Err(NodalError::InvalidBasis(format!(
            "cell [{a}, {b}] narrower than four grid spacings ({})",
            4.0 * grid.h
        )));
    }
    let raw: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&r| if r > a && r < b { ((r - a) * (b - r)).powi(2) } else { 0.0 })
        .collect();
    let norm = field::l4_of(grid, &raw);
    if norm == 0.0 {
        return Err(NodalError::InvalidBasis(format!("cell [{a}, {b}] holds no grid node")));
    }
    let scale = 1.0 / norm;
    Ok(Cell {
        a,
        b,
        scale,
        profile: raw.into_iter().map(|v| v * scale).collect(),
    })
}

pub fn build_basis(grid: &Grid, blocks: &BlockStructure, k: usize) -> Result<BumpBasis> {
    if k == 0 {
        return Err(NodalError::InvalidBasis("K must be at least 1".into()));
    }
    let (r0, r1) = (grid.domain.r_inner, grid.domain.r_outer);
    let n = blocks.n_comp();
    let mut cone = Vec::with_capacity(n);
    for (j, (a, b)) in split(r0, r1, n).into_iter().enumerate() {
        let cells = split(a, b, blocks.nodes_for(j) + 1)
            .into_iter()
            .map(|(a, b)| make_cell(grid, a, b))
            .collect::<Result<Vec<_>>>()?;
        cone.push(cells);
    }
    let mut sym = Vec::with_capacity(blocks.n_blocks());
    for (bi, (a, b)) in split(r0, r1, blocks.n_blocks()).into_iter().enumerate() {
        let mut bumps = Vec::new();
        for (qa, qb) in split(a, b, blocks.prescription[bi] + 1) {
            let mut subs = Vec::with_capacity(k);
            for (ka, kb) in split(qa, qb, k) {
                let slots = split(ka, kb, blocks.p)
                    .into_iter()
                    .map(|(a, b)| make_cell(grid, a, b))
                    .collect::<Result<Vec<_>>>()?;
                subs.push(SymCell { a: ka, b: kb, slots });
            }
            bumps.push(subs);
        }
        sym.push(bumps);
    }
    Ok(BumpBasis {
        p: blocks.p,
        k,
        prescription: blocks.prescription.clone(),
        cone,
        sym,
        phase_gap: PHASE_GAP,
    })
}

impl BumpBasis {
    /// Number of complex coordinates of the symmetric family.
    pub fn phase_len(&self) -> usize {
        self.k * self.prescription.iter().map(|p| p + 1).sum::<usize>()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("basis serializes")
    }

    fn arc_half_width(&self) -> f64 {
        PI / self.p as f64 * (1.0 - self.phase_gap)
    }

    /// Weight of slot `m` at phase `t`: a hat centred at `2 pi m / p`.
    pub fn slot_weight(&self, m: usize, t: f64) -> f64 {
        if self.p == 1 {
            return 1.0;
        }
        let centre = 2.0 * PI * m as f64 / self.p as f64;
        let d = (t - centre).rem_euclid(2.0 * PI);
        let d = d.min(2.0 * PI - d);
        (1.0 - d / self.arc_half_width()).max(0.0)
    }
}

/// Coordinates `z = alpha e^{i theta}` stored flat in (block, bump, k) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl PhaseVector {
    pub fn new(amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != phases.len() {
            return Err(NodalError::LengthMismatch {
                expected: amplitudes.len(),
                got: phases.len(),
            });
        }
        if amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(NodalError::InvalidBasis("amplitudes must be non-negative".into()));
        }
        let phases = phases.into_iter().map(|t| t.rem_euclid(2.0 * PI)).collect();
        Ok(Self { amplitudes, phases })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            amplitudes: vec![0.0; len],
            phases: vec![0.0; len],
        }
    }

    /// Multiplication of every coordinate by `e^{2 pi i / p}`.
    pub fn rotated(&self, p: usize) -> Self {
        let step = 2.0 * PI / p as f64;
        Self {
            amplitudes: self.amplitudes.clone(),
            phases: self.phases.iter().map(|t| (t + step).rem_euclid(2.0 * PI)).collect(),
        }
    }
}

/// `sum_q (-1)^{q+1} alpha_{j,q} w_{j,q}` per component; every coefficient
/// must be at least `floor`.
pub fn cone_element(basis: &BumpBasis, alpha: &[Vec<f64>], floor: f64) -> Result<State> {
    if alpha.len() != basis.cone.len() {
        return Err(NodalError::LengthMismatch {
            expected: basis.cone.len(),
            got: alpha.len(),
        });
    }
    let m = basis.cone[0][0].profile.len();
    let mut comps = Vec::with_capacity(alpha.len());
    for (cells, coeffs) in basis.cone.iter().zip(alpha) {
        if coeffs.len() != cells.len() {
            return Err(NodalError::LengthMismatch {
                expected: cells.len(),
                got: coeffs.len(),
            });
        }
        let mut u = vec![0.0; m];
        for (q, (cell, &c)) in cells.iter().zip(coeffs).enumerate() {
            if !(c >= floor) {
                return Err(NodalError::BelowFloor { value: c, floor });
            }
            let s = if q % 2 == 0 { c } else { -c };
            for (ui, wi) in u.iter_mut().zip(&cell.profile) {
                *ui += s * wi;
            }
        }
        comps.push(u);
    }
    State::from_components(comps)
}

/// Component `b p + i` is the block profile evaluated at phase `2 pi i / p`.
pub fn psi(basis: &BumpBasis, z: &PhaseVector) -> Result<State> {
    if z.amplitudes.len() != basis.phase_len() {
        return Err(NodalError::LengthMismatch {
            expected: basis.phase_len(),
            got: z.amplitudes.len(),
        });
    }
    let p = basis.p;
    let m = basis.sym[0][0][0].slots[0].profile.len();
    let mut comps = Vec::with_capacity(p * basis.sym.len());
    let mut offset = 0;
    for bumps in &basis.sym {
        let count = bumps.len() * basis.k;
        for i in 0..p {
            let t = 2.0 * PI * i as f64 / p as f64;
            let mut u = vec![0.0; m];
            for (q, subs) in bumps.iter().enumerate() {
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                for (kk, cell) in subs.iter().enumerate() {
                    let idx = offset + q * basis.k + kk;
                    let alpha = z.amplitudes[idx];
                    if alpha == 0.0 {
                        continue;
                    }
                    for (slot_idx, slot) in cell.slots.iter().enumerate() {
                        let g = basis.slot_weight(slot_idx, t + z.phases[idx]);
                        if g == 0.0 {
                            continue;
                        }
                        let c = sign * alpha * g;
                        for (ui, wi) in u.iter_mut().zip(&slot.profile) {
                            *ui += c * wi;
                        }
                    }
                }
            }
            comps.push(u);
        }
        offset += count;
    }
    State::from_components(comps)
}

/// Deterministic draws of amplitudes in `[0.5, 2]` and phases inside active
/// arcs, mapped through `psi`.
pub fn sample_seeds(
    basis: &BumpBasis,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<(PhaseVector, State)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let len = basis.phase_len();
    let hw = basis.arc_half_width();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut amps = Vec::with_capacity(len);
        let mut phases = Vec::with_capacity(len);
        for _ in 0..len {
            amps.push(rng.gen_range(0.5..=2.0));
            let slot = rng.gen_range(0..basis.p);
            let jitter = if basis.p == 1 {
                rng.gen_range(0.0..2.0 * PI)
            } else {
                rng.gen_range(-PHASE_SPREAD..=PHASE_SPREAD) * hw
            };
            phases.push(2.0 * PI * slot as f64 / basis.p as f64 + jitter);
        }
        let z = PhaseVector::new(amps, phases)?;
        let state = psi(basis, &z)?;
        out.push((z, state));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, RadialDomain};
    use crate::nodal;
    use crate::system;

    fn grid(m: usize) -> Grid {
        build_grid(RadialDomain::ball(1, 1.0, m)).unwrap()
    }

    #[test]
    fn single_cell_basis() {
        let g = grid(100);
        let b = build_basis(&g, &BlockStructure::scalar(0), 1).unwrap();
        assert_eq!(b.cone.len(), 1);
        assert_eq!(b.cone[0].len(), 1);
        assert_eq!((b.cone[0][0].a, b.cone[0][0].b), (0.0, 1.0));
        assert!((field::l4_of(&g, &b.cone[0][0].profile) - 1.0).abs() < 1e-10);
        assert!(b.cone[0][0].profile.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn symmetric_slots_disjoint_at_shifted_phase() {
        let g = grid(300);
        let blocks = BlockStructure::new(2, vec![1]).unwrap();
        let b = build_basis(&g, &blocks, 1).unwrap();
        assert_eq!(b.sym[0].len(), 2);
        for cells in &b.sym[0] {
            assert_eq!(cells[0].slots.len(), 2);
            for s in &cells[0].slots {
                assert!((field::l4_of(&g, &s.profile) - 1.0).abs() < 1e-10);
            }
        }
        for i in 0..200 {
            let t = 2.0 * PI * i as f64 / 200.0;
            for m in 0..2 {
                for n in 0..2 {
                    let shared = b.slot_weight(m, t) > 0.0 && b.slot_weight(n, t + PI) > 0.0;
                    assert!(!(shared && m == n), "slot {m} active at {t} and {t}+pi");
                }
            }
        }
    }

    #[test]
    fn nested_cells_cover_parents() {
        let g = grid(400);
        let blocks = BlockStructure::new(2, vec![2]).unwrap();
        let b = build_basis(&g, &blocks, 3).unwrap();
        let bumps = &b.sym[0];
        assert_eq!(bumps[0][0].a, 0.0);
        assert_eq!(bumps.last().unwrap().last().unwrap().b, 1.0);
        for q in bumps {
            for w in q.windows(2) {
                assert_eq!(w[0].b, w[1].a);
            }
            for c in q {
                assert_eq!(c.slots[0].a, c.a);
                assert_eq!(c.slots.last().unwrap().b, c.b);
            }
        }
        let json = b.to_json();
        assert!(json.contains("\"slots\""));
    }

    #[test]
    fn refuses_unresolved_cells() {
        let g = grid(32);
        let blocks = BlockStructure::new(2, vec![3]).unwrap();
        assert!(matches!(build_basis(&g, &blocks, 2), Err(NodalError::InvalidBasis(_))));
        assert!(build_basis(&g, &BlockStructure::scalar(0), 0).is_err());
    }

    #[test]
    fn cone_elements() {
        let g = grid(200);
        let blocks = BlockStructure::scalar(1);
        let b = build_basis(&g, &blocks, 1).unwrap();
        let u = cone_element(&b, &[vec![1.0, 1.0]], 1e-3).unwrap();
        assert_eq!(nodal::signature(&u, None).counts, vec![1]);
        let bumps = nodal::bump_set(&g, &u, None);
        for n in bumps.norms()[0].iter() {
            assert!((n - 1.0).abs() < 1e-10);
        }
        let v = cone_element(&b, &[vec![3.0, 3.0]], 1e-3).unwrap();
        assert!((field::l4_of(&g, v.component(0)) - 3.0 * field::l4_of(&g, u.component(0))).abs() < 1e-12);
        let floor = cone_element(&b, &[vec![1e-3, 1e-3]], 1e-3).unwrap();
        assert!(nodal::in_prescribed_d(&floor, &blocks, None));
        assert!(matches!(
            cone_element(&b, &[vec![1.0, 1e-4]], 1e-3),
            Err(NodalError::BelowFloor { .. })
        ));
    }

    #[test]
    fn cone_alternates_for_every_component() {
        let g = grid(300);
        let blocks = BlockStructure::new(2, vec![1, 2]).unwrap();
        let b = build_basis(&g, &blocks, 1).unwrap();
        let alpha: Vec<Vec<f64>> = (0..4).map(|j| vec![0.7; blocks.nodes_for(j) + 1]).collect();
        let u = cone_element(&b, &alpha, 1e-3).unwrap();
        assert_eq!(nodal::signature(&u, None).counts, vec![1, 1, 2, 2]);
    }

    #[test]
    fn psi_equivariance_and_zero() {
        let g = grid(300);
        let blocks = BlockStructure::new(2, vec![1]).unwrap();
        let b = build_basis(&g, &blocks, 2).unwrap();
        assert_eq!(psi(&b, &PhaseVector::zeros(b.phase_len())).unwrap(), State::zeros(2, 300));
        for (z, u) in sample_seeds(&b, 100, 7).unwrap() {
            let lhs = psi(&b, &z.rotated(2)).unwrap();
            let rhs = system::sigma(&blocks, &u);
            let d = lhs.sub(&rhs).linf();
            assert!(d <= 1e-14, "{d}");
            assert_ne!(rhs, u);
        }
    }

    #[test]
    fn psi_of_zero_phases_is_not_fixed() {
        let g = grid(300);
        let blocks = BlockStructure::new(2, vec![1]).unwrap();
        let b = build_basis(&g, &blocks, 1).unwrap();
        let z = PhaseVector::new(vec![1.0; 2], vec![0.0; 2]).unwrap();
        let u = psi(&b, &z).unwrap();
        assert!(system::sigma(&blocks, &u).sub(&u).linf() > 0.1);
    }

    #[test]
    fn seeds_lie_in_prescribed_set_and_are_reproducible() {
        let g = grid(400);
        for (p, pres) in [(2, vec![1]), (2, vec![0, 2]), (3, vec![1])] {
            let blocks = BlockStructure::new(p, pres).unwrap();
            let b = build_basis(&g, &blocks, 2).unwrap();
            let seeds = sample_seeds(&b, 30, 11).unwrap();
            for (_, s) in &seeds {
                assert!(nodal::in_prescribed_d(s, &blocks, None));
            }
            let again = sample_seeds(&b, 1, 11).unwrap();
            assert_eq!(again[0].1.as_slice(), seeds[0].1.as_slice());
            let other = sample_seeds(&b, 1, 12).unwrap();
            let d = field::l2(&g, &other[0].1.sub(&seeds[0].1)) / field::l2(&g, &seeds[0].1);
            assert!(d > 1e-3);
        }
    }

    #[test]
    fn phase_vector_validation() {
        assert!(PhaseVector::new(vec![1.0], vec![0.0, 1.0]).is_err());
        assert!(PhaseVector::new(vec![-1.0], vec![0.0]).is_err());
        let z = PhaseVector::new(vec![1.0], vec![7.0]).unwrap();
        assert!(z.phases[0] < 2.0 * PI);
    }
}
