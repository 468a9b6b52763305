//! Coefficients of the coupled cubic system, the cyclic block structure and the
//! hypothesis checks that make the multiplicity statement applicable.

use serde::{Deserialize, Serialize};

use crate::error::{NodalError, Result};
use crate::field::State;

const SYM_TOL: f64 = 1e-14;

/// `lambda_j` and the coupling matrix `B` (row-major, `B_jj = mu_j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub lambda: Vec<f64>,
    pub coupling: Vec<f64>,
}

impl SystemParams {
    pub fn new(lambda: Vec<f64>, coupling: Vec<f64>) -> Result<Self> {
        let n = lambda.len();
        if n == 0 {
            return Err(NodalError::InvalidParams("need at least one component".into()));
        }
        if coupling.len() != n * n {
            return Err(NodalError::InvalidParams(format!(
                "coupling matrix must be {n}x{n} (got {} entries)",
                coupling.len()
            )));
        }
        let p = Self { lambda, coupling };
        for j in 0..n {
            if !(p.lambda[j] > 0.0) || !p.lambda[j].is_finite() {
                return Err(NodalError::InvalidParams(format!(
                    "lambda_{} must be positive (got {})",
                    j + 1,
                    p.lambda[j]
                )));
            }
            if !(p.mu(j) > 0.0) || !p.mu(j).is_finite() {
                return Err(NodalError::InvalidParams(format!(
                    "mu_{} must be positive (got {})",
                    j + 1,
                    p.mu(j)
                )));
            }
            for i in 0..n {
                let (a, b) = (p.beta(i, j), p.beta(j, i));
                if !a.is_finite() || (a - b).abs() > SYM_TOL {
                    return Err(NodalError::InvalidParams(format!(
                        "coupling not symmetric at ({}, {}): {a} vs {b}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(p)
    }

    /// Equal `lambda`, `mu` and off-diagonal `beta` across all `n` components.
    pub fn uniform(n: usize, lambda: f64, mu: f64, beta: f64) -> Result<Self> {
        let mut coupling = vec![beta; n * n];
        for j in 0..n {
            coupling[j * n + j] = mu;
        }
        Self::new(vec![lambda; n], coupling)
    }

    pub fn n_comp(&self) -> usize {
        self.lambda.len()
    }

    pub fn mu(&self, j: usize) -> f64 {
        self.coupling[j * self.n_comp() + j]
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.n_comp() + j]
    }

    /// Uniform system data `(lambda, mu, beta)` when every component is alike.
    pub fn uniform_values(&self) -> Option<(f64, f64, f64)> {
        let n = self.n_comp();
        let (l, mu) = (self.lambda[0], self.mu(0));
        let b = if n > 1 { self.beta(0, 1) } else { 0.0 };
        for j in 0..n {
            if self.lambda[j] != l || self.mu(j) != mu {
                return None;
            }
            for i in 0..n {
                if i != j && self.beta(i, j) != b {
                    return None;
                }
            }
        }
        Some((l, mu, b))
    }
}

/// `N = p * B` components grouped into `B` cyclic blocks of size `p`, each block
/// carrying the prescribed nodal number `P_b`. `p = 1` is the trivial structure
/// used for systems without a cyclic symmetry (including scalar problems).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub p: usize,
    pub prescription: Vec<usize>,
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

impl BlockStructure {
    pub fn new(p: usize, prescription: Vec<usize>) -> Result<Self> {
        if !(p == 1 || is_prime(p)) {
            return Err(NodalError::InvalidBlocks(format!(
                "p must be prime (or 1 for no symmetry), got {p}"
            )));
        }
        if prescription.is_empty() {
            return Err(NodalError::InvalidBlocks("need at least one block".into()));
        }
        Ok(Self { p, prescription })
    }

    pub fn scalar(nodes: usize) -> Self {
        Self {
            p: 1,
            prescription: vec![nodes],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.prescription.len()
    }

    pub fn n_comp(&self) -> usize {
        self.p * self.n_blocks()
    }

    pub fn block_of(&self, j: usize) -> usize {
        j / self.p
    }

    /// Prescribed sign-change count of component `j`.
    pub fn nodes_for(&self, j: usize) -> usize {
        self.prescription[self.block_of(j)]
    }

    pub fn check_against(&self, params: &SystemParams) -> Result<()> {
        if self.n_comp() != params.n_comp() {
            return Err(NodalError::InvalidBlocks(format!(
                "p * B = {} does not match N = {}",
                self.n_comp(),
                params.n_comp()
            )));
        }
        Ok(())
    }

    /// Source component index that lands at position `j` after one `sigma`.
    pub fn sigma_source(&self, j: usize) -> usize {
        let b = j / self.p;
        let i = j % self.p;
        b * self.p + (i + 1) % self.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub thm1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub holds_a: bool,
    pub holds_b: bool,
    pub holds_c: bool,
    pub holds_d: bool,
    /// `beta <= -mu/(p-1)`; only evaluated for uniform systems with `p >= 2`.
    pub holds_thm1: bool,
    pub uniform: bool,
    pub margins: Margins,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.holds_a && self.holds_b && self.holds_c && self.holds_d
    }

    pub fn multiplicity_applies(&self) -> bool {
        self.all_hold() || (self.uniform && self.holds_thm1)
    }
}

/// Applies the adjacent row/column exchanges `(pb-p+i, pb-p+i+1)`, `i = 1..p-1`,
/// of one block to a copy of the coupling matrix.
fn block_cycle(coupling: &[f64], n: usize, start: usize, p: usize) -> Vec<f64> {
    let mut m = coupling.to_vec();
    for i in 0..p.saturating_sub(1) {
        let (r1, r2) = (start + i, start + i + 1);
        for c in 0..n {
            m.swap(r1 * n + c, r2 * n + c);
        }
        for r in 0..n {
            m.swap(r * n + r1, r * n + r2);
        }
    }
    m
}

pub fn validate(params: &SystemParams, blocks: &BlockStructure) -> Result<AssumptionReport> {
    blocks.check_against(params)?;
    let n = params.n_comp();
    let p = blocks.p;

    let mut spread: f64 = 0.0;
    for b in 0..blocks.n_blocks() {
        let l0 = params.lambda[b * p];
        for i in 0..p {
            spread = spread.max((params.lambda[b * p + i] - l0).abs());
        }
    }
    let margin_a = -spread;

    let mut max_off = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_off = max_off.max(params.beta(i, j));
            }
        }
    }
    let margin_b = if n > 1 { -max_off } else { 0.0 };

    let mut dev: f64 = 0.0;
    for b in 0..blocks.n_blocks() {
        let shifted = block_cycle(&params.coupling, n, b * p, p);
        for (x, y) in shifted.iter().zip(&params.coupling) {
            dev = dev.max((x - y).abs());
        }
    }
    let margin_c = -dev;

    let mut worst_d = f64::NEG_INFINITY;
    for j in 0..n {
        let b = blocks.block_of(j);
        let s: f64 = params.mu(j)
            + (b * p..(b + 1) * p)
                .filter(|&i| i != j)
                .map(|i| params.beta(i, j))
                .sum::<f64>();
        worst_d = worst_d.max(s);
    }
    let margin_d = -worst_d;

    let uniform = params.uniform_values();
    let thm1 = match uniform {
        Some((_, mu, beta)) if p >= 2 => Some(-mu / (p as f64 - 1.0) - beta),
        _ => None,
    };

    Ok(AssumptionReport {
        holds_a: margin_a >= -SYM_TOL,
        holds_b: margin_b >= 0.0,
        holds_c: margin_c >= -SYM_TOL,
        holds_d: margin_d >= 0.0,
        holds_thm1: thm1.is_some_and(|m| m >= 0.0),
        uniform: uniform.is_some(),
        margins: Margins {
            a: margin_a,
            b: margin_b,
            c: margin_c,
            d: margin_d,
            thm1,
        },
    })
}

/// One cyclic shift of the components inside every block.
pub fn sigma(blocks: &BlockStructure, state: &State) -> State {
    let mut out = state.clone();
    for j in 0..state.n_comp() {
        out.component_mut(j)
            .copy_from_slice(state.component(blocks.sigma_source(j)));
    }
    out
}

/// `sigma^shift` followed by a componentwise sign pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryTransform {
    pub p: usize,
    pub shift: usize,
    pub signs: Vec<f64>,
}

impl SymmetryTransform {
    pub fn identity(p: usize, n: usize) -> Self {
        Self {
            p,
            shift: 0,
            signs: vec![1.0; n],
        }
    }

    fn source(&self, j: usize) -> usize {
        let b = j / self.p;
        b * self.p + (j % self.p + self.shift) % self.p
    }

    pub fn apply(&self, state: &State) -> State {
        let mut out = state.clone();
        for j in 0..state.n_comp() {
            let src = state.component(self.source(j));
            let s = self.signs[j];
            for (o, v) in out.component_mut(j).iter_mut().zip(src) {
                *o = s * v;
            }
        }
        out
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SymmetryTransform) -> SymmetryTransform {
        let n = self.signs.len();
        let signs = (0..n)
            .map(|j| self.signs[j] * other.signs[self.source(j)])
            .collect();
        SymmetryTransform {
            p: self.p,
            shift: (self.shift + other.shift) % self.p,
            signs,
        }
    }
}

/// The group generated by `sigma` and componentwise sign flips (`p * 2^N` elements).
pub fn symmetry_group(blocks: &BlockStructure) -> Vec<SymmetryTransform> {
    let n = blocks.n_comp();
    let mut out = Vec::with_capacity(blocks.p << n);
    for shift in 0..blocks.p {
        for mask in 0..(1usize << n) {
            let signs = (0..n)
                .map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            out.push(SymmetryTransform {
                p: blocks.p,
                shift,
                signs,
            });
        }
    }
    out
}

/// The 4x4 coupling pattern of the two-block example with `p = 2`.
pub fn example_four_component(
    mu: [f64; 2],
    beta_in: [f64; 2],
    beta_cross: f64,
    lambda: [f64; 2],
) -> Result<SystemParams> {
    let c = vec![
        mu[0], beta_in[0], beta_cross, beta_cross, //
        beta_in[0], mu[0], beta_cross, beta_cross, //
        beta_cross, beta_cross, mu[1], beta_in[1], //
        beta_cross, beta_cross, beta_in[1], mu[1],
    ];
    SystemParams::new(vec![lambda[0], lambda[0], lambda[1], lambda[1]], c)
}
