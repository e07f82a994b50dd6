//! Dual of the smoothed projection
//!
//! ```text
//! min ||theta - psi||^2 + alpha ||Z - Y||_F^2
//! s.t. Z_ij >= +-(theta^ij_{c,a} - theta^ij_{c,b}) / 2   for both orientations of every edge
//!      Z_ij = Z_ji on edges,  Z_ij = 0 off edges,  ||Z||_* <= c
//! ```
//!
//! Multipliers: `sigma`/`phi` (>= 0) for the `+`/`-` difference constraints,
//! `gamma` for symmetry (one per edge) and `delta` for the off-edge zeros
//! (dense mode only). `g = min_Z h1 + min_theta h2` with both inner problems
//! in closed form.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dependency::MatrixNorm;
use crate::error::{input, Result};
use crate::mrf::PairwiseMrf;
use crate::norm_ball::{project_l1_in_place, NormBall};

/// How `Z` is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Full `n x n` matrix with off-edge multipliers.
    Dense,
    /// Edge support only; valid for the inf-norm ball, whose projection
    /// preserves sparsity.
    Sparse,
}

impl std::str::FromStr for ProjectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown projection mode {other:?}")),
        }
    }
}

/// One ordered orientation `(row_var, col_var)` of a pairwise edge.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Orientation {
    pub row_var: usize,
    pub col_var: usize,
    pub rows: usize,
    pub cols: usize,
    /// Flat offset of the stored edge table.
    pub param_offset: usize,
    /// Whether the orientation is the transpose of the stored table.
    pub transposed: bool,
    /// Offset into the sigma (and phi) block.
    pub dual_offset: usize,
}

impl Orientation {
    /// Flat parameter index of `theta^o_{c,a}` (row `c`, column `a`).
    #[inline]
    pub fn param(&self, c: usize, a: usize) -> usize {
        if self.transposed {
            self.param_offset + a * self.rows + c
        } else {
            self.param_offset + c * self.cols + a
        }
    }

    /// Index of `(a, b, c)` within this orientation's multiplier block.
    #[inline]
    pub fn dual(&self, a: usize, b: usize, c: usize) -> usize {
        self.dual_offset + (a * self.cols + b) * self.rows + c
    }

    pub fn dual_len(&self) -> usize {
        self.cols * self.cols * self.rows
    }
}

/// Index structure shared by every dual evaluation for one model structure.
#[derive(Debug, Clone)]
pub struct DualLayout {
    pub(crate) n: usize,
    pub(crate) mode: ProjectionMode,
    pub(crate) orientations: Vec<Orientation>,
    /// `(i, j)` with `i < j` for each pairwise edge, in slot order.
    pub(crate) edge_pairs: Vec<(usize, usize)>,
    /// Off-edge entries constrained to zero (dense mode), diagonal included.
    pub(crate) off_edge: Vec<(usize, usize)>,
    /// Orientation indices by row variable.
    pub(crate) rows_of: Vec<Vec<usize>>,
    pub(crate) orientation_index: HashMap<(usize, usize), usize>,
    pub(crate) sigma_len: usize,
}

impl DualLayout {
    pub fn new(m: &PairwiseMrf, mode: ProjectionMode) -> Self {
        let n = m.n();
        let mut orientations = Vec::new();
        let mut edge_pairs = Vec::new();
        let mut rows_of = vec![Vec::new(); n];
        let mut orientation_index = HashMap::new();
        let mut offset = 0;
        for e in m.pairwise_edges() {
            let (i, j) = m.edges()[e];
            edge_pairs.push((i, j));
            for (row_var, col_var, transposed) in [(i, j, false), (j, i, true)] {
                let o = Orientation {
                    row_var,
                    col_var,
                    rows: m.card(row_var),
                    cols: m.card(col_var),
                    param_offset: m.offset(e),
                    transposed,
                    dual_offset: offset,
                };
                offset += o.dual_len();
                rows_of[row_var].push(orientations.len());
                orientation_index.insert((row_var, col_var), orientations.len());
                orientations.push(o);
            }
        }
        let off_edge = match mode {
            ProjectionMode::Sparse => Vec::new(),
            ProjectionMode::Dense => (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i == j || !orientation_index.contains_key(&(i, j)))
                .collect(),
        };
        Self { n, mode, orientations, edge_pairs, off_edge, rows_of, orientation_index, sigma_len: offset }
    }

    /// Length of the flat dual vector `[sigma | phi | gamma | delta]`.
    pub fn len(&self) -> usize {
        2 * self.sigma_len + self.edge_pairs.len() + self.off_edge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of leading coordinates constrained to be nonnegative.
    pub fn bounded_len(&self) -> usize {
        2 * self.sigma_len
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    fn delta_offset(&self) -> usize {
        2 * self.sigma_len + self.edge_pairs.len()
    }
}

/// Dual variables, split by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub sigma: Vec<f64>,
    pub phi: Vec<f64>,
    /// One per pairwise edge; enters `Lambda_ij` with `+` and `Lambda_ji` with `-`.
    pub gamma: Vec<f64>,
    /// One per off-edge entry (dense mode).
    pub delta: Vec<f64>,
}

impl DualState {
    pub fn zeros(layout: &DualLayout) -> Self {
        Self {
            sigma: vec![0.0; layout.sigma_len],
            phi: vec![0.0; layout.sigma_len],
            gamma: vec![0.0; layout.edge_pairs.len()],
            delta: vec![0.0; layout.off_edge.len()],
        }
    }

    pub fn from_flat(layout: &DualLayout, x: &[f64]) -> Result<Self> {
        if x.len() != layout.len() {
            return input(format!("dual vector has {} entries, layout needs {}", x.len(), layout.len()));
        }
        let s = layout.sigma_len;
        Ok(Self {
            sigma: x[..s].to_vec(),
            phi: x[s..2 * s].to_vec(),
            gamma: x[2 * s..layout.delta_offset()].to_vec(),
            delta: x[layout.delta_offset()..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [&self.sigma[..], &self.phi, &self.gamma, &self.delta].concat()
    }

    pub fn is_feasible(&self) -> bool {
        self.sigma.iter().chain(&self.phi).all(|&v| v >= 0.0)
    }
}

/// `theta = psi - G / 4` with
/// `G_{c,a} = sum_b (sigma - phi)(a,b,c) - sum_b (sigma - phi)(b,a,c)`,
/// accumulated over both orientations of every edge.
pub fn solve_h2(psi: &PairwiseMrf, layout: &DualLayout, sigma: &[f64], phi: &[f64]) -> Vec<f64> {
    let g = multiplier_adjoint(psi.param_len(), layout, sigma, phi);
    psi.params().iter().zip(&g).map(|(p, gv)| p - 0.25 * gv).collect()
}

fn multiplier_adjoint(len: usize, layout: &DualLayout, sigma: &[f64], phi: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; len];
    for o in &layout.orientations {
        for a in 0..o.cols {
            for b in 0..o.cols {
                if a == b {
                    continue;
                }
                for c in 0..o.rows {
                    let k = o.dual(a, b, c);
                    let w = sigma[k] - phi[k];
                    g[o.param(c, a)] += w;
                    g[o.param(c, b)] -= w;
                }
            }
        }
    }
    g
}

/// Assembles `Lambda` as a dense matrix.
pub(crate) fn assemble_lambda(layout: &DualLayout, dual: &DualState) -> DMatrix<f64> {
    let mut lambda = DMatrix::<f64>::zeros(layout.n, layout.n);
    for o in &layout.orientations {
        let block = o.dual_offset..o.dual_offset + o.dual_len();
        let total: f64 = dual.sigma[block.clone()].iter().sum::<f64>() + dual.phi[block].iter().sum::<f64>();
        lambda[(o.row_var, o.col_var)] += total;
    }
    for (&(i, j), &g) in layout.edge_pairs.iter().zip(&dual.gamma) {
        lambda[(i, j)] += g;
        lambda[(j, i)] -= g;
    }
    for (&(i, j), &d) in layout.off_edge.iter().zip(&dual.delta) {
        lambda[(i, j)] += d;
    }
    lambda
}

/// `argmin_{||Z||_* <= c} ||Z - (Y + Lambda / (2 alpha))||_F^2`.
pub fn solve_h1(anchor: &DMatrix<f64>, lambda: &DMatrix<f64>, alpha: f64, ball: &NormBall) -> Result<DMatrix<f64>> {
    if alpha <= 0.0 {
        return input(format!("alpha must be positive, got {alpha}"));
    }
    ball.project(&(anchor + lambda / (2.0 * alpha)))
}

/// Sparse-mode `h1` minimizer: the edge-supported part of `Y + Lambda/(2 alpha)`
/// projected row by row onto the l1 ball.
fn solve_h1_sparse(layout: &DualLayout, anchor: &DMatrix<f64>, lambda: &DMatrix<f64>, alpha: f64, radius: f64) -> DMatrix<f64> {
    let mut z = DMatrix::<f64>::zeros(layout.n, layout.n);
    let mut row = Vec::new();
    for (i, members) in layout.rows_of.iter().enumerate() {
        row.clear();
        row.extend(members.iter().map(|&k| {
            let j = layout.orientations[k].col_var;
            anchor[(i, j)] + lambda[(i, j)] / (2.0 * alpha)
        }));
        project_l1_in_place(&mut row, radius);
        for (&k, &v) in members.iter().zip(&row) {
            z[(i, layout.orientations[k].col_var)] = v;
        }
    }
    z
}

/// Dual value, its gradient, and the inner minimizers.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    pub gradient: DualState,
    pub theta: Vec<f64>,
    pub z: DMatrix<f64>,
}

/// Inputs of the smoothed projection that stay fixed while the dual moves.
#[derive(Debug, Clone, Copy)]
pub struct DualObjective<'a> {
    pub psi: &'a PairwiseMrf,
    pub anchor: &'a DMatrix<f64>,
    pub alpha: f64,
    pub ball: NormBall,
    pub layout: &'a DualLayout,
}

impl DualObjective<'_> {
    pub fn evaluate(&self, dual: &DualState) -> Result<DualEvaluation> {
        let layout = self.layout;
        let lambda = assemble_lambda(layout, dual);
        let z = match layout.mode {
            ProjectionMode::Dense => solve_h1(self.anchor, &lambda, self.alpha, &self.ball)?,
            ProjectionMode::Sparse => {
                if self.ball.norm != MatrixNorm::Inf {
                    return input("sparse mode requires the inf-norm ball");
                }
                solve_h1_sparse(layout, self.anchor, &lambda, self.alpha, self.ball.radius)
            }
        };
        let h1 = -lambda.dot(&z) + self.alpha * (&z - self.anchor).norm_squared();

        let g_adj = multiplier_adjoint(self.psi.param_len(), layout, &dual.sigma, &dual.phi);
        let theta: Vec<f64> = self.psi.params().iter().zip(&g_adj).map(|(p, g)| p - 0.25 * g).collect();
        let h2: f64 = theta
            .iter()
            .zip(self.psi.params())
            .zip(&g_adj)
            .map(|((t, p), g)| (t - p) * (t - p) + 0.5 * g * t)
            .sum();

        let mut gradient = DualState::zeros(layout);
        for o in &layout.orientations {
            let z_o = z[(o.row_var, o.col_var)];
            for a in 0..o.cols {
                for b in 0..o.cols {
                    for c in 0..o.rows {
                        let half_diff = 0.5 * (theta[o.param(c, a)] - theta[o.param(c, b)]);
                        let k = o.dual(a, b, c);
                        gradient.sigma[k] = half_diff - z_o;
                        gradient.phi[k] = -half_diff - z_o;
                    }
                }
            }
        }
        for (g, &(i, j)) in gradient.gamma.iter_mut().zip(&layout.edge_pairs) {
            *g = z[(j, i)] - z[(i, j)];
        }
        for (g, &(i, j)) in gradient.delta.iter_mut().zip(&layout.off_edge) {
            *g = -z[(i, j)];
        }
        Ok(DualEvaluation { value: h1 + h2, gradient, theta, z })
    }

    /// `||theta - psi||^2 + alpha ||Z - Y||_F^2`.
    pub fn primal_value(&self, theta: &[f64], z: &DMatrix<f64>) -> f64 {
        let fit: f64 = theta.iter().zip(self.psi.params()).map(|(t, p)| (t - p) * (t - p)).sum();
        fit + self.alpha * (z - self.anchor).norm_squared()
    }

    /// Largest violation of any primal constraint at `(theta, Z)`.
    pub fn max_violation(&self, theta: &[f64], z: &DMatrix<f64>) -> Result<f64> {
        let layout = self.layout;
        let mut worst: f64 = 0.0;
        for o in &layout.orientations {
            let z_o = z[(o.row_var, o.col_var)];
            for a in 0..o.cols {
                for b in a + 1..o.cols {
                    for c in 0..o.rows {
                        let d = 0.5 * (theta[o.param(c, a)] - theta[o.param(c, b)]).abs();
                        worst = worst.max(d - z_o);
                    }
                }
            }
        }
        for &(i, j) in &layout.edge_pairs {
            worst = worst.max((z[(i, j)] - z[(j, i)]).abs());
        }
        for i in 0..layout.n {
            for j in 0..layout.n {
                if i == j || !layout.orientation_index.contains_key(&(i, j)) {
                    worst = worst.max(z[(i, j)].abs());
                }
            }
        }
        let norm = crate::dependency::matrix_norm(z, self.ball.norm)?;
        Ok(worst.max(norm - self.ball.radius))
    }
}
