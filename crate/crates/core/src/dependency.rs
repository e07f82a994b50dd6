//! Bounds on the Gibbs dependency matrix, exact dependency by enumeration,
//! matrix norms and the resulting mixing-time bound.
//!
//! `R_ij` is the largest total-variation change in `p(X_i | x_{-i})` caused by
//! changing only `x_j`. Every bound here is a function of the columns of the
//! oriented table `theta^ij` (one column per state of `x_j`):
//!
//! | variant          | per column pair `(a, b)`, `d = theta_.a - theta_.b` |
//! |------------------|-----------------------------------------------------|
//! | `SigmoidRange`   | `|2 sigma(range(d) / 2) - 1|`                       |
//! | `QuarterRange`   | `range(d) / 4`                                      |
//! | `OneCorollary`   | `||d||_1 / 4`                                       |
//! | `InfCorollary`   | `||d||_inf / 2`                                     |
//!
//! with the maximum taken over column pairs. They are ordered
//! `exact <= sigmoid_range <= quarter_range <= min(one, inf)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{PairwiseMrf, Role};

/// Cap on neighbor configurations enumerated by [`exact_dependency`].
pub const EXACT_DEPENDENCY_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    InfCorollary,
    OneCorollary,
    QuarterRange,
    SigmoidRange,
    Exact,
}

impl std::str::FromStr for BoundVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inf" | "inf_corollary" => Ok(Self::InfCorollary),
            "one" | "one_corollary" => Ok(Self::OneCorollary),
            "quarter" | "quarter_range" => Ok(Self::QuarterRange),
            "sigmoid" | "sigmoid_range" => Ok(Self::SigmoidRange),
            "exact" => Ok(Self::Exact),
            other => Err(format!("unknown bound variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    /// Largest singular value.
    Spectral,
    /// Maximum absolute row sum.
    Inf,
}

impl std::str::FromStr for MatrixNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spectral" | "2" => Ok(Self::Spectral),
            "inf" | "infinity" => Ok(Self::Inf),
            other => Err(format!("unknown matrix norm {other:?}")),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bound on the dependency of the row variable on the column variable of a
/// row-major `rows x cols` table. [`BoundVariant::Exact`] is not a function
/// of one table and is treated as [`BoundVariant::SigmoidRange`].
pub fn bound_edge(table: &[f64], rows: usize, cols: usize, variant: BoundVariant) -> f64 {
    debug_assert_eq!(table.len(), rows * cols);
    let mut worst: f64 = 0.0;
    for a in 0..cols {
        for b in a + 1..cols {
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            let mut l1 = 0.0;
            for c in 0..rows {
                let d = table[c * cols + a] - table[c * cols + b];
                max = max.max(d);
                min = min.min(d);
                l1 += d.abs();
            }
            let range = max - min;
            let inf = max.abs().max(min.abs());
            let v = match variant {
                BoundVariant::InfCorollary => 0.5 * inf,
                BoundVariant::OneCorollary => 0.25 * l1,
                BoundVariant::QuarterRange => 0.25 * range,
                BoundVariant::SigmoidRange | BoundVariant::Exact => (2.0 * sigmoid(0.5 * range) - 1.0).abs(),
            };
            worst = worst.max(v);
        }
    }
    worst
}

/// Dependency bound for an ordered pair of an MRF: the dependency of `i` on
/// `j`, from the `theta^ij` orientation. Zero when there is no pairwise edge.
pub fn bound_directed(m: &PairwiseMrf, i: usize, j: usize, variant: BoundVariant) -> f64 {
    if i == j {
        return 0.0;
    }
    match m.oriented_table(i, j) {
        Some(t) => bound_edge(&t, m.card(i), m.card(j), variant),
        None => 0.0,
    }
}

/// An `n x n` nonnegative dependency (bound) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyBound {
    pub matrix: DMatrix<f64>,
    pub variant: BoundVariant,
    /// [`PairwiseMrf::digest`] of the source model.
    pub model_digest: u64,
}

impl DependencyBound {
    pub fn norm(&self, norm: MatrixNorm) -> Result<f64> {
        matrix_norm(&self.matrix, norm)
    }
}

/// Symmetrized bound matrix: entry `(i, j)` is the larger of the two
/// orientations' edge bounds. [`BoundVariant::Exact`] enumerates instead.
pub fn bound_matrix(m: &PairwiseMrf, variant: BoundVariant) -> Result<DependencyBound> {
    let n = m.n();
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for e in m.pairwise_edges() {
        let (i, j) = m.edges()[e];
        let (v_ij, v_ji) = match variant {
            BoundVariant::Exact => (exact_dependency(m, i, j)?, exact_dependency(m, j, i)?),
            _ => (bound_directed(m, i, j, variant), bound_directed(m, j, i, variant)),
        };
        let v = v_ij.max(v_ji);
        matrix[(i, j)] = v;
        matrix[(j, i)] = v;
    }
    Ok(DependencyBound { matrix, variant, model_digest: m.digest() })
}

fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Exact dependency `R_ij`: the maximum, over settings of `i`'s other
/// neighbors and over pairs of states of `j`, of the total-variation distance
/// between the two conditionals of `X_i`.
pub fn exact_dependency(m: &PairwiseMrf, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Ok(0.0);
    }
    let Some(t_ij) = m.oriented_table(i, j) else {
        return Ok(0.0);
    };
    let li = m.card(i);
    let lj = m.card(j);

    // Fixed offset from i's self-edge, and the columns of the other neighbors.
    let mut fixed = vec![0.0; li];
    let mut others: Vec<(Vec<f64>, usize)> = Vec::new();
    for inc in m.incidences(i) {
        match inc.role {
            Role::SelfEdge => {
                let t = m.table(inc.edge);
                for (a, f) in fixed.iter_mut().enumerate() {
                    *f += t[a * li + a];
                }
            }
            _ if inc.other == j => {}
            _ => {
                let t = m.oriented_table(i, inc.other).expect("incident edge");
                others.push((t, m.card(inc.other)));
            }
        }
    }
    let required: f64 = others.iter().map(|(_, l)| *l as f64).product();
    if required > EXACT_DEPENDENCY_CAP as f64 {
        return Err(Error::Capacity { what: "exact dependency", required, cap: EXACT_DEPENDENCY_CAP });
    }

    let mut states = vec![0usize; others.len()];
    let mut s = vec![0.0; li];
    let mut v = vec![0.0; li];
    let mut probs = vec![vec![0.0; li]; lj];
    let mut worst: f64 = 0.0;
    loop {
        s.copy_from_slice(&fixed);
        for ((t, lk), &xk) in others.iter().zip(&states) {
            for (a, sa) in s.iter_mut().enumerate() {
                *sa += t[a * lk + xk];
            }
        }
        for (xj, p) in probs.iter_mut().enumerate() {
            for a in 0..li {
                v[a] = s[a] + t_ij[a * lj + xj];
            }
            softmax_into(&v, p);
        }
        for a in 0..lj {
            for b in a + 1..lj {
                let tv: f64 = 0.5 * probs[a].iter().zip(&probs[b]).map(|(p, q)| (p - q).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
        }
        // Advance the mixed-radix counter over the other neighbors.
        let mut k = 0;
        while k < states.len() {
            states[k] += 1;
            if states[k] < others[k].1 {
                break;
            }
            states[k] = 0;
            k += 1;
        }
        if k == states.len() {
            break;
        }
    }
    Ok(worst)
}

/// Below this size the spectral norm comes from a dense eigendecomposition.
const DENSE_SVD_LIMIT: usize = 64;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

pub fn matrix_norm(m: &DMatrix<f64>, norm: MatrixNorm) -> Result<f64> {
    match norm {
        MatrixNorm::Inf => Ok(inf_norm(m)),
        MatrixNorm::Spectral => spectral_norm(m),
    }
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows().max(m.ncols()) < DENSE_SVD_LIMIT {
        if m.is_empty() {
            return Ok(0.0);
        }
        return Ok(crate::norm_ball::jordan_wielandt(m).eigenvalues.max().max(0.0));
    }
    power_iteration(m)
}

/// Largest singular value by power iteration on `M^T M`, started from the
/// column sums of `|M|` (plus one, so the start is never orthogonal to a
/// nonnegative top singular vector).
pub(crate) fn power_iteration(m: &DMatrix<f64>) -> Result<f64> {
    let mtm = m.transpose() * m;
    let mut v = nalgebra::DVector::from_iterator(
        m.ncols(),
        (0..m.ncols()).map(|c| 1.0 + m.column(c).iter().map(|x| x.abs()).sum::<f64>()),
    );
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    v /= norm;
    let mut lambda = 0.0;
    for iter in 0..POWER_MAX_ITERS {
        let w = &mtm * &v;
        let next = w.norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        v = w / next;
        if (next - lambda).abs() <= POWER_TOL * next {
            return Ok(next.sqrt());
        }
        lambda = next;
        if iter + 1 == POWER_MAX_ITERS {
            return Err(Error::Numeric(format!(
                "power iteration did not converge: lambda = {lambda}, last change = {}",
                (next - lambda).abs()
            )));
        }
    }
    unreachable!()
}

/// Mixing-time bound `tau(eps) <= n / (1 - ||R||) * ln(n / eps)` for random-scan
/// Gibbs, valid when `||R|| < 1` for an induced norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingBudget {
    pub epsilon: f64,
    pub norm_value: f64,
    pub norm: MatrixNorm,
    /// Single-site updates; `None` when the bound does not apply.
    pub tau: Option<f64>,
}

pub fn mixing_time_bound(r: &DMatrix<f64>, norm: MatrixNorm, epsilon: f64) -> Result<MixingBudget> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Input(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let norm_value = matrix_norm(r, norm)?;
    Ok(MixingBudget { epsilon, norm_value, norm, tau: mixing_time(r.nrows(), norm_value, epsilon) })
}

/// The bound for given `n` and norm value.
pub fn mixing_time(n: usize, norm_value: f64, epsilon: f64) -> Option<f64> {
    (norm_value < 1.0).then(|| n as f64 / (1.0 - norm_value) * (n as f64 / epsilon).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{ising_grid, ising_coupling, potts_grid, Interaction};
    use crate::mrf::EdgePotential;

    const ALL: [BoundVariant; 4] = [
        BoundVariant::InfCorollary,
        BoundVariant::OneCorollary,
        BoundVariant::QuarterRange,
        BoundVariant::SigmoidRange,
    ];

    #[test]
    fn ising_edge_values() {
        let b = 0.5;
        let t = [b, -b, -b, b];
        assert!((bound_edge(&t, 2, 2, BoundVariant::InfCorollary) - 0.5).abs() < 1e-15);
        assert!((bound_edge(&t, 2, 2, BoundVariant::SigmoidRange) - 0.5f64.tanh()).abs() < 1e-12);
        assert!((0.5f64.tanh() - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn zero_and_constant_column_tables() {
        for v in ALL {
            assert_eq!(bound_edge(&[0.0; 6], 2, 3, v), 0.0);
            assert_eq!(bound_edge(&[1.5, 1.5, -2.0, -2.0], 2, 2, v), 0.0);
        }
    }

    #[test]
    fn potts_two_state_bound_is_half_coupling() {
        let w = 1.3;
        assert!((bound_edge(&[w, 0.0, 0.0, w], 2, 2, BoundVariant::InfCorollary) - w / 2.0).abs() < 1e-15);
        let m = potts_grid(2, 2, 3, 1.0, 0.0, Interaction::Mixed, 0).unwrap();
        assert_eq!(bound_matrix(&m, BoundVariant::InfCorollary).unwrap().matrix.max(), 0.0);
    }

    #[test]
    fn grid_bound_structure() {
        let m = ising_grid(3, 3, 1.0, 2.0, Interaction::Mixed, 4).unwrap();
        let r = bound_matrix(&m, BoundVariant::InfCorollary).unwrap();
        for i in 0..9 {
            assert_eq!(r.matrix[(i, i)], 0.0);
            for j in 0..9 {
                assert_eq!(r.matrix[(i, j)], r.matrix[(j, i)]);
                match m.edge_index(i, j).filter(|_| i != j) {
                    Some(e) => assert_eq!(r.matrix[(i, j)], m.table(e)[0].abs()),
                    None => assert_eq!(r.matrix[(i, j)], 0.0),
                }
            }
        }
        let decoupled = ising_grid(3, 3, 1.0, 0.0, Interaction::Mixed, 4).unwrap();
        assert_eq!(bound_matrix(&decoupled, BoundVariant::InfCorollary).unwrap().matrix.max(), 0.0);
    }

    #[test]
    fn asymmetric_table_takes_larger_orientation() {
        // Column 1 is shifted by 4 in every row: x_1 moves X_0 but not vice versa.
        let t = vec![0.0, 4.0, 0.0, 0.0, 4.0, 0.0];
        let m = PairwiseMrf::new(vec![2, 3], vec![EdgePotential { i: 0, j: 1, table: t.clone() }]).unwrap();
        let forward = bound_edge(&t, 2, 3, BoundVariant::InfCorollary);
        let backward = bound_directed(&m, 1, 0, BoundVariant::InfCorollary);
        let r = bound_matrix(&m, BoundVariant::InfCorollary).unwrap();
        assert_eq!(forward, 2.0);
        assert_eq!(backward, 0.0);
        assert_eq!(r.matrix[(0, 1)], forward.max(backward));
    }

    #[test]
    fn exact_dependency_isolated_pair_is_tanh() {
        for b in [0.1, 0.5, 1.0, 2.0] {
            let m = PairwiseMrf::new(vec![2, 2], vec![ising_coupling(0, 1, b)]).unwrap();
            assert!((exact_dependency(&m, 0, 1).unwrap() - f64::tanh(b)).abs() < 1e-12);
            assert!((exact_dependency(&m, 1, 0).unwrap() - f64::tanh(b)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_dependency_without_edge_is_zero() {
        let m = PairwiseMrf::new(vec![2, 2, 2], vec![ising_coupling(0, 1, 1.0)]).unwrap();
        assert_eq!(exact_dependency(&m, 0, 2).unwrap(), 0.0);
        assert_eq!(exact_dependency(&m, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn sigmoid_never_exceeds_quarter_range() {
        for k in 0..=2000 {
            let x = k as f64 * 0.01;
            assert!((2.0 * sigmoid(x / 2.0) - 1.0).abs() <= x / 4.0 + 1e-15);
        }
    }

    #[test]
    fn identity_norms() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_norm(&i3, MatrixNorm::Inf).unwrap() - 1.0).abs() < 1e-15);
        assert!((matrix_norm(&i3, MatrixNorm::Spectral).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let m = DMatrix::<f64>::from_fn(80, 80, |i, j| ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.3);
        let svd = m.clone().singular_values().max();
        assert!((spectral_norm(&m).unwrap() - svd).abs() < 1e-6 * svd);
        assert_eq!(spectral_norm(&DMatrix::<f64>::zeros(70, 70)).unwrap(), 0.0);
    }

    #[test]
    fn mixing_time_arithmetic() {
        let tau = mixing_time(256, 0.5, 0.01).unwrap();
        assert!((tau - 512.0 * 25600f64.ln()).abs() < 1e-9);
        assert!((tau - 5196.98).abs() < 0.01);
        assert_eq!(mixing_time(10, 1.0, 0.1), None);
        assert_eq!(mixing_time(10, 1.3, 0.1), None);
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let eps = k as f64 / 100.0;
            let t = mixing_time(1, 0.2, eps).unwrap();
            assert!(t < prev && t >= 0.0);
            prev = t;
        }
    }

    #[test]
    fn mixing_budget_reports_unbounded() {
        let r = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.2, 1.2, 0.0]);
        let b = mixing_time_bound(&r, MatrixNorm::Inf, 0.01).unwrap();
        assert!(b.tau.is_none());
        assert!(mixing_time_bound(&r, MatrixNorm::Inf, 1.5).is_err());
    }
}
