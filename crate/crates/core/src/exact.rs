//! Ground-truth inference: enumeration for tiny models, sum-product on
//! forests, exact KL divergences and the exact Gibbs transition operator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::mrf::PairwiseMrf;
use crate::sampling::{conditional_into, Scan};

/// Default cap on the number of enumerated configurations.
pub const BRUTE_FORCE_CAP: usize = 1 << 20;

/// Cap for the dense transition operator.
pub const TRANSITION_CAP: usize = 1 << 12;

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into probabilities; returns the log normalizer.
pub(crate) fn normalize_log(v: &mut [f64]) -> f64 {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

/// Mixed-radix indexing of joint configurations; variable 0 varies fastest.
#[derive(Debug, Clone)]
pub struct StateSpace {
    cards: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(m: &PairwiseMrf, cap: usize, what: &'static str) -> Result<Self> {
        let required = m.state_space_size();
        if required > cap as f64 {
            return Err(Error::Capacity { what, required, cap });
        }
        let mut strides = Vec::with_capacity(m.n());
        let mut size = 1;
        for &l in m.cards() {
            strides.push(size);
            size *= l;
        }
        Ok(Self { cards: m.cards().to_vec(), strides, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index(&self, x: &[usize]) -> usize {
        x.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn decode(&self, mut idx: usize, x: &mut [usize]) {
        for (xi, &l) in x.iter_mut().zip(&self.cards) {
            *xi = idx % l;
            idx /= l;
        }
    }

    /// Calls `f(index, config)` for every configuration in index order.
    pub fn for_each(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut x = vec![0; self.cards.len()];
        for idx in 0..self.size {
            f(idx, &x);
            for (xi, &l) in x.iter_mut().zip(&self.cards) {
                *xi += 1;
                if *xi < l {
                    break;
                }
                *xi = 0;
            }
        }
    }
}

/// Univariate and pairwise marginal probabilities.
///
/// `pairwise[e]` is aligned with the model's edge list (row-major
/// `L_i x L_j`); it is empty when an edge's joint marginal is unavailable
/// (sampling estimates, or edges outside an inference subgraph). For a
/// self-edge it holds `diag(p_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<f64>>,
}

impl MarginalTable {
    pub fn unary_only(unary: Vec<Vec<f64>>) -> Self {
        Self { unary, pairwise: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.unary.len()
    }

    /// Mean parameters `E[f(x)]` in the flat parameter layout. Coordinates of
    /// edges without a pairwise marginal are left at zero.
    pub fn mean_params(&self, m: &PairwiseMrf) -> Vec<f64> {
        let mut mu = vec![0.0; m.param_len()];
        for (e, &(i, j)) in m.edges().iter().enumerate() {
            let off = m.offset(e);
            let lj = m.card(j);
            if i == j {
                for a in 0..lj {
                    for b in 0..lj {
                        mu[off + a * lj + b] = self.unary[i][a] / lj as f64;
                    }
                }
            } else if let Some(p) = self.pairwise.get(e).filter(|p| !p.is_empty()) {
                mu[off..off + p.len()].copy_from_slice(p);
            }
        }
        mu
    }

    /// Largest deviation from normalization or from marginal consistency.
    pub fn normalization_error(&self, m: &PairwiseMrf) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.unary {
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            worst = worst.max(p.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max));
        }
        for (e, p) in self.pairwise.iter().enumerate() {
            if p.is_empty() {
                continue;
            }
            let (i, j) = m.edges()[e];
            let (li, lj) = (m.card(i), m.card(j));
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            for a in 0..li {
                let row: f64 = p[a * lj..(a + 1) * lj].iter().sum();
                worst = worst.max((row - self.unary[i][a]).abs());
            }
            for b in 0..lj {
                let col: f64 = (0..li).map(|a| p[a * lj + b]).sum();
                worst = worst.max((col - self.unary[j][b]).abs());
            }
        }
        worst
    }
}

/// Log-probabilities of every configuration (state-space order) and `A(theta)`.
pub fn log_probabilities(m: &PairwiseMrf, cap: usize) -> Result<(Vec<f64>, f64)> {
    let space = StateSpace::new(m, cap, "enumeration")?;
    let mut lw = vec![0.0; space.size()];
    space.for_each(|idx, x| lw[idx] = m.log_weight(x));
    let a = log_sum_exp(&lw);
    for v in lw.iter_mut() {
        *v -= a;
    }
    Ok((lw, a))
}

/// Exact log-partition function and marginals by enumeration.
pub fn brute_force(m: &PairwiseMrf) -> Result<(f64, MarginalTable)> {
    brute_force_with_cap(m, BRUTE_FORCE_CAP)
}

pub fn brute_force_with_cap(m: &PairwiseMrf, cap: usize) -> Result<(f64, MarginalTable)> {
    let space = StateSpace::new(m, cap, "enumeration")?;
    let (lp, a) = log_probabilities(m, cap)?;
    let mut unary: Vec<Vec<f64>> = m.cards().iter().map(|&l| vec![0.0; l]).collect();
    let mut pairwise: Vec<Vec<f64>> = m.edges().iter().map(|&(i, j)| vec![0.0; m.card(i) * m.card(j)]).collect();
    space.for_each(|idx, x| {
        let p = lp[idx].exp();
        for (i, &xi) in x.iter().enumerate() {
            unary[i][xi] += p;
        }
        for (e, &(i, j)) in m.edges().iter().enumerate() {
            pairwise[e][x[i] * m.card(j) + x[j]] += p;
        }
    });
    Ok((a, MarginalTable { unary, pairwise }))
}

/// Exact `KL(p(.; source) || p(.; target))` by enumeration.
pub fn exact_kl(source: &PairwiseMrf, target: &PairwiseMrf) -> Result<f64> {
    if source.cards() != target.cards() {
        return input("KL requires models over the same variables");
    }
    let (ls, _) = log_probabilities(source, BRUTE_FORCE_CAP)?;
    let (lt, _) = log_probabilities(target, BRUTE_FORCE_CAP)?;
    let kl: f64 = ls.iter().zip(&lt).map(|(&s, &t)| s.exp() * (s - t)).sum();
    Ok(kl.max(0.0))
}

pub(crate) struct UnionFind(Vec<usize>);

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Whether the pairwise edges among `edges` form a forest.
pub fn is_forest(m: &PairwiseMrf, edges: &[usize]) -> bool {
    let mut uf = UnionFind::new(m.n());
    edges
        .iter()
        .filter(|&&e| !m.is_self_edge(e))
        .all(|&e| {
            let (i, j) = m.edges()[e];
            uf.union(i, j)
        })
}

/// Exact marginals and log-partition of the model restricted to `subgraph`
/// (a list of edge indices), by two-pass log-domain sum-product.
///
/// Variables not touched by any subgraph edge are uniform. Pairwise
/// marginals are filled for subgraph edges only.
pub fn tree_marginals(m: &PairwiseMrf, subgraph: &[usize]) -> Result<(f64, MarginalTable)> {
    let n = m.n();
    let mut in_graph = vec![false; m.num_edges()];
    for &e in subgraph {
        if e >= m.num_edges() {
            return input(format!("subgraph edge {e} out of range"));
        }
        if std::mem::replace(&mut in_graph[e], true) {
            return input(format!("subgraph lists edge {e} twice"));
        }
    }
    if !is_forest(m, subgraph) {
        return input("subgraph contains a cycle");
    }

    // Univariate log-potentials from self-edges in the subgraph.
    let mut unary_lp: Vec<Vec<f64>> = m.cards().iter().map(|&l| vec![0.0; l]).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &e in subgraph {
        let (i, j) = m.edges()[e];
        if i == j {
            let l = m.card(i);
            let t = m.table(e);
            for a in 0..l {
                unary_lp[i][a] += t[a * l + a];
            }
        } else {
            adj[i].push((e, j));
            adj[j].push((e, i));
        }
    }

    // msgs[e][0]: edges[e].0 -> edges[e].1 (indexed by the receiver's state); [1] reverse.
    let mut msgs: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; m.num_edges()];
    let dir = |e: usize, from: usize| usize::from(m.edges()[e].0 != from);

    // Returns the normalized message and its log normalizer.
    let send = |from: usize, to: usize, e: usize, msgs: &Vec<[Vec<f64>; 2]>| {
        let (lf, lt) = (m.card(from), m.card(to));
        let mut base = unary_lp[from].clone();
        for &(e2, k) in &adj[from] {
            if e2 != e {
                let incoming = &msgs[e2][dir(e2, k)];
                for a in 0..lf {
                    base[a] += incoming[a];
                }
            }
        }
        let t = m.oriented_table(from, to).expect("subgraph edge");
        let mut out = vec![0.0; lt];
        let mut terms = vec![0.0; lf];
        for (b, o) in out.iter_mut().enumerate() {
            for a in 0..lf {
                terms[a] = base[a] + t[a * lt + b];
            }
            *o = log_sum_exp(&terms);
        }
        let lse = log_sum_exp(&out);
        out.iter_mut().for_each(|v| *v -= lse);
        (out, lse)
    };

    let mut log_z = 0.0;
    let mut visited = vec![false; n];
    let mut unary = vec![Vec::new(); n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        // BFS order with (node, parent, parent edge).
        let mut order = vec![(root, usize::MAX, usize::MAX)];
        visited[root] = true;
        let mut head = 0;
        while head < order.len() {
            let (v, _, _) = order[head];
            head += 1;
            for &(e, k) in &adj[v] {
                if !visited[k] {
                    visited[k] = true;
                    order.push((k, v, e));
                }
            }
        }
        for &(v, parent, e) in order.iter().skip(1).rev() {
            let (msg, lse) = send(v, parent, e, &msgs);
            log_z += lse;
            msgs[e][dir(e, v)] = msg;
        }
        for &(v, parent, e) in order.iter().skip(1) {
            let (msg, _) = send(parent, v, e, &msgs);
            msgs[e][dir(e, parent)] = msg;
        }
        for (k, &(v, _, _)) in order.iter().enumerate() {
            let mut b = unary_lp[v].clone();
            for &(e, other) in &adj[v] {
                let incoming = &msgs[e][dir(e, other)];
                for a in 0..b.len() {
                    b[a] += incoming[a];
                }
            }
            let lse = normalize_log(&mut b);
            if k == 0 {
                log_z += lse;
            }
            unary[v] = b;
        }
    }

    let mut pairwise = vec![Vec::new(); m.num_edges()];
    for &e in subgraph {
        let (i, j) = m.edges()[e];
        let (li, lj) = (m.card(i), m.card(j));
        if i == j {
            let mut p = vec![0.0; li * li];
            for a in 0..li {
                p[a * li + a] = unary[i][a];
            }
            pairwise[e] = p;
            continue;
        }
        let cavity = |v: usize| {
            let mut c = unary_lp[v].clone();
            for &(e2, k) in &adj[v] {
                if e2 != e {
                    let incoming = &msgs[e2][dir(e2, k)];
                    for a in 0..c.len() {
                        c[a] += incoming[a];
                    }
                }
            }
            c
        };
        let (ci, cj) = (cavity(i), cavity(j));
        let t = m.table(e);
        let mut p: Vec<f64> = (0..li * lj).map(|ab| t[ab] + ci[ab / lj] + cj[ab % lj]).collect();
        normalize_log(&mut p);
        pairwise[e] = p;
    }
    Ok((log_z, MarginalTable { unary, pairwise }))
}

/// Dense Gibbs transition matrix over all joint configurations.
#[derive(Debug, Clone)]
pub struct TransitionOperator {
    pub scan: Scan,
    pub space: StateSpace,
    /// Row-stochastic: `matrix[(x, y)] = P(X^{t+1} = y | X^t = x)`.
    pub matrix: DMatrix<f64>,
    pub stationary: DVector<f64>,
}

/// Builds the exact random-scan (`(1/n) sum_i P_i`) or systematic-scan
/// (`P_0 P_1 ... P_{n-1}`) Gibbs kernel, where `P_i` resamples site `i`.
pub fn gibbs_transition_operator(m: &PairwiseMrf, scan: Scan) -> Result<TransitionOperator> {
    let space = StateSpace::new(m, TRANSITION_CAP, "transition operator")?;
    let size = space.size();
    let n = m.n();
    let max_card = m.cards().iter().copied().max().unwrap_or(1);
    let mut cond = vec![0.0; max_card];
    let mut x = vec![0; n];

    let matrix = match scan {
        Scan::Random => {
            let mut p = DMatrix::<f64>::zeros(size, size);
            let w = 1.0 / n as f64;
            for idx in 0..size {
                space.decode(idx, &mut x);
                for i in 0..n {
                    let li = m.card(i);
                    conditional_into(m, &x, i, &mut cond[..li]);
                    let base = idx - x[i] * space.strides[i];
                    for a in 0..li {
                        p[(idx, base + a * space.strides[i])] += w * cond[a];
                    }
                }
            }
            p
        }
        Scan::Systematic => {
            let mut p = DMatrix::<f64>::identity(size, size);
            for i in 0..n {
                let li = m.card(i);
                // Site kernel as (target offset, prob) lists per source state.
                let mut kernel = vec![0.0; size * li];
                for idx in 0..size {
                    space.decode(idx, &mut x);
                    conditional_into(m, &x, i, &mut cond[..li]);
                    kernel[idx * li..(idx + 1) * li].copy_from_slice(&cond[..li]);
                }
                let mut next = DMatrix::<f64>::zeros(size, size);
                for col in 0..size {
                    space.decode(col, &mut x);
                    let base = col - x[i] * space.strides[i];
                    for row in 0..size {
                        let v = p[(row, col)];
                        if v == 0.0 {
                            continue;
                        }
                        for a in 0..li {
                            next[(row, base + a * space.strides[i])] += v * kernel[col * li + a];
                        }
                    }
                }
                p = next;
            }
            p
        }
    };
    let stationary = stationary_distribution(&matrix)?;
    Ok(TransitionOperator { scan, space, matrix, stationary })
}

/// Solves `pi P = pi`, `sum pi = 1` by LU.
fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let size = p.nrows();
    let mut a = p.transpose() - DMatrix::<f64>::identity(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for c in 0..size {
        a[(size - 1, c)] = 1.0;
    }
    rhs[size - 1] = 1.0;
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular system for stationary distribution".into()))
}

impl TransitionOperator {
    /// Worst-case total variation distance to stationarity over start states.
    pub fn worst_case_tv(&self, power: &DMatrix<f64>) -> f64 {
        (0..power.nrows())
            .map(|r| {
                0.5 * power
                    .row(r)
                    .iter()
                    .zip(self.stationary.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn power(&self, t: usize) -> DMatrix<f64> {
        matrix_power(&self.matrix, t)
    }

    /// `d(t)` for each requested step count.
    pub fn distance_curve(&self, steps: &[usize]) -> Vec<f64> {
        let mut sorted: Vec<(usize, usize)> = steps.iter().copied().enumerate().map(|(k, t)| (t, k)).collect();
        sorted.sort_unstable();
        let mut out = vec![0.0; steps.len()];
        let mut current = DMatrix::<f64>::identity(self.matrix.nrows(), self.matrix.ncols());
        let mut at = 0;
        for (t, k) in sorted {
            current = &current * matrix_power(&self.matrix, t - at);
            at = t;
            out[k] = self.worst_case_tv(&current);
        }
        out
    }
}

fn matrix_power(m: &DMatrix<f64>, mut t: usize) -> DMatrix<f64> {
    let mut result = DMatrix::<f64>::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while t > 0 {
        if t & 1 == 1 {
            result = &result * &base;
        }
        t >>= 1;
        if t > 0 {
            base = &base * &base;
        }
    }
    result
}
