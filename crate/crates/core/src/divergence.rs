//! Divergence minimization over the fast-mixing set by projected gradient
//! descent, with piecewise-KL and reversed-KL gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::exact::{exact_kl, log_probabilities, tree_marginals, StateSpace, UnionFind, BRUTE_FORCE_CAP};
use crate::mrf::PairwiseMrf;
use crate::norm_ball::NormBall;
use crate::projection::{default_anchor, project_smoothed, ProjectionMode, ProjectionProblem, SolverOptions};
use crate::sampling::SamplePool;

/// Forest-shaped edge subsets. Each member lists edge indices, pairwise
/// edges first, then the self-edges of the nodes it touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphFamily {
    pub members: Vec<Vec<usize>>,
    /// Whether every pairwise edge appears in some member.
    pub covers_all: bool,
}

impl SubgraphFamily {
    pub fn new(m: &PairwiseMrf, members: Vec<Vec<usize>>) -> Result<Self> {
        if members.is_empty() {
            return input("subgraph family is empty");
        }
        for member in &members {
            if member.iter().any(|&e| e >= m.num_edges()) {
                return input("subgraph references an edge outside the model");
            }
            if !crate::exact::is_forest(m, member) {
                return input("subgraph contains a cycle");
            }
        }
        let mut seen = vec![false; m.num_edges()];
        members.iter().flatten().for_each(|&e| seen[e] = true);
        let covers_all = m.pairwise_edges().all(|e| seen[e]);
        Ok(Self { members, covers_all })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn with_self_edges(m: &PairwiseMrf, mut pairwise: Vec<usize>, nodes: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut nodes: Vec<usize> = nodes.into_iter().collect();
    nodes.sort_unstable();
    nodes.dedup();
    pairwise.extend(nodes.into_iter().filter_map(|i| m.edge_index(i, i)));
    pairwise
}

/// One chain per grid row and per grid column (node `r * cols + c`). Chains
/// without pairwise edges are dropped.
pub fn make_grid_chains(m: &PairwiseMrf, rows: usize, cols: usize) -> Result<SubgraphFamily> {
    if rows * cols != m.n() || rows == 0 {
        return input(format!("a {rows}x{cols} grid does not match {} variables", m.n()));
    }
    for e in m.pairwise_edges() {
        let (i, j) = m.edges()[e];
        let horizontal = j == i + 1 && i / cols == j / cols;
        let vertical = j == i + cols;
        if !(horizontal || vertical) {
            return input(format!("edge ({i},{j}) is not a {rows}x{cols} grid edge"));
        }
    }
    let mut members = Vec::new();
    let lines = (0..rows)
        .map(|r| (0..cols).map(|c| r * cols + c).collect::<Vec<_>>())
        .chain((0..cols).map(|c| (0..rows).map(|r| r * cols + c).collect()));
    for nodes in lines {
        let pairwise: Vec<usize> = nodes.windows(2).filter_map(|w| m.edge_index(w[0], w[1])).collect();
        if !pairwise.is_empty() {
            members.push(with_self_edges(m, pairwise, nodes));
        }
    }
    if members.is_empty() {
        members.push(with_self_edges(m, Vec::new(), 0..m.n()));
    }
    SubgraphFamily::new(m, members)
}

/// Random spanning forests (Kruskal on uniform random weights) until every
/// pairwise edge is covered. Forests that add no new edge are discarded.
pub fn make_spanning_trees(m: &PairwiseMrf, seed: u64) -> Result<SubgraphFamily> {
    const MAX_DRAWS: usize = 100_000;
    let pairwise: Vec<usize> = m.pairwise_edges().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = vec![false; m.num_edges()];
    let mut remaining = pairwise.len();
    let mut members = Vec::new();
    let mut order = pairwise.clone();
    for _ in 0..MAX_DRAWS {
        if remaining == 0 && !members.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        let mut uf = UnionFind::new(m.n());
        let tree: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&e| {
                let (i, j) = m.edges()[e];
                uf.union(i, j)
            })
            .collect();
        let fresh = tree.iter().filter(|&&e| !covered[e]).count();
        if fresh == 0 && !members.is_empty() {
            continue;
        }
        tree.iter().for_each(|&e| covered[e] = true);
        remaining -= fresh;
        let mut tree = tree;
        tree.sort_unstable();
        members.push(with_self_edges(m, tree, 0..m.n()));
    }
    if remaining > 0 {
        return Err(Error::Numeric(format!("{remaining} edges uncovered after {MAX_DRAWS} random trees")));
    }
    SubgraphFamily::new(m, members)
}

/// Value and gradient (w.r.t. `theta`) of a divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceGradient {
    pub value: Option<f64>,
    pub gradient: Vec<f64>,
    /// Index of the maximizing subgraph for piecewise KL.
    pub argmax: Option<usize>,
}

/// `max_T KL(psi_T || theta_T)` over a family, with the per-subgraph
/// quantities of `psi` computed once.
#[derive(Debug, Clone)]
pub struct PiecewiseKl {
    family: SubgraphFamily,
    /// Per member: `A_T(psi)`, `mu_T(psi)` and `<mu_T(psi), psi_T>`.
    psi_terms: Vec<(f64, Vec<f64>, f64)>,
}

impl PiecewiseKl {
    pub fn new(psi: &PairwiseMrf, family: SubgraphFamily) -> Result<Self> {
        let psi_terms = family
            .members
            .par_iter()
            .map(|member| {
                let (a, mu) = restricted_moments(psi, member)?;
                let dot = member_dot(psi, member, &mu, psi.params());
                Ok((a, mu, dot))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { family, psi_terms })
    }

    pub fn family(&self) -> &SubgraphFamily {
        &self.family
    }

    /// Largest subgraph KL and its gradient `mu_T(theta) - mu_T(psi)` on the
    /// maximizing subgraph's coordinates. Ties go to the lowest index.
    pub fn evaluate(&self, theta: &PairwiseMrf) -> Result<DivergenceGradient> {
        let per_member = self
            .family
            .members
            .par_iter()
            .zip(&self.psi_terms)
            .map(|(member, (a_psi, mu_psi, dot_psi))| {
                let (a_theta, mu_theta) = restricted_moments(theta, member)?;
                let kl = dot_psi - member_dot(theta, member, mu_psi, theta.params()) - a_psi + a_theta;
                Ok((kl.max(0.0), mu_theta))
            })
            .collect::<Result<Vec<_>>>()?;
        let (best, _) = per_member
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, (v, _))| if *v > acc.1 { (k, *v) } else { acc });
        let member = &self.family.members[best];
        let (value, mu_theta) = &per_member[best];
        let mu_psi = &self.psi_terms[best].1;
        let mut gradient = vec![0.0; theta.param_len()];
        for &e in member {
            let range = theta.offset(e)..theta.offset(e) + theta.table(e).len();
            for k in range {
                gradient[k] = mu_theta[k] - mu_psi[k];
            }
        }
        Ok(DivergenceGradient { value: Some(*value), gradient, argmax: Some(best) })
    }
}

/// `A_T` and the mean parameters of the model restricted to `member`,
/// nonzero on the member's coordinates only.
fn restricted_moments(m: &PairwiseMrf, member: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (a, marginals) = tree_marginals(m, member)?;
    let mut mu = marginals.mean_params(m);
    let mut keep = vec![false; m.param_len()];
    for &e in member {
        keep[m.offset(e)..m.offset(e) + m.table(e).len()].iter_mut().for_each(|k| *k = true);
    }
    mu.iter_mut().zip(&keep).for_each(|(v, &k)| {
        if !k {
            *v = 0.0;
        }
    });
    Ok((a, mu))
}

fn member_dot(m: &PairwiseMrf, member: &[usize], mu: &[f64], params: &[f64]) -> f64 {
    member
        .iter()
        .map(|&e| {
            let r = m.offset(e)..m.offset(e) + m.table(e).len();
            mu[r.clone()].iter().zip(&params[r]).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

pub fn grad_piecewise_kl(psi: &PairwiseMrf, theta: &PairwiseMrf, family: &SubgraphFamily) -> Result<DivergenceGradient> {
    PiecewiseKl::new(psi, family.clone())?.evaluate(theta)
}

/// `grad KL(theta || psi) = Cov_theta(f, (theta - psi) . f)` by enumeration.
pub fn grad_reversed_kl_exact(psi: &PairwiseMrf, theta: &PairwiseMrf) -> Result<DivergenceGradient> {
    check_same_structure(psi, theta)?;
    let (lp, _) = log_probabilities(theta, BRUTE_FORCE_CAP)?;
    let space = StateSpace::new(theta, BRUTE_FORCE_CAP, "enumeration")?;
    let diff: Vec<f64> = theta.params().iter().zip(psi.params()).map(|(t, p)| t - p).collect();
    let len = theta.param_len();
    let mut mean = vec![0.0; len];
    let mut weighted = vec![0.0; len];
    let mut mean_h = 0.0;
    let mut f = vec![0.0; len];
    space.for_each(|idx, x| {
        let p = lp[idx].exp();
        f.iter_mut().for_each(|v| *v = 0.0);
        theta.accumulate_stats(x, 1.0, &mut f);
        let h: f64 = f.iter().zip(&diff).map(|(a, b)| a * b).sum();
        mean_h += p * h;
        for k in 0..len {
            mean[k] += p * f[k];
            weighted[k] += p * h * f[k];
        }
    });
    let gradient = weighted.iter().zip(&mean).map(|(w, m)| w - mean_h * m).collect();
    Ok(DivergenceGradient { value: Some(exact_kl(theta, psi)?), gradient, argmax: None })
}

/// Pool estimate of the reversed-KL gradient: advances every chain one sweep
/// under `theta`, then replaces expectations with pool averages.
pub fn grad_reversed_kl(psi: &PairwiseMrf, theta: &PairwiseMrf, pool: &mut SamplePool) -> Result<DivergenceGradient> {
    check_same_structure(psi, theta)?;
    if pool.is_empty() {
        return input("sample pool is empty");
    }
    pool.advance(theta);
    let diff: Vec<f64> = theta.params().iter().zip(psi.params()).map(|(t, p)| t - p).collect();
    let len = theta.param_len();
    let states: Vec<&[usize]> = pool.states().collect();
    // Per-chain statistics in parallel, reduced in chain order.
    let per_chain: Vec<(Vec<f64>, f64)> = states
        .par_iter()
        .map(|x| {
            let mut f = vec![0.0; len];
            theta.accumulate_stats(x, 1.0, &mut f);
            let h = f.iter().zip(&diff).map(|(a, b)| a * b).sum();
            (f, h)
        })
        .collect();
    let s = per_chain.len() as f64;
    let mut mean = vec![0.0; len];
    let mut weighted = vec![0.0; len];
    let mut mean_h = 0.0;
    for (f, h) in &per_chain {
        mean_h += h / s;
        for k in 0..len {
            mean[k] += f[k] / s;
            weighted[k] += h * f[k] / s;
        }
    }
    let gradient = weighted.iter().zip(&mean).map(|(w, m)| w - mean_h * m).collect();
    Ok(DivergenceGradient { value: None, gradient, argmax: None })
}

fn check_same_structure(a: &PairwiseMrf, b: &PairwiseMrf) -> Result<()> {
    if a.cards() != b.cards() || a.edges() != b.edges() {
        return input("models must share variables and edges");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    PiecewiseKl,
    ReversedKl,
    /// Reversed KL with exact expectations; tiny models only.
    ReversedKlExact,
}

impl std::str::FromStr for DivergenceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "piecewise" | "piecewise_kl" => Ok(Self::PiecewiseKl),
            "reversed" | "reversed_kl" => Ok(Self::ReversedKl),
            "reversed_exact" | "reversed_kl_exact" => Ok(Self::ReversedKlExact),
            other => Err(format!("unknown divergence {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub divergence: DivergenceKind,
    pub pool_size: usize,
    pub pool_burn_in: u64,
    pub ball: NormBall,
    pub alpha: f64,
    pub mode: ProjectionMode,
    pub seed: u64,
}

impl PgdConfig {
    pub fn new(divergence: DivergenceKind, ball: NormBall) -> Self {
        Self {
            step_size: 0.1,
            iterations: 60,
            divergence,
            pool_size: 500,
            pool_burn_in: 50,
            ball,
            alpha: 1.0,
            mode: ProjectionMode::Dense,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return input(format!("step size must be positive, got {}", self.step_size));
        }
        if self.iterations == 0 {
            return input("at least one gradient step is required");
        }
        if self.divergence == DivergenceKind::ReversedKl && self.pool_size == 0 {
            return input("reversed KL needs a nonempty sample pool");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PgdResult {
    pub theta: PairwiseMrf,
    pub z: nalgebra::DMatrix<f64>,
    /// Divergence value before each step, where available.
    pub values: Vec<Option<f64>>,
    /// Largest constraint violation of the final projection.
    pub max_violation: f64,
    /// Whether every projection met its solver tolerance.
    pub projections_converged: bool,
}

/// Projected gradient descent: starts from the smoothed projection of `psi`,
/// then alternates `theta' = theta - lambda grad` with a smoothed projection
/// anchored at the previous `Z`. `family` is required for piecewise KL.
pub fn pgd_project(psi: &PairwiseMrf, config: &PgdConfig, family: Option<&SubgraphFamily>) -> Result<PgdResult> {
    config.validate()?;
    let solver = SolverOptions::default();
    let problem = ProjectionProblem::new(psi.clone(), default_anchor(psi, &config.ball)?, config.alpha, config.ball, config.mode)?;
    let mut current = project_smoothed(&problem, &solver, None)?;
    let mut converged = current.converged;

    let piecewise = match config.divergence {
        DivergenceKind::PiecewiseKl => {
            let family = family.ok_or_else(|| Error::Input("piecewise KL needs a subgraph family".into()))?;
            Some(PiecewiseKl::new(psi, family.clone())?)
        }
        _ => None,
    };
    let mut pool = match config.divergence {
        DivergenceKind::ReversedKl => {
            Some(SamplePool::new(&current.theta, config.pool_size, config.seed, config.pool_burn_in)?)
        }
        _ => None,
    };

    let mut values = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let grad = match config.divergence {
            DivergenceKind::PiecewiseKl => piecewise.as_ref().expect("built above").evaluate(&current.theta)?,
            DivergenceKind::ReversedKl => grad_reversed_kl(psi, &current.theta, pool.as_mut().expect("built above"))?,
            DivergenceKind::ReversedKlExact => grad_reversed_kl_exact(psi, &current.theta)?,
        };
        values.push(grad.value);
        let stepped: Vec<f64> = current
            .theta
            .params()
            .iter()
            .zip(&grad.gradient)
            .map(|(t, g)| t - config.step_size * g)
            .collect();
        let problem = ProjectionProblem::new(psi.with_params(stepped)?, current.z.clone(), config.alpha, config.ball, config.mode)?;
        current = project_smoothed(&problem, &solver, Some(&current.dual))?;
        converged &= current.converged;
    }
    Ok(PgdResult {
        theta: current.theta,
        z: current.z,
        values,
        max_violation: current.max_violation,
        projections_converged: converged,
    })
}

/// Seeds derived from a master seed, stable across platforms.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(1));
    rng.random()
}
