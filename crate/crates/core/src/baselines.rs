//! Naive mean-field and loopy belief propagation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::exact::{exact_kl, log_sum_exp, normalize_log, MarginalTable};
use crate::mrf::{EdgePotential, PairwiseMrf, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub max_iterations: usize,
    /// Weight on the previous message; mean-field ignores it.
    pub damping: f64,
    /// Largest allowed change in any belief or message probability.
    pub tolerance: f64,
    /// Mean-field update order.
    pub seed: u64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { max_iterations: 1000, damping: 0.5, tolerance: 1e-10, seed: 0 }
    }
}

impl FixedPointConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return input(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return input(format!("damping must lie in [0, 1), got {}", self.damping));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub marginals: MarginalTable,
    pub iterations: usize,
    pub converged: bool,
    /// `KL(q || p)` after each sweep, when requested.
    pub kl_trace: Vec<f64>,
}

/// Coordinate ascent on the fully factorized approximation, visiting sites in
/// a fresh random order every sweep. With `track_kl`, records `KL(q || p)` by
/// enumeration after every sweep.
pub fn mean_field(m: &PairwiseMrf, config: &FixedPointConfig, track_kl: bool) -> Result<FixedPointResult> {
    config.validate()?;
    let n = m.n();
    let mut q: Vec<Vec<f64>> = m.cards().iter().map(|&l| vec![1.0 / l as f64; l]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut kl_trace = Vec::new();
    if track_kl {
        kl_trace.push(factorized_kl(m, &q)?);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        order.shuffle(&mut rng);
        let mut change: f64 = 0.0;
        for &i in &order {
            let updated = mean_field_update(m, &q, i);
            change = q[i].iter().zip(&updated).fold(change, |c, (a, b)| c.max((a - b).abs()));
            q[i] = updated;
        }
        if track_kl {
            kl_trace.push(factorized_kl(m, &q)?);
        }
        if change <= config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(FixedPointResult { marginals: MarginalTable::unary_only(q), iterations, converged, kl_trace })
}

/// `q_i(a) ∝ exp(sum_k E_{q_k}[theta^{ik}(a, X_k)])`.
pub fn mean_field_update(m: &PairwiseMrf, q: &[Vec<f64>], i: usize) -> Vec<f64> {
    let li = m.card(i);
    let mut v = vec![0.0; li];
    for inc in m.incidences(i) {
        let t = m.table(inc.edge);
        let lk = m.card(inc.other);
        match inc.role {
            Role::SelfEdge => (0..li).for_each(|a| v[a] += t[a * li + a]),
            Role::Row => {
                for (a, va) in v.iter_mut().enumerate() {
                    *va += (0..lk).map(|b| q[inc.other][b] * t[a * lk + b]).sum::<f64>();
                }
            }
            Role::Column => {
                for (a, va) in v.iter_mut().enumerate() {
                    *va += (0..lk).map(|b| q[inc.other][b] * t[b * li + a]).sum::<f64>();
                }
            }
        }
    }
    normalize_log(&mut v);
    v
}

/// `KL(q || p)` for a product distribution `q`, by enumeration.
pub fn factorized_kl(m: &PairwiseMrf, q: &[Vec<f64>]) -> Result<f64> {
    let potentials = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            let l = qi.len();
            let logs: Vec<f64> = qi.iter().map(|&p| p.max(1e-300).ln()).collect();
            EdgePotential { i, j: i, table: (0..l * l).map(|k| logs[k / l]).collect() }
        })
        .collect();
    exact_kl(&PairwiseMrf::new(m.cards().to_vec(), potentials)?, m)
}

/// Damped synchronous sum-product in the log domain. Damping mixes message
/// probabilities: `new = (1 - d) * computed + d * old`.
pub fn loopy_bp(m: &PairwiseMrf, config: &FixedPointConfig) -> Result<FixedPointResult> {
    config.validate()?;
    let n = m.n();
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let l = m.card(i);
            let mut u = vec![0.0; l];
            if let Some(e) = m.edge_index(i, i) {
                let t = m.table(e);
                (0..l).for_each(|a| u[a] = t[a * l + a]);
            }
            u
        })
        .collect();
    let pairwise: Vec<usize> = m.pairwise_edges().collect();
    // Log messages per edge: [0] i -> j over x_j, [1] j -> i over x_i.
    let mut msgs: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; m.num_edges()];
    for &e in &pairwise {
        let (i, j) = m.edges()[e];
        msgs[e] = [vec![-(m.card(j) as f64).ln(); m.card(j)], vec![-(m.card(i) as f64).ln(); m.card(i)]];
    }

    let incoming = |msgs: &Vec<[Vec<f64>; 2]>, i: usize, skip: Option<usize>| -> Vec<f64> {
        let mut v = unary[i].clone();
        for inc in m.incidences(i) {
            if inc.role == Role::SelfEdge || Some(inc.edge) == skip {
                continue;
            }
            let msg = &msgs[inc.edge][usize::from(inc.role == Role::Row)];
            v.iter_mut().zip(msg).for_each(|(a, b)| *a += b);
        }
        v
    };

    let mut iterations = 0;
    let mut converged = pairwise.is_empty();
    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let mut next = msgs.clone();
        let mut change: f64 = 0.0;
        for &e in &pairwise {
            let (i, j) = m.edges()[e];
            for (dir, from, to) in [(0, i, j), (1, j, i)] {
                let base = incoming(&msgs, from, Some(e));
                let t = m.oriented_table(from, to).expect("pairwise edge");
                let lt = m.card(to);
                let mut terms = vec![0.0; base.len()];
                let mut out: Vec<f64> = (0..lt)
                    .map(|b| {
                        terms.iter_mut().enumerate().for_each(|(a, v)| *v = base[a] + t[a * lt + b]);
                        log_sum_exp(&terms)
                    })
                    .collect();
                normalize_log(&mut out);
                let damped: Vec<f64> = out
                    .iter()
                    .zip(&msgs[e][dir])
                    .map(|(&pn, old)| {
                        let po = old.exp();
                        change = change.max((pn - po).abs());
                        ((1.0 - config.damping) * pn + config.damping * po).ln()
                    })
                    .collect();
                next[e][dir] = damped;
            }
        }
        msgs = next;
        converged = change <= config.tolerance;
    }

    let unary_beliefs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut b = incoming(&msgs, i, None);
            normalize_log(&mut b);
            b
        })
        .collect();
    let pairwise_beliefs = m
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            if i == j {
                let l = m.card(i);
                let mut d = vec![0.0; l * l];
                (0..l).for_each(|a| d[a * l + a] = unary_beliefs[i][a]);
                return d;
            }
            let (bi, bj) = (incoming(&msgs, i, Some(e)), incoming(&msgs, j, Some(e)));
            let t = m.table(e);
            let lj = m.card(j);
            let mut joint: Vec<f64> = (0..t.len()).map(|k| bi[k / lj] + bj[k % lj] + t[k]).collect();
            normalize_log(&mut joint);
            joint
        })
        .collect();
    Ok(FixedPointResult {
        marginals: MarginalTable { unary: unary_beliefs, pairwise: pairwise_beliefs },
        iterations,
        converged,
        kl_trace: Vec::new(),
    })
}
