//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use fastmix::mrf::EdgePotential;
use fastmix::{MatrixNorm, NormBall, PairwiseMrf};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model: cards in `2..=max_card`, each pair kept with `edge_prob`,
/// every node given a self-edge, entries uniform on `[-scale, scale]`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, max_card: usize, edge_prob: f64, scale: f64) -> PairwiseMrf {
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_card)).collect();
    let mut potentials = Vec::new();
    for i in 0..n {
        let l = cards[i];
        let column: Vec<f64> = (0..l).map(|_| rng.random_range(-scale..=scale)).collect();
        let table = (0..l * l).map(|k| column[k / l]).collect();
        potentials.push(EdgePotential { i, j: i, table });
        for j in i + 1..n {
            if rng.random::<f64>() < edge_prob {
                let table = (0..l * cards[j]).map(|_| rng.random_range(-scale..=scale)).collect();
                potentials.push(EdgePotential { i, j, table });
            }
        }
    }
    PairwiseMrf::new(cards, potentials).unwrap()
}

/// Like [`random_model`] but guaranteed to have at least one pairwise edge.
pub fn random_connected_model(rng: &mut ChaCha8Rng, n: usize, max_card: usize, edge_prob: f64, scale: f64) -> PairwiseMrf {
    loop {
        let m = random_model(rng, n, max_card, edge_prob, scale);
        if m.pairwise_edges().next().is_some() {
            return m;
        }
    }
}

/// Random forest over `n` nodes: each node `k > 0` attaches to an earlier node
/// with probability `attach`.
pub fn random_forest(rng: &mut ChaCha8Rng, n: usize, max_card: usize, attach: f64, scale: f64) -> PairwiseMrf {
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_card)).collect();
    let mut potentials = Vec::new();
    for i in 0..n {
        let l = cards[i];
        let column: Vec<f64> = (0..l).map(|_| rng.random_range(-scale..=scale)).collect();
        potentials.push(EdgePotential { i, j: i, table: (0..l * l).map(|k| column[k / l]).collect() });
    }
    for k in 1..n {
        if rng.random::<f64>() < attach {
            let parent = rng.random_range(0..k);
            let table = (0..cards[parent] * cards[k]).map(|_| rng.random_range(-scale..=scale)).collect();
            potentials.push(EdgePotential { i: parent, j: k, table });
        }
    }
    PairwiseMrf::new(cards, potentials).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..=scale))
}

/// Brute-force enumeration of all configurations, variable 0 fastest.
pub fn configurations(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; cards.len()]];
    loop {
        let mut x = out.last().unwrap().clone();
        let mut k = 0;
        while k < cards.len() {
            x[k] += 1;
            if x[k] < cards[k] {
                break;
            }
            x[k] = 0;
            k += 1;
        }
        if k == cards.len() {
            return out;
        }
        out.push(x);
    }
}

/// Joint probabilities by direct summation of edge tables.
pub fn joint(m: &PairwiseMrf) -> Vec<(Vec<usize>, f64)> {
    let configs = configurations(m.cards());
    let logw: Vec<f64> = configs
        .iter()
        .map(|x| {
            m.edges()
                .iter()
                .map(|&(i, j)| m.potential(i, j, x[i], x[j]).unwrap())
                .sum::<f64>()
        })
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    configs.into_iter().zip(logw).map(|(x, l)| (x, (l - max).exp() / z)).collect()
}

/// Unary marginals by direct summation.
pub fn unary_marginals(m: &PairwiseMrf) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = m.cards().iter().map(|&l| vec![0.0; l]).collect();
    for (x, p) in joint(m) {
        for (i, &xi) in x.iter().enumerate() {
            out[i][xi] += p;
        }
    }
    out
}

/// KL(p || q) by direct summation.
pub fn kl(p: &PairwiseMrf, q: &PairwiseMrf) -> f64 {
    joint(p).iter().zip(joint(q)).map(|((_, a), (_, b))| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

/// Independent primal solver for the smoothed projection
/// `min ||theta - psi||^2 + alpha ||Z - Y||^2` over the constraint set, by
/// Dykstra's alternating projections in the scaled coordinates
/// `(theta, sqrt(alpha) Z)`, where the objective is a plain Euclidean distance.
/// Sets: every individual difference halfspace, the structure subspace
/// (symmetric on edges, zero elsewhere) and the norm ball.
pub fn dykstra_projection(psi: &PairwiseMrf, y: &DMatrix<f64>, alpha: f64, ball: NormBall, cycles: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = psi.n();
    let s = alpha.sqrt();
    let p = psi.param_len();
    // Halfspace: 0.5 theta[ia] - 0.5 theta[ib] - Z[(i, j)] <= 0.
    let mut halfspaces = Vec::new();
    for e in psi.pairwise_edges() {
        let (i, j) = psi.edges()[e];
        let off = psi.offset(e);
        let (li, lj) = (psi.card(i), psi.card(j));
        for a in 0..lj {
            for b in 0..lj {
                if a != b {
                    for c in 0..li {
                        halfspaces.push((off + c * lj + a, off + c * lj + b, i, j));
                    }
                }
            }
        }
        for a in 0..li {
            for b in 0..li {
                if a != b {
                    for c in 0..lj {
                        halfspaces.push((off + a * lj + c, off + b * lj + c, j, i));
                    }
                }
            }
        }
    }
    let normal_sq = 0.5 + 1.0 / alpha;

    let mut theta = psi.params().to_vec();
    let mut z = y * s;
    let mut hs_inc = vec![0.0; halfspaces.len()];
    let mut sub_inc = (vec![0.0; p], DMatrix::<f64>::zeros(n, n));
    let mut ball_inc = DMatrix::<f64>::zeros(n, n);
    let scaled_ball = NormBall::new(ball.norm, ball.radius * s).unwrap();

    for cycle in 0..cycles {
        let before_theta = theta.clone();
        let before_z = z.clone();
        for (k, &(ia, ib, i, j)) in halfspaces.iter().enumerate() {
            // y = u + t n with n = (0.5 e_ia - 0.5 e_ib, -(1/s) e_ij).
            let t = hs_inc[k];
            let (ta, tb, zz) = (theta[ia] + 0.5 * t, theta[ib] - 0.5 * t, z[(i, j)] - t / s);
            let viol = 0.5 * ta - 0.5 * tb - zz / s;
            let t_new = (viol / normal_sq).max(0.0);
            theta[ia] = ta - 0.5 * t_new;
            theta[ib] = tb + 0.5 * t_new;
            z[(i, j)] = zz + t_new / s;
            hs_inc[k] = t_new;
        }
        // Structure subspace: theta free, Z symmetric on edges, zero elsewhere.
        {
            let yz = &z + &sub_inc.1;
            let mut proj = DMatrix::<f64>::zeros(n, n);
            for e in psi.pairwise_edges() {
                let (i, j) = psi.edges()[e];
                let avg = 0.5 * (yz[(i, j)] + yz[(j, i)]);
                proj[(i, j)] = avg;
                proj[(j, i)] = avg;
            }
            sub_inc.1 = yz - &proj;
            z = proj;
        }
        {
            let yz = &z + &ball_inc;
            let proj = scaled_ball.project(&yz).unwrap();
            ball_inc = yz - &proj;
            z = proj;
        }
        let moved = theta
            .iter()
            .zip(&before_theta)
            .map(|(a, b)| (a - b).abs())
            .chain((&z - &before_z).iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        if moved < 1e-13 && cycle > 10 {
            break;
        }
    }
    (theta, z / s)
}

pub fn ball(norm: MatrixNorm, radius: f64) -> NormBall {
    NormBall::new(norm, radius).unwrap()
}

/// Central difference of `f` at `x` along coordinate `k`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += h;
    let mut xm = x.to_vec();
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
