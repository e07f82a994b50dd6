//! Univariate Gibbs sampling with exact single-site conditionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::exact::MarginalTable;
use crate::mrf::{PairwiseMrf, Role};

/// Site-visiting order of a Gibbs sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scan {
    /// Sites `0..n` in order.
    Systematic,
    /// `n` updates at uniformly random sites.
    Random,
}

impl std::str::FromStr for Scan {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "systematic" => Ok(Self::Systematic),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown scan policy {other:?}")),
        }
    }
}

/// Writes `p(X_i = . | x_{-i})` into `out` (length `L_i`): the softmax of the
/// summed potential columns selected by the neighbors' states.
pub fn conditional_into(m: &PairwiseMrf, x: &[usize], i: usize, out: &mut [f64]) {
    let li = m.card(i);
    debug_assert_eq!(out.len(), li);
    out.fill(0.0);
    for inc in m.incidences(i) {
        let t = m.table(inc.edge);
        match inc.role {
            Role::Row => {
                let lk = m.card(inc.other);
                let xk = x[inc.other];
                for (a, o) in out.iter_mut().enumerate() {
                    *o += t[a * lk + xk];
                }
            }
            Role::Column => {
                let row = &t[x[inc.other] * li..(x[inc.other] + 1) * li];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Role::SelfEdge => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o += t[a * li + a];
                }
            }
        }
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn conditional(m: &PairwiseMrf, x: &[usize], i: usize) -> Result<Vec<f64>> {
    m.check_config(x)?;
    if i >= m.n() {
        return input(format!("variable {i} out of range"));
    }
    let mut out = vec![0.0; m.card(i)];
    conditional_into(m, x, i, &mut out);
    Ok(out)
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// One Gibbs chain: a configuration plus its own RNG stream.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    state: Vec<usize>,
    rng: ChaCha8Rng,
    scan: Scan,
    sweeps: u64,
    scratch: Vec<f64>,
}

impl GibbsChain {
    /// Starts from a uniformly random configuration drawn from stream
    /// `stream` of `seed`.
    pub fn new(m: &PairwiseMrf, scan: Scan, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let state = m.cards().iter().map(|&l| rng.random_range(0..l)).collect();
        Self::from_parts(m, state, scan, rng)
    }

    pub fn with_state(m: &PairwiseMrf, state: Vec<usize>, scan: Scan, seed: u64, stream: u64) -> Result<Self> {
        m.check_config(&state)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self::from_parts(m, state, scan, rng))
    }

    fn from_parts(m: &PairwiseMrf, state: Vec<usize>, scan: Scan, rng: ChaCha8Rng) -> Self {
        let max_card = m.cards().iter().copied().max().unwrap_or(2);
        Self { state, rng, scan, sweeps: 0, scratch: vec![0.0; max_card] }
    }

    pub fn state(&self) -> &[usize] {
        &self.state
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn scan(&self) -> Scan {
        self.scan
    }

    fn update_site(&mut self, m: &PairwiseMrf, i: usize) {
        let li = m.card(i);
        conditional_into(m, &self.state, i, &mut self.scratch[..li]);
        self.state[i] = draw(&mut self.rng, &self.scratch[..li]);
    }

    /// One pass of `n` single-site updates.
    pub fn sweep(&mut self, m: &PairwiseMrf) {
        let n = m.n();
        match self.scan {
            Scan::Systematic => {
                for i in 0..n {
                    self.update_site(m, i);
                }
            }
            Scan::Random => {
                for _ in 0..n {
                    let i = self.rng.random_range(0..n);
                    self.update_site(m, i);
                }
            }
        }
        self.sweeps += 1;
    }
}

/// Empirical univariate marginals with per-cell standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub frequencies: Vec<Vec<f64>>,
    pub count: u64,
    pub std_errors: Vec<Vec<f64>>,
}

impl MarginalEstimate {
    fn from_counts(counts: &[Vec<u64>], count: u64) -> Self {
        let k = count.max(1) as f64;
        let frequencies: Vec<Vec<f64>> =
            counts.iter().map(|row| row.iter().map(|&c| c as f64 / k).collect()).collect();
        let std_errors = frequencies
            .iter()
            .map(|row| row.iter().map(|&p| (p * (1.0 - p) / k).sqrt()).collect())
            .collect();
        Self { frequencies, count, std_errors }
    }

    pub fn to_table(&self) -> MarginalTable {
        MarginalTable::unary_only(self.frequencies.clone())
    }
}

/// Runs `sweeps` sweeps and records one sample per sweep after the first
/// `burn_in`.
pub fn estimate_marginals(chain: &mut GibbsChain, m: &PairwiseMrf, sweeps: u64, burn_in: u64) -> Result<MarginalEstimate> {
    if sweeps <= burn_in {
        return input(format!("sweeps ({sweeps}) must exceed burn-in ({burn_in})"));
    }
    let mut counts: Vec<Vec<u64>> = m.cards().iter().map(|&l| vec![0; l]).collect();
    for t in 0..sweeps {
        chain.sweep(m);
        if t >= burn_in {
            for (row, &xi) in counts.iter_mut().zip(chain.state()) {
                row[xi] += 1;
            }
        }
    }
    Ok(MarginalEstimate::from_counts(&counts, sweeps - burn_in))
}

/// Marginal estimates at increasing sweep checkpoints from a single run.
/// The estimate at checkpoint `t` discards the first `floor(t * burn_in_frac)`
/// sweeps.
pub fn marginal_curve(
    chain: &mut GibbsChain,
    m: &PairwiseMrf,
    checkpoints: &[u64],
    burn_in_frac: f64,
) -> Result<Vec<MarginalEstimate>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.first() == Some(&0) {
        return input("checkpoints must be positive and strictly increasing");
    }
    if !(0.0..1.0).contains(&burn_in_frac) {
        return input(format!("burn-in fraction {burn_in_frac} outside [0, 1)"));
    }
    let burn: Vec<u64> = checkpoints.iter().map(|&t| (t as f64 * burn_in_frac).floor() as u64).collect();
    let mut events: Vec<u64> = checkpoints.iter().chain(&burn).copied().collect();
    events.sort_unstable();
    events.dedup();

    let mut counts: Vec<Vec<u64>> = m.cards().iter().map(|&l| vec![0; l]).collect();
    let mut snapshots = std::collections::HashMap::new();
    snapshots.insert(0u64, counts.clone());
    let mut done = 0u64;
    for &ev in &events {
        while done < ev {
            chain.sweep(m);
            for (row, &xi) in counts.iter_mut().zip(chain.state()) {
                row[xi] += 1;
            }
            done += 1;
        }
        snapshots.insert(ev, counts.clone());
    }
    Ok(checkpoints
        .iter()
        .zip(&burn)
        .map(|(&t, &b)| {
            let diff: Vec<Vec<u64>> = snapshots[&t]
                .iter()
                .zip(&snapshots[&b])
                .map(|(hi, lo)| hi.iter().zip(lo).map(|(h, l)| h - l).collect())
                .collect();
            MarginalEstimate::from_counts(&diff, t - b)
        })
        .collect())
}

/// A fixed set of persistent chains sharing one (changing) model.
#[derive(Debug, Clone)]
pub struct SamplePool {
    chains: Vec<GibbsChain>,
}

impl SamplePool {
    /// `size` systematic-scan chains on streams `0..size` of `seed`, each
    /// advanced `burn_in` sweeps.
    pub fn new(m: &PairwiseMrf, size: usize, seed: u64, burn_in: u64) -> Result<Self> {
        if size == 0 {
            return input("sample pool must hold at least one chain");
        }
        let mut pool = Self {
            chains: (0..size as u64).map(|s| GibbsChain::new(m, Scan::Systematic, seed, s)).collect(),
        };
        for _ in 0..burn_in {
            pool.advance(m);
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// One sweep per chain; chains own their RNG streams so the result does
    /// not depend on thread scheduling.
    pub fn advance(&mut self, m: &PairwiseMrf) {
        self.chains.par_iter_mut().for_each(|c| c.sweep(m));
    }

    pub fn states(&self) -> impl Iterator<Item = &[usize]> {
        self.chains.iter().map(GibbsChain::state)
    }
}
