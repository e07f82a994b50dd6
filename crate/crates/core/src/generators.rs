//! Synthetic model families: Ising grids, Ising random graphs and Potts grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::mrf::{EdgePotential, PairwiseMrf};

/// Sign pattern of the pairwise couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// Couplings drawn from `[-d_e, d_e]`.
    Mixed,
    /// Couplings drawn from `[0, d_e]`.
    Attractive,
}

impl std::str::FromStr for Interaction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "attractive" => Ok(Self::Attractive),
            other => Err(format!("unknown interaction mode {other:?}")),
        }
    }
}

/// Topology of a generated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    IsingGrid { rows: usize, cols: usize },
    RandomGraph { n: usize, edge_prob: f64 },
    PottsGrid { rows: usize, cols: usize, states: usize },
}

impl Topology {
    pub fn generate(&self, field: f64, coupling: f64, mode: Interaction, seed: u64) -> Result<PairwiseMrf> {
        match *self {
            Topology::IsingGrid { rows, cols } => ising_grid(rows, cols, field, coupling, mode, seed),
            Topology::RandomGraph { n, edge_prob } => random_graph(n, edge_prob, field, coupling, mode, seed),
            Topology::PottsGrid { rows, cols, states } => potts_grid(rows, cols, states, field, coupling, mode, seed),
        }
    }

    /// Grid dimensions, when the topology is a grid.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        match *self {
            Topology::IsingGrid { rows, cols } | Topology::PottsGrid { rows, cols, .. } => Some((rows, cols)),
            Topology::RandomGraph { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Topology::IsingGrid { rows, cols } => format!("ising_grid_{rows}x{cols}"),
            Topology::RandomGraph { n, edge_prob } => format!("random_{n}_p{edge_prob}"),
            Topology::PottsGrid { rows, cols, states } => format!("potts{states}_grid_{rows}x{cols}"),
        }
    }
}

fn check_strengths(field: f64, coupling: f64) -> Result<()> {
    if !(field >= 0.0 && field.is_finite() && coupling >= 0.0 && coupling.is_finite()) {
        return input(format!("field ({field}) and coupling ({coupling}) must be finite and >= 0"));
    }
    Ok(())
}

fn draw_coupling(rng: &mut ChaCha8Rng, coupling: f64, mode: Interaction) -> f64 {
    match mode {
        Interaction::Mixed => rng.random_range(-coupling..=coupling),
        Interaction::Attractive => rng.random_range(0.0..=coupling),
    }
}

/// Univariate Ising term `u * s_i` as a self-edge with identical columns `(u, -u)`.
pub fn ising_unary(i: usize, u: f64) -> EdgePotential {
    EdgePotential { i, j: i, table: vec![u, u, -u, -u] }
}

/// Ising coupling `w * s_i * s_j` as `[[w, -w], [-w, w]]`.
pub fn ising_coupling(i: usize, j: usize, w: f64) -> EdgePotential {
    EdgePotential { i, j, table: vec![w, -w, -w, w] }
}

fn grid_pairs(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                pairs.push((v, v + 1));
            }
            if r + 1 < rows {
                pairs.push((v, v + cols));
            }
        }
    }
    pairs
}

/// 4-connected Ising grid. Node `(r, c)` has index `r * cols + c`.
pub fn ising_grid(rows: usize, cols: usize, field: f64, coupling: f64, mode: Interaction, seed: u64) -> Result<PairwiseMrf> {
    check_strengths(field, coupling)?;
    if rows == 0 || cols == 0 {
        return input("grid must have at least one row and column");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut potentials: Vec<EdgePotential> =
        (0..n).map(|i| ising_unary(i, rng.random_range(-field..=field))).collect();
    for (i, j) in grid_pairs(rows, cols) {
        potentials.push(ising_coupling(i, j, draw_coupling(&mut rng, coupling, mode)));
    }
    PairwiseMrf::new(vec![2; n], potentials)
}

/// Ising model on an Erdos-Renyi graph: each of the `n(n-1)/2` pairs is an
/// edge independently with probability `edge_prob`.
pub fn random_graph(n: usize, edge_prob: f64, field: f64, coupling: f64, mode: Interaction, seed: u64) -> Result<PairwiseMrf> {
    check_strengths(field, coupling)?;
    if !(0.0..=1.0).contains(&edge_prob) {
        return input(format!("edge probability {edge_prob} outside [0, 1]"));
    }
    if n == 0 {
        return input("need at least one variable");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut potentials: Vec<EdgePotential> =
        (0..n).map(|i| ising_unary(i, rng.random_range(-field..=field))).collect();
    for i in 0..n {
        for j in i + 1..n {
            // Always consume the draw so topology and strength streams stay aligned.
            let keep = rng.random::<f64>() < edge_prob;
            let w = draw_coupling(&mut rng, coupling, mode);
            if keep {
                potentials.push(ising_coupling(i, j, w));
            }
        }
    }
    PairwiseMrf::new(vec![2; n], potentials)
}

/// Potts grid: coupling `w * I_L` per grid edge, and a univariate column
/// drawn uniformly per state from `[-d_n, d_n]`.
pub fn potts_grid(
    rows: usize,
    cols: usize,
    states: usize,
    field: f64,
    coupling: f64,
    mode: Interaction,
    seed: u64,
) -> Result<PairwiseMrf> {
    check_strengths(field, coupling)?;
    if states < 2 {
        return input(format!("Potts model needs at least 2 states, got {states}"));
    }
    if rows == 0 || cols == 0 {
        return input("grid must have at least one row and column");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut potentials = Vec::with_capacity(n + 2 * n);
    for i in 0..n {
        let column: Vec<f64> = (0..states).map(|_| rng.random_range(-field..=field)).collect();
        let table = column.iter().flat_map(|&u| std::iter::repeat_n(u, states)).collect();
        potentials.push(EdgePotential { i, j: i, table });
    }
    for (i, j) in grid_pairs(rows, cols) {
        let w = draw_coupling(&mut rng, coupling, mode);
        let mut table = vec![0.0; states * states];
        for a in 0..states {
            table[a * states + a] = w;
        }
        potentials.push(EdgePotential { i, j, table });
    }
    PairwiseMrf::new(vec![states; n], potentials)
}
