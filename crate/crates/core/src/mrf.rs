//! Discrete pairwise Markov random fields in edge-potential form.
//!
//! A model assigns every configuration `x` the unnormalized log-probability
//! `sum_{(i,j) in E} theta^ij(x_i, x_j)`. Edges are stored once, in the
//! `i <= j` orientation; the `(j, i)` orientation is the transpose. A
//! self-edge `(i, i)` carries a univariate term and must have identical
//! columns.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Relative tolerance for the identical-columns check on self-edges.
const SELF_EDGE_TOL: f64 = 1e-9;

/// A potential table for one stored edge, row-major with `L_i` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePotential {
    pub i: usize,
    pub j: usize,
    pub table: Vec<f64>,
}

/// How a variable participates in an incident edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// The variable indexes the rows of the stored table.
    Row,
    /// The variable indexes the columns of the stored table.
    Column,
    /// Univariate self-edge.
    SelfEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub edge: usize,
    pub other: usize,
    pub role: Role,
}

/// Immutable pairwise MRF. Parameters live in one flat vector, edge by edge,
/// each table row-major.
#[derive(Debug, Clone)]
pub struct PairwiseMrf {
    cards: Vec<usize>,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    theta: Vec<f64>,
    index: HashMap<(usize, usize), usize>,
    incidences: Vec<Vec<Incidence>>,
}

impl PairwiseMrf {
    pub fn new(cards: Vec<usize>, potentials: Vec<EdgePotential>) -> Result<Self> {
        let edges: Vec<(usize, usize)> = potentials.iter().map(|p| (p.i, p.j)).collect();
        let theta: Vec<f64> = potentials.into_iter().flat_map(|p| p.table).collect();
        Self::from_parts(cards, edges, theta)
    }

    /// Builds a model from an edge list and a flat parameter vector laid out
    /// edge by edge.
    pub fn from_parts(cards: Vec<usize>, edges: Vec<(usize, usize)>, theta: Vec<f64>) -> Result<Self> {
        let n = cards.len();
        if let Some(bad) = cards.iter().position(|&l| l < 2) {
            return input(format!("variable {bad} has cardinality {} (need >= 2)", cards[bad]));
        }
        let mut index = HashMap::with_capacity(edges.len());
        let mut offsets = Vec::with_capacity(edges.len() + 1);
        let mut incidences = vec![Vec::new(); n];
        let mut total = 0;
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i > j || j >= n {
                return input(format!("edge ({i},{j}) must satisfy i <= j < n = {n}"));
            }
            if index.insert((i, j), e).is_some() {
                return input(format!("duplicate edge ({i},{j})"));
            }
            offsets.push(total);
            total += cards[i] * cards[j];
            if i == j {
                incidences[i].push(Incidence { edge: e, other: i, role: Role::SelfEdge });
            } else {
                incidences[i].push(Incidence { edge: e, other: j, role: Role::Row });
                incidences[j].push(Incidence { edge: e, other: i, role: Role::Column });
            }
        }
        offsets.push(total);
        if theta.len() != total {
            return input(format!("expected {total} potential entries, got {}", theta.len()));
        }
        if let Some(bad) = theta.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite potential entry at flat index {bad}"));
        }
        let model = Self { cards, edges, offsets, theta, index, incidences };
        model.check_self_edges()?;
        Ok(model)
    }

    fn check_self_edges(&self) -> Result<()> {
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if i != j {
                continue;
            }
            let l = self.cards[i];
            let t = self.table(e);
            for a in 0..l {
                let first = t[a * l];
                for b in 1..l {
                    let v = t[a * l + b];
                    if (v - first).abs() > SELF_EDGE_TOL * (1.0 + first.abs()) {
                        return input(format!(
                            "self-edge ({i},{i}) row {a} is not constant across columns"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Same structure, new flat parameters.
    pub fn with_params(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return input(format!(
                "expected {} parameters, got {}",
                self.theta.len(),
                theta.len()
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return input("non-finite parameter");
        }
        let model = Self { theta, ..self.clone() };
        model.check_self_edges()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self, i: usize) -> usize {
        self.cards[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_self_edge(&self, e: usize) -> bool {
        let (i, j) = self.edges[e];
        i == j
    }

    /// Indices of edges joining two distinct variables.
    pub fn pairwise_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(move |&e| !self.is_self_edge(e))
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_index(i, j).is_some()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn param_len(&self) -> usize {
        self.theta.len()
    }

    /// Flat offset of edge `e`'s table.
    pub fn offset(&self, e: usize) -> usize {
        self.offsets[e]
    }

    pub fn table(&self, e: usize) -> &[f64] {
        &self.theta[self.offsets[e]..self.offsets[e + 1]]
    }

    pub fn incidences(&self, i: usize) -> &[Incidence] {
        &self.incidences[i]
    }

    /// Neighbors of `i` over pairwise edges.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.incidences[i]
            .iter()
            .filter(|inc| inc.role != Role::SelfEdge)
            .map(|inc| inc.other)
    }

    /// `theta^ij(a, b)` for either orientation; `(j, i)` is the transpose of
    /// the stored `(i, j)` table.
    pub fn potential(&self, i: usize, j: usize, a: usize, b: usize) -> Option<f64> {
        let e = self.edge_index(i, j)?;
        let (si, sj) = self.edges[e];
        let t = self.table(e);
        if i == si {
            Some(t[a * self.cards[sj] + b])
        } else {
            Some(t[b * self.cards[sj] + a])
        }
    }

    /// `theta^ij` as a row-major `L_i x L_j` table in the requested orientation.
    pub fn oriented_table(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let e = self.edge_index(i, j)?;
        let t = self.table(e);
        if i <= j {
            return Some(t.to_vec());
        }
        Some(transpose(t, self.cards[j], self.cards[i]))
    }

    /// Product of cardinalities, as a float so large models don't overflow.
    pub fn state_space_size(&self) -> f64 {
        self.cards.iter().map(|&l| l as f64).product()
    }

    pub fn check_config(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.n() {
            return input(format!("configuration has {} entries, model has {}", x.len(), self.n()));
        }
        for (i, (&xi, &l)) in x.iter().zip(&self.cards).enumerate() {
            if xi >= l {
                return input(format!("state {xi} of variable {i} out of range [0, {l})"));
            }
        }
        Ok(())
    }

    /// `sum_{(i,j) in E} theta^ij(x_i, x_j)`.
    pub fn unnormalized_log_prob(&self, x: &[usize]) -> Result<f64> {
        self.check_config(x)?;
        Ok(self.log_weight(x))
    }

    /// Unchecked version of [`Self::unnormalized_log_prob`].
    pub(crate) fn log_weight(&self, x: &[usize]) -> f64 {
        self.edges
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| self.theta[self.offsets[e] + x[i] * self.cards[j] + x[j]])
            .sum()
    }

    /// Adds `weight * f(x)` into `out`.
    ///
    /// Pairwise edges use the indicator of `(x_i, x_j)`. A self-edge spreads
    /// its indicator evenly over row `x_i`, so `f(x) . theta` reproduces the
    /// univariate term for constant-column tables and gradients built from
    /// these statistics stay constant across columns.
    pub fn accumulate_stats(&self, x: &[usize], weight: f64, out: &mut [f64]) {
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let off = self.offsets[e];
            let lj = self.cards[j];
            if i == j {
                let w = weight / lj as f64;
                for b in 0..lj {
                    out[off + x[i] * lj + b] += w;
                }
            } else {
                out[off + x[i] * lj + x[j]] += weight;
            }
        }
    }

    pub fn sufficient_stats(&self, x: &[usize]) -> Result<SufficientStats> {
        self.check_config(x)?;
        let mut values = vec![0.0; self.theta.len()];
        self.accumulate_stats(x, 1.0, &mut values);
        Ok(SufficientStats { values })
    }

    /// Stable fingerprint of structure and parameters.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.cards.hash(&mut h);
        self.edges.hash(&mut h);
        for v in &self.theta {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn to_file(&self) -> ModelFile {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| EdgeRecord {
                i,
                j,
                table: self.table(e).chunks(self.cards[j]).map(<[f64]>::to_vec).collect(),
            })
            .collect();
        ModelFile { n: self.n(), cards: self.cards.clone(), edges }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

pub(crate) fn transpose(t: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = t[r * cols + c];
        }
    }
    out
}

/// Dense sufficient-statistics vector aligned with the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub values: Vec<f64>,
}

impl SufficientStats {
    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.values.iter().zip(theta).map(|(f, t)| f * t).sum()
    }
}

/// On-disk model format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub n: usize,
    pub cards: Vec<usize>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    /// Row-major, `L_i` rows of `L_j` entries.
    pub table: Vec<Vec<f64>>,
}

impl TryFrom<ModelFile> for PairwiseMrf {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.n != file.cards.len() {
            return input(format!("n = {} but {} cardinalities given", file.n, file.cards.len()));
        }
        let mut potentials = Vec::with_capacity(file.edges.len());
        for rec in file.edges {
            let (li, lj) = match (file.cards.get(rec.i), file.cards.get(rec.j)) {
                (Some(&li), Some(&lj)) => (li, lj),
                _ => return input(format!("edge ({},{}) references a missing variable", rec.i, rec.j)),
            };
            if rec.table.len() != li || rec.table.iter().any(|row| row.len() != lj) {
                return input(format!("edge ({},{}) table must be {li} x {lj}", rec.i, rec.j));
            }
            potentials.push(EdgePotential {
                i: rec.i,
                j: rec.j,
                table: rec.table.into_iter().flatten().collect(),
            });
        }
        PairwiseMrf::new(file.cards, potentials)
    }
}
