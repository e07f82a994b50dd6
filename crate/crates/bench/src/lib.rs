//! Fixtures shared by the benchmarks.

use fastmix::generators::{ising_grid, Interaction};
use fastmix::PairwiseMrf;

/// Mixed-sign Ising grid with unit fields.
pub fn grid(side: usize, coupling: f64) -> PairwiseMrf {
    ising_grid(side, side, 1.0, coupling, Interaction::Mixed, 7).expect("valid grid")
}
