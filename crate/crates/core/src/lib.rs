//! Bounds on the Gibbs-sampling dependency matrix of discrete pairwise
//! Markov random fields, projection of parameters onto sets where Gibbs
//! sampling provably mixes fast, and divergence minimization over those sets.

pub mod baselines;
pub mod dependency;
pub mod divergence;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod generators;
pub mod mrf;
pub mod norm_ball;
pub mod projection;
pub mod sampling;

pub use dependency::{BoundVariant, DependencyBound, MatrixNorm, MixingBudget};
pub use error::{Error, Result};
pub use exact::MarginalTable;
pub use mrf::{EdgePotential, PairwiseMrf};
pub use norm_ball::NormBall;
pub use projection::{ProjectionMode, ProjectionProblem, ProjectionResult};
pub use sampling::{GibbsChain, SamplePool, Scan};
