//! Euclidean projection of MRF parameters onto the set whose dependency
//! bound has norm at most `c`.

mod dual;
mod lbfgsb;

use nalgebra::DMatrix;
pub use dual::{solve_h1, solve_h2, DualEvaluation, DualLayout, DualObjective, DualState, ProjectionMode};
pub use lbfgsb::{minimize, SolverOptions, SolverReport};

use crate::dependency::{bound_matrix, BoundVariant, MatrixNorm};
use crate::error::{input, Result};
use crate::mrf::PairwiseMrf;
use crate::norm_ball::NormBall;

#[derive(Debug, Clone)]
pub struct ProjectionProblem {
    pub psi: PairwiseMrf,
    /// Anchor `Y` for the `Z` block.
    pub anchor: DMatrix<f64>,
    pub alpha: f64,
    pub ball: NormBall,
    pub mode: ProjectionMode,
}

impl ProjectionProblem {
    pub fn new(psi: PairwiseMrf, anchor: DMatrix<f64>, alpha: f64, ball: NormBall, mode: ProjectionMode) -> Result<Self> {
        let problem = Self { psi, anchor, alpha, ball, mode };
        problem.validate()?;
        Ok(problem)
    }

    /// Problem anchored at the dependency bound of `psi` projected into the ball.
    pub fn anchored_at_bound(psi: PairwiseMrf, alpha: f64, ball: NormBall, mode: ProjectionMode) -> Result<Self> {
        let anchor = default_anchor(&psi, &ball)?;
        Self::new(psi, anchor, alpha, ball, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.psi.n();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return input(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.anchor.shape() != (n, n) {
            return input(format!("anchor is {:?}, model has {n} variables", self.anchor.shape()));
        }
        if self.anchor.iter().any(|v| !v.is_finite()) {
            return input("anchor has non-finite entries");
        }
        if self.mode == ProjectionMode::Sparse && self.ball.norm != MatrixNorm::Inf {
            return input("sparse mode requires the inf-norm ball");
        }
        Ok(())
    }
}

/// `R(psi)` under the inf corollary, projected into the ball.
pub fn default_anchor(psi: &PairwiseMrf, ball: &NormBall) -> Result<DMatrix<f64>> {
    ball.project(&bound_matrix(psi, BoundVariant::InfCorollary)?.matrix)
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub theta: PairwiseMrf,
    pub z: DMatrix<f64>,
    pub dual: DualState,
    pub dual_value: f64,
    pub primal_value: f64,
    /// `primal_value - dual_value` at the recovered primal point.
    pub duality_gap: f64,
    /// Largest primal constraint violation at `(theta, z)`.
    pub max_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Smoothed projection: maximizes the concave dual with a bounded
/// quasi-Newton method starting from `warm_start` (zero if absent).
pub fn project_smoothed(problem: &ProjectionProblem, options: &SolverOptions, warm_start: Option<&DualState>) -> Result<ProjectionResult> {
    problem.validate()?;
    let layout = DualLayout::new(&problem.psi, problem.mode);
    let objective = DualObjective {
        psi: &problem.psi,
        anchor: &problem.anchor,
        alpha: problem.alpha,
        ball: problem.ball,
        layout: &layout,
    };
    let x0 = match warm_start {
        Some(d) if d.to_flat().len() == layout.len() => d.to_flat(),
        Some(_) => return input("warm start does not match the problem's dual layout"),
        None => vec![0.0; layout.len()],
    };
    let report = minimize(
        |x| {
            let eval = objective.evaluate(&DualState::from_flat(&layout, x)?)?;
            Ok((-eval.value, eval.gradient.to_flat().iter().map(|g| -g).collect()))
        },
        x0,
        layout.bounded_len(),
        options,
    )?;

    let dual = DualState::from_flat(&layout, &report.x)?;
    let eval = objective.evaluate(&dual)?;
    let primal_value = objective.primal_value(&eval.theta, &eval.z);
    let max_violation = objective.max_violation(&eval.theta, &eval.z)?;
    Ok(ProjectionResult {
        theta: problem.psi.with_params(eval.theta)?,
        z: eval.z,
        dual,
        dual_value: eval.value,
        primal_value,
        duality_gap: primal_value - eval.value,
        max_violation,
        iterations: report.iterations,
        converged: report.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    /// Stop once successive parameter vectors differ by at most this (l2).
    pub tolerance: f64,
    pub max_outer: usize,
    pub inner: SolverOptions,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_outer: 100,
            inner: SolverOptions { tolerance: 1e-7, ..SolverOptions::default() },
        }
    }
}

/// Unsmoothed projection by re-anchoring `Y` at the previous `Z` until the
/// parameters stop moving. `anchor` defaults to [`default_anchor`].
pub fn project_exact(
    psi: &PairwiseMrf,
    ball: NormBall,
    alpha: f64,
    mode: ProjectionMode,
    anchor: Option<DMatrix<f64>>,
    options: &ExactOptions,
) -> Result<ProjectionResult> {
    if !(options.tolerance > 0.0) {
        return input(format!("tolerance must be positive, got {}", options.tolerance));
    }
    if options.max_outer == 0 {
        return input("max_outer must be at least 1");
    }
    let anchor = match anchor {
        Some(a) => a,
        None => default_anchor(psi, &ball)?,
    };
    let mut problem = ProjectionProblem::new(psi.clone(), anchor, alpha, ball, mode)?;
    let mut previous = psi.params().to_vec();
    let mut warm: Option<DualState> = None;
    for outer in 1..=options.max_outer {
        let mut result = project_smoothed(&problem, &options.inner, warm.as_ref())?;
        let step: f64 = result.theta.params().iter().zip(&previous).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if step <= options.tolerance || outer == options.max_outer {
            result.iterations = outer;
            result.converged &= step <= options.tolerance;
            return Ok(result);
        }
        previous = result.theta.params().to_vec();
        problem.anchor = result.z.clone();
        warm = Some(result.dual);
    }
    unreachable!("the last outer iteration returns")
}
