//! Marginal-accuracy experiments: every method is run on seeded models and
//! scored against exact (or long-run reference) marginals.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{loopy_bp, mean_field, FixedPointConfig};
use crate::dependency::MatrixNorm;
use crate::divergence::{derive_seed, make_grid_chains, make_spanning_trees, pgd_project, DivergenceKind, PgdConfig};
use crate::error::{input, Error, Result};
use crate::exact::{brute_force, MarginalTable, BRUTE_FORCE_CAP};
use crate::generators::{Interaction, Topology};
use crate::mrf::PairwiseMrf;
use crate::norm_ball::NormBall;
use crate::projection::{project_exact, ExactOptions, ProjectionMode};
use crate::sampling::{estimate_marginals, marginal_curve, GibbsChain, Scan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gibbs_original")]
    GibbsOriginal,
    #[serde(rename = "euclidean+gibbs")]
    EuclideanGibbs,
    #[serde(rename = "piecewise+gibbs")]
    PiecewiseGibbs,
    #[serde(rename = "reversed+gibbs")]
    ReversedGibbs,
    #[serde(rename = "mf")]
    MeanField,
    #[serde(rename = "lbp")]
    Lbp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GibbsOriginal,
        Method::EuclideanGibbs,
        Method::PiecewiseGibbs,
        Method::ReversedGibbs,
        Method::MeanField,
        Method::Lbp,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::GibbsOriginal => "gibbs_original",
            Method::EuclideanGibbs => "euclidean+gibbs",
            Method::PiecewiseGibbs => "piecewise+gibbs",
            Method::ReversedGibbs => "reversed+gibbs",
            Method::MeanField => "mf",
            Method::Lbp => "lbp",
        }
    }

    pub fn samples(self) -> bool {
        !matches!(self, Method::MeanField | Method::Lbp)
    }

    fn index(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).expect("listed") as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method {s:?}; expected one of {}", Method::ALL.map(Method::tag).join(", ")))
    }
}

/// Mean absolute difference of `P(X_i = 1)` for all-binary models; for
/// multi-state models, the mean over variables and states.
pub fn marginal_error(truth: &MarginalTable, est: &MarginalTable) -> Result<f64> {
    if truth.unary.len() != est.unary.len()
        || truth.unary.iter().zip(&est.unary).any(|(a, b)| a.len() != b.len())
        || truth.unary.is_empty()
    {
        return input("marginal tables differ in shape");
    }
    let binary = truth.unary.iter().all(|p| p.len() == 2);
    let (sum, count) = truth.unary.iter().zip(&est.unary).fold((0.0, 0usize), |(s, c), (p, q)| {
        if binary {
            (s + (p[1] - q[1]).abs(), c + 1)
        } else {
            (s + p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(), c + p.len())
        }
    });
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    /// Gibbs sweeps per sampled method.
    pub sweeps: u64,
    pub burn_in_frac: f64,
    pub ball: NormBall,
    pub alpha: f64,
    pub pgd_steps: usize,
    pub step_size: f64,
    pub pool_size: usize,
    pub pool_burn_in: u64,
    pub fixed_point: FixedPointConfig,
    /// Sweeps of the reference chain when the state space is too large to enumerate.
    pub reference_sweeps: u64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            sweeps: 30_000,
            burn_in_frac: 0.1,
            ball: NormBall { norm: MatrixNorm::Inf, radius: 2.5 },
            alpha: 1.0,
            pgd_steps: 60,
            step_size: 0.1,
            pool_size: 500,
            pool_burn_in: 50,
            fixed_point: FixedPointConfig::default(),
            reference_sweeps: 10_000_000,
        }
    }
}

impl EvaluationSettings {
    fn projection_mode(&self) -> ProjectionMode {
        match self.ball.norm {
            MatrixNorm::Inf => ProjectionMode::Sparse,
            MatrixNorm::Spectral => ProjectionMode::Dense,
        }
    }

    fn burn_in(&self, sweeps: u64) -> u64 {
        (sweeps as f64 * self.burn_in_frac).floor() as u64
    }
}

/// Ground-truth marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub marginals: MarginalTable,
    /// Enumeration (exact) or a reference Gibbs chain.
    pub exact: bool,
}

pub fn compute_truth(m: &PairwiseMrf, settings: &EvaluationSettings, seed: u64) -> Result<Truth> {
    if m.state_space_size() <= BRUTE_FORCE_CAP as f64 {
        return Ok(Truth { marginals: brute_force(m)?.1, exact: true });
    }
    let mut chain = GibbsChain::new(m, Scan::Systematic, seed, u64::MAX);
    let sweeps = settings.reference_sweeps;
    let est = estimate_marginals(&mut chain, m, sweeps, settings.burn_in(sweeps))?;
    Ok(Truth { marginals: est.to_table(), exact: false })
}

/// The model a sampled method runs Gibbs on, after any projection.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: PairwiseMrf,
    /// Whether the projection's feasibility certificate holds; `None` for
    /// the original parameters.
    pub certified: Option<bool>,
}

const CERTIFICATE_TOL: f64 = 1e-6;

/// Projects `m` as the method requires. `grid` selects chain subgraphs for
/// piecewise KL; otherwise random spanning trees are used.
pub fn fit_method(
    m: &PairwiseMrf,
    method: Method,
    grid: Option<(usize, usize)>,
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<FittedModel> {
    let mode = settings.projection_mode();
    let pgd = |divergence| -> Result<FittedModel> {
        let family = match divergence {
            DivergenceKind::PiecewiseKl => Some(match grid {
                Some((r, c)) => make_grid_chains(m, r, c)?,
                None => make_spanning_trees(m, seed)?,
            }),
            _ => None,
        };
        let config = PgdConfig {
            step_size: settings.step_size,
            iterations: settings.pgd_steps,
            divergence,
            pool_size: settings.pool_size,
            pool_burn_in: settings.pool_burn_in,
            ball: settings.ball,
            alpha: settings.alpha,
            mode,
            seed,
        };
        let res = pgd_project(m, &config, family.as_ref())?;
        Ok(FittedModel { model: res.theta, certified: Some(res.max_violation <= CERTIFICATE_TOL) })
    };
    match method {
        Method::GibbsOriginal => Ok(FittedModel { model: m.clone(), certified: None }),
        Method::EuclideanGibbs => {
            let res = project_exact(m, settings.ball, settings.alpha, mode, None, &ExactOptions::default())?;
            Ok(FittedModel { model: res.theta, certified: Some(res.max_violation <= CERTIFICATE_TOL) })
        }
        Method::PiecewiseGibbs => pgd(DivergenceKind::PiecewiseKl),
        Method::ReversedGibbs => pgd(DivergenceKind::ReversedKl),
        Method::MeanField | Method::Lbp => input(format!("{method} does not sample")),
    }
}

/// Error of one method on one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub error: f64,
    pub seconds: f64,
}

/// Runs `method` on `m` and scores it against `truth`. Projected models that
/// fail their feasibility certificate are reported as errors.
pub fn evaluate_method(
    m: &PairwiseMrf,
    truth: &Truth,
    method: Method,
    grid: Option<(usize, usize)>,
    settings: &EvaluationSettings,
    model_seed: u64,
) -> Result<MethodOutcome> {
    let start = Instant::now();
    let seed = derive_seed(model_seed, method.index());
    let estimate = match method {
        Method::MeanField => {
            let config = FixedPointConfig { seed, ..settings.fixed_point };
            mean_field(m, &config, false)?.marginals
        }
        Method::Lbp => loopy_bp(m, &settings.fixed_point)?.marginals,
        _ => {
            let fitted = fit_method(m, method, grid, settings, seed)?;
            if fitted.certified == Some(false) {
                return Err(Error::Numeric(format!("{method}: projected model failed its feasibility certificate")));
            }
            let mut chain = GibbsChain::new(&fitted.model, Scan::Systematic, seed, 0);
            estimate_marginals(&mut chain, &fitted.model, settings.sweeps, settings.burn_in(settings.sweeps))?.to_table()
        }
    };
    Ok(MethodOutcome { method, error: marginal_error(&truth.marginals, &estimate)?, seconds: start.elapsed().as_secs_f64() })
}

/// One CSV row: a method's error at one strength or checkpoint, aggregated
/// over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub topology: String,
    pub interaction: Interaction,
    pub field: f64,
    pub coupling: f64,
    pub edge_prob: Option<f64>,
    pub master_seed: u64,
    pub trials: usize,
    pub method: Method,
    /// Gibbs sweeps behind the estimate (0 for deterministic baselines).
    pub sweeps: u64,
    pub mean_error: f64,
    /// Standard error of the mean over trials.
    pub se_over_trials: f64,
    pub failures: usize,
    pub exact_truth: bool,
    /// Mean wall-clock seconds per trial; informational only.
    pub seconds: f64,
}

/// Model family description shared by the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub topology: Topology,
    pub field: f64,
    pub interaction: Interaction,
    pub trials: usize,
    pub master_seed: u64,
    pub methods: Vec<Method>,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return input("at least one trial is required");
        }
        if self.methods.is_empty() {
            return input("no methods selected");
        }
        Ok(())
    }

    fn edge_prob(&self) -> Option<f64> {
        match self.topology {
            Topology::RandomGraph { edge_prob, .. } => Some(edge_prob),
            _ => None,
        }
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean marginal error per (strength, method) over seeded trials.
pub fn run_strength_sweep(spec: &SweepSpec, strengths: &[f64], settings: &EvaluationSettings) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let mut records = Vec::new();
    for (s_idx, &strength) in strengths.iter().enumerate() {
        let trials: Vec<(Result<Vec<Result<MethodOutcome>>>, bool)> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let model_seed = derive_seed(spec.master_seed, (s_idx * spec.trials + t) as u64);
                let run = || -> Result<(Vec<Result<MethodOutcome>>, bool)> {
                    let m = spec.topology.generate(spec.field, strength, spec.interaction, model_seed)?;
                    let truth = compute_truth(&m, settings, model_seed)?;
                    let grid = spec.topology.grid_shape();
                    let outcomes = spec
                        .methods
                        .iter()
                        .map(|&method| evaluate_method(&m, &truth, method, grid, settings, model_seed))
                        .collect();
                    Ok((outcomes, truth.exact))
                };
                match run() {
                    Ok((o, exact)) => (Ok(o), exact),
                    Err(e) => (Err(e), false),
                }
            })
            .collect();
        let exact_truth = trials.iter().all(|(_, exact)| *exact);
        for (k, &method) in spec.methods.iter().enumerate() {
            let mut errors = Vec::new();
            let mut seconds = Vec::new();
            let mut failures = 0;
            for (trial, _) in &trials {
                match trial.as_ref().map(|o| &o[k]) {
                    Ok(Ok(out)) => {
                        errors.push(out.error);
                        seconds.push(out.seconds);
                    }
                    _ => failures += 1,
                }
            }
            let (mean_error, se) = mean_and_se(&errors);
            records.push(ExperimentRecord {
                experiment: "strength".into(),
                topology: spec.topology.label(),
                interaction: spec.interaction,
                field: spec.field,
                coupling: strength,
                edge_prob: spec.edge_prob(),
                master_seed: spec.master_seed,
                trials: spec.trials,
                method,
                sweeps: if method.samples() { settings.sweeps } else { 0 },
                mean_error,
                se_over_trials: se,
                failures,
                exact_truth,
                seconds: mean_and_se(&seconds).0,
            });
        }
    }
    Ok(records)
}

/// `1, 2, 5` per decade up to and including `max`.
pub fn log_checkpoints(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1u64;
    while decade <= max {
        for k in [1, 2, 5] {
            let v = k * decade;
            if v <= max {
                out.push(v);
            }
        }
        match decade.checked_mul(10) {
            Some(d) => decade = d,
            None => break,
        }
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

/// Error against sweep count. The original-parameter chain runs to
/// `original_max` sweeps, projected chains to `projected_max`;
/// deterministic baselines contribute one row with `sweeps = 0`.
pub fn run_time_sweep(
    spec: &SweepSpec,
    coupling: f64,
    original_max: u64,
    projected_max: u64,
    settings: &EvaluationSettings,
) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let checkpoints_for = |method: Method| match method {
        Method::GibbsOriginal => log_checkpoints(original_max),
        Method::MeanField | Method::Lbp => vec![0],
        _ => log_checkpoints(projected_max),
    };
    type Curves = Vec<Result<(Vec<f64>, f64)>>;
    let trials: Vec<Result<(Curves, bool)>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let model_seed = derive_seed(spec.master_seed, t as u64);
            let m = spec.topology.generate(spec.field, coupling, spec.interaction, model_seed)?;
            let truth = compute_truth(&m, settings, model_seed)?;
            let grid = spec.topology.grid_shape();
            let curves = spec
                .methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let errors = if method.samples() {
                        let seed = derive_seed(model_seed, method.index());
                        let fitted = fit_method(&m, method, grid, settings, seed)?;
                        if fitted.certified == Some(false) {
                            return Err(Error::Numeric(format!("{method}: projected model failed its feasibility certificate")));
                        }
                        let mut chain = GibbsChain::new(&fitted.model, Scan::Systematic, seed, 0);
                        marginal_curve(&mut chain, &fitted.model, &checkpoints_for(method), settings.burn_in_frac)?
                            .iter()
                            .map(|est| marginal_error(&truth.marginals, &est.to_table()))
                            .collect::<Result<Vec<f64>>>()?
                    } else {
                        vec![evaluate_method(&m, &truth, method, grid, settings, model_seed)?.error]
                    };
                    Ok((errors, start.elapsed().as_secs_f64()))
                })
                .collect();
            Ok((curves, truth.exact))
        })
        .collect();

    let exact_truth = trials.iter().all(|t| matches!(t, Ok((_, true))));
    let mut records = Vec::new();
    for (k, &method) in spec.methods.iter().enumerate() {
        let checkpoints = checkpoints_for(method);
        let ok: Vec<&(Vec<f64>, f64)> =
            trials.iter().filter_map(|t| t.as_ref().ok().and_then(|(c, _)| c[k].as_ref().ok())).collect();
        let failures = spec.trials - ok.len();
        let seconds = mean_and_se(&ok.iter().map(|(_, s)| *s).collect::<Vec<_>>()).0;
        for (c, &sweeps) in checkpoints.iter().enumerate() {
            let (mean_error, se) = mean_and_se(&ok.iter().map(|(e, _)| e[c]).collect::<Vec<_>>());
            records.push(ExperimentRecord {
                experiment: "time".into(),
                topology: spec.topology.label(),
                interaction: spec.interaction,
                field: spec.field,
                coupling,
                edge_prob: spec.edge_prob(),
                master_seed: spec.master_seed,
                trials: spec.trials,
                method,
                sweeps,
                mean_error,
                se_over_trials: se,
                failures,
                exact_truth,
                seconds,
            });
        }
    }
    Ok(records)
}

/// Writes records as CSV with a header row, in the field order of
/// [`ExperimentRecord`].
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 15] = [
    "experiment",
    "topology",
    "interaction",
    "field",
    "coupling",
    "edge_prob",
    "master_seed",
    "trials",
    "method",
    "sweeps",
    "mean_error",
    "se_over_trials",
    "failures",
    "exact_truth",
    "seconds",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        let truth = MarginalTable::unary_only(vec![vec![0.0, 1.0]; 3]);
        let half = MarginalTable::unary_only(vec![vec![0.5, 0.5]; 3]);
        assert_eq!(marginal_error(&truth, &truth).unwrap(), 0.0);
        assert_eq!(marginal_error(&truth, &half).unwrap(), 0.5);
        assert_eq!(marginal_error(&half, &truth).unwrap(), 0.5);
        let short = MarginalTable::unary_only(vec![vec![0.5, 0.5]; 2]);
        assert!(marginal_error(&truth, &short).is_err());
    }

    #[test]
    fn multistate_error_averages_states() {
        let a = MarginalTable::unary_only(vec![vec![1.0, 0.0, 0.0]]);
        let b = MarginalTable::unary_only(vec![vec![0.0, 1.0, 0.0]]);
        assert!((marginal_error(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("gibbs".parse::<Method>().is_err());
    }

    #[test]
    fn checkpoints_are_increasing() {
        assert_eq!(log_checkpoints(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(log_checkpoints(30_000).last(), Some(&30_000));
        assert!(log_checkpoints(1_000_000).windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn se_of_constant_is_zero() {
        let (mean, se) = mean_and_se(&[0.25, 0.25, 0.25]);
        assert_eq!((mean, se), (0.25, 0.0));
        assert_eq!(mean_and_se(&[0.4]).1, 0.0);
    }
}
