use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fastmix::dependency::{bound_matrix, mixing_time_bound};
use fastmix::divergence::{make_grid_chains, make_spanning_trees, pgd_project, DivergenceKind, PgdConfig};
use fastmix::experiment::{
    compute_truth, evaluate_method, run_strength_sweep, run_time_sweep, write_csv, EvaluationSettings, Method, SweepSpec,
};
use fastmix::generators::{Interaction, Topology};
use fastmix::mrf::ModelFile;
use fastmix::projection::{project_exact, project_smoothed, ExactOptions, SolverOptions};
use fastmix::sampling::estimate_marginals;
use fastmix::{BoundVariant, GibbsChain, MatrixNorm, NormBall, PairwiseMrf, ProjectionMode, ProjectionProblem, Scan};

/// Fast-mixing parameter projection and Gibbs sampling for discrete pairwise MRFs.
#[derive(Debug, Parser)]
#[command(name = "fastmix", version)]
struct Cli {
    /// Seed for generators, samplers and sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random model.
    Gen(GenArgs),
    /// Dependency-matrix bound, its norm and the mixing-time bound.
    Bound(BoundArgs),
    /// Euclidean projection onto the fast-mixing set.
    Project(ProjectArgs),
    /// Divergence projection by projected gradient descent.
    ProjectDiv(ProjectDivArgs),
    /// Univariate marginals from a Gibbs chain.
    Sample(SampleArgs),
    /// Marginal error of each method on one model.
    Evaluate(EvaluateArgs),
    /// Error against coupling strength, as CSV.
    SweepStrength(SweepStrengthArgs),
    /// Error against Gibbs sweeps, as CSV.
    SweepTime(SweepTimeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TopologyKind {
    Grid,
    Random,
    Potts,
}

#[derive(Debug, Args)]
struct TopologyArgs {
    #[arg(long, value_enum, default_value_t = TopologyKind::Grid)]
    topology: TopologyKind,
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Variables of a random graph.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
    /// States per Potts variable.
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Unary strength d_n.
    #[arg(long, default_value_t = 1.0)]
    field: f64,
    /// `mixed` or `attractive`.
    #[arg(long, default_value = "mixed")]
    interaction: Interaction,
}

impl TopologyArgs {
    fn topology(&self) -> Topology {
        match self.topology {
            TopologyKind::Grid => Topology::IsingGrid { rows: self.rows, cols: self.cols },
            TopologyKind::Random => Topology::RandomGraph { n: self.n, edge_prob: self.edge_prob },
            TopologyKind::Potts => Topology::PottsGrid { rows: self.rows, cols: self.cols, states: self.states },
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    /// Coupling strength d_e.
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    model: PathBuf,
    /// inf, one, quarter, sigmoid or exact.
    #[arg(long, default_value = "inf")]
    variant: BoundVariant,
    /// inf or spectral.
    #[arg(long, default_value = "inf")]
    norm: MatrixNorm,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct BallArgs {
    /// inf or spectral.
    #[arg(long, default_value = "inf")]
    norm: MatrixNorm,
    /// Ball radius.
    #[arg(long, default_value_t = 2.5)]
    c: f64,
    /// Smoothing weight on the anchor.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// dense or sparse; sparse is only valid for the inf ball. Defaults to
    /// sparse for inf and dense for spectral.
    #[arg(long)]
    representation: Option<ProjectionMode>,
}

impl BallArgs {
    fn ball(&self) -> Result<NormBall> {
        Ok(NormBall::new(self.norm, self.c)?)
    }

    fn mode(&self) -> ProjectionMode {
        self.representation.unwrap_or(match self.norm {
            MatrixNorm::Inf => ProjectionMode::Sparse,
            MatrixNorm::Spectral => ProjectionMode::Dense,
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolveMode {
    Smoothed,
    Exact,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    ball: BallArgs,
    #[arg(long, value_enum, default_value_t = SolveMode::Exact)]
    mode: SolveMode,
}

#[derive(Debug, Args)]
struct ProjectDivArgs {
    #[arg(long)]
    model: PathBuf,
    /// piecewise, reversed or reversed_exact.
    #[arg(long, default_value = "reversed")]
    divergence: DivergenceKind,
    #[command(flatten)]
    ball: BallArgs,
    #[arg(long, default_value_t = 60)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    pool: usize,
    #[arg(long, default_value_t = 50)]
    pool_burn_in: u64,
    /// Grid shape ROWSxCOLS for chain subgraphs; spanning trees otherwise.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    sweeps: u64,
    /// Discarded sweeps; 10% of `sweeps` by default.
    #[arg(long)]
    burn_in: Option<u64>,
    /// systematic or random.
    #[arg(long, default_value = "systematic")]
    scan: Scan,
}

#[derive(Debug, Args)]
struct SettingsArgs {
    /// Comma-separated method tags; all methods by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value_t = 30_000)]
    sweeps: u64,
    #[arg(long, default_value_t = 0.1)]
    burn_in_frac: f64,
    #[command(flatten)]
    ball: BallArgs,
    #[arg(long, default_value_t = 60)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    pool: usize,
    #[arg(long, default_value_t = 50)]
    pool_burn_in: u64,
    /// Sweeps of the reference chain for models too large to enumerate.
    #[arg(long, default_value_t = 10_000_000)]
    reference_sweeps: u64,
}

impl SettingsArgs {
    fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| Method::ALL.to_vec())
    }

    fn settings(&self) -> Result<EvaluationSettings> {
        if self.ball.representation.is_some_and(|r| r != self.ball.mode()) {
            bail!("experiments choose the representation from the norm");
        }
        Ok(EvaluationSettings {
            sweeps: self.sweeps,
            burn_in_frac: self.burn_in_frac,
            ball: self.ball.ball()?,
            alpha: self.ball.alpha,
            pgd_steps: self.steps,
            step_size: self.lambda,
            pool_size: self.pool,
            pool_burn_in: self.pool_burn_in,
            reference_sweeps: self.reference_sweeps,
            ..EvaluationSettings::default()
        })
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Grid shape ROWSxCOLS for piecewise chains; spanning trees otherwise.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Debug, Args)]
struct SweepStrengthArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    /// Comma-separated coupling strengths d_e.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,2.5,3,3.5,4")]
    strengths: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Debug, Args)]
struct SweepTimeArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long, default_value_t = 3.0)]
    coupling: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Last checkpoint of the original-parameter chain.
    #[arg(long, default_value_t = 1_000_000)]
    original_max: u64,
    /// Last checkpoint of projected chains.
    #[arg(long, default_value_t = 30_000)]
    projected_max: u64,
    #[command(flatten)]
    settings: SettingsArgs,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once('x').ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.tag() == s)
        .ok_or_else(|| format!("unknown method {s:?}; expected one of {}", tags().join(", ")))
}

fn tags() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.tag()).collect()
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn load(path: &Path) -> Result<PairwiseMrf> {
    PairwiseMrf::load(path).with_context(|| format!("loading {}", path.display()))
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BoundReport {
    variant: BoundVariant,
    norm: MatrixNorm,
    norm_value: f64,
    epsilon: f64,
    /// Single-site updates; null when the norm is at least one.
    tau: Option<f64>,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ProjectReport {
    model: ModelFile,
    z: Vec<Vec<f64>>,
    duality_gap: f64,
    dual_value: f64,
    primal_value: f64,
    max_violation: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct EvaluateRow {
    method: Method,
    error: Option<f64>,
    seconds: Option<f64>,
    exact_truth: bool,
    failure: Option<String>,
}

fn bound(args: &BoundArgs, out: Option<&Path>) -> Result<()> {
    let m = load(&args.model)?;
    let r = bound_matrix(&m, args.variant)?;
    let budget = mixing_time_bound(&r.matrix, args.norm, args.epsilon)?;
    write_json(
        out,
        &BoundReport {
            variant: args.variant,
            norm: args.norm,
            norm_value: budget.norm_value,
            epsilon: args.epsilon,
            tau: budget.tau,
            matrix: rows(&r.matrix),
        },
    )
}

fn project(args: &ProjectArgs, out: Option<&Path>) -> Result<()> {
    let m = load(&args.model)?;
    let ball = args.ball.ball()?;
    let res = match args.mode {
        SolveMode::Smoothed => {
            let problem = ProjectionProblem::anchored_at_bound(m, args.ball.alpha, ball, args.ball.mode())?;
            project_smoothed(&problem, &SolverOptions::default(), None)?
        }
        SolveMode::Exact => project_exact(&m, ball, args.ball.alpha, args.ball.mode(), None, &ExactOptions::default())?,
    };
    if !res.converged {
        eprintln!("warning: projection stopped before reaching its tolerance");
    }
    write_json(
        out,
        &ProjectReport {
            model: res.theta.to_file(),
            z: rows(&res.z),
            duality_gap: res.duality_gap,
            dual_value: res.dual_value,
            primal_value: res.primal_value,
            max_violation: res.max_violation,
            iterations: res.iterations,
            converged: res.converged,
        },
    )
}

fn project_div(args: &ProjectDivArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let m = load(&args.model)?;
    let family = match (args.divergence, args.grid) {
        (DivergenceKind::PiecewiseKl, Some((r, c))) => Some(make_grid_chains(&m, r, c)?),
        (DivergenceKind::PiecewiseKl, None) => Some(make_spanning_trees(&m, seed)?),
        _ => None,
    };
    let config = PgdConfig {
        step_size: args.lambda,
        iterations: args.steps,
        divergence: args.divergence,
        pool_size: args.pool,
        pool_burn_in: args.pool_burn_in,
        ball: args.ball.ball()?,
        alpha: args.ball.alpha,
        mode: args.ball.mode(),
        seed,
    };
    let res = pgd_project(&m, &config, family.as_ref())?;
    if let Some(Some(v)) = res.values.last() {
        eprintln!("divergence before the last step: {v:.6}");
    }
    eprintln!("max constraint violation: {:.3e}", res.max_violation);
    if !res.projections_converged {
        eprintln!("warning: some projections stopped before reaching their tolerance");
    }
    write_json(out, &res.theta.to_file())
}

fn sample(args: &SampleArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let m = load(&args.model)?;
    let burn_in = args.burn_in.unwrap_or(args.sweeps / 10);
    let mut chain = GibbsChain::new(&m, args.scan, seed, 0);
    write_json(out, &estimate_marginals(&mut chain, &m, args.sweeps, burn_in)?)
}

fn evaluate(args: &EvaluateArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let m = load(&args.model)?;
    let settings = args.settings.settings()?;
    let truth = compute_truth(&m, &settings, seed)?;
    let mut w = csv::Writer::from_writer(open_out(out)?);
    for method in args.settings.methods() {
        let row = match evaluate_method(&m, &truth, method, args.grid, &settings, seed) {
            Ok(o) => EvaluateRow {
                method,
                error: Some(o.error),
                seconds: Some(o.seconds),
                exact_truth: truth.exact,
                failure: None,
            },
            Err(e) => EvaluateRow { method, error: None, seconds: None, exact_truth: truth.exact, failure: Some(e.to_string()) },
        };
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn spec(topology: &TopologyArgs, trials: usize, seed: u64, settings: &SettingsArgs) -> SweepSpec {
    SweepSpec {
        topology: topology.topology(),
        field: topology.field,
        interaction: topology.interaction,
        trials,
        master_seed: seed,
        methods: settings.methods(),
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Gen(a) => {
            let m = a.topology.topology().generate(a.topology.field, a.coupling, a.topology.interaction, cli.seed)?;
            write_json(out, &m.to_file())
        }
        Command::Bound(a) => bound(a, out),
        Command::Project(a) => project(a, out),
        Command::ProjectDiv(a) => project_div(a, cli.seed, out),
        Command::Sample(a) => sample(a, cli.seed, out),
        Command::Evaluate(a) => evaluate(a, cli.seed, out),
        Command::SweepStrength(a) => {
            let records =
                run_strength_sweep(&spec(&a.topology, a.trials, cli.seed, &a.settings), &a.strengths, &a.settings.settings()?)?;
            write_csv(&records, open_out(out)?)?;
            Ok(())
        }
        Command::SweepTime(a) => {
            let records = run_time_sweep(
                &spec(&a.topology, a.trials, cli.seed, &a.settings),
                a.coupling,
                a.original_max,
                a.projected_max,
                &a.settings.settings()?,
            )?;
            write_csv(&records, open_out(out)?)?;
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
