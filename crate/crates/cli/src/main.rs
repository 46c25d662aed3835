mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdlina::synth::NoiseDist;
use mdlina::{Hyperparams, PenaltyMode};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "mdlina", version, about = "Causal structure among latent factors from single- and multi-domain data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic datasets with their ground truth.
    Simulate(SimulateArgs),
    /// Find clusters of pure indicators with triad tests.
    Locate(LocateArgs),
    /// Fit measurement and structure models.
    Fit(FitArgs),
    /// Fit shared structure across domains.
    FitMd(FitArgs),
    /// Score fitted models against ground truth.
    Evaluate(EvaluateArgs),
    /// Cross-validate λ1 and ε on a grid.
    Cv(CvArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    q: usize,
    /// Pure indicators per factor.
    #[arg(long, default_value_t = 2)]
    indicators: usize,
    /// Samples per domain.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, value_enum, default_value_t = NoiseArg::Laplace)]
    noise: NoiseArg,
    /// Share of each indicator's variance due to measurement error.
    #[arg(long, default_value_t = 0.1)]
    noise_ratio: f64,
    /// Expected number of edges [default: q].
    #[arg(long)]
    edges: Option<f64>,
    /// Number of domains.
    #[arg(long, default_value_t = 1)]
    domains: usize,
    /// All domains share one graph support.
    #[arg(long)]
    shared: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial `t` uses seed `seed + t` and its own directory.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum NoiseArg {
    Laplace,
    Subgaussian,
    Supergaussian,
}

impl From<NoiseArg> for NoiseDist {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Laplace => NoiseDist::Laplace,
            NoiseArg::Subgaussian => NoiseDist::SubGaussian,
            NoiseArg::Supergaussian => NoiseDist::SuperGaussian,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// One domain as CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Manifest listing one CSV per domain.
    #[arg(long, visible_alias = "domains")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TestArgs {
    /// Significance level of the independence tests.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct LocateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    test: TestArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct ClusterArgs {
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Find clusters from the data.
    #[arg(long)]
    locate: bool,
}

#[derive(Args, Debug, Clone)]
struct HpArgs {
    /// TOML file of hyperparameters; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// Pruning threshold on effects.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    penalty: Option<PenaltyArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PenaltyArg {
    Qpm,
    Alm,
}

impl HpArgs {
    fn resolve(&self) -> Result<Hyperparams, CliError> {
        let mut hp: Hyperparams = match &self.config {
            Some(p) => mdlina::io::read_toml(p)?,
            None => Hyperparams::default(),
        };
        if let Some(v) = self.lambda1 {
            hp.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            hp.lambda2 = v;
        }
        if let Some(v) = self.lambda3 {
            hp.lambda3 = v;
        }
        if let Some(v) = self.eps {
            hp.threshold_eps = v;
        }
        if let Some(p) = self.penalty {
            hp.penalty_mode = match p {
                PenaltyArg::Qpm => PenaltyMode::Qpm,
                PenaltyArg::Alm => PenaltyMode::Alm,
            };
        }
        if let Some(s) = self.seed {
            hp.seed = s;
        }
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    clusters: ClusterArgs,
    #[command(flatten)]
    test: TestArgs,
    /// Number of shared factors of interest [default: largest domain].
    #[arg(long)]
    q_tilde: Option<usize>,
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Output directory of `fit` or `fit-md`.
    #[arg(long, requires = "truth", conflicts_with = "batch")]
    model: Option<PathBuf>,
    /// Ground-truth directory written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Data for the VIF table.
    #[arg(long, conflicts_with = "batch")]
    data: Option<PathBuf>,
    #[arg(long, visible_alias = "domains", conflicts_with = "batch")]
    manifest: Option<PathBuf>,
    /// Fit and score every trial written by `simulate --trials`.
    #[arg(long, required_unless_present = "model")]
    batch: Option<PathBuf>,
    /// Locate clusters instead of using the true ones (batch mode).
    #[arg(long)]
    locate: bool,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long)]
    q_tilde: Option<usize>,
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    clusters: PathBuf,
    /// Comma-separated λ1 values.
    #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_LAMBDA1_GRID)]
    grid_lambda1: Vec<f64>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_EPS_GRID)]
    grid_eps: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    hp: HpArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug)]
pub enum CliError {
    Lib(mdlina::Error),
    Usage(String),
    /// Outputs were written but the fit raised a numerical flag.
    Flagged(String),
}

impl From<mdlina::Error> for CliError {
    fn from(e: mdlina::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mdlina::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Flagged(_) => 1,
            CliError::Lib(E::Io { .. } | E::Parse { .. }) => 3,
            CliError::Lib(E::InvalidInput(_) | E::DimensionMismatch(_)) => 2,
            CliError::Lib(_) => 1,
        }
    }

    fn kind(&self) -> String {
        match self {
            CliError::Usage(_) => "usage".into(),
            CliError::Flagged(_) => "flagged".into(),
            CliError::Lib(e) => {
                let dbg = format!("{e:?}");
                let end = dbg.find([' ', '(', '{']).unwrap_or(dbg.len());
                dbg[..end].to_string()
            }
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Usage(m) | CliError::Flagged(m) => m.clone(),
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    error: String,
    message: String,
    exit_code: u8,
}

fn report(err: &CliError) -> ExitCode {
    let code = err.exit_code();
    let record = ErrorRecord {
        error: err.kind(),
        message: err.message(),
        exit_code: code,
    };
    eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
    ExitCode::from(code)
}

fn init_pool(run: &RunArgs) -> Result<(), CliError> {
    if let Some(j) = run.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            init_pool(&a.run)?;
            commands::simulate(&a)
        }
        Command::Locate(a) => {
            init_pool(&a.run)?;
            commands::locate(&a)
        }
        Command::Fit(a) => {
            init_pool(&a.run)?;
            commands::fit(&a, false)
        }
        Command::FitMd(a) => {
            init_pool(&a.run)?;
            commands::fit(&a, true)
        }
        Command::Evaluate(a) => {
            init_pool(&a.run)?;
            commands::evaluate(&a)
        }
        Command::Cv(a) => {
            init_pool(&a.run)?;
            commands::cv(&a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return report(&CliError::Usage(e.kind().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
