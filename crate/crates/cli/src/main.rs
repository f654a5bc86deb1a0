use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "pemfa", version, about = "Mixtures of common-loadings factor analyzers for incomplete rating data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one (G, q) model.
    Fit(FitArgs),
    /// Fit a grid of models and select one by BIC.
    Search(SearchArgs),
    /// Write a synthetic block-design table and its ground truth.
    Generate(GenerateArgs),
    /// Run EM and PEM from one shared initialization.
    Compare(CompareArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Em,
    Pem,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    /// 2*loglik - m*ln(n), larger is better
    Standard,
    /// m*ln(n) - 2*loglik, smaller is better
    Deviance,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Rating table: header of product names, first column consumer id, blank cells missing.
    #[arg(long, short)]
    input: PathBuf,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Reject values outside the 1 to 9 hedonic scale.
    #[arg(long)]
    scale_check: bool,
}

#[derive(Args, Debug, Clone)]
struct TuningArgs {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Coordinate sweeps per iteration (pem only).
    #[arg(long, default_value_t = 1)]
    sweeps_per_iter: usize,
    /// Noise variances are floored at this multiple of the pooled variance.
    #[arg(long, default_value_t = 1e-6)]
    psi_floor: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Pem)]
    algorithm: AlgorithmArg,
    /// Number of components.
    #[arg(long, short = 'G')]
    groups: usize,
    /// Number of latent factors.
    #[arg(long, short = 'q')]
    factors: usize,
    #[arg(long, env = "PEMFA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ConventionArg::Standard)]
    bic_convention: ConventionArg,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Pem)]
    algorithm: AlgorithmArg,
    /// Component counts, as a range (`1-6`) or a list (`1,3,5`).
    #[arg(long, short = 'G', default_value = "1-6", value_parser = parse_range)]
    groups: Grid,
    /// Factor counts, as a range or a list.
    #[arg(long, short = 'q', default_value = "1-3", value_parser = parse_range)]
    factors: Grid,
    #[arg(long, env = "PEMFA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ConventionArg::Standard)]
    bic_convention: ConventionArg,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, env = "PEMFA_SEED")]
    seed: u64,
    /// Ground truth as JSON; overrides the shape flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 369)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    p: usize,
    /// Products rated per consumer.
    #[arg(long, short = 'k', default_value_t = 6)]
    observed_per_row: usize,
    #[arg(long, short = 'G', default_value_t = 3)]
    groups: usize,
    #[arg(long, short = 'q', default_value_t = 2)]
    factors: usize,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, short = 'G')]
    groups: usize,
    #[arg(long, short = 'q')]
    factors: usize,
    #[arg(long, env = "PEMFA_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    sweeps_per_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    psi_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Grid(Vec<usize>);

fn parse_range(s: &str) -> Result<Grid, String> {
    let bad = || format!("expected a range like 1-6 or a list like 1,2,4, got {s:?}");
    let values: Vec<usize> = if let Some((a, b)) = s.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(Grid(values))
}

fn check_paths(input: &Path, out: &Path) -> Result<(), Failure> {
    if input == out {
        return Err(Failure::validation("input and output paths must differ"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Search(a) => commands::search(a),
        Command::Generate(a) => commands::generate(a),
        Command::Compare(a) => commands::compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pemfa: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
