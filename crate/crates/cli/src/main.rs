//! `jointdiag` command-line front end.

mod bench;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointdiag::cost::HessianKind;
use jointdiag::vjd::EpsPolicy;
use serde::Serialize;

use crate::output::{Format, Run};

#[derive(Parser, Serialize)]
#[command(name = "jointdiag", version, about = "Joint diagonalization of almost commuting symmetric matrices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct Common {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "jointdiag-out")]
    out_dir: PathBuf,
    /// Format for tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t)]
    format: Format,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a perturbed commuting tuple.
    Gen(GenArgs),
    /// Jointly diagonalize matrices read from CSV files.
    Diag(DiagArgs),
    /// Timing and accuracy sweep over random pairs.
    Bench(BenchArgs),
    /// Independent component analysis through cumulant diagonalization.
    Ica(IcaArgs),
    /// Check the commutator lower bound for a pair.
    CheckBound(CheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Diag(_) => "diag",
            Command::Bench(_) => "bench",
            Command::Ica(_) => "ica",
            Command::CheckBound(_) => "check-bound",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    #[default]
    Vjd,
    Jacobi,
}

#[derive(Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    /// Number of matrices.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub sigma: f64,
    /// Pick the perturbation size to hit this commutator norm instead.
    #[arg(long, conflicts_with = "sigma")]
    pub target_comm: Option<f64>,
    /// Keep the raw scale instead of normalizing to operator norm 1.
    #[arg(long)]
    pub no_normalize: bool,
    /// Also write the unperturbed tuple.
    #[arg(long)]
    pub commuting: bool,
}

#[derive(Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t)]
    pub method: MethodArg,
    /// Gradient tolerance of the sphere solver.
    #[arg(long, default_value_t = 1e-10)]
    pub eps_stop: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value = "H1", value_parser = parse_hessian)]
    pub hessian: HessianKind,
    /// Constraint relaxation for later columns: `auto` or a number.
    #[arg(long, default_value = "auto", value_parser = parse_relax)]
    pub relax: EpsPolicy,
    /// Recompute the eigenvalues after orthogonalizing.
    #[arg(long)]
    pub post_procrustes: bool,
    /// Jacobi stopping tolerance on the relative off-diagonal mass.
    #[arg(long, default_value_t = 1e-10)]
    pub eps: f64,
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
}

#[derive(Args, Serialize)]
pub struct DiagArgs {
    /// Symmetric matrices in matrix CSV format.
    #[arg(required = true)]
    pub matrices: Vec<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Emit the per-iteration or per-sweep history.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-4])]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [MethodArg::Vjd, MethodArg::Jacobi])]
    pub methods: Vec<MethodArg>,
    /// Gradient tolerance of the sphere solver.
    #[arg(long, default_value_t = 1e-10)]
    pub eps_stop: f64,
    /// Jacobi stopping tolerance. `J` cannot drop much below it, so sweeps
    /// over tiny commutators need a smaller value.
    #[arg(long, default_value_t = 1e-10)]
    pub jacobi_eps: f64,
}

#[derive(Args, Serialize)]
pub struct IcaArgs {
    /// Observed signals, one channel per row.
    #[arg(long, required_unless_present = "demo", conflicts_with = "demo")]
    pub input: Option<PathBuf>,
    /// Use the built-in three-source benchmark.
    #[arg(long)]
    pub demo: bool,
    /// Number of sources to extract (defaults to the channel count).
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub backend: MethodArg,
    /// Demo length in samples.
    #[arg(long, default_value_t = 10_000)]
    pub t: usize,
    /// Demo signal-to-noise ratio in dB.
    #[arg(long, default_value_t = 30.0)]
    pub snr: f64,
}

#[derive(Args, Serialize)]
pub struct CheckArgs {
    /// The pair, in matrix CSV format.
    #[arg(num_args = 2, required = true)]
    pub matrices: Vec<PathBuf>,
    /// Directory holding `U.csv` and `diag.json` from an earlier `diag` run.
    /// Without it the pair is diagonalized first.
    #[arg(long)]
    pub result_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn parse_hessian(s: &str) -> Result<HessianKind, String> {
    s.parse().map_err(|e: jointdiag::Error| e.to_string())
}

fn parse_relax(s: &str) -> Result<EpsPolicy, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(EpsPolicy::default());
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 => Ok(EpsPolicy::Fixed(e)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = serde_json::to_value(&cli).unwrap_or(serde_json::Value::Null);
    let mut run = match Run::new(&cli.common.out_dir, cli.common.format) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let seed = cli.common.seed;
    let outcome = match &cli.command {
        Command::Gen(a) => commands::gen(&mut run, a, seed),
        Command::Diag(a) => commands::diag(&mut run, a, seed),
        Command::Bench(a) => bench::bench(&mut run, a, seed),
        Command::Ica(a) => commands::ica(&mut run, a, seed),
        Command::CheckBound(a) => commands::check_bound(&mut run, a, seed),
    };
    if let Err(e) = run.finish(cli.command.name(), &config, seed, &outcome) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed; see {}", cli.common.out_dir.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
