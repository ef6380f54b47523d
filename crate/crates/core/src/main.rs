use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ofrr::experiment::{
    run_experiment_with_threads, write_results, ExperimentKind, ExperimentSpec, OutputFormat,
};

#[derive(Parser)]
#[command(
    name = "ofrr",
    version,
    about = "Mixed-precision Rayleigh-Ritz experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subspace iteration on Gaussian kernel matrices.
    KernelEig(RunArgs),
    /// Restarted Krylov iteration on Matrix Market files.
    SparseEig(RunArgs),
    /// Alternating subspace iteration for kernel singular values.
    KernelSvd(RunArgs),
    /// Condition numbers of bases across kernel length scales.
    CondStudy(RunArgs),
    /// Median wall-clock time of the basis builders.
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec seed and OFRR_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent and the spec names none.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json; guessed from the output extension otherwise.
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Worker threads (all cores by default).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> anyhow::Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if spec.experiment != kind {
        bail!(
            "{} describes a `{}` experiment, not `{}`",
            args.spec.display(),
            spec.experiment,
            kind
        );
    }
    spec.apply_env_seed()?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if args.threads == Some(0) {
        bail!("--threads must be positive");
    }
    let table = run_experiment_with_threads(&spec, args.threads)?;
    let out = args.out.or_else(|| spec.output.clone());
    let format = match (args.format, &out) {
        (Some(f), _) => f,
        (None, Some(p))
            if p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("json")) =>
        {
            OutputFormat::Json
        }
        _ => OutputFormat::Csv,
    };
    match out {
        Some(path) => {
            write_results(&table, format, &path)?;
            eprintln!("{} rows written to {}", table.len(), path.display());
        }
        None => {
            let text = match format {
                OutputFormat::Csv => table.to_csv()?,
                OutputFormat::Json => table.to_json()?,
            };
            std::io::stdout()
                .write_all(text.as_bytes())
                .context("writing to stdout")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::KernelEig(a) => (ExperimentKind::KernelEig, a),
        Command::SparseEig(a) => (ExperimentKind::SparseEig, a),
        Command::KernelSvd(a) => (ExperimentKind::KernelSvd, a),
        Command::CondStudy(a) => (ExperimentKind::CondStudy, a),
        Command::Bench(a) => (ExperimentKind::Bench, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
