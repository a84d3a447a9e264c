use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifo_bench::report::{self, Format};
use ifo_bench::{aggregate, run_grid, verify, Algorithm, BenchError, ExperimentConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_ACCEPTANCE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "bench", version, about = "Random-MDP benchmark for offline imitation from observation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark grid and write one record per (beta, n_e, n_i, algorithm, seed).
    Run(RunArgs),
    /// Summarize raw records into mean and standard error per cell.
    Aggregate {
        #[arg(long = "in", value_name = "RAW_CSV")]
        input: PathBuf,
        #[arg(long, value_name = "SUMMARY")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run the acceptance suite; exits with status 2 if any criterion fails.
    Verify {
        /// Only run the criteria listed (by number), e.g. `--only 1,4`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML manifest; flags below override its fields.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Transition stochasticity levels in (0, 1], comma separated.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    /// Expert dataset sizes.
    #[arg(long, value_delimiter = ',')]
    n_expert: Vec<usize>,
    /// Imperfect dataset sizes.
    #[arg(long, value_delimiter = ',')]
    n_imperfect: Vec<usize>,
    /// Seeds per cell.
    #[arg(long)]
    n_seeds: Option<u64>,
    /// Algorithms to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    /// Root of every random stream.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Defaults to standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Also write the aggregated summary here (CSV).
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    threads: Option<usize>,
}

fn apply_overrides(mut config: ExperimentConfig, args: &RunArgs) -> Result<ExperimentConfig, BenchError> {
    if !args.beta.is_empty() {
        config.betas = args.beta.clone();
    }
    if !args.n_expert.is_empty() {
        config.n_expert = args.n_expert.clone();
    }
    if !args.n_imperfect.is_empty() {
        config.n_imperfect = args.n_imperfect.clone();
    }
    if !args.algorithms.is_empty() {
        config.algorithms = args.algorithms.clone();
    }
    config.n_seeds = args.n_seeds.unwrap_or(config.n_seeds);
    config.master_seed = args.master_seed.unwrap_or(config.master_seed);
    config.threads = args.threads.unwrap_or(config.threads);
    config.validate()?;
    Ok(config)
}

fn write_out(out: Option<&PathBuf>, f: impl FnOnce(&mut dyn std::io::Write) -> Result<(), BenchError>) -> Result<(), BenchError> {
    match out {
        Some(path) => report::write_file(path, f),
        None => f(&mut std::io::stdout().lock()),
    }
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let config = apply_overrides(ExperimentConfig::load(&args.config)?, &args)?;
    let output = run_grid(&config)?;
    for f in &output.failures {
        eprintln!("warning: beta={} seed={} failed: {}", f.beta, f.seed, f.error);
    }
    write_out(args.out.as_ref(), |w| report::write_records(w, &output.records, args.format))?;
    if let Some(path) = &args.summary {
        report::write_file(path, |w| report::write_summary(w, &aggregate(&output.records), Format::Csv))?;
    }
    Ok(())
}

fn exit_code(e: &BenchError) -> u8 {
    match e {
        BenchError::Config(_) => EXIT_USAGE,
        BenchError::Core(ifo_core::Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Aggregate { input, out, format } => report::open_file(&input)
            .and_then(report::read_records)
            .and_then(|records| write_out(out.as_ref(), |w| report::write_summary(w, &aggregate(&records), format))),
        Command::Verify { only } => {
            let outcomes = verify::run_selected(&only, &mut std::io::stdout());
            return if outcomes.iter().all(|o| o.passed) { ExitCode::SUCCESS } else { ExitCode::from(EXIT_ACCEPTANCE) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
