use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use owm::error::Error;
use owm::harness::check::{print_report, run_checks, CheckOptions};
use owm::harness::{aggregate, run_experiment, write_report, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "owm", version, about = "Tabular optimistic world-model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured range.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured agent on every seed.
    Run(RunArgs),
    /// Train every variant of the `[sweep]` table on every seed.
    Sweep(RunArgs),
    /// Aggregate a finished run directory and write tidy CSVs to `<dir>/report`.
    Report {
        /// Run directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the verification suite.
    Check {
        /// Seed for the randomized instances.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("owm: {e}");
    match e {
        Error::Config { .. } | Error::Usage(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(args: &RunArgs, sweep: bool) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let opts = RunOptions {
        out: args.out.clone(),
        seed: args.seed,
        parallel: args.parallel,
        sweep,
    };
    let manifest = run_experiment(&cfg, &opts)?;
    let root = opts.out.or(cfg.output_dir).unwrap_or_default();
    for v in &manifest.variants {
        for f in &v.files {
            println!("{}", root.join(f).display());
        }
    }
    println!("{}", root.join(owm::harness::experiment::MANIFEST_FILE).display());
    Ok(())
}

fn report(out: Option<PathBuf>, config: Option<PathBuf>) -> Result<(), Error> {
    let dir = match (out, config) {
        (Some(d), _) => d,
        (None, Some(c)) => ExperimentConfig::load(&c)?
            .output_dir
            .ok_or_else(|| Error::Config {
                field: "output_dir".into(),
                message: "not set; pass --out".into(),
            })?,
        (None, None) => {
            return Err(Error::Config {
                field: "--out".into(),
                message: "report needs a run directory".into(),
            })
        }
    };
    let rep = aggregate(&dir)?;
    write_report(&rep, &dir.join("report"))?;
    println!("{:<40} {:>6} {:>12} {:>12} {:>12} {:>12}", "variant", "seeds", "mean", "iqm", "median", "sem");
    for v in &rep.variants {
        let sem = if v.sem_defined { format!("{:.4}", v.sem) } else { "n/a".to_string() };
        println!("{:<40} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12}", v.name, v.seeds.len(), v.mean, v.iqm, v.median, sem);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(&a, false),
        Command::Sweep(a) => run(&a, true),
        Command::Report { out, config } => report(out, config),
        Command::Check { seed } => {
            let results = run_checks(&CheckOptions {
                seed,
                ..CheckOptions::default()
            });
            return match print_report(&results, std::io::stdout().lock()) {
                Ok(true) => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
