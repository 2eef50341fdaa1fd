use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pounet_cli::{
    emit_convergence_table, gen_data, run_theorem1, sweep, train, CliError, ExperimentKind, LoadedConfig, Plan,
    Profile, Result,
};

/// POUnet experiments: data generation, training, sweeps and reports.
#[derive(Parser)]
#[command(name = "pounet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training datasets of an experiment as CSV.
    GenData(RunArgs),
    /// Train a single model configuration.
    Train(RunArgs),
    /// Run every configuration and seed of an experiment.
    Sweep(RunArgs),
    /// Rebuild the convergence table from the reports under a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Frozen-partition error scaling against the number of partitions.
    Theorem1(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of runs in flight.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Paper)]
    profile: Profile,
}

impl RunArgs {
    fn load(&self, fallback: Option<ExperimentKind>) -> Result<(Plan, PathBuf)> {
        let loaded = match (&self.config, fallback) {
            (Some(path), _) => LoadedConfig::from_file(path)?,
            (None, Some(kind)) => LoadedConfig::defaults(kind),
            (None, None) => return Err(CliError::Config("--config is required".into())),
        };
        let plan = loaded.resolve(self.profile, self.seed)?;
        let out = self
            .out
            .clone()
            .or_else(|| loaded.out().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("runs").join(plan.kind.name()));
        Ok((plan, out))
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(args) => {
            let (plan, out) = args.load(None)?;
            for key in gen_data(&plan, &out)? {
                println!("{}", out.join("data").join(format!("{key}.csv")).display());
            }
        }
        Command::Train(args) => {
            let (plan, out) = args.load(None)?;
            let record = train(&plan, &out)?;
            println!(
                "rel_l2 {:e}  rms {:e}  -> {}",
                record.rel_l2.unwrap_or(f64::NAN),
                record.rms.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Sweep(args) => {
            let (plan, out) = args.load(None)?;
            let summary = sweep(&plan, &out, args.jobs)?;
            if plan.kind != ExperimentKind::Theorem1 {
                print!("{}", std::fs::read_to_string(out.join("aggregate.csv")).unwrap_or_default());
            }
            if summary.n_failed > 0 {
                eprintln!("{} of {} runs failed; see their report.json", summary.n_failed, summary.n_runs);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { out } => {
            let csv = emit_convergence_table(&out)?;
            std::fs::write(out.join("aggregate.csv"), &csv)
                .map_err(|e| CliError::Io { path: out.clone(), source: e })?;
            print!("{csv}");
        }
        Command::Theorem1(args) => {
            let (mut plan, out) = args.load(Some(ExperimentKind::Theorem1))?;
            plan.kind = ExperimentKind::Theorem1;
            println!("m,slope,expected_slope");
            for row in run_theorem1(&plan, &out)? {
                println!("{},{:.4},{}", row.m, row.slope, row.expected);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
