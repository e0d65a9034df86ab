use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safescout_cli::commands::{self, SimulateArgs};
use safescout_cli::config::SEED_ENV;
use safescout_cli::CliError;

#[derive(Parser)]
#[command(
    name = "safescout",
    version,
    about = "Active safe-region learning simulator"
)]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true, env = SEED_ENV)]
    seed: Option<u64>,
    /// Worker threads for replications and policy enumeration.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path: a directory for `simulate`, a file otherwise (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the learner and classifier over seeded replications.
    Simulate {
        /// Experiment config; the bundled nine-cell preset when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Classify cells from a `cell,c,p` CSV.
    Classify { input: PathBuf },
    /// Emit `-I(eps, p)` on a grid as CSV.
    RateCurve {
        /// Repeat or comma-separate; defaults to 0.25, 0.5, 0.75.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 99)]
        points: usize,
    },
    /// Joint and reduced chains of a stationary policy, their stationary laws
    /// and the lift check.
    Stationary { policy: PathBuf, p: PathBuf },
    /// Compare the greedy learner with the best stationary policy at a toy horizon.
    DpCompare {
        /// TOML with `horizon`, `p`, optional `runs`, `seed`, `initial`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Monte Carlo runs of the greedy learner.
        #[arg(long)]
        replications: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<(String, usize), CliError> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate {
            config,
            replications,
        } => commands::simulate(&SimulateArgs {
            config,
            seed: cli.seed,
            replications,
            out: cli.out.clone(),
        }),
        Command::Classify { input } => commands::classify_cmd(&input, out).map(|s| (s, 0)),
        Command::RateCurve { eps, points } => {
            commands::rate_curve_cmd(&eps, points, out).map(|s| (s, 0))
        }
        Command::Stationary { policy, p } => {
            commands::stationary_cmd(&policy, &p, out).map(|s| (s, 0))
        }
        Command::DpCompare {
            config,
            replications,
        } => {
            commands::dp_compare_cmd(config.as_deref(), cli.seed, replications, out).map(|s| (s, 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(CliError::Invalid("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Invalid(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(cli))),
        None => dispatch(cli),
    };
    match result {
        Ok((stdout, 0)) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Ok((stdout, caps)) => {
            print!("{stdout}");
            let e = CliError::IterationCap(caps);
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
