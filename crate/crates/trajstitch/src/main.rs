use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use trajstitch::commands::{self, SweepParam};
use trajstitch::config::RunConfig;

/// Trajectory stitching for offline RL datasets: generate the point-maze
/// benchmark, train the diffusion and dynamics models, stitch low-return
/// trajectories to high-return ones, and evaluate a percentile
/// behavior-cloning learner on the augmented data.
#[derive(Debug, Parser)]
#[command(name = "trajstitch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed override.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Config overrides, e.g. --set delta_threshold=4.0 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the scenario dataset and its stats sidecar.
    GenData,
    /// Train the denoiser and the three auxiliary models.
    Train,
    /// Run the augmentation loop and write d_aug.jsonl + stitch_stats.json.
    Stitch,
    /// Train and evaluate percentile BC on raw and augmented data.
    Eval,
    /// Sweep the qualification threshold or the data ratio.
    Sweep {
        #[arg(long, value_enum)]
        param: Param,
    },
    /// gen-data, train, stitch, and eval in sequence.
    RunAll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Param {
    Delta,
    Ratio,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Bad flags and unknown subcommands are configuration errors.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let config = match RunConfig::resolve(
        cli.config.as_deref(),
        cli.seed,
        cli.out.as_deref(),
        &cli.set,
    ) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::GenData => commands::cmd_gen_data(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Stitch => commands::cmd_stitch(&config),
        Command::Eval => commands::cmd_eval(&config),
        Command::Sweep { param } => commands::cmd_sweep(
            &config,
            match param {
                Param::Delta => SweepParam::Delta,
                Param::Ratio => SweepParam::Ratio,
            },
        ),
        Command::RunAll => commands::cmd_run_all(&config),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
