use clap::{Parser, Subcommand};

use spikerl::cli;
use spikerl::error::Error;

#[derive(Parser)]
#[command(
    name = "spikerl",
    version,
    about = "Spiking-network TD3 training with data-parallel collectives, emulated mixed precision and energy reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy. Flags are dotted config overrides
    /// (e.g. --env pendulum --td3.gamma 0.98 --out run.json), plus
    /// --config <file> to start from a JSON config.
    Train {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
    /// Evaluate a saved actor checkpoint: --actor <file> [--episodes N]
    /// plus the usual config flags.
    Eval {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
    /// GPS-UP comparison of two run artifacts:
    /// --baseline a.json --candidate b.json [--out-csv q.csv] [--out-svg q.svg]
    Benchmark {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
    /// Carbon report for one artifact, or reductions against a baseline:
    /// --run b.json [--baseline a.json] [--factor 0.475] [--out report.json]
    Report {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
    /// Spawn one local training process per rank over TCP:
    /// --world N [--port-base P] plus train flags to forward.
    Launch {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
}

fn main() {
    let parsed = Cli::parse();
    let result = match &parsed.command {
        Command::Train { args } => cli::cmd_train(args),
        Command::Eval { args } => cli::cmd_eval(args),
        Command::Benchmark { args } => cli::cmd_benchmark(args),
        Command::Report { args } => cli::cmd_report(args),
        Command::Launch { args } => cli::cmd_launch(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}
