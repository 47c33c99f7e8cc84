use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ortho_hydra::commands;
use ortho_hydra::verify::Group;

#[derive(Parser)]
#[command(name = "ortho-hydra", version, about = "Cold-start experiments for orthogonal MoE-LoRA adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Small,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "ORTHO_HYDRA_OUT", default_value = "runs")]
        out: PathBuf,
        /// Override a config field, e.g. `--set balance.weight=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train naive, jittered and ortho on a shared data stream.
    Coldstart {
        #[arg(long, env = "ORTHO_HYDRA_OUT", default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "toy")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check the numerical invariants.
    Verify {
        #[arg(long, value_enum)]
        group: Option<Group>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, overrides } => commands::cmd_run(&config, &out, &overrides).map(|_| 0),
        Command::Coldstart {
            out,
            preset,
            seed,
            overrides,
        } => {
            let name = match preset {
                Preset::Toy => "toy",
                Preset::Small => "small",
            };
            commands::cmd_coldstart(&out, name, seed, &overrides).map(|_| 0)
        }
        Command::Verify { group, seed, trials } => commands::cmd_verify(group, seed, trials),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
