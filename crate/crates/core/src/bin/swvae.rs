use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swvae::cli::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "swvae", version, about = "Switching-VAE speech enhancement on synthetic audio-visual data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test corpus and its manifest.
    Synth(Common),
    /// Train the audio-only and audio-visual speech models.
    TrainVae(Common),
    /// Enhance every test mixture with the trained models.
    Enhance(Common),
    /// Score the enhanced outputs and write the report.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root. Overrides SWVAE_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> swvae::Result<()> {
    let (Command::Synth(common) | Command::TrainVae(common) | Command::Enhance(common) | Command::Eval(common)) = &cli.command;
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        jobs: common.jobs,
    };
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth(_) => {
            let m = cli::cmd_synth(&cfg)?;
            println!("wrote {} utterances to {}", m.utterances.len(), cfg.data_dir().display());
        }
        Command::TrainVae(_) => {
            cli::cmd_train_vae(&cfg)?;
            println!("wrote models to {}", cfg.model_dir().display());
        }
        Command::Enhance(_) => {
            let runs = cli::cmd_enhance(&cfg)?;
            println!("enhanced {} mixtures into {}", runs.len(), cfg.enhanced_dir().display());
        }
        Command::Eval(_) => print!("{}", cli::cmd_eval(&cfg)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
