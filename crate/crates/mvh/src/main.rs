use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mvh::{load_config, pipeline, AppResult};
use mvh_core::harness::Stage;

/// Multi-view chest X-ray report generation on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "mvh", version)]
struct Cli {
    /// One of: gen-data, pretrain-encoder, finetune-concepts, train-decoder, evaluate, visualize.
    stage: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> AppResult<()> {
    let stage: Stage = cli.stage.parse()?;
    let mut cfg = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out_dir = Some(out);
    }
    pipeline::run(stage, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
