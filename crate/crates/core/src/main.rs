use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcdnn::cascade::CascadeModels;
use hcdnn::cli::{cmd_evaluate, cmd_phantom, cmd_predict, cmd_train, PhantomConfig, TrainArgs};
use hcdnn::train::Stage;

#[derive(Parser)]
#[command(version, about = "Cascaded liver and tumor segmentation on CT volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom cases.
    Phantom {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
        size: Option<Vec<usize>>,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
        spacing: Option<Vec<f64>>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Train one stage ensemble.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the three-stage cascade on one volume.
    Predict {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        stage3: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn run(command: Command) -> hcdnn::Result<()> {
    match command {
        Command::Phantom { count, seed, out, size, spacing, noise_sigma } => {
            let mut config = PhantomConfig { count, seed, ..Default::default() };
            if let Some(s) = size {
                config.size = [s[0], s[1], s[2]];
            }
            if let Some(s) = spacing {
                config.spacing = [s[0], s[1], s[2]];
            }
            if let Some(n) = noise_sigma {
                config.noise_sigma = n;
            }
            let ids = cmd_phantom(&config, &out)?;
            println!("wrote {} cases to {}", ids.len(), out.display());
        }
        Command::Train { stage, data, config, out, epochs, seed } => {
            let manifest = cmd_train(&TrainArgs { stage, data, config, out: out.clone(), epochs, seed })?;
            println!("wrote {} members to {}", manifest.members.len(), out.display());
        }
        Command::Predict { stage1, stage2, stage3, input, output } => {
            let models = CascadeModels::load(stage1, stage2, stage3)?;
            let result = cmd_predict(&models, &input, &output)?;
            println!("{}: {}, burden {:.4}", output.display(), result.status, result.tumor_burden);
        }
        Command::Evaluate { pred, gt, report } => {
            let rows = cmd_evaluate(pred, gt, &report)?;
            println!("evaluated {} cases into {}", rows.len(), report.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
