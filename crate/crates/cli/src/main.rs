use std::path::PathBuf;
use std::process::ExitCode;

use bpnet::training::{SslPlan, TrainPlan};
use bpnet::wavelet::DenoiseConfig;
use bpnet_cli::{
    cmd_bench, cmd_denoise, cmd_evaluate, cmd_infer, cmd_synth, cmd_train, exit_code, render_folds, render_triples,
    TrainArgs,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bpnet",
    version,
    about = "PPG to ABP translation, BP estimation and BHS/AAMI grading"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic paired PPG/ABP episodes.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wavelet-denoise the PPG channel.
    Denoise {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        levels: usize,
    },
    /// k-fold training; writes the best fold's weights.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Reconstruct-the-input pretraining, then frozen and scaled fine-tuning.
        #[arg(long)]
        ssl: bool,
        #[arg(long, default_value_t = 50)]
        pretrain_epochs: usize,
        #[arg(long, default_value_t = 25)]
        freeze_epochs: usize,
        /// Train folds concurrently.
        #[arg(long)]
        parallel: bool,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 16)]
        base_channels: usize,
    },
    /// Predict ABP for every episode.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// BHS and AAMI report.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Prefix for `.txt` and `.kv` report files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Inference latency.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
}

fn run(cli: Cli) -> bpnet::Result<()> {
    match cli.cmd {
        Cmd::Synth { n, seed, out } => {
            let set = cmd_synth(n, seed, &out)?;
            println!(
                "{} episodes, {} subjects -> {}",
                set.len(),
                set.subject_count(),
                out.display()
            );
        }
        Cmd::Denoise { data, out, levels } => {
            let cfg = DenoiseConfig {
                levels,
                ..DenoiseConfig::default()
            };
            let set = cmd_denoise(&data, &out, &cfg)?;
            println!("{} episodes denoised -> {}", set.len(), out.display());
        }
        Cmd::Train {
            data,
            out,
            seed,
            folds,
            epochs,
            batch,
            ssl,
            pretrain_epochs,
            freeze_epochs,
            parallel,
            depth,
            base_channels,
        } => {
            let plan = TrainPlan {
                epochs,
                batch_size: batch,
                folds,
                parallel_folds: parallel,
                ssl: SslPlan {
                    enabled: ssl,
                    pretrain_epochs,
                    freeze_epochs,
                    ..SslPlan::default()
                },
                ..TrainPlan::default()
            };
            let s = cmd_train(&TrainArgs {
                data,
                out: out.clone(),
                seed,
                depth,
                base_channels,
                plan,
            })?;
            print!("{}", render_folds(&s));
            println!(
                "best fold {} -> {}; log {}",
                s.best_fold,
                out.display(),
                s.log_path.display()
            );
        }
        Cmd::Infer { weights, data, out } => {
            let triples = cmd_infer(&weights, &data, &out)?;
            let set = bpnet::dataset::load_episodes(&out)?;
            print!("{}", render_triples(&set, &triples));
        }
        Cmd::Evaluate {
            weights,
            data,
            out,
            parallel,
        } => {
            let r = cmd_evaluate(&weights, &data, out.as_deref(), parallel)?;
            print!("{}", r.render_table());
        }
        Cmd::Bench { weights, data, reps } => {
            print!("{}", cmd_bench(&weights, &data, reps)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BPNET_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bpnet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
