use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fspnet::commands;
use fspnet::data::DEFAULT_PATCH;
use fspnet::Result;

#[derive(Parser)]
#[command(
    name = "fspnet",
    version,
    about = "Train and evaluate the camouflaged-object segmentation network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic camouflage dataset.
    Gen {
        #[arg(long)]
        count: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// The size must be a multiple of this.
        #[arg(long, default_value_t = DEFAULT_PATCH)]
        patch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write probability maps for a directory of images.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the three shallower lateral predictions.
        #[arg(long)]
        dump_laterals: bool,
    },
    /// Score a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// CSV, or JSON with a .json extension.
        #[arg(long)]
        report: PathBuf,
        /// Score saved predictions from this directory instead.
        #[arg(long)]
        preds: Option<PathBuf>,
    },
    /// Print the decoder wiring.
    Schedule {
        #[arg(long)]
        dump: bool,
        /// Take the token grid from this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    commands::configure_threads()?;
    match cli.command {
        Command::Gen {
            count,
            size,
            seed,
            patch_size,
            out,
        } => commands::gen(count, size, seed, patch_size, &out),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => {
            let run = commands::train_dir(&config, &data, &out, resume.as_deref())?;
            if let Some(last) = run.trace.last() {
                println!("step {} epoch {} loss {:.6}", last.step, last.epoch, last.loss);
            }
            Ok(())
        }
        Command::Predict {
            ckpt,
            images,
            out,
            dump_laterals,
        } => commands::predict_dir(&ckpt, &images, &out, dump_laterals),
        Command::Eval {
            ckpt,
            data,
            report,
            preds,
        } => {
            let r = commands::eval_dir(&ckpt, &data, &report, preds.as_deref())?.aggregate;
            println!(
                "S {:.4}  wF {:.4}  F(a/m/x) {:.4}/{:.4}/{:.4}  E(a/m/x) {:.4}/{:.4}/{:.4}  MAE {:.4}",
                r.s_measure, r.weighted_f, r.f_adaptive, r.f_mean, r.f_max, r.e_adaptive, r.e_mean, r.e_max, r.mae
            );
            Ok(())
        }
        Command::Schedule { dump, config } => {
            let table = commands::schedule_dump(config.as_ref())?;
            if dump {
                print!("{table}");
            } else {
                print!("{}", table.lines().next().unwrap_or_default());
                println!();
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
