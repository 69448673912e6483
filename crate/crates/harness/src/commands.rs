//! Subcommand implementations behind the CLI.

use std::path::{Path, PathBuf};

use fspnet_core::build_schedule;
use fspnet_metrics::io::write_score_map;
use fspnet_metrics::MetricReport;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::{gen_synthetic, load_dataset, load_images, save_dataset};
use crate::error::{config, Result};
use crate::predict::{evaluate_saved, Predictor};
use crate::train::{train, write_trace, TrainRun};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const CONFIG_SNAPSHOT: &str = "config.txt";

/// Writes `count` synthetic samples of `size × size` under `out`.
pub fn gen(count: usize, size: usize, seed: u64, patch_size: usize, out: &Path) -> Result<()> {
    let samples = gen_synthetic(count, size, size, seed, patch_size)?;
    save_dataset(out, &samples)
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Trains on `data` and writes the final checkpoint, periodic
/// checkpoints, the loss trace and a config snapshot under `out`.
pub fn train_dir(config_path: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainRun> {
    let cfg = ModelConfig::load(config_path)?;
    let samples = load_dataset(data)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    let run = train(&cfg, &samples, resume.as_ref(), |ckpt| {
        ckpt.save(&out.join(epoch_checkpoint_name(ckpt.epoch)))
    })?;
    run.checkpoint.save(&out.join(FINAL_CHECKPOINT))?;
    write_trace(&out.join(LOSS_TRACE), &run.trace)?;
    Ok(run)
}

/// Writes `NAME.png` per input image, plus `NAME_p0.png`..`NAME_p2.png`
/// for the shallower laterals when asked.
pub fn predict_dir(ckpt: &Path, images: &Path, out: &Path, dump_laterals: bool) -> Result<()> {
    let predictor = Predictor::new(&Checkpoint::load(ckpt)?)?;
    let inputs = load_images(images)?;
    let refs: Vec<_> = inputs.iter().map(|(_, im)| im).collect();
    let preds = predictor.predict_all(&refs)?;
    std::fs::create_dir_all(out)?;
    for ((name, _), maps) in inputs.iter().zip(&preds) {
        let last = maps.len() - 1;
        write_score_map(&out.join(format!("{name}.png")), &maps[last])?;
        if dump_laterals {
            for (i, m) in maps[..last].iter().enumerate() {
                write_score_map(&out.join(format!("{name}_p{i}.png")), m)?;
            }
        }
    }
    Ok(())
}

/// Scores the checkpoint on `data` (or saved predictions from `preds`)
/// and writes the report; JSON for a `.json` path, CSV otherwise.
pub fn eval_dir(ckpt: &Path, data: &Path, report: &Path, preds: Option<&Path>) -> Result<MetricReport> {
    let samples = load_dataset(data)?;
    let result = match preds {
        Some(dir) => evaluate_saved(dir, &samples)?,
        None => Predictor::new(&Checkpoint::load(ckpt)?)?.evaluate(&samples)?,
    };
    result.save(report)?;
    Ok(result)
}

/// The decoder wiring table for the token grid of `config` (desk-scale
/// defaults without one).
pub fn schedule_dump(config_path: Option<&PathBuf>) -> Result<String> {
    let cfg = match config_path {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    let grid = cfg.encoder.grid();
    let schedule = build_schedule(cfg.encoder.num_layers).map_err(|e| config(e.to_string()))?;
    Ok(schedule.dump(Some(grid)))
}

/// Bounds the parallel fan-out by `FSPNET_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FSPNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config(format!("FSPNET_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool configured earlier in this process stays in force.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
