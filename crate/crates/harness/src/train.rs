//! Adam training of the weighted lateral loss with step decay.

use std::path::Path;

use fspnet_core::{Adam, Fspnet, Graph, Mode, ParamStore, SeededRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::{batch_images, batch_masks, flip_mask, Image, Sample};
use crate::error::{config, data, HarnessError, Result};

/// Stream of the parameter initialization.
pub const INIT_STREAM: u64 = 1;
/// Stream of shuffles and flips.
pub const DATA_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based optimizer step.
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub trace: Vec<LossRecord>,
}

/// Freshly initialized model, optimizer and data stream for `config`.
pub fn initialize(config: &ModelConfig) -> Result<(Fspnet, ParamStore<f64>, Adam<f64>, SeededRng)> {
    let mut store = ParamStore::new();
    let model = Fspnet::new(
        &config.model(),
        &mut store,
        &mut SeededRng::derive(config.seed, INIT_STREAM),
    )?;
    let adam = Adam::new(&store);
    Ok((model, store, adam, SeededRng::derive(config.seed, DATA_STREAM)))
}

fn check_data(config: &ModelConfig, samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(data("training set is empty"));
    }
    let want = (config.encoder.image_h, config.encoder.image_w);
    if let Some(s) = samples.iter().find(|s| (s.image.height, s.image.width) != want) {
        return Err(data(format!(
            "{} is {}x{}, config expects {}x{}",
            s.name, s.image.height, s.image.width, want.0, want.1
        )));
    }
    Ok(())
}

/// Runs epochs `resume.epoch..config.epochs` (from 0 without a resume
/// point), stopping early after `max_steps` steps. Each epoch visits the
/// samples in a fresh shuffled order, in batches of `batch_size`; with
/// `flip`, each sample is mirrored with probability 0.5. `on_checkpoint`
/// sees a checkpoint every `checkpoint_every` epochs.
pub fn train(
    config: &ModelConfig,
    samples: &[Sample],
    resume: Option<&Checkpoint>,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainRun> {
    config.validate()?;
    check_data(config, samples)?;
    let (model, mut store, mut adam, mut rng, mut epoch, mut step) = match resume {
        Some(ckpt) => {
            if ckpt.config != *config {
                return Err(config_mismatch(&ckpt.config, config));
            }
            let (model, store, adam) = ckpt.restore()?;
            (model, store, adam, ckpt.rng.clone(), ckpt.epoch, ckpt.step)
        }
        None => {
            let (model, store, adam, rng) = initialize(config)?;
            (model, store, adam, rng, 0, 0)
        }
    };
    let schedule = config.schedule();
    let limit = if config.max_steps == 0 {
        u64::MAX
    } else {
        config.max_steps as u64
    };
    let mut trace = Vec::new();
    'epochs: while epoch < config.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            if step >= limit {
                break 'epochs;
            }
            let mut images: Vec<Image> = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                if config.flip && rng.coin(0.5) {
                    images.push(s.image.flipped());
                    masks.push(flip_mask(&s.mask));
                } else {
                    images.push(s.image.clone());
                    masks.push(s.mask.clone());
                }
            }
            let x = batch_images(&images.iter().collect::<Vec<_>>());
            let y = batch_masks(&masks.iter().collect::<Vec<_>>());
            let mut g = Graph::new(Mode::Train);
            let out = model.forward(&mut g, &store, &x)?;
            let loss_var = model.loss(&mut g, &out, &y)?;
            let loss = g.value(loss_var).data()[0];
            step += 1;
            if !loss.is_finite() {
                return Err(HarnessError::Divergence { step, loss });
            }
            let grads = g.backward(loss_var)?;
            adam.step(&mut store, &g, &grads, lr)?;
            g.commit_buffers(&mut store);
            trace.push(LossRecord { step, epoch, lr, loss });
        }
        epoch += 1;
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            on_checkpoint(&Checkpoint::capture(config, &store, &adam, epoch, step, &rng))?;
        }
    }
    Ok(TrainRun {
        checkpoint: Checkpoint::capture(config, &store, &adam, epoch, step, &rng),
        trace,
    })
}

fn config_mismatch(stored: &ModelConfig, given: &ModelConfig) -> HarnessError {
    let a = stored.to_text();
    let b = given.to_text();
    let diff: Vec<String> = a
        .lines()
        .zip(b.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("checkpoint has `{x}`, config has `{y}`"))
        .collect();
    config(format!("cannot resume: {}", diff.join("; ")))
}

/// `step,epoch,lr,loss`, one row per step.
pub fn write_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.into()))?;
    for r in trace {
        w.serialize(r).map_err(|e| HarnessError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(e.into()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Io(e.into()))
}
