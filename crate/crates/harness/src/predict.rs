//! Inference and evaluation from a checkpoint.

use std::path::Path;

use fspnet_core::{Fspnet, Graph, Mode, ParamStore};
use fspnet_metrics::io::read_score_map;
use fspnet_metrics::{evaluate_named, MetricReport, ScoreMap};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::{batch_images, Image, Sample};
use crate::error::{data, Result};

pub struct Predictor {
    pub config: ModelConfig,
    model: Fspnet,
    store: ParamStore<f64>,
}

impl Predictor {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let (model, store, _) = ckpt.restore()?;
        Ok(Self {
            config: ckpt.config.clone(),
            model,
            store,
        })
    }

    pub fn from_parts(config: &ModelConfig, model: Fspnet, store: ParamStore<f64>) -> Self {
        Self {
            config: config.clone(),
            model,
            store,
        }
    }

    /// Probability maps at image size, shallow to deep; the last is the
    /// prediction. Values are rounded to 8-bit levels, as when written to
    /// disk, so reports from fresh and saved predictions agree.
    pub fn predict(&self, image: &Image) -> Result<Vec<ScoreMap>> {
        let want = (self.config.encoder.image_h, self.config.encoder.image_w);
        if (image.height, image.width) != want {
            return Err(data(format!(
                "image is {}x{}, checkpoint expects {}x{}",
                image.height, image.width, want.0, want.1
            )));
        }
        let mut g = Graph::new(Mode::Eval);
        let out = self.model.forward(&mut g, &self.store, &batch_images(&[image]))?;
        out.predictions
            .iter()
            .map(|&p| {
                let raw = ScoreMap::new(image.height, image.width, g.value(p).data().to_vec())?;
                Ok(ScoreMap::from_u8(image.height, image.width, &raw.to_u8())?)
            })
            .collect()
    }

    /// Predictions for many images, computed in parallel, in input order.
    pub fn predict_all(&self, images: &[&Image]) -> Result<Vec<Vec<ScoreMap>>> {
        images.par_iter().map(|im| self.predict(im)).collect()
    }

    /// Final prediction for every sample, scored against its mask.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<MetricReport> {
        if samples.is_empty() {
            return Err(data("evaluation set is empty"));
        }
        let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
        let preds = self.predict_all(&images)?;
        let pairs = preds
            .into_iter()
            .zip(samples)
            .map(|(mut p, s)| (p.pop().expect("a prediction"), s.mask.clone()))
            .collect::<Vec<_>>();
        let names: Vec<String> = samples.iter().map(|s| s.name.clone()).collect();
        Ok(evaluate_named(&pairs, &names)?)
    }
}

/// Scores saved predictions `DIR/NAME.png` against the samples' masks.
pub fn evaluate_saved(dir: &Path, samples: &[Sample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(data("evaluation set is empty"));
    }
    let pairs = samples
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.png", s.name));
            let pred = read_score_map(&path).map_err(|e| data(e.to_string()))?;
            Ok((pred, s.mask.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = samples.iter().map(|s| s.name.clone()).collect();
    Ok(evaluate_named(&pairs, &names)?)
}
