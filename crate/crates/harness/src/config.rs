//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fspnet_core::{EncoderConfig, FspnetConfig, StepDecay, Variant};

use crate::error::{config, Result};

/// Model, optimizer and run settings. Defaults are the desk-scale model
/// with the published optimizer schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_vertices: usize,
    pub decoder_width: usize,
    pub variant: Variant,
    pub share_nl_tem_branches: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_decay_epochs: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps; 0 for no limit.
    pub max_steps: usize,
    /// Random horizontal flips with probability 0.5.
    pub flip: bool,
    /// Write a checkpoint every this many epochs; 0 for the final one only.
    pub checkpoint_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let model = FspnetConfig::default();
        Self {
            encoder: model.encoder,
            n_vertices: model.n_vertices,
            decoder_width: model.decoder_width,
            variant: model.variant,
            share_nl_tem_branches: model.share_nl_tem_branches,
            seed: 0,
            learning_rate: 1e-4,
            lr_decay_epochs: 50,
            lr_decay_factor: 10.0,
            epochs: 150,
            batch_size: 2,
            max_steps: 0,
            flip: true,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    /// Every key, in the canonical order used by [`ModelConfig::to_text`].
    pub const KEYS: [&'static str; 22] = [
        "image_c",
        "image_h",
        "image_w",
        "patch_size",
        "embed_dim",
        "num_layers",
        "num_heads",
        "mlp_ratio",
        "final_norm",
        "n_vertices",
        "decoder_width",
        "variant",
        "share_nl_tem_branches",
        "seed",
        "learning_rate",
        "lr_decay_epochs",
        "lr_decay_factor",
        "epochs",
        "batch_size",
        "max_steps",
        "flip",
        "checkpoint_every",
    ];

    /// Overrides defaults with the given lines. Blank lines and `#`
    /// comments are skipped; unknown and repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(config(format!("line {}: {key} given twice", n + 1)));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.encoder;
        match key {
            "image_c" => e.image_c = parse(key, value)?,
            "image_h" => e.image_h = parse(key, value)?,
            "image_w" => e.image_w = parse(key, value)?,
            "patch_size" => e.patch_size = parse(key, value)?,
            "embed_dim" => e.embed_dim = parse(key, value)?,
            "num_layers" => e.num_layers = parse(key, value)?,
            "num_heads" => e.num_heads = parse(key, value)?,
            "mlp_ratio" => e.mlp_ratio = parse(key, value)?,
            "final_norm" => e.final_norm = parse(key, value)?,
            "n_vertices" => self.n_vertices = parse(key, value)?,
            "decoder_width" => self.decoder_width = parse(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e: fspnet_core::Error| config(e.to_string()))?,
            "share_nl_tem_branches" => self.share_nl_tem_branches = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay_epochs" => self.lr_decay_epochs = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "flip" => self.flip = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let e = &self.encoder;
        match key {
            "image_c" => e.image_c.to_string(),
            "image_h" => e.image_h.to_string(),
            "image_w" => e.image_w.to_string(),
            "patch_size" => e.patch_size.to_string(),
            "embed_dim" => e.embed_dim.to_string(),
            "num_layers" => e.num_layers.to_string(),
            "num_heads" => e.num_heads.to_string(),
            "mlp_ratio" => format!("{:?}", e.mlp_ratio),
            "final_norm" => e.final_norm.to_string(),
            "n_vertices" => self.n_vertices.to_string(),
            "decoder_width" => self.decoder_width.to_string(),
            "variant" => self.variant.to_string(),
            "share_nl_tem_branches" => self.share_nl_tem_branches.to_string(),
            "seed" => self.seed.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "lr_decay_epochs" => self.lr_decay_epochs.to_string(),
            "lr_decay_factor" => format!("{:?}", self.lr_decay_factor),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "flip" => self.flip.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            _ => unreachable!("not a config key: {key}"),
        }
    }

    /// Every key in canonical order; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_c", self.encoder.image_c),
            ("image_h", self.encoder.image_h),
            ("image_w", self.encoder.image_w),
            ("patch_size", self.encoder.patch_size),
            ("embed_dim", self.encoder.embed_dim),
            ("num_heads", self.encoder.num_heads),
            ("n_vertices", self.n_vertices),
            ("decoder_width", self.decoder_width),
            ("lr_decay_epochs", self.lr_decay_epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config(format!("{key} must be positive")));
        }
        if self.encoder.num_layers != 12 {
            return Err(config(format!(
                "num_layers must be 12, got {}",
                self.encoder.num_layers
            )));
        }
        let reals = [
            ("mlp_ratio", self.encoder.mlp_ratio),
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        if let Some((key, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(config(format!("{key} must be a positive number, got {v}")));
        }
        self.model().validate().map_err(|e| config(e.to_string()))
    }

    pub fn model(&self) -> FspnetConfig {
        FspnetConfig {
            encoder: self.encoder.clone(),
            n_vertices: self.n_vertices,
            decoder_width: self.decoder_width,
            variant: self.variant,
            share_nl_tem_branches: self.share_nl_tem_branches,
        }
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            every: self.lr_decay_epochs,
            factor: self.lr_decay_factor,
        }
    }
}
