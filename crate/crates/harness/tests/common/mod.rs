#![allow(dead_code)]

use fspnet::data::gen_synthetic;
use fspnet::{ModelConfig, Sample};

/// 32×32 images, 4×4 token grid, narrow layers: every code path of the
/// full model at a fraction of the cost.
pub const TINY: &str = "\
image_h = 32
image_w = 32
patch_size = 8
embed_dim = 8
num_heads = 2
n_vertices = 4
decoder_width = 4
learning_rate = 0.003
lr_decay_epochs = 100
epochs = 4
batch_size = 2
flip = true
seed = 3
";

pub fn tiny() -> ModelConfig {
    ModelConfig::parse(TINY).unwrap()
}

pub fn tiny_with(extra: &str) -> ModelConfig {
    let mut cfg = tiny();
    for line in extra.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').unwrap();
        cfg.set(k.trim(), v.trim()).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

pub fn tiny_data(count: usize, seed: u64) -> Vec<Sample> {
    gen_synthetic(count, 32, 32, seed, 8).unwrap()
}
