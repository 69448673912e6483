mod common;

use fspnet::{HarnessError, ModelConfig};
use fspnet_core::Variant;

#[test]
fn defaults_are_the_desk_model() {
    let c = ModelConfig::default();
    assert_eq!(
        (c.encoder.image_h, c.encoder.image_w, c.encoder.patch_size),
        (96, 96, 16)
    );
    assert_eq!(
        (c.encoder.embed_dim, c.encoder.num_heads, c.encoder.num_layers),
        (32, 2, 12)
    );
    assert_eq!((c.n_vertices, c.decoder_width, c.variant), (16, 32, Variant::Full));
    assert_eq!(
        (c.learning_rate, c.lr_decay_epochs, c.lr_decay_factor, c.batch_size),
        (1e-4, 50, 10.0, 2)
    );
    c.validate().unwrap();
}

#[test]
fn step_decay_schedule() {
    let s = ModelConfig::default().schedule();
    assert_eq!(s.lr_at(0), 1e-4);
    assert!((s.lr_at(50) - 1e-5).abs() < 1e-20);
    assert!((s.lr_at(100) - 1e-6).abs() < 1e-21);
}

#[test]
fn text_round_trip() {
    let cfg = common::tiny_with("variant = b12+d\nmlp_ratio = 2.5\nshare_nl_tem_branches = true");
    let text = cfg.to_text();
    assert_eq!(text.lines().count(), ModelConfig::KEYS.len());
    assert_eq!(ModelConfig::parse(&text).unwrap(), cfg);
    assert_eq!(ModelConfig::parse("").unwrap(), ModelConfig::default());
}

#[test]
fn comments_and_blank_lines() {
    let cfg = ModelConfig::parse("# toy\n\nseed = 9  # trailing\n  epochs=3\n").unwrap();
    assert_eq!((cfg.seed, cfg.epochs), (9, 3));
}

fn config_error(text: &str) -> String {
    match ModelConfig::parse(text) {
        Err(e @ HarnessError::Config(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.to_string()
        }
        other => panic!("expected a config error for {text:?}, got {other:?}"),
    }
}

#[test]
fn rejections() {
    assert!(config_error("learning_rat = 0.1").contains("unknown key"));
    assert!(config_error("seed = 1\nseed = 2").contains("twice"));
    assert!(config_error("seed 1").contains("key = value"));
    assert!(config_error("epochs = -1").contains("epochs"));
    assert!(config_error("flip = maybe").contains("flip"));
    assert!(config_error("num_layers = 6").contains("12"));
    assert!(config_error("batch_size = 0").contains("batch_size"));
    assert!(config_error("learning_rate = 0").contains("learning_rate"));
    assert!(config_error("learning_rate = nan").contains("learning_rate"));
    assert!(config_error("image_h = 100").contains("patch size"));
    assert!(config_error("embed_dim = 33").contains("embed_dim"));
    assert!(config_error("variant = b3").contains("variant"));
    assert!(config_error("n_vertices = 37").contains("n_vertices"));
}

fn shipped(name: &str) -> ModelConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ModelConfig::load(&path).unwrap()
}

#[test]
fn shipped_configs_parse() {
    assert_eq!(shipped("desk.cfg"), ModelConfig::default());
    let toy = shipped("toy.cfg");
    assert_eq!(toy.model(), ModelConfig::default().model());
    assert_eq!((toy.max_steps, toy.flip), (500, false));
}
