mod common;

use common::suite;

use common::{random_tensor, randomize_fan_in};
use fspnet_core::fsd::{build_schedule, overlap_pyramid_aim_count, Aim, Feature, Fsd, FsdConfig, LateralHead};
use fspnet_core::{Graph, ParamStore, SeededRng, Tensor, Var};

fn level(layer: usize, index: usize) -> Feature {
    Feature::Level { layer, index }
}

#[test]
fn schedule_wiring() {
    let s = build_schedule(12).unwrap();
    assert_eq!(s.aim_counts, vec![6, 3, 2, 1]);
    assert_eq!(s.aims.len(), 12);
    s.validate().unwrap();
    assert_eq!(s.chain_lengths(), vec![6, 3, 2, 1]);

    let pairs: Vec<(usize, Feature, Feature, bool)> = s
        .aims
        .iter()
        .map(|a| (a.layer, a.f_i, a.f_im1, a.prev.is_some()))
        .collect();
    let mut want = Vec::new();
    for (k, n) in (1..=6).rev().enumerate() {
        want.push((0, level(0, 2 * n), level(0, 2 * n - 1), k > 0));
    }
    for (k, n) in (1..=3).rev().enumerate() {
        want.push((1, level(1, 2 * n), level(1, 2 * n - 1), k > 0));
    }
    want.push((2, level(2, 3), level(2, 2), false));
    want.push((2, level(2, 2), level(2, 1), true));
    want.push((3, level(3, 2), level(3, 1), false));
    assert_eq!(pairs, want);

    // The dF entering an AIM is the pass output of the one just before it.
    for w in s.aims.windows(2) {
        if w[0].layer == w[1].layer {
            assert_eq!(w[1].prev, Some(w[0].pass_out));
        } else {
            assert_eq!(w[1].prev, None);
        }
    }
    for n in [0, 8, 11, 13, 24] {
        assert!(build_schedule(n).is_err());
    }
}

#[test]
fn schedule_dump_lists_every_aim() {
    let s = build_schedule(12).unwrap();
    let text = s.dump(Some((6, 6)));
    assert!(text.starts_with("layers: 4  aims: 12  per-layer: [6, 3, 2, 1]"));
    let rows = text
        .lines()
        .filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit()));
    assert_eq!(rows.count(), 12);
    for (i, side) in [12, 24, 48, 96].iter().enumerate() {
        assert!(text.contains(&format!("P{i} <- ")));
        assert!(text.contains(&format!("native {side}x{side}")));
    }
}

#[test]
fn overlap_pyramid_needs_more_aims() {
    assert_eq!(overlap_pyramid_aim_count(12), 66);
    assert_eq!(overlap_pyramid_aim_count(2), 1);
    let shrinkage: usize = build_schedule(12).unwrap().aim_counts.iter().sum();
    assert!(shrinkage < overlap_pyramid_aim_count(12));
}

fn features(g: &mut Graph<f64>, rng: &mut SeededRng, n: usize, c: usize, side: usize) -> Vec<Var> {
    (0..12)
        .map(|_| g.constant(random_tensor(&[n, c, side, side], rng, 1.0)))
        .collect()
}

#[test]
fn aim_shapes_and_sign() {
    let mut rng = SeededRng::new(1);
    let mut store = ParamStore::<f64>::new();
    let first = Aim::new(&mut store, "a1", 4, false, &mut rng).unwrap();
    let later = Aim::new(&mut store, "a2", 4, true, &mut rng).unwrap();
    let mut g = Graph::default();
    let fi = g.constant(random_tensor(&[2, 4, 6, 6], &mut rng, 1.0));
    let fim1 = g.constant(random_tensor(&[2, 4, 6, 6], &mut rng, 1.0));
    let (fp, fo) = first.forward(&mut g, &store, None, fi, fim1).unwrap();
    assert_eq!(g.shape(fp), &[2, 4, 6, 6]);
    assert_eq!(g.shape(fo), &[2, 4, 12, 12]);
    assert!(g.value(fo).data().iter().all(|&v| v >= 0.0));
    let (fp2, _) = later.forward(&mut g, &store, Some(fp), fi, fim1).unwrap();
    assert!(g.value(fp2).data().iter().all(|&v| v >= 0.0));

    let small = g.constant(Tensor::zeros([2, 4, 3, 3]));
    assert!(first.forward(&mut g, &store, None, fi, small).is_err());
    assert!(later.forward(&mut g, &store, Some(small), fi, fim1).is_err());
    assert!(later.forward(&mut g, &store, None, fi, fim1).is_err());
}

#[test]
fn lateral_head_examples() {
    let mut rng = SeededRng::new(2);
    let mut store = ParamStore::<f64>::new();
    let head = LateralHead::new(&mut store, "h", 3, &mut rng).unwrap();
    let mut g = Graph::default();
    let f = g.constant(random_tensor(&[1, 3, 4, 4], &mut rng, 1.0));
    let p = head.forward(&mut g, &store, f, 9, 7).unwrap();
    assert_eq!(g.shape(p.logits), &[1, 1, 4, 4]);
    assert_eq!(g.shape(p.probability), &[1, 1, 9, 7]);
    assert!(g.value(p.probability).data().iter().all(|&v| v == 0.5));

    randomize_fan_in(&mut store, &mut rng, 3.0);
    let p = head.forward(&mut g, &store, f, 8, 8).unwrap();
    assert!(g.value(p.probability).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn decode_resolutions_and_calls() {
    let mut rng = SeededRng::new(3);
    let mut store = ParamStore::<f64>::new();
    let cfg = FsdConfig {
        in_channels: 8,
        width: 4,
    };
    let fsd = Fsd::new(&mut store, "fsd", &cfg, &mut rng).unwrap();
    let mut g = Graph::default();
    let feats = features(&mut g, &mut rng, 1, 8, 6);
    let out = fsd.decode(&mut g, &store, &feats, 96, 96).unwrap();
    assert_eq!(out.aim_calls, 12);
    assert_eq!(out.predictions.len(), 4);
    let sides: Vec<usize> = out.predictions.iter().map(|p| g.shape(p.logits)[2]).collect();
    assert_eq!(sides, vec![12, 24, 48, 96]);
    for w in sides.windows(2) {
        assert_eq!(w[1], 2 * w[0]);
    }
    for p in &out.predictions {
        assert_eq!(g.shape(p.probability), &[1, 1, 96, 96]);
    }
    for f in &out.pass_features {
        assert!(g.value(*f).data().iter().all(|&v| v >= 0.0));
    }
    assert!(fsd.decode(&mut g, &store, &feats[..11], 96, 96).is_err());

    // Same seed, bit-identical predictions.
    let again = || {
        let mut rng = SeededRng::new(3);
        let mut store = ParamStore::<f64>::new();
        let fsd = Fsd::new(&mut store, "fsd", &cfg, &mut rng).unwrap();
        randomize_fan_in(&mut store, &mut rng, 1.0);
        let mut g = Graph::default();
        let feats = features(&mut g, &mut rng, 1, 8, 6);
        let out = fsd.decode(&mut g, &store, &feats, 96, 96).unwrap();
        out.predictions
            .iter()
            .map(|p| g.value(p.probability).clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(again(), again());
}

#[test]
fn aim_gradients() {
    suite::aim().assert();
}

#[test]
fn head_gradients() {
    suite::lateral_head().assert();
}

#[test]
fn decode_gradients() {
    suite::decode().assert();
}
