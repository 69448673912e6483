use fspnet::data::{
    flip_mask, gen_synthetic, is_camouflaged, load_dataset, region_stats, save_dataset, CONTRAST, FOREGROUND,
};
use fspnet::HarnessError;

#[test]
fn generation_is_deterministic() {
    let a = gen_synthetic(8, 96, 96, 7, 16).unwrap();
    let b = gen_synthetic(8, 96, 96, 7, 16).unwrap();
    assert_eq!(a, b);
    let c = gen_synthetic(8, 96, 96, 8, 16).unwrap();
    assert_ne!(a, c);
    // Scene i does not depend on how many scenes were requested.
    assert_eq!(gen_synthetic(3, 96, 96, 7, 16).unwrap()[..], a[..3]);
}

#[test]
fn scenes_are_camouflaged() {
    for s in gen_synthetic(24, 96, 96, 11, 16).unwrap() {
        let frac = s.mask.foreground() as f64 / s.mask.len() as f64;
        assert!((FOREGROUND.0..=FOREGROUND.1).contains(&frac), "{}: {frac}", s.name);
        let (fg, fg_sd) = region_stats(&s.image, &s.mask, true);
        let (bg, bg_sd) = region_stats(&s.image, &s.mask, false);
        assert!((fg - bg).abs() <= CONTRAST.1, "{}: {fg} vs {bg}", s.name);
        assert!((fg - bg).abs() <= bg_sd && (fg_sd - bg_sd).abs() <= bg_sd);
        assert!(is_camouflaged(&s.image, &s.mask));
        assert!(s
            .image
            .values
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v) && (v * 255.0).fract() < 1e-9));
    }
}

#[test]
fn sizes_must_divide_by_the_patch() {
    let err = gen_synthetic(1, 100, 96, 1, 16).unwrap_err();
    assert!(matches!(err, HarnessError::Data(_)));
    assert_eq!(err.exit_code(), 3);
    assert!(gen_synthetic(1, 48, 32, 1, 16).is_ok());
}

#[test]
fn flips_are_involutions() {
    let s = &gen_synthetic(1, 32, 48, 2, 16).unwrap()[0];
    assert_ne!(s.image.flipped(), s.image);
    assert_eq!(s.image.flipped().flipped(), s.image);
    assert_eq!(flip_mask(&flip_mask(&s.mask)), s.mask);
    let w = s.mask.width();
    assert_eq!(flip_mask(&s.mask).values()[0], s.mask.values()[w - 1]);
    assert_eq!(s.image.flipped().values[w], s.image.values[2 * w - 1]);
}

#[test]
fn datasets_round_trip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let samples = gen_synthetic(3, 32, 32, 4, 16).unwrap();
    save_dataset(dir.path(), &samples).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), samples);
    std::fs::remove_file(dir.path().join("masks/0001.png")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(HarnessError::Data(_))));
    assert!(matches!(
        load_dataset(&dir.path().join("nowhere")),
        Err(HarnessError::Data(_))
    ));
}
