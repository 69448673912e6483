#[path = "support/cases.rs"]
mod cases;
#[path = "support/oracle.rs"]
mod oracle;

use fspnet_metrics::{e_measures, f_measures, mae, s_measure, weighted_f, BinaryMask, ScoreMap, DEFAULT_ALPHA};

const CASES: usize = 100;
const TOL: f64 = 1e-9;

fn maps(case: &cases::Case) -> (ScoreMap, BinaryMask) {
    (
        ScoreMap::new(case.h, case.w, case.c.clone()).unwrap(),
        BinaryMask::from_f64(case.h, case.w, &case.g).unwrap(),
    )
}

fn close(name: &str, i: usize, got: f64, want: f64) {
    assert!((got - want).abs() <= TOL, "{name} case {i}: {got} vs oracle {want}");
}

#[test]
fn mae_matches_oracle() {
    for i in 0..CASES {
        let case = cases::case(11, i, 16, 16);
        let (c, g) = maps(&case);
        close("mae", i, mae(&c, &g).unwrap(), oracle::mae(&case.c, &case.g));
    }
}

#[test]
fn f_measures_match_oracle() {
    for i in 0..CASES {
        let case = cases::case(12, i, 16, 16);
        let (c, g) = maps(&case);
        let f = f_measures(&c, &g).unwrap();
        let (a, m, x) = oracle::f_measures(&case.c, &case.g);
        close("f_adaptive", i, f.adaptive, a);
        close("f_mean", i, f.mean, m);
        close("f_max", i, f.max, x);
    }
}

#[test]
fn e_measures_match_oracle() {
    for i in 0..CASES {
        let case = cases::case(13, i, 16, 16);
        let (c, g) = maps(&case);
        let e = e_measures(&c, &g).unwrap();
        let (a, m, x) = oracle::e_measures(&case.c, &case.g);
        close("e_adaptive", i, e.adaptive, a);
        close("e_mean", i, e.mean, m);
        close("e_max", i, e.max, x);
    }
}

#[test]
fn s_measure_matches_oracle() {
    for i in 0..CASES {
        let case = cases::case(14, i, 16, 16);
        let (c, g) = maps(&case);
        let want = oracle::s_measure(&case.c, &case.g, 16, 16, DEFAULT_ALPHA);
        close("s_measure", i, s_measure(&c, &g, DEFAULT_ALPHA).unwrap(), want);
    }
}

#[test]
fn weighted_f_matches_oracle() {
    for i in 0..CASES {
        let case = cases::case(15, i, 16, 16);
        let (c, g) = maps(&case);
        close(
            "weighted_f",
            i,
            weighted_f(&c, &g).unwrap(),
            oracle::weighted_f(&case.c, &case.g, 16, 16),
        );
    }
}

#[test]
fn non_square_shapes_match_oracle() {
    for i in 0..20 {
        let case = cases::case(16, i, 9, 13);
        let (c, g) = maps(&case);
        close(
            "s",
            i,
            s_measure(&c, &g, DEFAULT_ALPHA).unwrap(),
            oracle::s_measure(&case.c, &case.g, 9, 13, 0.5),
        );
        close(
            "wf",
            i,
            weighted_f(&c, &g).unwrap(),
            oracle::weighted_f(&case.c, &case.g, 9, 13),
        );
        close(
            "em",
            i,
            e_measures(&c, &g).unwrap().mean,
            oracle::e_measures(&case.c, &case.g).1,
        );
    }
}

#[test]
fn degenerate_truths_match_oracle() {
    for i in 0..10 {
        let case = cases::case(17, i, 8, 8);
        for fill in [0.0, 1.0] {
            let g = vec![fill; 64];
            let (c, mask) = (
                ScoreMap::new(8, 8, case.c.clone()).unwrap(),
                BinaryMask::from_f64(8, 8, &g).unwrap(),
            );
            close(
                "s",
                i,
                s_measure(&c, &mask, 0.5).unwrap(),
                oracle::s_measure(&case.c, &g, 8, 8, 0.5),
            );
            let e = e_measures(&c, &mask).unwrap();
            let (a, m, x) = oracle::e_measures(&case.c, &g);
            close("ea", i, e.adaptive, a);
            close("em", i, e.mean, m);
            close("ex", i, e.max, x);
        }
    }
}
