mod support;

use deepverify_core::metrics::{auc, eer, histogram, roc_curve, MetricsError};
use deepverify_core::seed;
use proptest::prelude::*;
use rand::Rng;
use support::{concordance, swept_eer};

/// 200 seeded (genuine, imposter) pairs of sizes 1..=50; half are drawn from a
/// coarse grid so that tied scores are common.
fn score_pairs() -> Vec<(Vec<f64>, Vec<f64>)> {
    let stage = seed::stage_seed(3, "metrics.pairs");
    (0..200u64)
        .map(|k| {
            let mut rng = seed::rng(seed::item_seed(stage, k));
            let coarse = k % 2 == 0;
            let mut draw = |len: usize, shift: f64| -> Vec<f64> {
                (0..len)
                    .map(|_| {
                        let v: f64 = rng.random_range(-1.0..1.0) * 0.7 + shift;
                        if coarse { (v * 10.0).round() / 10.0 } else { v }
                    })
                    .collect()
            };
            let g_len = 1 + (k as usize * 7) % 50;
            let i_len = 1 + (k as usize * 13) % 50;
            let g = draw(g_len, 0.15);
            let i = draw(i_len, -0.15);
            (g, i)
        })
        .collect()
}

#[test]
fn trapezoid_equals_concordance() {
    let pairs = score_pairs();
    assert!(pairs.iter().any(|(g, i)| g.iter().any(|x| i.contains(x))), "no ties generated");
    for (g, i) in &pairs {
        let a = auc(g, i).unwrap();
        assert!((a - concordance(g, i)).abs() < 1e-9, "{a} vs {}", concordance(g, i));
    }
}

#[test]
fn auc_complement() {
    for (g, i) in score_pairs() {
        let total = auc(&g, &i).unwrap() + auc(&i, &g).unwrap();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn auc_survives_increasing_transforms() {
    for (g, i) in score_pairs() {
        let t = |v: &Vec<f64>| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        assert_eq!(auc(&g, &i).unwrap(), auc(&t(&g), &t(&i)).unwrap());
    }
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
    assert!((auc(&[0.6, 0.4], &[0.5, 0.3]).unwrap() - 0.75).abs() < 1e-12);
    assert!((auc(&[0.5, 0.3], &[0.6, 0.4]).unwrap() - 0.25).abs() < 1e-12);
    assert!(matches!(auc(&[], &[0.1]), Err(MetricsError::EmptyScores(_))));
}

#[test]
fn eer_examples_match_threshold_sweep() {
    let cases: [(&[f64], &[f64], f64); 3] = [
        (&[0.9, 0.8], &[0.1, 0.2], 0.0),
        (&[0.5], &[0.5], 0.5),
        (&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1], 1.0 / 3.0),
    ];
    for (g, i, expected) in cases {
        assert_eq!(swept_eer(g, i), expected);
        assert!((eer(g, i).unwrap() - expected).abs() < 1e-15);
    }
}

#[test]
fn eer_of_identical_distributions_is_one_half() {
    let mut rng = seed::rng(100);
    let s: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert!((eer(&s, &s).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn eer_agrees_with_sweep_on_random_pairs() {
    for (g, i) in score_pairs() {
        let e = eer(&g, &i).unwrap();
        assert!((e - swept_eer(&g, &i)).abs() < 1e-9);
        let curve = roc_curve(&g, &i).unwrap();
        let max_far = curve.points.iter().map(|p| p.far).fold(0.0, f64::max);
        assert!((0.0..=max_far).contains(&e));
        let separated = g.iter().cloned().fold(f64::INFINITY, f64::min)
            > i.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(e == 0.0, separated);
    }
}

#[test]
fn roc_examples() {
    let has = |g: &[f64], i: &[f64], far: f64, gar: f64| {
        roc_curve(g, i)
            .unwrap()
            .points
            .iter()
            .any(|p| (p.far - far).abs() < 1e-12 && (p.gar - gar).abs() < 1e-12)
    };
    assert!(has(&[0.9, 0.8], &[0.1, 0.2], 0.0, 1.0));
    assert!(has(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1], 1.0 / 3.0, 2.0 / 3.0));
    let flat = roc_curve(&[0.5], &[0.5]).unwrap();
    let pts: Vec<(f64, f64)> = flat.points.iter().map(|p| (p.far, p.gar)).collect();
    assert_eq!(pts, [(0.0, 0.0), (1.0, 1.0)]);
}

#[test]
fn histogram_examples() {
    assert!(histogram(&[], 50).unwrap().iter().all(|&c| c == 0));
    let point = histogram(&[0.0], 50).unwrap();
    assert_eq!(point.iter().filter(|&&c| c > 0).count(), 1);
    let mut rng = seed::rng(5);
    let s: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..=1.0)).collect();
    assert_eq!(histogram(&s, 50).unwrap().iter().sum::<u64>(), 100);
    assert_eq!(histogram(&[1.0, -1.0], 50).unwrap()[49], 1);
    assert!(matches!(histogram(&[1.5], 50), Err(MetricsError::Range { .. })));
}

proptest! {
    #[test]
    fn roc_is_monotone_and_anchored(
        g in prop::collection::vec(-1.0f64..1.0, 1..40),
        i in prop::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let curve = roc_curve(&g, &i).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.far, first.gar), (0.0, 0.0));
        prop_assert_eq!((last.far, last.gar), (1.0, 1.0));
        for w in curve.points.windows(2) {
            prop_assert!(w[0].far <= w[1].far && w[0].gar <= w[1].gar);
        }
        prop_assert!((curve.area() - concordance(&g, &i)).abs() < 1e-9);
    }
}
