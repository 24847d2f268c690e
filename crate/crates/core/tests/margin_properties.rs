mod support;

use deepverify_core::margin::{margin_loss_forward, target_logit, ClassHead, MarginConfig};
use deepverify_core::{seed, Matrix};
use proptest::prelude::*;
use support::*;

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Unit-norm batch and class head drawn from `seed`.
fn batch(seed_value: u64, n: usize, d: usize, c: usize) -> (Matrix, ClassHead, Vec<usize>) {
    let mut rng = seed::rng(seed_value);
    let x = unit_rows(&gaussian_matrix(n, d, &mut rng));
    let wt = unit_rows(&gaussian_matrix(c, d, &mut rng));
    let mut w = Matrix::zeros(d, c);
    for j in 0..c {
        for k in 0..d {
            w.set(k, j, wt.get(j, k));
        }
    }
    let labels = random_labels(n, c, &mut rng);
    (x, ClassHead::new(w, vec![0.0; c]).unwrap(), labels)
}

fn target_angles(x: &Matrix, head: &ClassHead, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let c: f64 = (0..x.cols()).map(|k| x.get(i, k) * head.weights.get(k, y)).sum();
            c.clamp(-1.0, 1.0).acos()
        })
        .collect()
}

#[test]
fn target_logit_examples() {
    assert_eq!(target_logit(0.8, &MarginConfig::NONE), 0.8);
    assert!((target_logit(0.8, &MarginConfig::new(1.0, 0.0, 0.2)) - 0.6).abs() < 1e-15);
    // cos(a + 0.3) - 0.2 with cos a = 0.8, sin a = 0.6, by the angle-sum identity
    let expected = 0.8 * 0.3f64.cos() - 0.6 * 0.3f64.sin() - 0.2;
    assert!((target_logit(0.8, &MarginConfig::COMBINED) - expected).abs() < 1e-12);
    // 0.386957..., quoted to four digits as 0.3869
    assert!((expected - 0.3869).abs() < 1e-4);
}

#[test]
fn two_logit_example() {
    // sample on its own center, the other center orthogonal, s = 1
    let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
    let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let head = ClassHead::new(w, vec![0.0; 2]).unwrap();
    let out = margin_loss_forward(&x, &[0], &head, &MarginConfig::NONE.with_scale(1.0)).unwrap();
    let expected = (1.0 + (-1.0f64).exp()).ln();
    assert!((out.loss - expected).abs() < 1e-15);
    assert!((out.loss - 0.3133).abs() < 5e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn target_logit_is_total(c in -2.0f64..2.0, m1 in 1.0f64..4.0, m2 in 0.0f64..3.0, m3 in 0.0f64..0.99) {
        let v = target_logit(c, &MarginConfig::new(m1, m2, m3));
        prop_assert!(v.is_finite());
    }

    #[test]
    fn target_logit_is_monotone_in_margins(c in -1.0f64..1.0, m2 in 0.0f64..1.5, m3 in 0.0f64..0.5, dm in 0.0f64..0.4) {
        let cfg = MarginConfig::new(1.0, m2, m3);
        let base = target_logit(c, &cfg);
        prop_assert!(target_logit(c, &MarginConfig::new(1.0, m2 + dm, m3)) <= base + 1e-15);
        prop_assert!(target_logit(c, &MarginConfig::new(1.0, m2, m3 + dm)) <= base + 1e-15);
        prop_assert!(target_logit(c, &MarginConfig::new(1.0 + dm, m2, m3)) <= base + 1e-15);
    }

    #[test]
    fn loss_is_non_decreasing_in_each_margin(
        seed_value in any::<u64>(),
        m1 in 1.0f64..1.5,
        m2 in 0.0f64..0.5,
        m3 in 0.0f64..0.4,
        which in 0usize..3,
        delta in 0.0f64..0.3,
    ) {
        let (x, head, labels) = batch(seed_value, 6, 8, 4);
        let base = MarginConfig::new(m1, m2, m3).with_scale(8.0);
        let mut bumped = base;
        match which {
            0 => bumped.m1 += delta,
            1 => bumped.m2 += delta,
            _ => bumped.m3 += delta,
        }
        let angles = target_angles(&x, &head, &labels);
        prop_assume!(angles.iter().all(|t| bumped.m1 * t + bumped.m2 <= std::f64::consts::PI));
        let l0 = margin_loss_forward(&x, &labels, &head, &base).unwrap().loss;
        let l1 = margin_loss_forward(&x, &labels, &head, &bumped).unwrap().loss;
        prop_assert!(l1 >= l0 - 1e-12, "{l0} -> {l1}");
    }

    #[test]
    fn loss_ignores_order_of_non_target_classes(seed_value in any::<u64>(), rotate in 1usize..4) {
        let (x, head, _) = batch(seed_value, 5, 8, 5);
        let labels = vec![0usize; 5];
        let c = head.num_classes();
        // cyclically rotate classes 1..c, keeping the target column 0 in place
        let mut perm: Vec<usize> = (0..c).collect();
        perm[1..].rotate_left(rotate);
        let mut w = Matrix::zeros(head.dim(), c);
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..head.dim() {
                w.set(k, dst, head.weights.get(k, src));
            }
        }
        let permuted = ClassHead::new(w, vec![0.0; c]).unwrap();
        for cfg in [MarginConfig::ARCFACE, MarginConfig::COSFACE, MarginConfig::SPHEREFACE, MarginConfig::COMBINED] {
            let a = margin_loss_forward(&x, &labels, &head, &cfg).unwrap();
            let b = margin_loss_forward(&x, &labels, &permuted, &cfg).unwrap();
            prop_assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0));
            for i in 0..x.rows() {
                for (dst, &src) in perm.iter().enumerate() {
                    prop_assert_eq!(b.logits.get(i, dst), a.logits.get(i, src));
                }
            }
        }
    }

    #[test]
    fn relabelling_classes_leaves_loss_unchanged(seed_value in any::<u64>(), shift in 1usize..4) {
        let (x, head, labels) = batch(seed_value, 6, 8, 4);
        let c = head.num_classes();
        let mut w = Matrix::zeros(head.dim(), c);
        for j in 0..c {
            for k in 0..head.dim() {
                w.set(k, (j + shift) % c, head.weights.get(k, j));
            }
        }
        let moved = ClassHead::new(w, vec![0.0; c]).unwrap();
        let relabelled: Vec<usize> = labels.iter().map(|&y| (y + shift) % c).collect();
        let a = margin_loss_forward(&x, &labels, &head, &MarginConfig::COMBINED).unwrap().loss;
        let b = margin_loss_forward(&x, &relabelled, &moved, &MarginConfig::COMBINED).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
