//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use deepverify_core::seed;
use deepverify_core::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut seed::Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_labels(n: usize, classes: usize, rng: &mut seed::Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Mean cross-entropy over logits `s * cos(x_i, w_j)` and its gradients with
/// respect to the unnormalized rows of `x` and columns of `w`.
///
/// Written directly from the definition with explicit normalization Jacobians.
pub fn scaled_cosine_softmax(x: &Matrix, labels: &[usize], w: &Matrix, s: f64) -> (f64, Matrix, Matrix) {
    let (n, d, c) = (x.rows(), x.cols(), w.cols());
    let xs: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let ws: Vec<Vec<f64>> = (0..c).map(|j| w.column(j)).collect();
    let len = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let unit = |v: &[f64]| {
        let l = len(v);
        v.iter().map(|a| a / l).collect::<Vec<f64>>()
    };
    let xh: Vec<Vec<f64>> = xs.iter().map(|v| unit(v)).collect();
    let wh: Vec<Vec<f64>> = ws.iter().map(|v| unit(v)).collect();

    let mut loss = 0.0;
    // gradients with respect to the unit vectors first
    let mut gxh = vec![vec![0.0; d]; n];
    let mut gwh = vec![vec![0.0; d]; c];
    for i in 0..n {
        let z: Vec<f64> = (0..c)
            .map(|j| s * xh[i].iter().zip(&wh[j]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += (lse - z[labels[i]]) / n as f64;
        for j in 0..c {
            let p = (z[j] - lse).exp();
            let t = if j == labels[i] { 1.0 } else { 0.0 };
            let dz = (p - t) / n as f64;
            for k in 0..d {
                gxh[i][k] += dz * s * wh[j][k];
                gwh[j][k] += dz * s * xh[i][k];
            }
        }
    }
    // pull back through v -> v / |v|: J = (I - u u^T) / |v|
    let pull = |g: &[f64], u: &[f64], l: f64| {
        let proj: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
        g.iter().zip(u).map(|(gk, uk)| (gk - uk * proj) / l).collect::<Vec<f64>>()
    };
    let mut dx = Matrix::zeros(n, d);
    for i in 0..n {
        dx.row_mut(i).copy_from_slice(&pull(&gxh[i], &xh[i], len(&xs[i])));
    }
    let mut dw = Matrix::zeros(d, c);
    for j in 0..c {
        for (k, v) in pull(&gwh[j], &wh[j], len(&ws[j])).into_iter().enumerate() {
            dw.set(k, j, v);
        }
    }
    (loss, dx, dw)
}

/// Fraction of (genuine, imposter) pairs ranked correctly, ties counted one half.
pub fn concordance(genuine: &[f64], imposter: &[f64]) -> f64 {
    let mut wins = 0.0;
    for g in genuine {
        for i in imposter {
            if g > i {
                wins += 1.0;
            } else if g == i {
                wins += 0.5;
            }
        }
    }
    wins / (genuine.len() * imposter.len()) as f64
}

/// Equal error rate by sweeping every candidate threshold and intersecting the
/// resulting `(FAR, FRR)` polyline with the diagonal.
pub fn swept_eer(genuine: &[f64], imposter: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = genuine.iter().chain(imposter).cloned().collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let rate = |xs: &[f64], t: f64| xs.iter().filter(|&&v| v >= t).count() as f64 / xs.len() as f64;
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (rate(imposter, t), 1.0 - rate(genuine, t)))
        .collect();
    for w in pts.windows(2) {
        let ((f0, r0), (f1, r1)) = (w[0], w[1]);
        if f0 == r0 {
            return f0;
        }
        let (g0, g1) = (f0 - r0, f1 - r1);
        if g0 < 0.0 && g1 >= 0.0 {
            let t = -g0 / (g1 - g0);
            return f0 + t * (f1 - f0);
        }
    }
    let last = pts[pts.len() - 1];
    last.0
}

/// Largest coordinate error relative to the largest gradient coordinate:
/// `max_k |a_k - n_k| / max_k max(|a_k|, |n_k|)`.
///
/// Central differences carry an absolute rounding error of roughly
/// `eps * |f| / h`, which swamps coordinate-wise ratios on coordinates whose
/// true derivative is near zero; scaling by the gradient's magnitude keeps the
/// check meaningful there.
pub fn scaled_max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 { 0.0 } else { worst / scale }
}
