//! Exact t-SNE into two dimensions.
//!
//! Input affinities are Gaussian conditionals calibrated per point to a target
//! perplexity, symmetrized into joint probabilities `P`. Output affinities `Q`
//! use a Student-t kernel. The layout minimizes `KL(P || Q)` by gradient
//! descent with momentum, per-coordinate gains and early exaggeration. All
//! pairwise work is the exact O(n^2) computation.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::seed;

pub const OUTPUT_DIM: usize = 2;
/// Tolerance on `|log2(perplexity) - log2(target)|`.
pub const PERPLEXITY_TOL: f64 = 1e-5;
pub const MAX_CALIBRATION_STEPS: usize = 200;
const INIT_STD: f64 = 1e-4;
const DUPLICATE_JITTER: f64 = 1e-10;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TsneError {
    #[error("invalid t-SNE configuration: {0}")]
    Config(&'static str),
    #[error("t-SNE needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("affinity matrix violates its invariants: {0}")]
    InvalidAffinities(&'static str),
}

/// Non-fatal conditions met while building a layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TsneWarning {
    /// Binary search hit its step limit; the best bandwidth found was kept.
    CalibrationNotConverged { point: usize, sigma: f64, perplexity: f64 },
    /// Coincident inputs were separated by a tiny deterministic jitter.
    DuplicatePoints { count: usize },
    /// Requested perplexity was too large for the number of points.
    PerplexityClamped { requested: f64, used: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<(), TsneError> {
        if !(self.perplexity >= 1.0 && self.perplexity.is_finite()) {
            return Err(TsneError::Config("perplexity must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(TsneError::Config("iterations must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TsneError::Config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.initial_momentum) || !(0.0..1.0).contains(&self.final_momentum) {
            return Err(TsneError::Config("momentum must lie in [0, 1)"));
        }
        if !(self.early_exaggeration >= 1.0) {
            return Err(TsneError::Config("early_exaggeration must be at least 1"));
        }
        Ok(())
    }
}

/// Result of the per-point bandwidth search.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// Conditional probabilities over the row's entries.
    pub probabilities: Vec<f64>,
    pub perplexity: f64,
    pub converged: bool,
}

/// Gaussian conditionals `p_j ∝ exp(-beta * d_j)` and their entropy in nats.
fn conditional(sq_distances: &[f64], beta: f64, out: &mut [f64]) -> f64 {
    let dmin = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (p, &d) in out.iter_mut().zip(sq_distances) {
        *p = libm::exp(-beta * (d - dmin));
        sum += *p;
    }
    let mut weighted = 0.0;
    for (p, &d) in out.iter_mut().zip(sq_distances) {
        *p /= sum;
        weighted += *p * (d - dmin);
    }
    // H = log(sum) + beta * E[d - dmin]
    libm::log(sum) + beta * weighted
}

/// Binary search on the Gaussian precision until the conditional distribution
/// over `sq_distances` (squared distances to the other points) reaches
/// `target_perplexity`.
pub fn calibrate_sigma(sq_distances: &[f64], target_perplexity: f64) -> Result<Calibration, TsneError> {
    if sq_distances.len() < 2 || sq_distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(TsneError::Config("row needs at least two finite non-negative distances"));
    }
    if !(target_perplexity >= 1.0) || target_perplexity > sq_distances.len() as f64 {
        return Err(TsneError::Config("perplexity must lie in [1, row length]"));
    }
    let target = libm::log(target_perplexity);
    let tol = PERPLEXITY_TOL * core::f64::consts::LN_2;
    let mut probs = vec![0.0; sq_distances.len()];
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let mut best = (f64::INFINITY, beta);
    let mut converged = false;
    for _ in 0..MAX_CALIBRATION_STEPS {
        let h = conditional(sq_distances, beta, &mut probs);
        let diff = h - target;
        if diff.abs() < best.0 {
            best = (diff.abs(), beta);
        }
        if diff.abs() < tol {
            converged = true;
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    let beta = best.1;
    let h = conditional(sq_distances, beta, &mut probs);
    Ok(Calibration {
        sigma: libm::sqrt(1.0 / (2.0 * beta)),
        probabilities: probs,
        perplexity: libm::exp(h),
        converged,
    })
}

/// Symmetric joint probabilities `P` with per-point bandwidths.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    p: Matrix,
    sigmas: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps a precomputed matrix after checking symmetry, a zero diagonal,
    /// non-negativity and unit total mass.
    pub fn from_matrix(p: Matrix) -> Result<Self, TsneError> {
        let n = p.rows();
        if p.cols() != n {
            return Err(TsneError::InvalidAffinities("matrix is not square"));
        }
        let mut total = 0.0;
        for i in 0..n {
            if p.get(i, i) != 0.0 {
                return Err(TsneError::InvalidAffinities("diagonal is not zero"));
            }
            for j in 0..n {
                let v = p.get(i, j);
                if !(v >= 0.0) {
                    return Err(TsneError::InvalidAffinities("negative entry"));
                }
                if (v - p.get(j, i)).abs() > 1e-12 {
                    return Err(TsneError::InvalidAffinities("matrix is not symmetric"));
                }
                total += v;
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(TsneError::InvalidAffinities("entries do not sum to one"));
        }
        Ok(AffinityMatrix {
            p,
            sigmas: vec![f64::NAN; n],
        })
    }

    pub fn len(&self) -> usize {
        self.p.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.rows() == 0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

fn squared_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Builds `P` from input points (rows of `x`).
pub fn joint_affinities(
    x: &Matrix,
    perplexity: f64,
) -> Result<(AffinityMatrix, Vec<TsneWarning>), TsneError> {
    let n = x.rows();
    if n < 4 {
        return Err(TsneError::TooFewPoints { needed: 4, got: n });
    }
    if !(perplexity >= 1.0) || perplexity >= (n - 1) as f64 {
        return Err(TsneError::Config("perplexity must lie in [1, n - 1)"));
    }
    let mut warnings = Vec::new();
    let mut dist = squared_distances(x);
    let duplicates: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && dist.get(i, j) == 0.0))
        .collect();
    if !duplicates.is_empty() {
        let mut jittered = x.clone();
        let mut rng = seed::rng(seed::fnv1a64(b"tsne.duplicate-jitter"));
        for &i in &duplicates {
            for v in jittered.row_mut(i) {
                *v += DUPLICATE_JITTER * rng.sample::<f64, _>(StandardNormal);
            }
        }
        dist = squared_distances(&jittered);
        warnings.push(TsneWarning::DuplicatePoints {
            count: duplicates.len(),
        });
    }

    let mut conditional = Matrix::zeros(n, n);
    let mut sigmas = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| dist.get(i, j)));
        let cal = calibrate_sigma(&row, perplexity)?;
        if !cal.converged {
            warnings.push(TsneWarning::CalibrationNotConverged {
                point: i,
                sigma: cal.sigma,
                perplexity: cal.perplexity,
            });
        }
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            conditional.set(i, j, cal.probabilities[k]);
        }
        sigmas.push(cal.sigma);
    }
    let mut p = Matrix::zeros(n, n);
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, (conditional.get(i, j) + conditional.get(j, i)) / denom);
            }
        }
    }
    Ok((AffinityMatrix { p, sigmas }, warnings))
}

/// Student-t kernel weights `(1 + |y_i - y_j|^2)^-1` and their off-diagonal sum.
fn student_t(y: &Matrix) -> (Matrix, f64) {
    let n = y.rows();
    let mut w = Matrix::zeros(n, n);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = 1.0 / (1.0 + d2);
            w.set(i, j, v);
            w.set(j, i, v);
            sum += 2.0 * v;
        }
    }
    (w, sum)
}

/// `KL(P || Q)` for layout `y`.
pub fn kl_divergence(p: &AffinityMatrix, y: &Matrix) -> f64 {
    let (w, sum) = student_t(y);
    let n = p.len();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * libm::log(pij * sum / w.get(i, j));
            }
        }
    }
    kl
}

/// `KL(P || Q)` and its gradient
/// `dKL/dy_i = 4 sum_j (p_ij - q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)`.
pub fn kl_gradient(p: &AffinityMatrix, y: &Matrix) -> (f64, Matrix) {
    gradient_scaled(p, y, 1.0)
}

fn gradient_scaled(p: &AffinityMatrix, y: &Matrix, exaggeration: f64) -> (f64, Matrix) {
    let n = p.len();
    let dims = y.cols();
    let (w, sum) = student_t(y);
    let mut grad = Matrix::zeros(n, dims);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p.p.get(i, j);
            let wij = w.get(i, j);
            let qij = wij / sum;
            if pij > 0.0 {
                kl += pij * libm::log(pij / qij);
            }
            let coeff = 4.0 * (exaggeration * pij - qij) * wij;
            for k in 0..dims {
                grad.add_at(i, k, coeff * (y.get(i, k) - y.get(j, k)));
            }
        }
    }
    (kl, grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneOutput {
    /// `n x 2` layout.
    pub layout: Matrix,
    /// `KL(P || Q)` after each iteration, always against the unexaggerated `P`.
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
    pub warnings: Vec<TsneWarning>,
}

/// Embeds the rows of `x` into two dimensions.
pub fn run_tsne(x: &Matrix, cfg: &TsneConfig) -> Result<TsneOutput, TsneError> {
    cfg.validate()?;
    let n = x.rows();
    if n < 4 {
        return Err(TsneError::TooFewPoints { needed: 4, got: n });
    }
    let mut warnings = Vec::new();
    let max_perplexity = (n - 1) as f64 / 3.0;
    let mut perplexity = cfg.perplexity;
    if perplexity > max_perplexity {
        perplexity = max_perplexity.max(1.0);
        warnings.push(TsneWarning::PerplexityClamped {
            requested: cfg.perplexity,
            used: perplexity,
        });
    }
    let (p, affinity_warnings) = joint_affinities(x, perplexity)?;
    warnings.extend(affinity_warnings);

    let mut rng = seed::rng(cfg.seed);
    let init: Vec<f64> = (0..n * OUTPUT_DIM)
        .map(|_| INIT_STD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut y = Matrix::from_vec(n, OUTPUT_DIM, init).expect("sized");
    let mut update = Matrix::zeros(n, OUTPUT_DIM);
    let mut gains = vec![1.0f64; n * OUTPUT_DIM];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch_iter {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (_, grad) = gradient_scaled(&p, &y, exaggeration);
        let (g, u, ys) = (grad.as_slice(), update.as_mut_slice(), y.as_mut_slice());
        for k in 0..g.len() {
            gains[k] = if (g[k] > 0.0) != (u[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            u[k] = momentum * u[k] - cfg.learning_rate * gains[k] * g[k];
            ys[k] += u[k];
        }
        for c in 0..OUTPUT_DIM {
            let mean = (0..n).map(|i| y.get(i, c)).sum::<f64>() / n as f64;
            for i in 0..n {
                y.add_at(i, c, -mean);
            }
        }
        kl_trace.push(kl_divergence(&p, &y));
    }
    Ok(TsneOutput {
        layout: y,
        kl_trace,
        perplexity,
        warnings,
    })
}
