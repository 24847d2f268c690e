//! Embedding-space deepfake simulators.
//!
//! Noise is isotropic Gaussian with per-coordinate standard deviation
//! `sigma / sqrt(d)`, so `sigma` is the expected norm of the perturbation
//! independent of the embedding dimension.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, EmbeddingVector, LabeledEmbedding, Method, SwapKind};
use crate::seed;

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("donor and host are the same identity ({0})")]
    SameIdentity(u32),
    #[error("{method} is not an {expected} method")]
    WrongMethodKind { method: Method, expected: &'static str },
    #[error("invalid swap parameters: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapSpec {
    /// Donor weight in the blend, `[0, 1]`.
    pub alpha: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SwapSpec {
    fn default() -> Self {
        SwapSpec {
            alpha: DEFAULT_ALPHA,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
        }
    }
}

fn scaled_noise(dim: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return alloc::vec![0.0; dim];
    }
    let mut rng = seed::rng(seed);
    let std = sigma / libm::sqrt(dim as f64);
    (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn check_kind(method: Method, kind: SwapKind) -> Result<(), SimulationError> {
    if method.swap_kind() == Some(kind) {
        Ok(())
    } else {
        Err(SimulationError::WrongMethodKind {
            method,
            expected: kind.name(),
        })
    }
}

/// Blends a donor face into a host video: `normalize(alpha*donor + (1-alpha)*host + noise)`.
///
/// The fake carries the donor's subject id and the host as its target identity.
pub fn simulate_identity_swap(
    donor: &LabeledEmbedding,
    host: &LabeledEmbedding,
    method: Method,
    spec: &SwapSpec,
) -> Result<LabeledEmbedding, SimulationError> {
    check_kind(method, SwapKind::IdentitySwap)?;
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(SimulationError::InvalidSpec("alpha must lie in [0, 1]"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SimulationError::InvalidSpec("noise_sigma must be non-negative"));
    }
    if donor.subject_id == host.host_subject_id {
        return Err(SimulationError::SameIdentity(donor.subject_id));
    }
    let (d, h) = (donor.embedding.as_slice(), host.embedding.as_slice());
    if d.len() != h.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: h.len(),
            actual: d.len(),
        }
        .into());
    }
    let noise = scaled_noise(d.len(), spec.noise_sigma, spec.seed);
    let blended: Vec<f64> = (0..d.len())
        .map(|k| spec.alpha * d[k] + (1.0 - spec.alpha) * h[k] + noise[k])
        .collect();
    Ok(LabeledEmbedding::fake(
        donor.subject_id,
        host.host_subject_id,
        method,
        EmbeddingVector::unit_or_normalize(blended)?,
    )?)
}

/// Re-enacts the host's expression: `normalize(host + noise)`, identity kept.
pub fn simulate_expression_swap(
    host: &LabeledEmbedding,
    method: Method,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledEmbedding, SimulationError> {
    check_kind(method, SwapKind::ExpressionSwap)?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SimulationError::InvalidSpec("noise_sigma must be non-negative"));
    }
    let h = host.embedding.as_slice();
    let noise = scaled_noise(h.len(), noise_sigma, seed);
    let perturbed: Vec<f64> = h.iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(LabeledEmbedding::fake(
        host.host_subject_id,
        host.host_subject_id,
        method,
        EmbeddingVector::unit_or_normalize(perturbed)?,
    )?)
}
