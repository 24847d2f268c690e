//! Embedding vectors, labelled records and datasets.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::dot;

/// Allowed deviation of a normalized vector's L2 norm from one.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Vectors with a norm at or below this cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("vector is not unit-norm (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("inconsistent record: {0}")]
    InconsistentRecord(&'static str),
}

/// A unit-norm feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps values that are already unit-norm within [`NORM_TOLERANCE`].
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = crate::linalg::norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE || !norm.is_finite() {
            return Err(EmbeddingError::NotNormalized { norm });
        }
        Ok(EmbeddingVector(values))
    }

    /// Keeps `values` as they are when already unit-norm within tolerance,
    /// otherwise L2-normalizes them.
    pub fn unit_or_normalize(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = crate::linalg::norm(&values);
        if norm.is_finite() && (norm - 1.0).abs() <= NORM_TOLERANCE {
            Ok(EmbeddingVector(values))
        } else {
            l2_normalize(&values)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Rounds every component to `f32` precision, the on-disk width.
    pub(crate) fn quantize(&mut self) {
        for v in &mut self.0 {
            *v = f64::from(*v as f32);
        }
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<EmbeddingVector, EmbeddingError> {
    let norm = crate::linalg::norm(v);
    if !(norm > DEGENERATE_NORM) || !norm.is_finite() {
        return Err(EmbeddingError::DegenerateVector { norm });
    }
    Ok(EmbeddingVector(v.iter().map(|x| x / norm).collect()))
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
///
/// The result is bit-for-bit symmetric in its arguments.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(dot(u.as_slice(), v.as_slice()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Realness {
    Real,
    Fake,
}

impl Realness {
    pub fn code(self) -> u8 {
        match self {
            Realness::Real => 0,
            Realness::Fake => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Realness::Real),
            1 => Some(Realness::Fake),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Realness::Real => "real",
            Realness::Fake => "fake",
        }
    }
}

impl FromStr for Realness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "0" => Ok(Realness::Real),
            "fake" | "1" => Ok(Realness::Fake),
            other => Err(alloc::format!("unknown realness `{other}`")),
        }
    }
}

/// Which part of the face a manipulation replaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SwapKind {
    /// The whole face is replaced by a donor's; identity features are corrupted.
    IdentitySwap,
    /// Only the expression is re-enacted; identity features are kept.
    ExpressionSwap,
}

impl SwapKind {
    pub fn name(self) -> &'static str {
        match self {
            SwapKind::IdentitySwap => "identity-swap",
            SwapKind::ExpressionSwap => "expression-swap",
        }
    }
}

/// Manipulation-method tag. Codes are the ones stored in EMB1 files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    None,
    FaceSwap,
    Face2Face,
    FaceShifter,
    NeuralTextures,
    Deepfakes,
    FaceSwapK,
}

impl Method {
    pub const FAKES: [Method; 6] = [
        Method::FaceSwap,
        Method::Face2Face,
        Method::FaceShifter,
        Method::NeuralTextures,
        Method::Deepfakes,
        Method::FaceSwapK,
    ];

    pub fn code(self) -> u8 {
        match self {
            Method::None => 0,
            Method::FaceSwap => 1,
            Method::Face2Face => 2,
            Method::FaceShifter => 3,
            Method::NeuralTextures => 4,
            Method::Deepfakes => 5,
            Method::FaceSwapK => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Method::None),
            1..=6 => Some(Self::FAKES[usize::from(code) - 1]),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::FaceSwap => "FaceSwap",
            Method::Face2Face => "Face2Face",
            Method::FaceShifter => "FaceShifter",
            Method::NeuralTextures => "NeuralTextures",
            Method::Deepfakes => "Deepfakes",
            Method::FaceSwapK => "FaceSwap-K",
        }
    }

    /// `None` for [`Method::None`].
    pub fn swap_kind(self) -> Option<SwapKind> {
        match self {
            Method::None => None,
            Method::Face2Face | Method::NeuralTextures => Some(SwapKind::ExpressionSwap),
            _ => Some(SwapKind::IdentitySwap),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .flat_map(|c| c.to_lowercase())
            .collect();
        let m = match key.as_str() {
            "none" | "" => Method::None,
            "faceswap" => Method::FaceSwap,
            "face2face" => Method::Face2Face,
            "faceshifter" => Method::FaceShifter,
            "neuraltextures" => Method::NeuralTextures,
            "deepfakes" => Method::Deepfakes,
            "faceswapk" | "faceswapkowalski" => Method::FaceSwapK,
            _ => return Err(alloc::format!("unknown manipulation method `{}`", s.trim())),
        };
        Ok(m)
    }
}

/// One face embedding with its identity and provenance.
///
/// For fakes, `host_subject_id` is the target identity whose gallery the record
/// is matched against; for real records it equals `subject_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub subject_id: u32,
    pub host_subject_id: u32,
    pub realness: Realness,
    pub method: Method,
    pub embedding: EmbeddingVector,
}

impl LabeledEmbedding {
    pub fn real(subject_id: u32, embedding: EmbeddingVector) -> Self {
        LabeledEmbedding {
            subject_id,
            host_subject_id: subject_id,
            realness: Realness::Real,
            method: Method::None,
            embedding,
        }
    }

    pub fn fake(
        subject_id: u32,
        host_subject_id: u32,
        method: Method,
        embedding: EmbeddingVector,
    ) -> Result<Self, EmbeddingError> {
        let record = LabeledEmbedding {
            subject_id,
            host_subject_id,
            realness: Realness::Fake,
            method,
            embedding,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn is_real(&self) -> bool {
        self.realness == Realness::Real
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        match self.realness {
            Realness::Real if self.method != Method::None => Err(
                EmbeddingError::InconsistentRecord("real record carries a manipulation method"),
            ),
            Realness::Real if self.host_subject_id != self.subject_id => Err(
                EmbeddingError::InconsistentRecord("real record has a different host subject"),
            ),
            Realness::Fake if self.method == Method::None => Err(
                EmbeddingError::InconsistentRecord("fake record has no manipulation method"),
            ),
            _ => Ok(()),
        }
    }
}

/// Ordered collection of records sharing one dimension.
///
/// Components are held at `f32` precision so that a dataset survives an EMB1
/// round trip bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDataset {
    dim: usize,
    records: Vec<LabeledEmbedding>,
}

impl EmbeddingDataset {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::DimensionTooSmall(dim));
        }
        Ok(EmbeddingDataset {
            dim,
            records: Vec::new(),
        })
    }

    pub fn from_records(
        dim: usize,
        records: impl IntoIterator<Item = LabeledEmbedding>,
    ) -> Result<Self, EmbeddingError> {
        let mut ds = Self::new(dim)?;
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, mut record: LabeledEmbedding) -> Result<(), EmbeddingError> {
        if record.embedding.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: record.embedding.dim(),
            });
        }
        record.validate()?;
        record.embedding.quantize();
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LabeledEmbedding] {
        &self.records
    }

    pub fn iter(&self) -> core::slice::Iter<'_, LabeledEmbedding> {
        self.records.iter()
    }

    /// Sorted, de-duplicated subject ids of all records.
    pub fn subject_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl<'a> IntoIterator for &'a EmbeddingDataset {
    type Item = &'a LabeledEmbedding;
    type IntoIter = core::slice::Iter<'a, LabeledEmbedding>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
