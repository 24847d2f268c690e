//! Gallery/probe verification protocol.
//!
//! Each subject enrolls `g` real embeddings. A real probe is scored against its
//! own subject's gallery (genuine); a fake probe is scored against the gallery
//! of its host, the identity whose video was manipulated (imposter).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingDataset, EmbeddingVector, LabeledEmbedding, Method};
use crate::seed;

pub const DEFAULT_GALLERY_SIZE: usize = 20;
pub const DEFAULT_PROBE_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("insufficient enrollment: subjects {0:?} have fewer real records than the gallery size")]
    InsufficientEnrollment(Vec<u32>),
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("probe {probe} targets subject {subject}, which has no gallery")]
    UnknownSubject { probe: usize, subject: u32 },
    #[error("training and evaluation subjects overlap: {0:?}")]
    SubjectOverlap(Vec<u32>),
    #[error("dimension mismatch between probe and gallery")]
    DimensionMismatch,
    #[error("gallery size must be at least 1")]
    InvalidGallerySize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(alloc::format!("unknown aggregation `{other}` (expected mean|max)")),
        }
    }
}

/// Enrolled templates per subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    size: usize,
    templates: BTreeMap<u32, Vec<EmbeddingVector>>,
    record_indices: BTreeMap<u32, Vec<usize>>,
}

impl Gallery {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn subjects(&self) -> impl Iterator<Item = u32> + '_ {
        self.templates.keys().copied()
    }

    pub fn templates(&self, subject: u32) -> Option<&[EmbeddingVector]> {
        self.templates.get(&subject).map(Vec::as_slice)
    }

    /// Dataset indices of the records enrolled for `subject`.
    pub fn record_indices(&self, subject: u32) -> Option<&[usize]> {
        self.record_indices.get(&subject).map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    /// Index of the record in the source dataset.
    pub record_index: usize,
    pub record: LabeledEmbedding,
}

/// Probe records in dataset order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Keeps at most `cap` probes per host subject, chosen by seeded sampling
    /// without replacement; survivors keep their original order.
    pub fn with_cap(self, cap: usize, seed: u64) -> ProbeSet {
        let mut by_host: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (pos, p) in self.probes.iter().enumerate() {
            by_host.entry(p.record.host_subject_id).or_default().push(pos);
        }
        let mut rng = seed::rng(seed);
        let mut keep = alloc::vec![false; self.probes.len()];
        for positions in by_host.values() {
            if positions.len() <= cap {
                positions.iter().for_each(|&p| keep[p] = true);
            } else {
                for i in index::sample(&mut rng, positions.len(), cap) {
                    keep[positions[i]] = true;
                }
            }
        }
        ProbeSet {
            probes: self
                .probes
                .into_iter()
                .zip(keep)
                .filter_map(|(p, k)| k.then_some(p))
                .collect(),
        }
    }
}

/// Enrolls `g` real records per subject by seeded sampling without
/// replacement; every other record becomes a probe.
///
/// Subjects are those with real records plus every host targeted by a fake.
pub fn build_gallery(
    dataset: &EmbeddingDataset,
    g: usize,
    seed: u64,
) -> Result<(Gallery, ProbeSet), ProtocolError> {
    if g == 0 {
        return Err(ProtocolError::InvalidGallerySize);
    }
    let mut real_by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.iter().enumerate() {
        let entry = real_by_subject.entry(r.host_subject_id).or_default();
        if r.is_real() {
            entry.push(i);
        }
    }
    let short: Vec<u32> = real_by_subject
        .iter()
        .filter(|(_, idx)| idx.len() < g)
        .map(|(&s, _)| s)
        .collect();
    if !short.is_empty() {
        return Err(ProtocolError::InsufficientEnrollment(short));
    }

    let mut rng = seed::rng(seed);
    let mut enrolled = alloc::vec![false; dataset.len()];
    let mut templates = BTreeMap::new();
    let mut record_indices = BTreeMap::new();
    for (&subject, indices) in &real_by_subject {
        let mut chosen: Vec<usize> = index::sample(&mut rng, indices.len(), g)
            .into_iter()
            .map(|i| indices[i])
            .collect();
        chosen.sort_unstable();
        chosen.iter().for_each(|&i| enrolled[i] = true);
        templates.insert(
            subject,
            chosen
                .iter()
                .map(|&i| dataset.records()[i].embedding.clone())
                .collect(),
        );
        record_indices.insert(subject, chosen);
    }
    let probes = dataset
        .iter()
        .enumerate()
        .filter(|(i, _)| !enrolled[*i])
        .map(|(record_index, r)| Probe {
            record_index,
            record: r.clone(),
        })
        .collect();
    Ok((
        Gallery {
            size: g,
            templates,
            record_indices,
        },
        ProbeSet { probes },
    ))
}

/// Aggregated cosine similarity of one probe against one subject's templates.
pub fn match_probe(
    probe: &EmbeddingVector,
    gallery: &[EmbeddingVector],
    aggregation: Aggregation,
) -> Result<f64, ProtocolError> {
    if gallery.is_empty() {
        return Err(ProtocolError::EmptyGallery);
    }
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    for t in gallery {
        let c = cosine_similarity(probe, t).map_err(|_| ProtocolError::DimensionMismatch)?;
        sum += c;
        max = max.max(c);
    }
    Ok(match aggregation {
        Aggregation::Mean => (sum / gallery.len() as f64).clamp(-1.0, 1.0),
        Aggregation::Max => max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreKind {
    Genuine,
    Imposter,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Genuine => "genuine",
            ScoreKind::Imposter => "imposter",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genuine" => Ok(ScoreKind::Genuine),
            "imposter" | "impostor" => Ok(ScoreKind::Imposter),
            other => Err(alloc::format!("unknown score kind `{other}`")),
        }
    }
}

/// One verification score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub score: f64,
    pub kind: ScoreKind,
    /// [`Method::None`] for genuine scores.
    pub method: Method,
    /// Subject whose gallery produced the score.
    pub subject: u32,
}

/// Scores every probe; output order and length follow the probe set.
pub fn run_protocol(
    gallery: &Gallery,
    probes: &ProbeSet,
    aggregation: Aggregation,
) -> Result<Vec<ScoreRecord>, ProtocolError> {
    probes
        .probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let subject = p.record.host_subject_id;
            let templates = gallery
                .templates(subject)
                .ok_or(ProtocolError::UnknownSubject { probe: i, subject })?;
            let score = match_probe(&p.record.embedding, templates, aggregation)?;
            let kind = if p.record.is_real() {
                ScoreKind::Genuine
            } else {
                ScoreKind::Imposter
            };
            Ok(ScoreRecord {
                score,
                kind,
                method: p.record.method,
                subject,
            })
        })
        .collect()
}

/// Fails with the sorted overlapping ids when any subject appears in both sets.
pub fn assert_subject_disjoint(
    training_ids: &BTreeSet<u32>,
    evaluation_ids: &BTreeSet<u32>,
) -> Result<(), ProtocolError> {
    let overlap: Vec<u32> = training_ids.intersection(evaluation_ids).copied().collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(ProtocolError::SubjectOverlap(overlap))
    }
}
