//! End-to-end experiment: synthetic identities, embedder training, deepfake
//! simulation, the verification protocol, metrics and t-SNE.
//!
//! Every stage draws from its own seed, derived from the global seed and the
//! stage name (see [`crate::seed::stage_seed`]):
//!
//! | stage               | used for                                   |
//! |---------------------|--------------------------------------------|
//! | `synth.train`       | training identities                        |
//! | `synth.eval`        | evaluation identities                      |
//! | `train`             | network init, shuffling, triplet mining    |
//! | `simulate`          | donor choice; per-fake noise via item seed |
//! | `protocol.gallery`  | gallery enrollment                         |
//! | `protocol.probes`   | per-subject probe cap                      |
//! | `tsne.sample`       | point subsample                            |
//! | `tsne`              | layout initialization                      |

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingDataset, EmbeddingError, LabeledEmbedding, Method, Realness, SwapKind};
use crate::linalg::Matrix;
use crate::margin::LossPreset;
use crate::metrics::{build_report, EvalReport, MetricsError, DEFAULT_BINS};
use crate::protocol::{
    assert_subject_disjoint, build_gallery, run_protocol, Aggregation, ProtocolError, ScoreRecord,
    DEFAULT_GALLERY_SIZE, DEFAULT_PROBE_CAP,
};
use crate::seed;
use crate::simulate::{simulate_expression_swap, simulate_identity_swap, SimulationError, SwapSpec};
use crate::trainer::{
    extract_embeddings, generate_identities, train_embedder, LossSpec, SyntheticSpec, TrainConfig,
    TrainError, TrainedEmbedder,
};
use crate::tsne::{run_tsne, TsneConfig, TsneError, TsneWarning};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("synth: {0}")]
    Synth(TrainError),
    #[error("train: {0}")]
    Train(TrainError),
    #[error("extract: {0}")]
    Extract(TrainError),
    #[error("simulate: {0}")]
    Simulate(#[from] SimulationError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("tsne: {0}")]
    Tsne(#[from] TsneError),
    #[error("dataset: {0}")]
    Dataset(#[from] EmbeddingError),
}

impl PipelineError {
    /// Name of the stage that failed.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Synth(_) => "synth",
            PipelineError::Train(_) => "train",
            PipelineError::Extract(_) => "extract",
            PipelineError::Simulate(_) | PipelineError::Dataset(_) => "simulate",
            PipelineError::Protocol(_) => "protocol",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Tsne(_) => "tsne",
        }
    }
}

/// Sizes of the two synthetic populations.
///
/// Training and evaluation identities are generated independently and carry
/// disjoint subject ids unless the first ids are configured to overlap, which
/// the run rejects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub raw_dim: usize,
    pub concentration: f64,
    pub train_identities: usize,
    pub train_samples: usize,
    pub train_first_subject: u32,
    pub eval_identities: usize,
    /// Real records per evaluation subject (gallery plus real probes).
    pub eval_real_samples: usize,
    pub eval_first_subject: u32,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            raw_dim: 64,
            concentration: 10.0,
            train_identities: 50,
            train_samples: 60,
            train_first_subject: 0,
            eval_identities: 10,
            eval_real_samples: 120,
            eval_first_subject: 1000,
        }
    }
}

/// How many fakes of one method to make per evaluation subject, and how.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapPlan {
    pub method: Method,
    /// Donor weight; ignored by expression swaps.
    pub alpha: f64,
    pub noise_sigma: f64,
    pub per_subject: usize,
}

impl SwapPlan {
    pub fn new(method: Method, per_subject: usize) -> Self {
        SwapPlan {
            method,
            alpha: crate::simulate::DEFAULT_ALPHA,
            noise_sigma: crate::simulate::DEFAULT_NOISE_SIGMA,
            per_subject,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub gallery_size: usize,
    /// Maximum probes per host subject.
    pub probe_cap: usize,
    pub aggregation: Aggregation,
    pub bins: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            gallery_size: DEFAULT_GALLERY_SIZE,
            probe_cap: DEFAULT_PROBE_CAP,
            aggregation: Aggregation::Mean,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneStage {
    /// Evaluation records are subsampled to at most this many points.
    pub max_points: usize,
    pub config: TsneConfig,
}

impl Default for TsneStage {
    fn default() -> Self {
        TsneStage {
            max_points: 600,
            config: TsneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preset: LossPreset,
    pub loss: LossSpec,
    pub population: PopulationSpec,
    pub train: TrainConfig,
    pub swaps: Vec<SwapPlan>,
    pub protocol: ProtocolConfig,
    pub tsne: Option<TsneStage>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            preset: LossPreset::CosFace,
            loss: LossSpec::from_preset(LossPreset::CosFace),
            population: PopulationSpec::default(),
            train: TrainConfig::default(),
            swaps: alloc::vec![
                SwapPlan::new(Method::FaceSwap, 50),
                SwapPlan::new(Method::NeuralTextures, 50),
            ],
            protocol: ProtocolConfig::default(),
            tsne: Some(TsneStage::default()),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let p = &self.population;
        if p.train_identities < 2 || p.eval_identities < 2 {
            return bad("both populations need at least two identities");
        }
        if p.train_samples == 0 {
            return bad("train_samples must be positive");
        }
        if p.eval_real_samples < self.protocol.gallery_size {
            return bad("eval_real_samples must be at least the gallery size");
        }
        if self.protocol.gallery_size == 0 || self.protocol.probe_cap == 0 || self.protocol.bins == 0 {
            return bad("gallery size, probe cap and bins must be positive");
        }
        let mut seen = BTreeSet::new();
        for s in &self.swaps {
            if s.method == Method::None {
                return bad("swap plans need a manipulation method");
            }
            if !seen.insert(s.method) {
                return bad("each method may appear in only one swap plan");
            }
            if !(0.0..=1.0).contains(&s.alpha) {
                return bad("alpha must lie in [0, 1]");
            }
            if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
                return bad("noise_sigma must be non-negative");
            }
        }
        if self.train.embedding_dim < 2 || p.raw_dim < 2 {
            return bad("dimensions must be at least 2");
        }
        if let Some(t) = &self.tsne {
            if t.max_points < 4 {
                return bad("tsne.max_points must be at least 4");
            }
            t.config.validate()?;
        }
        self.train.validate().map_err(PipelineError::Train)?;
        Ok(())
    }

    fn train_spec(&self) -> SyntheticSpec {
        let p = &self.population;
        SyntheticSpec {
            num_identities: p.train_identities,
            samples_per_identity: p.train_samples,
            raw_dim: p.raw_dim,
            concentration: p.concentration,
            seed: seed::stage_seed(self.seed, "synth.train"),
            first_subject_id: p.train_first_subject,
        }
    }

    fn eval_spec(&self) -> SyntheticSpec {
        let p = &self.population;
        SyntheticSpec {
            num_identities: p.eval_identities,
            samples_per_identity: p.eval_real_samples + self.source_pool_size(),
            raw_dim: p.raw_dim,
            concentration: p.concentration,
            seed: seed::stage_seed(self.seed, "synth.eval"),
            first_subject_id: p.eval_first_subject,
        }
    }

    /// Frames per evaluation subject reserved as fake sources: one host frame
    /// per fake. They never enter the gallery or the real probes.
    pub fn source_pool_size(&self) -> usize {
        self.swaps.iter().map(|s| s.per_subject).sum()
    }
}

/// Raw (pre-embedding) synthetic populations.
#[derive(Clone, Debug, PartialEq)]
pub struct Populations {
    pub train: EmbeddingDataset,
    /// Identity-major; per subject, the first `eval_real_samples` records are
    /// the real frames and the rest the fake source pool.
    pub eval: EmbeddingDataset,
}

pub fn synthesize(cfg: &PipelineConfig) -> Result<Populations, PipelineError> {
    cfg.validate()?;
    let train = generate_identities(&cfg.train_spec()).map_err(PipelineError::Synth)?;
    let eval = generate_identities(&cfg.eval_spec()).map_err(PipelineError::Synth)?;
    let train_ids: BTreeSet<u32> = train.dataset.subject_ids().into_iter().collect();
    let eval_ids: BTreeSet<u32> = eval.dataset.subject_ids().into_iter().collect();
    assert_subject_disjoint(&train_ids, &eval_ids)?;
    Ok(Populations {
        train: train.dataset,
        eval: eval.dataset,
    })
}

pub fn train(cfg: &PipelineConfig, train_raw: &EmbeddingDataset) -> Result<TrainedEmbedder, PipelineError> {
    let tc = TrainConfig {
        seed: seed::stage_seed(cfg.seed, "train"),
        ..cfg.train.clone()
    };
    train_embedder(train_raw, &cfg.loss, &tc).map_err(PipelineError::Train)
}

/// Embeds the evaluation population and appends simulated fakes after the
/// real records.
pub fn build_evaluation_set(
    cfg: &PipelineConfig,
    model: &TrainedEmbedder,
    eval_raw: &EmbeddingDataset,
) -> Result<EmbeddingDataset, PipelineError> {
    let embedded = extract_embeddings(&model.network, eval_raw).map_err(PipelineError::Extract)?;
    let mut frames: BTreeMap<u32, Vec<&LabeledEmbedding>> = BTreeMap::new();
    for r in embedded.iter() {
        frames.entry(r.subject_id).or_default().push(r);
    }
    let real_n = cfg.population.eval_real_samples;
    let pool_n = cfg.source_pool_size();
    if let Some((&s, _)) = frames.iter().find(|(_, f)| f.len() != real_n + pool_n) {
        return Err(PipelineError::Config(alloc::format!(
            "evaluation subject {s} does not have {} frames",
            real_n + pool_n
        )));
    }
    let subjects: Vec<u32> = frames.keys().copied().collect();

    let mut out = EmbeddingDataset::new(embedded.dim())?;
    for s in &subjects {
        for r in &frames[s][..real_n] {
            out.push((*r).clone())?;
        }
    }
    let stage = seed::stage_seed(cfg.seed, "simulate");
    let mut rng = seed::rng(stage);
    let mut item = 0u64;
    for (si, s) in subjects.iter().enumerate() {
        let pool = &frames[s][real_n..];
        let mut cursor = 0;
        for plan in &cfg.swaps {
            for _ in 0..plan.per_subject {
                let host = pool[cursor];
                cursor += 1;
                let fake_seed = seed::item_seed(stage, item);
                item += 1;
                let fake = match plan.method.swap_kind() {
                    Some(SwapKind::IdentitySwap) => {
                        let mut d = rng.random_range(0..subjects.len() - 1);
                        if d >= si {
                            d += 1;
                        }
                        let donor_pool = &frames[&subjects[d]][real_n..];
                        let donor = donor_pool[rng.random_range(0..donor_pool.len())];
                        let spec = SwapSpec {
                            alpha: plan.alpha,
                            noise_sigma: plan.noise_sigma,
                            seed: fake_seed,
                        };
                        simulate_identity_swap(donor, host, plan.method, &spec)?
                    }
                    _ => simulate_expression_swap(host, plan.method, plan.noise_sigma, fake_seed)?,
                };
                out.push(fake)?;
            }
        }
    }
    Ok(out)
}

/// Report metadata derived only from the protocol inputs, so that evaluating
/// the same embeddings from any entry point yields the same report.
fn report_metadata(dataset: &EmbeddingDataset, protocol: &ProtocolConfig, seed: u64) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("aggregation".to_string(), protocol.aggregation.name().to_string());
    m.insert("dim".to_string(), dataset.dim().to_string());
    m.insert("gallery_size".to_string(), protocol.gallery_size.to_string());
    m.insert("probe_cap".to_string(), protocol.probe_cap.to_string());
    m.insert("records".to_string(), dataset.len().to_string());
    m.insert("seed".to_string(), seed.to_string());
    m
}

/// Gallery enrollment, probe capping, scoring and the per-method report.
pub fn evaluate(
    dataset: &EmbeddingDataset,
    protocol: &ProtocolConfig,
    global_seed: u64,
) -> Result<(Vec<ScoreRecord>, EvalReport), PipelineError> {
    let (gallery, probes) = build_gallery(
        dataset,
        protocol.gallery_size,
        seed::stage_seed(global_seed, "protocol.gallery"),
    )?;
    let probes = probes.with_cap(protocol.probe_cap, seed::stage_seed(global_seed, "protocol.probes"));
    let scores = run_protocol(&gallery, &probes, protocol.aggregation)?;
    let report = build_report(
        &scores,
        report_metadata(dataset, protocol, global_seed),
        protocol.bins,
    )?;
    Ok((scores, report))
}

/// One t-SNE point with the labels needed for plotting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsnePoint {
    pub x: f64,
    pub y: f64,
    pub subject: u32,
    pub realness: Realness,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<TsnePoint>,
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
    pub warnings: Vec<TsneWarning>,
}

/// t-SNE of (a seeded subsample of) the dataset's embeddings.
pub fn project(dataset: &EmbeddingDataset, stage: &TsneStage, global_seed: u64) -> Result<Projection, PipelineError> {
    let n = dataset.len();
    let chosen: Vec<usize> = if n > stage.max_points {
        let mut rng = seed::rng(seed::stage_seed(global_seed, "tsne.sample"));
        let mut v = index::sample(&mut rng, n, stage.max_points).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let rows: Vec<&[f64]> = chosen.iter().map(|&i| dataset.records()[i].embedding.as_slice()).collect();
    let x = Matrix::from_rows(&rows).ok_or(TsneError::TooFewPoints { needed: 4, got: rows.len() })?;
    let cfg = TsneConfig {
        seed: seed::stage_seed(global_seed, "tsne"),
        ..stage.config.clone()
    };
    let out = run_tsne(&x, &cfg)?;
    let points = chosen
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let r = &dataset.records()[i];
            TsnePoint {
                x: out.layout.get(row, 0),
                y: out.layout.get(row, 1),
                subject: r.subject_id,
                realness: r.realness,
                method: r.method,
            }
        })
        .collect();
    Ok(Projection {
        points,
        kl_trace: out.kl_trace,
        perplexity: out.perplexity,
        warnings: out.warnings,
    })
}

/// Everything a full run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub populations: Populations,
    pub model: TrainedEmbedder,
    pub evaluation: EmbeddingDataset,
    pub scores: Vec<ScoreRecord>,
    pub report: EvalReport,
    pub projection: Option<Projection>,
}

pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let populations = synthesize(cfg)?;
    let model = train(cfg, &populations.train)?;
    let evaluation = build_evaluation_set(cfg, &model, &populations.eval)?;
    let (scores, report) = evaluate(&evaluation, &cfg.protocol, cfg.seed)?;
    let projection = match &cfg.tsne {
        Some(stage) => Some(project(&evaluation, stage, cfg.seed)?),
        None => None,
    };
    Ok(RunOutput {
        populations,
        model,
        evaluation,
        scores,
        report,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ScoreKind;

    fn small() -> PipelineConfig {
        PipelineConfig {
            seed: 5,
            population: PopulationSpec {
                train_identities: 4,
                train_samples: 20,
                eval_identities: 4,
                eval_real_samples: 12,
                ..PopulationSpec::default()
            },
            train: TrainConfig {
                epochs: 3,
                embedding_dim: 16,
                hidden_dims: alloc::vec![32],
                ..TrainConfig::default()
            },
            swaps: alloc::vec![
                SwapPlan::new(Method::FaceSwap, 3),
                SwapPlan::new(Method::Face2Face, 2),
            ],
            protocol: ProtocolConfig {
                gallery_size: 5,
                ..ProtocolConfig::default()
            },
            tsne: Some(TsneStage {
                max_points: 30,
                config: TsneConfig {
                    iterations: 50,
                    ..TsneConfig::default()
                },
            }),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn evaluation_set_layout() {
        let cfg = small();
        let out = run(&cfg).unwrap();
        let ev = &out.evaluation;
        assert_eq!(ev.len(), 4 * 12 + 4 * 5);
        assert!(ev.records()[..48].iter().all(|r| r.is_real()));
        let fakes = &ev.records()[48..];
        assert_eq!(fakes.iter().filter(|r| r.method == Method::FaceSwap).count(), 12);
        assert!(fakes
            .iter()
            .filter(|r| r.method == Method::FaceSwap)
            .all(|r| r.subject_id != r.host_subject_id));
        assert!(fakes
            .iter()
            .filter(|r| r.method == Method::Face2Face)
            .all(|r| r.subject_id == r.host_subject_id));
        // 12 - 5 real probes and 5 fakes per subject
        assert_eq!(out.scores.len(), 4 * (7 + 5));
        assert_eq!(out.scores.iter().filter(|s| s.kind == ScoreKind::Genuine).count(), 28);
        assert_eq!(out.report.rows.len(), 2);
        assert_eq!(out.projection.unwrap().points.len(), 30);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small();
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }

    #[test]
    fn overlapping_populations_are_rejected() {
        let mut cfg = small();
        cfg.population.eval_first_subject = 2;
        assert!(matches!(
            run(&cfg),
            Err(PipelineError::Protocol(ProtocolError::SubjectOverlap(ids))) if ids == [2, 3]
        ));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small();
        cfg.population.eval_real_samples = 4;
        assert_eq!(run(&cfg).unwrap_err().stage(), "config");
        let mut cfg = small();
        cfg.swaps.push(SwapPlan::new(Method::FaceSwap, 1));
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn evaluate_reports_short_enrollment() {
        let cfg = small();
        let out = run(&cfg).unwrap();
        let protocol = ProtocolConfig {
            gallery_size: 13,
            ..cfg.protocol
        };
        assert!(matches!(
            evaluate(&out.evaluation, &protocol, cfg.seed),
            Err(PipelineError::Protocol(ProtocolError::InsufficientEnrollment(s))) if s == [1000, 1001, 1002, 1003]
        ));
    }
}
