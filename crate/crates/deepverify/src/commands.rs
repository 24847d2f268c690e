//! The six subcommands as plain functions over [`Options`].

use std::path::{Path, PathBuf};

use deepverify_core::metrics::EvalReport;
use deepverify_core::pipeline::{self, PipelineError, Projection};
use deepverify_core::EmbeddingDataset;
use log::{info, warn};

use crate::config::{ConfigError, RunConfig};
use crate::io::{self, DataFormat, IoError};
use crate::manifest::{FileDigest, Manifest};

pub const DEFAULT_OUT_DIR: &str = "deepverify-out";

/// Flags shared by the subcommands; each one overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Options {
    /// Run configuration (`section.key = value` lines)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training objective
    #[arg(long, value_name = "NAME", value_parser = |s: &str| s.parse::<deepverify_core::margin::LossPreset>())]
    pub loss: Option<deepverify_core::margin::LossPreset>,
    /// Gallery templates per subject
    #[arg(long, value_name = "N")]
    pub gallery_size: Option<usize>,
    /// Probe-to-gallery score aggregation
    #[arg(long, value_name = "mean|max", value_parser = |s: &str| s.parse::<deepverify_core::protocol::Aggregation>())]
    pub aggregation: Option<deepverify_core::protocol::Aggregation>,
    /// Encoding of written embedding files
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {error}")]
    Config { origin: String, error: ConfigError },
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for everything that fails
    /// while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigRead { .. } | CliError::Config { .. } => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(message) => CliError::Config {
                origin: "config".to_string(),
                error: ConfigError {
                    line: None,
                    field: None,
                    message,
                },
            },
            other => {
                // drop the variant label; the stage name is printed instead
                let full = other.to_string();
                let message = full.split_once(": ").map_or(full.as_str(), |(_, rest)| rest).to_string();
                CliError::Stage {
                    stage: other.stage(),
                    message,
                }
            }
        }
    }
}

fn load_error(e: IoError) -> CliError {
    match e {
        IoError::Fs { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Stage {
            stage: "load",
            message: other.to_string(),
        },
    }
}

/// What a command leaves behind.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: Option<PathBuf>,
    /// Human-readable result, printed to stdout by the binary.
    pub summary: String,
}

struct Loaded {
    cfg: RunConfig,
    source: Option<Vec<u8>>,
}

fn load_config(opts: &Options) -> Result<Loaded, CliError> {
    let (mut cfg, source, origin) = match &opts.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|source| CliError::ConfigRead {
                path: path.clone(),
                source,
            })?;
            let origin = path.display().to_string();
            let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config {
                origin: origin.clone(),
                error: ConfigError {
                    line: None,
                    field: None,
                    message: "not valid UTF-8".to_string(),
                },
            })?;
            let cfg = RunConfig::parse(text).map_err(|error| CliError::Config {
                origin: origin.clone(),
                error,
            })?;
            (cfg, Some(bytes), origin)
        }
        None => (RunConfig::default(), None, "defaults".to_string()),
    };
    let flag_error = |error| CliError::Config {
        origin: format!("{origin} with command-line flags"),
        error,
    };
    if let Some(seed) = opts.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(preset) = opts.loss {
        cfg.set_loss(preset).map_err(flag_error)?;
    }
    if let Some(g) = opts.gallery_size {
        cfg.set_gallery_size(g);
    }
    if let Some(a) = opts.aggregation {
        cfg.set_aggregation(a);
    }
    cfg.validate().map_err(flag_error)?;
    Ok(Loaded { cfg, source })
}

/// Output directory that records what it writes and never overwrites inputs.
struct OutDir {
    root: PathBuf,
    inputs: Vec<PathBuf>,
    manifest: Manifest,
}

impl OutDir {
    fn create(opts: &Options, loaded: &Loaded, command: &str) -> Result<Self, CliError> {
        let root = opts
            .out
            .clone()
            .or_else(|| loaded.cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        std::fs::create_dir_all(&root).map_err(|e| CliError::Stage {
            stage: "output",
            message: format!("cannot create {}: {e}", root.display()),
        })?;
        let manifest = Manifest::new(
            command,
            loaded.cfg.pipeline.seed,
            loaded.cfg.render(),
            loaded.source.as_deref(),
        );
        Ok(OutDir {
            root,
            inputs: Vec::new(),
            manifest,
        })
    }

    fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        if let Ok(p) = path.canonicalize() {
            self.inputs.push(p);
        }
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.manifest.inputs.push(FileDigest::of(&name, bytes));
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Ok(existing) = path.canonicalize() {
            if self.inputs.contains(&existing) {
                return Err(CliError::Usage(format!(
                    "refusing to overwrite input file {}",
                    path.display()
                )));
            }
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Stage {
            stage: "output",
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        self.manifest.outputs.push(FileDigest::of(name, bytes));
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        let config = self.manifest.config.clone();
        self.put("config.cfg", config.as_bytes())?;
        let manifest = io::to_json(&self.manifest);
        self.put("manifest.json", &manifest)?;
        Ok(self.root)
    }
}

fn read_input(path: &Path, out: &mut OutDir) -> Result<EmbeddingDataset, CliError> {
    let bytes = io::read_bytes(path).map_err(load_error)?;
    out.add_input(path, &bytes);
    io::read_dataset(path).map_err(load_error)
}

fn write_report(out: &mut OutDir, scores: &[deepverify_core::protocol::ScoreRecord], report: &EvalReport) -> Result<(), CliError> {
    out.put("scores.csv", &io::scores_csv(scores))?;
    out.put("report.json", &io::to_json(report))?;
    out.put("report.txt", report.to_table().as_bytes())?;
    out.put("roc.csv", &io::roc_csv(report))?;
    out.put("histogram.csv", &io::histogram_csv(report))
}

fn write_projection(out: &mut OutDir, projection: &Projection) -> Result<(), CliError> {
    for w in &projection.warnings {
        warn!("tsne: {w:?}");
    }
    out.put("tsne.csv", &io::tsne_csv(&projection.points))?;
    out.put("kl_trace.csv", &io::series_csv("iteration", "kl", &projection.kl_trace))
}

/// Synthetic training and evaluation populations, before any embedding.
pub fn cmd_synth(opts: &Options) -> Result<Outcome, CliError> {
    let loaded = load_config(opts)?;
    let mut out = OutDir::create(opts, &loaded, "synth")?;
    let pops = pipeline::synthesize(&loaded.cfg.pipeline)?;
    let format = opts.format.unwrap_or_default();
    let ext = format.extension();
    out.put(&format!("train_raw.{ext}"), &io::encode_dataset(&pops.train, format))?;
    out.put(&format!("eval_raw.{ext}"), &io::encode_dataset(&pops.eval, format))?;
    let summary = format!(
        "{} training and {} evaluation records",
        pops.train.len(),
        pops.eval.len()
    );
    Ok(Outcome {
        out_dir: Some(out.finish()?),
        summary,
    })
}

/// Trains the embedder on `input` (real records only) or on the synthetic
/// training population.
pub fn cmd_train(opts: &Options, input: Option<&Path>) -> Result<Outcome, CliError> {
    let loaded = load_config(opts)?;
    let mut out = OutDir::create(opts, &loaded, "train")?;
    let data = match input {
        Some(path) => {
            let ds = read_input(path, &mut out)?;
            EmbeddingDataset::from_records(ds.dim(), ds.iter().filter(|r| r.is_real()).cloned())
                .map_err(PipelineError::from)?
        }
        None => pipeline::synthesize(&loaded.cfg.pipeline)?.train,
    };
    info!("training {} on {} records", loaded.cfg.pipeline.preset, data.len());
    let model = pipeline::train(&loaded.cfg.pipeline, &data)?;
    out.put("model.json", &io::to_json(&model))?;
    out.put("train_loss.csv", &io::series_csv("epoch", "loss", &model.loss_curve))?;
    let summary = match model.loss_curve.last() {
        Some(loss) => format!("final epoch loss {loss:.6}"),
        None => "no epochs run".to_string(),
    };
    Ok(Outcome {
        out_dir: Some(out.finish()?),
        summary,
    })
}

/// Verification protocol and report on supplied embeddings; no training.
pub fn cmd_eval(opts: &Options, input: &Path) -> Result<Outcome, CliError> {
    let loaded = load_config(opts)?;
    let mut out = OutDir::create(opts, &loaded, "eval")?;
    let ds = read_input(input, &mut out)?;
    info!("evaluating {} records of dimension {}", ds.len(), ds.dim());
    let p = &loaded.cfg.pipeline;
    let (scores, report) = pipeline::evaluate(&ds, &p.protocol, p.seed)?;
    write_report(&mut out, &scores, &report)?;
    Ok(Outcome {
        out_dir: Some(out.finish()?),
        summary: report.to_table(),
    })
}

/// t-SNE layout of supplied embeddings.
pub fn cmd_tsne(opts: &Options, input: &Path) -> Result<Outcome, CliError> {
    let loaded = load_config(opts)?;
    let mut out = OutDir::create(opts, &loaded, "tsne")?;
    let ds = read_input(input, &mut out)?;
    let stage = loaded.cfg.pipeline.tsne.clone().unwrap_or_default();
    let projection = pipeline::project(&ds, &stage, loaded.cfg.pipeline.seed)?;
    write_projection(&mut out, &projection)?;
    let summary = format!(
        "{} points, perplexity {}, final KL {:.6}",
        projection.points.len(),
        projection.perplexity,
        projection.kl_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(Outcome {
        out_dir: Some(out.finish()?),
        summary,
    })
}

/// The whole experiment: synthesize, train, simulate fakes, evaluate, project.
pub fn cmd_run(opts: &Options) -> Result<Outcome, CliError> {
    let loaded = load_config(opts)?;
    let mut out = OutDir::create(opts, &loaded, "run")?;
    let p = &loaded.cfg.pipeline;

    info!("synth: {} training, {} evaluation identities", p.population.train_identities, p.population.eval_identities);
    let pops = pipeline::synthesize(p)?;
    info!("train: {} for {} epochs", p.preset, p.train.epochs);
    let model = pipeline::train(p, &pops.train)?;
    out.put("model.json", &io::to_json(&model))?;
    out.put("train_loss.csv", &io::series_csv("epoch", "loss", &model.loss_curve))?;

    info!("simulate: {} swap plans", p.swaps.len());
    let evaluation = pipeline::build_evaluation_set(p, &model, &pops.eval)?;
    let format = opts.format.unwrap_or_default();
    out.put(
        &format!("embeddings.{}", format.extension()),
        &io::encode_dataset(&evaluation, format),
    )?;

    info!("protocol: gallery size {}, {} aggregation", p.protocol.gallery_size, p.protocol.aggregation);
    let (scores, report) = pipeline::evaluate(&evaluation, &p.protocol, p.seed)?;
    write_report(&mut out, &scores, &report)?;

    if let Some(stage) = &p.tsne {
        info!("tsne: up to {} points", stage.max_points);
        let projection = pipeline::project(&evaluation, stage, p.seed)?;
        write_projection(&mut out, &projection)?;
    }
    Ok(Outcome {
        out_dir: Some(out.finish()?),
        summary: report.to_table(),
    })
}

/// Prints the table of a saved report (a `report.json` or a directory holding one).
pub fn cmd_report(input: &Path) -> Result<Outcome, CliError> {
    let path = if input.is_dir() {
        input.join("report.json")
    } else {
        input.to_path_buf()
    };
    let report: EvalReport = io::read_json(&path).map_err(load_error)?;
    Ok(Outcome {
        out_dir: None,
        summary: report.to_table(),
    })
}
