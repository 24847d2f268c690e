//! Line-oriented run configuration.
//!
//! One `section.key = value` assignment per line; `#` starts a comment and
//! blank lines are ignored. Every key is optional and falls back to the
//! defaults of [`PipelineConfig`]. Keys:
//!
//! ```text
//! run.seed  run.out
//! loss.preset  loss.m1  loss.m2  loss.m3  loss.scale  loss.triplet_margin
//! synth.raw_dim  synth.concentration
//! synth.train_identities  synth.train_samples  synth.train_first_subject
//! synth.eval_identities  synth.eval_real_samples  synth.eval_first_subject
//! train.embedding_dim  train.hidden_dims  train.batch_size  train.epochs
//! train.learning_rate  train.lr_decay_at  train.momentum  train.weight_decay
//! swap.<method>.per_subject  swap.<method>.alpha  swap.<method>.noise_sigma
//! protocol.gallery_size  protocol.probe_cap  protocol.aggregation  protocol.bins
//! tsne.enabled  tsne.max_points  tsne.perplexity  tsne.iterations
//! tsne.learning_rate  tsne.initial_momentum  tsne.final_momentum
//! tsne.momentum_switch_iter  tsne.early_exaggeration  tsne.exaggeration_iters
//! ```
//!
//! Lists (`train.hidden_dims`, `train.lr_decay_at`) are comma separated.
//! Margin overrides (`loss.m1` .. `loss.scale`) start from the preset's values.
//! Mentioning any `swap.*` key replaces the default swap list with exactly the
//! methods named, in order of first appearance; `per_subject` defaults to 50.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use deepverify_core::margin::{LossPreset, MarginConfig, TripletConfig};
use deepverify_core::pipeline::{PipelineConfig, SwapPlan, TsneStage};
use deepverify_core::protocol::Aggregation;
use deepverify_core::trainer::LossSpec;
use deepverify_core::Method;

const DEFAULT_PER_SUBJECT: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line of the offending assignment, if any.
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            field: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "`{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Margin parameters given explicitly, remembered so that a later preset
/// change (the `--loss` flag) can re-apply them.
#[derive(Debug, Clone, Default, PartialEq)]
struct LossOverrides {
    m1: Option<(usize, f64)>,
    m2: Option<(usize, f64)>,
    m3: Option<(usize, f64)>,
    scale: Option<(usize, f64)>,
    triplet_margin: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub out: Option<PathBuf>,
    overrides: LossOverrides,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str, what: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::at(line, key, format!("expected {what}, got `{value}`")))
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_value(line, key, value, "a number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::at(line, key, format!("expected a finite number, got `{value}`")))
    }
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize, ConfigError> {
    parse_value(line, key, value, "a non-negative integer")
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::at(line, key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list<T>(value: &str, mut item: impl FnMut(&str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| item(s.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut preset: Option<LossPreset> = None;
        let mut swaps: Vec<SwapPlan> = Vec::new();
        let mut tsne_enabled = true;
        let mut tsne = TsneStage::default();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError {
                    line: Some(line),
                    field: None,
                    message: format!("expected `section.key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !key.contains('.') {
                return Err(ConfigError::at(line, key, "keys have the form `section.key`"));
            }
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(ConfigError::at(line, key, format!("already set on line {first}")));
            }

            let p = &mut cfg.pipeline;
            match key {
                "run.seed" => p.seed = parse_value(line, key, value, "an unsigned 64-bit integer")?,
                "run.out" => cfg.out = Some(PathBuf::from(value)),

                "loss.preset" => preset = Some(value.parse().map_err(|e: String| ConfigError::at(line, key, e))?),
                "loss.m1" => cfg.overrides.m1 = Some((line, parse_f64(line, key, value)?)),
                "loss.m2" => cfg.overrides.m2 = Some((line, parse_f64(line, key, value)?)),
                "loss.m3" => cfg.overrides.m3 = Some((line, parse_f64(line, key, value)?)),
                "loss.scale" => cfg.overrides.scale = Some((line, parse_f64(line, key, value)?)),
                "loss.triplet_margin" => cfg.overrides.triplet_margin = Some((line, parse_f64(line, key, value)?)),

                "synth.raw_dim" => p.population.raw_dim = parse_usize(line, key, value)?,
                "synth.concentration" => p.population.concentration = parse_f64(line, key, value)?,
                "synth.train_identities" => p.population.train_identities = parse_usize(line, key, value)?,
                "synth.train_samples" => p.population.train_samples = parse_usize(line, key, value)?,
                "synth.train_first_subject" => {
                    p.population.train_first_subject = parse_value(line, key, value, "a subject id")?
                }
                "synth.eval_identities" => p.population.eval_identities = parse_usize(line, key, value)?,
                "synth.eval_real_samples" => p.population.eval_real_samples = parse_usize(line, key, value)?,
                "synth.eval_first_subject" => {
                    p.population.eval_first_subject = parse_value(line, key, value, "a subject id")?
                }

                "train.embedding_dim" => p.train.embedding_dim = parse_usize(line, key, value)?,
                "train.hidden_dims" => p.train.hidden_dims = parse_list(value, |s| parse_usize(line, key, s))?,
                "train.batch_size" => p.train.batch_size = parse_usize(line, key, value)?,
                "train.epochs" => p.train.epochs = parse_usize(line, key, value)?,
                "train.learning_rate" => p.train.learning_rate = parse_f64(line, key, value)?,
                "train.lr_decay_at" => {
                    let v = parse_list(value, |s| parse_f64(line, key, s))?;
                    p.train.lr_decay_at = v
                        .try_into()
                        .map_err(|_| ConfigError::at(line, key, "expected two comma-separated fractions"))?;
                }
                "train.momentum" => p.train.momentum = parse_f64(line, key, value)?,
                "train.weight_decay" => p.train.weight_decay = parse_f64(line, key, value)?,

                "protocol.gallery_size" => p.protocol.gallery_size = parse_usize(line, key, value)?,
                "protocol.probe_cap" => p.protocol.probe_cap = parse_usize(line, key, value)?,
                "protocol.aggregation" => {
                    p.protocol.aggregation = value.parse().map_err(|e: String| ConfigError::at(line, key, e))?
                }
                "protocol.bins" => p.protocol.bins = parse_usize(line, key, value)?,

                "tsne.enabled" => tsne_enabled = parse_bool(line, key, value)?,
                "tsne.max_points" => tsne.max_points = parse_usize(line, key, value)?,
                "tsne.perplexity" => tsne.config.perplexity = parse_f64(line, key, value)?,
                "tsne.iterations" => tsne.config.iterations = parse_usize(line, key, value)?,
                "tsne.learning_rate" => tsne.config.learning_rate = parse_f64(line, key, value)?,
                "tsne.initial_momentum" => tsne.config.initial_momentum = parse_f64(line, key, value)?,
                "tsne.final_momentum" => tsne.config.final_momentum = parse_f64(line, key, value)?,
                "tsne.momentum_switch_iter" => tsne.config.momentum_switch_iter = parse_usize(line, key, value)?,
                "tsne.early_exaggeration" => tsne.config.early_exaggeration = parse_f64(line, key, value)?,
                "tsne.exaggeration_iters" => tsne.config.exaggeration_iters = parse_usize(line, key, value)?,

                _ if key.starts_with("swap.") => {
                    let rest = &key["swap.".len()..];
                    let Some((method, field)) = rest.rsplit_once('.') else {
                        return Err(ConfigError::at(line, key, "expected `swap.<method>.<field>`"));
                    };
                    let method: Method = method.parse().map_err(|e: String| ConfigError::at(line, key, e))?;
                    if method == Method::None {
                        return Err(ConfigError::at(line, key, "`none` is not a manipulation method"));
                    }
                    let pos = match swaps.iter().position(|s| s.method == method) {
                        Some(pos) => pos,
                        None => {
                            swaps.push(SwapPlan::new(method, DEFAULT_PER_SUBJECT));
                            swaps.len() - 1
                        }
                    };
                    let plan = &mut swaps[pos];
                    match field {
                        "per_subject" => plan.per_subject = parse_usize(line, key, value)?,
                        "alpha" => plan.alpha = parse_f64(line, key, value)?,
                        "noise_sigma" => plan.noise_sigma = parse_f64(line, key, value)?,
                        _ => {
                            return Err(ConfigError::at(
                                line,
                                key,
                                "unknown swap field (expected per_subject, alpha or noise_sigma)",
                            ))
                        }
                    }
                }
                _ => return Err(ConfigError::at(line, key, "unknown key")),
            }
        }

        if !swaps.is_empty() {
            cfg.pipeline.swaps = swaps;
        }
        cfg.pipeline.tsne = tsne_enabled.then_some(tsne);
        cfg.set_loss(preset.unwrap_or(cfg.pipeline.preset))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches the training objective, re-applying any explicit margin keys.
    pub fn set_loss(&mut self, preset: LossPreset) -> Result<(), ConfigError> {
        let o = &self.overrides;
        let loss = match LossSpec::from_preset(preset) {
            LossSpec::Margin(base) => {
                if let Some((line, _)) = o.triplet_margin {
                    return Err(ConfigError::at(line, "loss.triplet_margin", format!("does not apply to {preset}")));
                }
                LossSpec::Margin(MarginConfig {
                    m1: o.m1.map_or(base.m1, |v| v.1),
                    m2: o.m2.map_or(base.m2, |v| v.1),
                    m3: o.m3.map_or(base.m3, |v| v.1),
                    scale: o.scale.map_or(base.scale, |v| v.1),
                })
            }
            other => {
                let margin_keys = [("loss.m1", o.m1), ("loss.m2", o.m2), ("loss.m3", o.m3), ("loss.scale", o.scale)];
                if let Some((key, Some((line, _)))) = margin_keys.iter().find(|(_, v)| v.is_some()) {
                    return Err(ConfigError::at(*line, key, format!("does not apply to {preset}")));
                }
                match (other, o.triplet_margin) {
                    (LossSpec::Triplet(_), Some((_, margin))) => LossSpec::Triplet(TripletConfig { margin }),
                    (LossSpec::Softmax, Some((line, _))) => {
                        return Err(ConfigError::at(line, "loss.triplet_margin", "does not apply to softmax"))
                    }
                    (spec, _) => spec,
                }
            }
        };
        self.pipeline.preset = preset;
        self.pipeline.loss = loss;
        Ok(())
    }

    pub fn set_gallery_size(&mut self, g: usize) {
        self.pipeline.protocol.gallery_size = g;
    }

    pub fn set_aggregation(&mut self, a: Aggregation) {
        self.pipeline.protocol.aggregation = a;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.pipeline.loss {
            LossSpec::Margin(m) => m.validate().map_err(|e| ConfigError::general(e.to_string()))?,
            LossSpec::Triplet(t) => t.validate().map_err(|e| ConfigError::general(e.to_string()))?,
            LossSpec::Softmax => {}
        }
        self.pipeline.validate().map_err(|e| ConfigError::general(e.to_string()))
    }

    /// Canonical text of the effective configuration; parsing it yields the
    /// same pipeline.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("run.seed", p.seed.to_string());
        kv("loss.preset", p.preset.name().to_string());
        match &p.loss {
            LossSpec::Margin(m) => {
                kv("loss.m1", m.m1.to_string());
                kv("loss.m2", m.m2.to_string());
                kv("loss.m3", m.m3.to_string());
                kv("loss.scale", m.scale.to_string());
            }
            LossSpec::Triplet(t) => kv("loss.triplet_margin", t.margin.to_string()),
            LossSpec::Softmax => {}
        }
        let pop = &p.population;
        kv("synth.raw_dim", pop.raw_dim.to_string());
        kv("synth.concentration", pop.concentration.to_string());
        kv("synth.train_identities", pop.train_identities.to_string());
        kv("synth.train_samples", pop.train_samples.to_string());
        kv("synth.train_first_subject", pop.train_first_subject.to_string());
        kv("synth.eval_identities", pop.eval_identities.to_string());
        kv("synth.eval_real_samples", pop.eval_real_samples.to_string());
        kv("synth.eval_first_subject", pop.eval_first_subject.to_string());
        let t = &p.train;
        kv("train.embedding_dim", t.embedding_dim.to_string());
        kv(
            "train.hidden_dims",
            t.hidden_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
        );
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.lr_decay_at", format!("{}, {}", t.lr_decay_at[0], t.lr_decay_at[1]));
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        for plan in &p.swaps {
            let m = plan.method.name().to_ascii_lowercase();
            kv(&format!("swap.{m}.per_subject"), plan.per_subject.to_string());
            kv(&format!("swap.{m}.alpha"), plan.alpha.to_string());
            kv(&format!("swap.{m}.noise_sigma"), plan.noise_sigma.to_string());
        }
        let pr = &p.protocol;
        kv("protocol.gallery_size", pr.gallery_size.to_string());
        kv("protocol.probe_cap", pr.probe_cap.to_string());
        kv("protocol.aggregation", pr.aggregation.name().to_string());
        kv("protocol.bins", pr.bins.to_string());
        match &p.tsne {
            Some(ts) => {
                kv("tsne.enabled", "true".to_string());
                kv("tsne.max_points", ts.max_points.to_string());
                let c = &ts.config;
                kv("tsne.perplexity", c.perplexity.to_string());
                kv("tsne.iterations", c.iterations.to_string());
                kv("tsne.learning_rate", c.learning_rate.to_string());
                kv("tsne.initial_momentum", c.initial_momentum.to_string());
                kv("tsne.final_momentum", c.final_momentum.to_string());
                kv("tsne.momentum_switch_iter", c.momentum_switch_iter.to_string());
                kv("tsne.early_exaggeration", c.early_exaggeration.to_string());
                kv("tsne.exaggeration_iters", c.exaggeration_iters.to_string());
            }
            None => kv("tsne.enabled", "false".to_string()),
        }
        s
    }
}
