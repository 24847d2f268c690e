//! Desk-scale embedder training on synthetic identity clusters.
//!
//! A small tanh feed-forward network (`raw_dim -> 128 -> 128 -> d`, then L2
//! normalization) stands in for a deep face-recognition backbone. It is trained
//! with mini-batch SGD using momentum, weight decay and a two-step learning-rate
//! decay, under any of the six objectives in [`crate::margin`].

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    l2_normalize, EmbeddingDataset, EmbeddingError, EmbeddingVector, LabeledEmbedding,
};
use crate::linalg::Matrix;
use crate::margin::{
    margin_loss_raw, plain_softmax_loss, triplet_raw, ClassHead, LossError, LossPreset,
    MarginConfig, TripletConfig,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Parameters of a synthetic identity population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub raw_dim: usize,
    /// Inverse spread of samples around their identity center.
    pub concentration: f64,
    pub seed: u64,
    /// Subject id of the first identity; the rest follow consecutively.
    pub first_subject_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticIdentities {
    /// Identity-major: all samples of the first subject, then the next.
    pub dataset: EmbeddingDataset,
    /// Unit mean direction per identity, in subject order.
    pub centers: Vec<EmbeddingVector>,
}

fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Identity centers uniform on the unit sphere; each sample is
/// `normalize(center + z / concentration)` with `z ~ N(0, I)`.
pub fn generate_identities(spec: &SyntheticSpec) -> Result<SyntheticIdentities, TrainError> {
    if spec.raw_dim < 2 {
        return Err(TrainError::Config("raw_dim must be at least 2"));
    }
    if spec.num_identities < 2 {
        return Err(TrainError::Config("num_identities must be at least 2"));
    }
    if spec.samples_per_identity < 1 {
        return Err(TrainError::Config("samples_per_identity must be at least 1"));
    }
    if !(spec.concentration > 0.0 && spec.concentration.is_finite()) {
        return Err(TrainError::Config("concentration must be positive"));
    }
    let mut rng = seed::rng(spec.seed);
    let mut dataset = EmbeddingDataset::new(spec.raw_dim)?;
    let mut centers = Vec::with_capacity(spec.num_identities);
    for id in 0..spec.num_identities {
        let center = loop {
            if let Ok(c) = l2_normalize(&gaussian_vec(&mut rng, spec.raw_dim)) {
                break c;
            }
        };
        let subject = spec.first_subject_id + id as u32;
        for _ in 0..spec.samples_per_identity {
            let noisy: Vec<f64> = center
                .as_slice()
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal) / spec.concentration)
                .collect();
            dataset.push(LabeledEmbedding::real(subject, l2_normalize(&noisy)?))?;
        }
        centers.push(center);
    }
    Ok(SyntheticIdentities { dataset, centers })
}

/// Fully connected layer; `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Feed-forward embedder: tanh hidden layers, linear output, L2 normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderNetwork {
    layers: Vec<DenseLayer>,
}

struct ForwardCache {
    /// Input to each layer, `batch x in`.
    inputs: Vec<Matrix>,
    output: Matrix,
}

impl EmbedderNetwork {
    /// `layer_dims = [raw_dim, hidden.., d]`; zero bias.
    ///
    /// Inputs are unit-norm vectors, so the first layer draws weights from
    /// N(0, 1) to give pre-activations of order one; later layers use
    /// N(0, 1/fan_in).
    pub fn new<R: rand::Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self, TrainError> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(TrainError::Config("network needs at least input and output dims"));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(TrainError::Config("embedding dimension must be at least 2"));
        }
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = if l == 0 { 1.0 } else { 1.0 / libm::sqrt(fan_in as f64) };
                let data = (0..fan_in * fan_out)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                DenseLayer {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(EmbedderNetwork { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.rows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.rows()));
        dims
    }

    fn forward_batch(&self, x: &Matrix) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (out_dim, in_dim) = (layer.weights.rows(), layer.weights.cols());
            let mut next = Matrix::zeros(current.rows(), out_dim);
            for b in 0..current.rows() {
                let a = current.row(b);
                let z = next.row_mut(b);
                for o in 0..out_dim {
                    let w = layer.weights.row(o);
                    let mut acc = layer.bias[o];
                    for i in 0..in_dim {
                        acc += w[i] * a[i];
                    }
                    z[o] = if l == last { acc } else { libm::tanh(acc) };
                }
            }
            inputs.push(current);
            current = next;
        }
        ForwardCache {
            inputs,
            output: current,
        }
    }

    /// Output before the normalization stage.
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        if x.len() != self.input_dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            }
            .into());
        }
        let batch = Matrix::from_vec(1, x.len(), x.to_vec()).expect("sized");
        Ok(self.forward_batch(&batch).output.row(0).to_vec())
    }

    pub fn embed(&self, x: &[f64]) -> Result<EmbeddingVector, TrainError> {
        Ok(l2_normalize(&self.forward_raw(x)?)?)
    }

    /// Accumulates parameter gradients given `d_out`, the gradient with respect
    /// to the raw (pre-normalization) outputs.
    fn backward(&self, cache: &ForwardCache, d_out: &Matrix, grads: &mut [DenseLayer]) {
        let last = self.layers.len() - 1;
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let (out_dim, in_dim) = (layer.weights.rows(), layer.weights.cols());
            let g = &mut grads[l];
            for b in 0..delta.rows() {
                let dz = delta.row(b);
                let a = input.row(b);
                for o in 0..out_dim {
                    if dz[o] == 0.0 {
                        continue;
                    }
                    g.bias[o] += dz[o];
                    let gw = g.weights.row_mut(o);
                    for i in 0..in_dim {
                        gw[i] += dz[o] * a[i];
                    }
                }
            }
            if l == 0 {
                break;
            }
            // input of layer l is tanh output of layer l-1
            let mut prev = Matrix::zeros(delta.rows(), in_dim);
            for b in 0..delta.rows() {
                let dz = delta.row(b);
                let a = input.row(b);
                let out = prev.row_mut(b);
                for o in 0..out_dim {
                    if dz[o] == 0.0 {
                        continue;
                    }
                    let w = layer.weights.row(o);
                    for i in 0..in_dim {
                        out[i] += dz[o] * w[i];
                    }
                }
                for i in 0..in_dim {
                    out[i] *= 1.0 - a[i] * a[i];
                }
            }
            debug_assert!(l <= last);
            delta = prev;
        }
    }

    fn zero_like(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }
}

/// Maps every record through the network; labels are carried over unchanged.
pub fn extract_embeddings(
    network: &EmbedderNetwork,
    raw: &EmbeddingDataset,
) -> Result<EmbeddingDataset, TrainError> {
    if raw.dim() != network.input_dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: network.input_dim(),
            actual: raw.dim(),
        }
        .into());
    }
    let mut out = EmbeddingDataset::new(network.output_dim())?;
    for r in raw {
        out.push(LabeledEmbedding {
            embedding: network.embed(r.embedding.as_slice())?,
            ..r.clone()
        })?;
    }
    Ok(out)
}

/// Objective optimized by [`train_embedder`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    Softmax,
    Margin(MarginConfig),
    Triplet(TripletConfig),
}

impl LossSpec {
    pub fn from_preset(preset: LossPreset) -> Self {
        match preset {
            LossPreset::Softmax => LossSpec::Softmax,
            LossPreset::Triplet => LossSpec::Triplet(TripletConfig::default()),
            p => LossSpec::Margin(p.margin_config().expect("margin preset")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fractions of the total iteration count at which the rate drops 10x.
    pub lr_decay_at: [f64; 2],
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 64,
            hidden_dims: vec![128, 128],
            batch_size: 64,
            epochs: 25,
            learning_rate: 0.1,
            lr_decay_at: [0.6, 0.85],
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.embedding_dim < 2 {
            return Err(TrainError::Config("embedding_dim must be at least 2"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(TrainError::Config("hidden layer widths must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config("weight_decay must be non-negative"));
        }
        let [a, b] = self.lr_decay_at;
        if !(0.0 < a && a < b && b <= 1.0) {
            return Err(TrainError::Config("lr_decay_at marks must increase within (0, 1]"));
        }
        Ok(())
    }

    /// Step-decayed learning rate at 0-based iteration `iter`.
    pub fn learning_rate_at(&self, iter: usize, total_iters: usize) -> f64 {
        let drops = self
            .lr_decay_at
            .iter()
            .filter(|&&f| iter >= libm::floor(f * total_iters as f64) as usize)
            .count();
        self.learning_rate * libm::pow(0.1, drops as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEmbedder {
    pub network: EmbedderNetwork,
    /// Class head for softmax and margin objectives; `None` for triplet.
    pub head: Option<ClassHead>,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Subject id of each class index.
    pub class_subjects: Vec<u32>,
}

struct Momentum {
    velocity: Vec<f64>,
}

impl Momentum {
    fn new(len: usize) -> Self {
        Momentum {
            velocity: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, mu: f64, wd: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
}

/// Mini-batch SGD with momentum and weight decay.
///
/// Deterministic for a fixed `cfg.seed`: initialization, shuffling and triplet
/// mining all draw from one seeded stream.
pub fn train_embedder(
    dataset: &EmbeddingDataset,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<TrainedEmbedder, TrainError> {
    cfg.validate()?;
    match loss {
        LossSpec::Margin(m) => m.validate()?,
        LossSpec::Triplet(t) => t.validate()?,
        LossSpec::Softmax => {}
    }
    if dataset.is_empty() {
        return Err(TrainError::Config("training set is empty"));
    }
    let class_subjects = dataset.subject_ids();
    let class_of: BTreeMap<u32, usize> = class_subjects
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let classes = class_subjects.len();
    if classes < 2 && !matches!(loss, LossSpec::Softmax) {
        return Err(TrainError::Config("margin and triplet losses need at least two identities"));
    }
    let labels: Vec<usize> = dataset.iter().map(|r| class_of[&r.subject_id]).collect();

    let mut rng = seed::rng(cfg.seed);
    let mut dims = vec![dataset.dim()];
    dims.extend(&cfg.hidden_dims);
    dims.push(cfg.embedding_dim);
    let mut network = EmbedderNetwork::new(&dims, &mut rng)?;
    let mut head = match loss {
        LossSpec::Triplet(_) => None,
        _ => Some(ClassHead::random(cfg.embedding_dim, classes, &mut rng)),
    };

    let mut net_momentum: Vec<(Momentum, Momentum)> = network
        .layers
        .iter()
        .map(|l| (Momentum::new(l.weights.as_slice().len()), Momentum::new(l.bias.len())))
        .collect();
    let mut head_momentum = head
        .as_ref()
        .map(|h| (Momentum::new(h.weights.as_slice().len()), Momentum::new(h.bias.len())));

    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_iters = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut iter = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| dataset.records()[i].embedding.as_slice())
                .collect();
            let x = Matrix::from_rows(&rows).expect("uniform dim");
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = network.forward_batch(&x);

            let (batch_loss, d_out, head_grads) = match (loss, head.as_ref()) {
                (LossSpec::Margin(m), Some(h)) => {
                    let g = margin_loss_raw(&cache.output, &y, &h.weights, m)?;
                    let db = vec![0.0; classes];
                    (g.loss, g.dx, Some((g.dw, db)))
                }
                (LossSpec::Softmax, Some(h)) => {
                    let g = plain_softmax_loss(&cache.output, &y, h)?;
                    (g.loss, g.dx, Some((g.dw, g.db)))
                }
                (LossSpec::Triplet(t), _) => {
                    let (l, dx) = triplet_batch(&cache.output, &y, t, &mut rng)?;
                    (l, dx, None)
                }
                _ => unreachable!("head exists for classification losses"),
            };
            epoch_loss += batch_loss * chunk.len() as f64;

            let mut grads = network.zero_like();
            network.backward(&cache, &d_out, &mut grads);
            let lr = cfg.learning_rate_at(iter, total_iters);
            for ((layer, g), (mw, mb)) in network
                .layers
                .iter_mut()
                .zip(&grads)
                .zip(&mut net_momentum)
            {
                mw.step(
                    layer.weights.as_mut_slice(),
                    g.weights.as_slice(),
                    lr,
                    cfg.momentum,
                    cfg.weight_decay,
                );
                mb.step(&mut layer.bias, &g.bias, lr, cfg.momentum, cfg.weight_decay);
            }
            if let (Some(h), Some((dw, db)), Some((mw, mb))) =
                (head.as_mut(), head_grads, head_momentum.as_mut())
            {
                mw.step(
                    h.weights.as_mut_slice(),
                    dw.as_slice(),
                    lr,
                    cfg.momentum,
                    cfg.weight_decay,
                );
                if matches!(loss, LossSpec::Softmax) {
                    mb.step(&mut h.bias, &db, lr, cfg.momentum, cfg.weight_decay);
                }
            }
            iter += 1;
        }
        loss_curve.push(epoch_loss / n as f64);
    }

    Ok(TrainedEmbedder {
        network,
        head,
        loss_curve,
        class_subjects,
    })
}

/// Random in-batch triplets: every anchor with a same-class partner in the
/// batch gets one random positive and one random negative.
fn triplet_batch<R: rand::Rng + ?Sized>(
    out: &Matrix,
    labels: &[usize],
    cfg: &TripletConfig,
    rng: &mut R,
) -> Result<(f64, Matrix), TrainError> {
    let n = out.rows();
    let mut triplets = Vec::new();
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let p = positives[rng.random_range(0..positives.len())];
        let ng = negatives[rng.random_range(0..negatives.len())];
        triplets.push((a, p, ng));
    }
    let mut dx = Matrix::zeros(n, out.cols());
    if triplets.is_empty() {
        return Ok((0.0, dx));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for &(a, p, ng) in &triplets {
        let t = triplet_raw(out.row(a), out.row(p), out.row(ng), cfg)?;
        total += t.loss * scale;
        for (idx, g) in [(a, &t.d_anchor), (p, &t.d_positive), (ng, &t.d_negative)] {
            for (k, v) in g.iter().enumerate() {
                dx.add_at(idx, k, v * scale);
            }
        }
    }
    Ok((total, dx))
}

/// Cluster geometry of a set of embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    /// Mean cosine over all same-identity pairs of records.
    pub within_identity: f64,
    /// Mean pairwise cosine of the class-center columns of a trained head.
    pub between_centers: Option<f64>,
    /// Mean pairwise cosine of the normalized per-identity mean embeddings.
    pub between_centroids: f64,
}

fn mean_pairwise_cosine(vectors: &[EmbeddingVector]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += crate::embedding::cosine_similarity(&vectors[i], &vectors[j]).unwrap_or(0.0);
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// Within-identity and between-center statistics of `embedded` (records
/// grouped by subject id), with class centers taken from `head` when given.
pub fn compactness(embedded: &EmbeddingDataset, head: Option<&ClassHead>) -> Result<Compactness, TrainError> {
    let mut groups: BTreeMap<u32, Vec<&EmbeddingVector>> = BTreeMap::new();
    for r in embedded {
        groups.entry(r.subject_id).or_default().push(&r.embedding);
    }
    if groups.len() < 2 {
        return Err(TrainError::Config("compactness needs at least two identities"));
    }
    let (mut within, mut pairs) = (0.0, 0usize);
    let mut centroids = Vec::with_capacity(groups.len());
    for members in groups.values() {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                within += crate::linalg::dot(members[i].as_slice(), members[j].as_slice()).clamp(-1.0, 1.0);
                pairs += 1;
            }
        }
        let mut sum = vec![0.0; embedded.dim()];
        for m in members {
            for (s, v) in sum.iter_mut().zip(m.as_slice()) {
                *s += v;
            }
        }
        centroids.push(l2_normalize(&sum)?);
    }
    if pairs == 0 {
        return Err(TrainError::Config("compactness needs two records of some identity"));
    }
    let between_centers = match head {
        Some(h) => {
            let cols = (0..h.num_classes())
                .map(|j| l2_normalize(&h.weights.column(j)))
                .collect::<Result<Vec<_>, _>>()?;
            Some(mean_pairwise_cosine(&cols))
        }
        None => None,
    };
    Ok(Compactness {
        within_identity: within / pairs as f64,
        between_centers,
        between_centroids: mean_pairwise_cosine(&centroids),
    })
}
