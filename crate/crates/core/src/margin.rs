//! Margin-based classification losses with analytic gradients.
//!
//! The combined-margin family replaces the target-class cosine logit with
//! `psi(theta) = cos(m1 * theta + m2) - m3` and scales every logit by `s`:
//!
//! ```text
//! L = -1/N sum_i log( e^{s psi(theta_{y_i})} / (e^{s psi(theta_{y_i})} + sum_{j != y_i} e^{s cos theta_j}) )
//! ```
//!
//! SphereFace, ArcFace and CosFace are the presets `(m1, 0, 0)`, `(1, m2, 0)`
//! and `(1, 0, m3)`. Plain softmax cross-entropy over `W^T x + b` and an angular
//! triplet hinge complete the six training objectives.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingVector, NORM_TOLERANCE};
use crate::linalg::{dot, norm, Matrix};

/// Clamp applied to cosines before `acos`, bounding its derivative.
pub const ACOS_EPS: f64 = 1e-7;

pub const DEFAULT_SCALE: f64 = 64.0;

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    Label { row: usize, label: usize, classes: usize },
    #[error("{what} {index} is not unit-norm (norm {norm})")]
    Normalization { what: &'static str, index: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("invalid margin configuration: {0}")]
    Config(&'static str),
}

/// Parameters `(m1, m2, m3, s)` of the combined-margin loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    /// Multiplicative angular margin, `>= 1`.
    pub m1: f64,
    /// Additive angular margin in radians, `[0, pi)`.
    pub m2: f64,
    /// Additive cosine margin, `[0, 1)`.
    pub m3: f64,
    /// Logit scale.
    pub scale: f64,
}

impl MarginConfig {
    pub const ARCFACE: MarginConfig = MarginConfig::new(1.0, 0.5, 0.0);
    pub const COSFACE: MarginConfig = MarginConfig::new(1.0, 0.0, 0.35);
    pub const SPHEREFACE: MarginConfig = MarginConfig::new(1.35, 0.0, 0.0);
    pub const COMBINED: MarginConfig = MarginConfig::new(1.0, 0.3, 0.2);
    /// No margin: scaled-cosine softmax.
    pub const NONE: MarginConfig = MarginConfig::new(1.0, 0.0, 0.0);

    pub const fn new(m1: f64, m2: f64, m3: f64) -> Self {
        MarginConfig {
            m1,
            m2,
            m3,
            scale: DEFAULT_SCALE,
        }
    }

    pub const fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// `s = 0` is accepted; it degenerates the loss to the constant `ln C`.
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.m1 >= 1.0 && self.m1.is_finite()) {
            return Err(LossError::Config("m1 must be >= 1"));
        }
        if !(0.0..PI).contains(&self.m2) {
            return Err(LossError::Config("m2 must lie in [0, pi)"));
        }
        if !(0.0..1.0).contains(&self.m3) {
            return Err(LossError::Config("m3 must lie in [0, 1)"));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(LossError::Config("scale must be finite and non-negative"));
        }
        Ok(())
    }

    fn is_pure_cosine(&self) -> bool {
        self.m1 == 1.0 && self.m2 == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    /// Angular margin in radians, `(0, pi)`.
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: DEFAULT_TRIPLET_MARGIN,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.margin > 0.0 && self.margin < PI {
            Ok(())
        } else {
            Err(LossError::Config("triplet margin must lie in (0, pi)"))
        }
    }
}

/// The six training objectives by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossPreset {
    Softmax,
    ArcFace,
    CosFace,
    SphereFace,
    Combined,
    Triplet,
}

impl LossPreset {
    pub const ALL: [LossPreset; 6] = [
        LossPreset::Softmax,
        LossPreset::ArcFace,
        LossPreset::CosFace,
        LossPreset::SphereFace,
        LossPreset::Combined,
        LossPreset::Triplet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossPreset::Softmax => "softmax",
            LossPreset::ArcFace => "arcface",
            LossPreset::CosFace => "cosface",
            LossPreset::SphereFace => "sphereface",
            LossPreset::Combined => "combined",
            LossPreset::Triplet => "triplet",
        }
    }

    pub fn margin_config(self) -> Option<MarginConfig> {
        match self {
            LossPreset::ArcFace => Some(MarginConfig::ARCFACE),
            LossPreset::CosFace => Some(MarginConfig::COSFACE),
            LossPreset::SphereFace => Some(MarginConfig::SPHEREFACE),
            LossPreset::Combined => Some(MarginConfig::COMBINED),
            LossPreset::Softmax | LossPreset::Triplet => None,
        }
    }
}

impl fmt::Display for LossPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossPreset {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        LossPreset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == key)
            .ok_or_else(|| {
                alloc::format!(
                    "unknown loss `{}` (expected softmax|arcface|cosface|sphereface|combined|triplet)",
                    s.trim()
                )
            })
    }
}

/// Class-center weights (`d x C`, one column per class) and biases.
///
/// Margin losses use the normalized columns and ignore the bias; plain softmax
/// uses both as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ClassHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self, LossError> {
        if bias.len() != weights.cols() {
            return Err(LossError::Shape("bias length must equal the number of classes"));
        }
        Ok(ClassHead { weights, bias })
    }

    /// Gaussian weights with standard deviation `1/sqrt(dim)` and zero bias.
    pub fn random<R: rand::Rng + ?Sized>(dim: usize, classes: usize, rng: &mut R) -> Self {
        let std = 1.0 / libm::sqrt(dim as f64);
        let data = (0..dim * classes)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ClassHead {
            weights: Matrix::from_vec(dim, classes, data).expect("sized"),
            bias: vec![0.0; classes],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    /// Copy with every column scaled to unit norm.
    pub fn normalized(&self) -> Result<Self, LossError> {
        let mut out = self.clone();
        for (j, n) in column_norms(&self.weights).into_iter().enumerate() {
            if !(n > crate::embedding::DEGENERATE_NORM) {
                return Err(LossError::Normalization {
                    what: "class column",
                    index: j,
                    norm: n,
                });
            }
            for k in 0..self.dim() {
                out.weights.set(k, j, self.weights.get(k, j) / n);
            }
        }
        Ok(out)
    }
}

fn column_norms(w: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; w.cols()];
    for k in 0..w.rows() {
        for (j, s) in sq.iter_mut().enumerate() {
            let v = w.get(k, j);
            *s += v * v;
        }
    }
    sq.into_iter().map(libm::sqrt).collect()
}

fn psi_and_slope(cos_theta: f64, cfg: &MarginConfig) -> (f64, f64) {
    if cfg.is_pure_cosine() {
        let c = cos_theta.clamp(-1.0, 1.0);
        let slope = if c == cos_theta { 1.0 } else { 0.0 };
        return (c - cfg.m3, slope);
    }
    let c = cos_theta.clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS);
    let theta = libm::acos(c);
    let angle = cfg.m1 * theta + cfg.m2;
    let (psi, dpsi_dtheta) = if angle <= PI {
        (libm::cos(angle) - cfg.m3, -cfg.m1 * libm::sin(angle))
    } else {
        // linear continuation past pi keeps psi decreasing in theta
        (-1.0 - cfg.m3 - (angle - PI), -cfg.m1)
    };
    let dtheta_dc = if c == cos_theta {
        -1.0 / libm::sqrt(1.0 - c * c)
    } else {
        0.0
    };
    (psi, dpsi_dtheta * dtheta_dc)
}

/// Margin-modified target logit `psi(theta)` (before scaling by `s`).
///
/// Total on the reals: the cosine is clamped before `acos`.
pub fn target_logit(cos_theta: f64, cfg: &MarginConfig) -> f64 {
    psi_and_slope(cos_theta, cfg).0
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginForward {
    pub loss: f64,
    /// `N x C` scaled logits, the target column carrying the margin.
    pub logits: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginGradients {
    pub loss: f64,
    /// Gradient with respect to the (pre-normalization) inputs, `N x d`.
    pub dx: Matrix,
    /// Gradient with respect to the (pre-normalization) class weights, `d x C`.
    pub dw: Matrix,
}

fn check_shapes(x: &Matrix, labels: &[usize], head: &ClassHead) -> Result<(), LossError> {
    if x.rows() != labels.len() {
        return Err(LossError::Shape("one label per input row required"));
    }
    if x.rows() == 0 {
        return Err(LossError::Shape("empty batch"));
    }
    if x.cols() != head.dim() {
        return Err(LossError::Shape("input dimension differs from class head dimension"));
    }
    let classes = head.num_classes();
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::Label { row, label, classes });
    }
    Ok(())
}

fn check_margin_inputs(
    x: &Matrix,
    labels: &[usize],
    head: &ClassHead,
    cfg: &MarginConfig,
) -> Result<(), LossError> {
    cfg.validate()?;
    check_shapes(x, labels, head)?;
    if head.num_classes() < 2 {
        return Err(LossError::Shape("margin losses need at least two classes"));
    }
    for i in 0..x.rows() {
        let n = norm(x.row(i));
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(LossError::Normalization {
                what: "input row",
                index: i,
                norm: n,
            });
        }
    }
    for (j, n) in column_norms(&head.weights).into_iter().enumerate() {
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(LossError::Normalization {
                what: "class column",
                index: j,
                norm: n,
            });
        }
    }
    Ok(())
}

/// Mean combined-margin loss for unit-norm rows of `x` against unit-norm class
/// columns.
pub fn margin_loss_forward(
    x: &Matrix,
    labels: &[usize],
    head: &ClassHead,
    cfg: &MarginConfig,
) -> Result<MarginForward, LossError> {
    check_margin_inputs(x, labels, head, cfg)?;
    let out = combined_margin(x, labels, &head.weights, cfg, false)?;
    Ok(MarginForward {
        loss: out.loss,
        logits: out.logits,
    })
}

/// Analytic gradients of the mean combined-margin loss.
///
/// Inputs must satisfy the forward preconditions; the gradients are taken with
/// respect to the pre-normalization inputs and weights, so they include the
/// projection through the L2 normalization.
pub fn margin_loss_backward(
    x: &Matrix,
    labels: &[usize],
    head: &ClassHead,
    cfg: &MarginConfig,
) -> Result<MarginGradients, LossError> {
    check_margin_inputs(x, labels, head, cfg)?;
    margin_loss_raw(x, labels, &head.weights, cfg)
}

/// Loss and gradients on raw (unnormalized) features and weights.
///
/// Rows of `x` and columns of `weights` are L2-normalized internally; this is
/// the entry point the trainer uses on network outputs.
pub fn margin_loss_raw(
    x: &Matrix,
    labels: &[usize],
    weights: &Matrix,
    cfg: &MarginConfig,
) -> Result<MarginGradients, LossError> {
    cfg.validate()?;
    if weights.cols() < 2 {
        return Err(LossError::Shape("margin losses need at least two classes"));
    }
    let out = combined_margin(x, labels, weights, cfg, true)?;
    Ok(MarginGradients {
        loss: out.loss,
        dx: out.dx,
        dw: out.dw,
    })
}

struct CombinedOut {
    loss: f64,
    logits: Matrix,
    dx: Matrix,
    dw: Matrix,
}

fn combined_margin(
    x: &Matrix,
    labels: &[usize],
    weights: &Matrix,
    cfg: &MarginConfig,
    with_grad: bool,
) -> Result<CombinedOut, LossError> {
    let (n, d, c) = (x.rows(), x.cols(), weights.cols());
    if n != labels.len() || n == 0 {
        return Err(LossError::Shape("one label per input row required"));
    }
    if weights.rows() != d {
        return Err(LossError::Shape("input dimension differs from class head dimension"));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(LossError::Label { row, label, classes: c });
    }

    let wnorms = column_norms(weights);
    if let Some((j, &wn)) = wnorms
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > crate::embedding::DEGENERATE_NORM))
    {
        return Err(LossError::Normalization {
            what: "class column",
            index: j,
            norm: wn,
        });
    }
    // unit class centers, stored class-major for contiguous access
    let mut centers = Matrix::zeros(c, d);
    for k in 0..d {
        for j in 0..c {
            centers.set(j, k, weights.get(k, j) / wnorms[j]);
        }
    }

    let s = cfg.scale;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut logits = Matrix::zeros(n, c);
    let mut dx = Matrix::zeros(n, d);
    let mut d_centers = Matrix::zeros(c, d);
    let mut xhat = vec![0.0; d];
    let mut cosines = vec![0.0; c];
    let mut probs = vec![0.0; c];

    for i in 0..n {
        let row = x.row(i);
        let xn = norm(row);
        if !(xn > crate::embedding::DEGENERATE_NORM) {
            return Err(LossError::Normalization {
                what: "input row",
                index: i,
                norm: xn,
            });
        }
        for (h, v) in xhat.iter_mut().zip(row) {
            *h = v / xn;
        }
        let y = labels[i];
        for j in 0..c {
            cosines[j] = dot(&xhat, centers.row(j));
        }
        let (psi, slope) = psi_and_slope(cosines[y], cfg);
        for j in 0..c {
            let z = if j == y { s * psi } else { s * cosines[j] };
            logits.set(i, j, z);
        }
        let zrow = logits.row(i);
        let zmax = zrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c {
            probs[j] = libm::exp(zrow[j] - zmax);
            denom += probs[j];
        }
        loss += (libm::log(denom) + zmax - zrow[y]) * inv_n;

        if !with_grad {
            continue;
        }
        // dL/dcos_j for this sample
        let mut g_xhat = vec![0.0; d];
        for j in 0..c {
            let p = probs[j] / denom;
            let dz = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            let g_cos = s * dz * if j == y { slope } else { 1.0 };
            if g_cos == 0.0 {
                continue;
            }
            let center = centers.row(j);
            for k in 0..d {
                g_xhat[k] += g_cos * center[k];
                d_centers.add_at(j, k, g_cos * xhat[k]);
            }
        }
        let radial = dot(&xhat, &g_xhat);
        let out = dx.row_mut(i);
        for k in 0..d {
            out[k] = (g_xhat[k] - xhat[k] * radial) / xn;
        }
    }

    let mut dw = Matrix::zeros(d, c);
    if with_grad {
        for j in 0..c {
            let center = centers.row(j);
            let g = d_centers.row(j);
            let radial = dot(center, g);
            for k in 0..d {
                dw.set(k, j, (g[k] - center[k] * radial) / wnorms[j]);
            }
        }
    }
    Ok(CombinedOut {
        loss,
        logits,
        dx,
        dw,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxOutput {
    pub loss: f64,
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

/// Cross-entropy over unnormalized logits `W^T x + b`, with gradients.
pub fn plain_softmax_loss(
    x: &Matrix,
    labels: &[usize],
    head: &ClassHead,
) -> Result<SoftmaxOutput, LossError> {
    check_shapes(x, labels, head)?;
    let (n, d, c) = (x.rows(), x.cols(), head.num_classes());
    let w = &head.weights;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dx = Matrix::zeros(n, d);
    let mut dw = Matrix::zeros(d, c);
    let mut db = vec![0.0; c];
    let mut z = vec![0.0; c];
    for i in 0..n {
        let row = x.row(i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = head.bias[j] + (0..d).map(|k| w.get(k, j) * row[k]).sum::<f64>();
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|v| libm::exp(v - zmax)).sum();
        let y = labels[i];
        loss += (libm::log(denom) + zmax - z[y]) * inv_n;
        for j in 0..c {
            let p = libm::exp(z[j] - zmax) / denom;
            let dz = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            db[j] += dz;
            for k in 0..d {
                dw.add_at(k, j, dz * row[k]);
                dx.add_at(i, k, dz * w.get(k, j));
            }
        }
    }
    Ok(SoftmaxOutput { loss, dx, dw, db })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

fn angle_and_slope(u: &[f64], v: &[f64]) -> (f64, f64) {
    let raw = dot(u, v);
    let c = raw.clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS);
    let slope = if c == raw {
        -1.0 / libm::sqrt(1.0 - c * c)
    } else {
        0.0
    };
    (libm::acos(c), slope)
}

/// Angular triplet hinge `max(0, theta(a,p) - theta(a,n) + margin)`.
///
/// Gradients are with respect to the pre-normalization vectors and are zero in
/// the inactive region.
pub fn triplet_loss(
    anchor: &EmbeddingVector,
    positive: &EmbeddingVector,
    negative: &EmbeddingVector,
    cfg: &TripletConfig,
) -> Result<TripletOutput, LossError> {
    for (index, v) in [anchor, positive, negative].into_iter().enumerate() {
        let n = norm(v.as_slice());
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(LossError::Normalization {
                what: "triplet member",
                index,
                norm: n,
            });
        }
    }
    triplet_raw(anchor.as_slice(), positive.as_slice(), negative.as_slice(), cfg)
}

/// [`triplet_loss`] on raw vectors, normalized internally.
pub fn triplet_raw(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    cfg: &TripletConfig,
) -> Result<TripletOutput, LossError> {
    cfg.validate()?;
    let d = anchor.len();
    if positive.len() != d || negative.len() != d {
        return Err(LossError::Shape("triplet members differ in dimension"));
    }
    let mut hats: [(Vec<f64>, f64); 3] = Default::default();
    for (index, (slot, v)) in hats.iter_mut().zip([anchor, positive, negative]).enumerate() {
        let n = norm(v);
        if !(n > crate::embedding::DEGENERATE_NORM) {
            return Err(LossError::Normalization {
                what: "triplet member",
                index,
                norm: n,
            });
        }
        *slot = (v.iter().map(|x| x / n).collect(), n);
    }
    let [(a, an), (p, pn), (ng, nn)] = hats;
    let (theta_ap, s_ap) = angle_and_slope(&a, &p);
    let (theta_an, s_an) = angle_and_slope(&a, &ng);
    let hinge = theta_ap - theta_an + cfg.margin;
    if hinge <= 0.0 {
        return Ok(TripletOutput {
            loss: 0.0,
            d_anchor: vec![0.0; d],
            d_positive: vec![0.0; d],
            d_negative: vec![0.0; d],
        });
    }
    let g_a: Vec<f64> = (0..d).map(|k| s_ap * p[k] - s_an * ng[k]).collect();
    let g_p: Vec<f64> = a.iter().map(|v| s_ap * v).collect();
    let g_n: Vec<f64> = a.iter().map(|v| -s_an * v).collect();
    Ok(TripletOutput {
        loss: hinge,
        d_anchor: project(&a, &g_a, an),
        d_positive: project(&p, &g_p, pn),
        d_negative: project(&ng, &g_n, nn),
    })
}

/// Pulls a gradient taken at `unit = v / |v|` back to `v`.
fn project(unit: &[f64], g: &[f64], n: f64) -> Vec<f64> {
    let radial = dot(unit, g);
    unit.iter().zip(g).map(|(u, gk)| (gk - u * radial) / n).collect()
}
