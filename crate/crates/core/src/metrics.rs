//! ROC, AUC, EER and score histograms, plus the per-method report.
//!
//! Scores are similarities: a probe is accepted when its score is at or above
//! the threshold. GAR is the fraction of genuine scores accepted, FAR the
//! fraction of imposter scores accepted.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{Method, SwapKind};
use crate::protocol::{ScoreKind, ScoreRecord};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} score list is empty")]
    EmptyScores(&'static str),
    #[error("score {0} is outside [-1, 1]")]
    Range(f64),
    #[error("score list contains a non-finite value")]
    NonFinite,
    #[error("histogram needs at least one bin")]
    NoBins,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub gar: f64,
    /// Acceptance threshold; infinite at the sentinel end points.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

/// JSON has no infinities; sentinels are written as `null`.
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_f64(*t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Step ROC from `(0, 0)` to `(1, 1)`, FAR non-decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn check_scores(scores: &[f64], which: &'static str) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores(which));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn sorted_desc(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    v
}

/// Sweeps every distinct score as a threshold, highest first.
pub fn roc_curve(genuine: &[f64], imposter: &[f64]) -> Result<RocCurve, MetricsError> {
    check_scores(genuine, "genuine")?;
    check_scores(imposter, "imposter")?;
    let g = sorted_desc(genuine);
    let im = sorted_desc(imposter);
    let (ng, ni) = (g.len() as f64, im.len() as f64);

    let mut points = vec![RocPoint {
        far: 0.0,
        gar: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut gi, mut ii) = (0usize, 0usize);
    while gi < g.len() || ii < im.len() {
        let t = match (g.get(gi), im.get(ii)) {
            (Some(&a), Some(&b)) => a.max(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while gi < g.len() && g[gi] >= t {
            gi += 1;
        }
        while ii < im.len() && im[ii] >= t {
            ii += 1;
        }
        points.push(RocPoint {
            far: ii as f64 / ni,
            gar: gi as f64 / ng,
            threshold: t,
        });
    }
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the step curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].far - w[0].far) * (w[1].gar + w[0].gar) * 0.5)
            .sum()
    }

    /// Operating point where FAR equals FRR, linearly interpolated on the
    /// polyline between the bracketing points.
    pub fn equal_error_rate(&self) -> f64 {
        // gap = FAR - FRR rises from -1 at (0,0) to +1 at (1,1)
        let gap = |p: &RocPoint| p.far - (1.0 - p.gar);
        let mut prev = &self.points[0];
        for p in &self.points[1..] {
            let (g0, g1) = (gap(prev), gap(p));
            if g1 >= 0.0 {
                if g1 == 0.0 {
                    return p.far;
                }
                let t = -g0 / (g1 - g0);
                return prev.far + t * (p.far - prev.far);
            }
            prev = p;
        }
        1.0
    }
}

/// Area under the ROC curve; equals the probability that a genuine score
/// beats an imposter score, ties counted one half.
pub fn auc(genuine: &[f64], imposter: &[f64]) -> Result<f64, MetricsError> {
    Ok(roc_curve(genuine, imposter)?.area())
}

/// Equal error rate, as a fraction in `[0, 1]`.
pub fn eer(genuine: &[f64], imposter: &[f64]) -> Result<f64, MetricsError> {
    Ok(roc_curve(genuine, imposter)?.equal_error_rate())
}

/// Uniform bins over `[-1, 1]`, left-inclusive, last bin right-inclusive.
pub fn histogram(scores: &[f64], bins: usize) -> Result<Vec<u64>, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let mut counts = vec![0u64; bins];
    for &s in scores {
        if !(-1.0..=1.0).contains(&s) {
            return Err(MetricsError::Range(s));
        }
        let idx = libm::floor((s + 1.0) * 0.5 * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// Lower edges of `bins` uniform bins over `[-1, 1]`.
pub fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub group: SwapKind,
    pub auc: f64,
    /// Fraction in `[0, 1]`; the text table prints it as a percentage.
    pub eer: f64,
    pub genuine_count: usize,
    pub imposter_count: usize,
    pub imposter_histogram: Vec<u64>,
    pub roc: RocCurve,
}

/// Per-method verification results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, String>,
    pub genuine_count: usize,
    pub imposter_count: usize,
    pub bins: usize,
    pub genuine_histogram: Vec<u64>,
    /// Ordered by method code.
    pub rows: Vec<MethodRow>,
    pub warnings: Vec<String>,
}

/// Scores every method's imposters against the full genuine pool.
pub fn build_report(
    records: &[ScoreRecord],
    metadata: BTreeMap<String, String>,
    bins: usize,
) -> Result<EvalReport, MetricsError> {
    let genuine: Vec<f64> = records
        .iter()
        .filter(|r| r.kind == ScoreKind::Genuine)
        .map(|r| r.score)
        .collect();
    let mut by_method: BTreeMap<u8, (Method, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == ScoreKind::Imposter) {
        by_method
            .entry(r.method.code())
            .or_insert_with(|| (r.method, Vec::new()))
            .1
            .push(r.score);
    }
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for (method, imposters) in by_method.into_values() {
        let Some(group) = method.swap_kind() else {
            warnings.push(String::from("imposter records without a method tag were skipped"));
            continue;
        };
        if genuine.is_empty() {
            warnings.push(alloc::format!("{method}: no genuine scores, row skipped"));
            continue;
        }
        let roc = roc_curve(&genuine, &imposters)?;
        rows.push(MethodRow {
            method,
            group,
            auc: roc.area(),
            eer: roc.equal_error_rate(),
            genuine_count: genuine.len(),
            imposter_count: imposters.len(),
            imposter_histogram: histogram(&imposters, bins)?,
            roc,
        });
    }
    for m in Method::FAKES {
        if !rows.iter().any(|r| r.method == m)
            && records.iter().any(|r| r.method == m && r.kind == ScoreKind::Genuine)
        {
            warnings.push(alloc::format!("{m}: no imposter scores, row skipped"));
        }
    }
    Ok(EvalReport {
        metadata,
        genuine_count: genuine.len(),
        imposter_count: records.len() - genuine.len(),
        bins,
        genuine_histogram: histogram(&genuine, bins)?,
        rows,
        warnings,
    })
}

impl EvalReport {
    /// Aligned text table: method, AUC (3 decimals), EER % (2 decimals),
    /// grouped into identity-swap and expression-swap blocks.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>7} {:>8} {:>9} {:>9}",
            "group", "method", "AUC", "EER(%)", "genuine", "imposter"
        );
        for group in [SwapKind::IdentitySwap, SwapKind::ExpressionSwap] {
            for r in self.rows.iter().filter(|r| r.group == group) {
                let _ = writeln!(
                    out,
                    "{:<16} {:<16} {:>7.3} {:>8.2} {:>9} {:>9}",
                    group.name(),
                    r.method.name(),
                    r.auc,
                    r.eer * 100.0,
                    r.genuine_count,
                    r.imposter_count
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pairwise concordance with ties counted one half.
    fn concordance(g: &[f64], i: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in g {
            for b in i {
                acc += match a.partial_cmp(b).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
        acc / (g.len() * i.len()) as f64
    }

    fn has_point(c: &RocCurve, far: f64, gar: f64) -> bool {
        c.points
            .iter()
            .any(|p| (p.far - far).abs() < 1e-12 && (p.gar - gar).abs() < 1e-12)
    }

    #[test]
    fn roc_examples() {
        let c = roc_curve(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert!(has_point(&c, 0.0, 1.0));

        let c = roc_curve(&[0.5], &[0.5]).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.far, p.gar)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);

        let c = roc_curve(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert!(has_point(&c, 1.0 / 3.0, 2.0 / 3.0));
        assert_eq!(c.points.first().unwrap().threshold, f64::INFINITY);
        let last = c.points.last().unwrap();
        assert_eq!((last.far, last.gar), (1.0, 1.0));
        assert!(c.points.windows(2).all(|w| w[0].far <= w[1].far && w[0].gar <= w[1].gar));

        assert_eq!(roc_curve(&[], &[0.1]), Err(MetricsError::EmptyScores("genuine")));
        assert_eq!(roc_curve(&[0.1], &[]), Err(MetricsError::EmptyScores("imposter")));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert!((auc(&[0.6, 0.4], &[0.5, 0.3]).unwrap() - 0.75).abs() < 1e-12);
        assert!((auc(&[0.5, 0.3], &[0.6, 0.4]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        assert!((eer(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let mut rng = seed::rng(100);
        let s: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!((eer(&s, &s).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn eer_zero_iff_separated() {
        assert!(eer(&[0.5, 0.6], &[0.4, 0.5]).unwrap() > 0.0);
        assert_eq!(eer(&[0.51, 0.6], &[0.4, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(histogram(&[], 50).unwrap(), vec![0; 50]);
        let h = histogram(&[0.0], 50).unwrap();
        assert_eq!(h.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h[25], 1);
        let edges = histogram(&[-1.0, 1.0], 50).unwrap();
        assert_eq!((edges[0], edges[49]), (1, 1));
        let mut rng = seed::rng(5);
        let s: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..=1.0)).collect();
        assert_eq!(histogram(&s, 50).unwrap().iter().sum::<u64>(), 100);
        assert_eq!(histogram(&[1.5], 50), Err(MetricsError::Range(1.5)));
        assert_eq!(bin_edges(50).len(), 51);
    }

    fn rec(score: f64, kind: ScoreKind, method: Method) -> ScoreRecord {
        ScoreRecord { score, kind, method, subject: 1 }
    }

    #[test]
    fn single_method_report() {
        let records = vec![
            rec(0.9, ScoreKind::Genuine, Method::None),
            rec(0.8, ScoreKind::Genuine, Method::None),
            rec(0.1, ScoreKind::Imposter, Method::FaceSwap),
        ];
        let report = build_report(&records, BTreeMap::new(), DEFAULT_BINS).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!((row.method, row.group), (Method::FaceSwap, SwapKind::IdentitySwap));
        assert_eq!((row.auc, row.eer), (1.0, 0.0));
        assert_eq!(report.genuine_count + report.imposter_count, records.len());
        let table = report.to_table();
        assert!(table.contains("FaceSwap"));
        assert!(table.contains("1.000"));
        assert!(table.contains("0.00"));
    }

    #[test]
    fn report_rows_follow_method_codes() {
        let records = vec![
            rec(0.9, ScoreKind::Genuine, Method::None),
            rec(0.2, ScoreKind::Imposter, Method::NeuralTextures),
            rec(0.1, ScoreKind::Imposter, Method::FaceSwapK),
            rec(0.3, ScoreKind::Imposter, Method::FaceSwap),
        ];
        let report = build_report(&records, BTreeMap::new(), 10).unwrap();
        let methods: Vec<Method> = report.rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec![Method::FaceSwap, Method::NeuralTextures, Method::FaceSwapK]);

        let only_fakes = vec![rec(0.2, ScoreKind::Imposter, Method::Face2Face)];
        let r = build_report(&only_fakes, BTreeMap::new(), 10).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn trapezoid_equals_concordance(
            g in prop::collection::vec(0i32..12, 1..50),
            i in prop::collection::vec(0i32..12, 1..50),
        ) {
            let g: Vec<f64> = g.into_iter().map(|v| f64::from(v) / 12.0).collect();
            let i: Vec<f64> = i.into_iter().map(|v| f64::from(v) / 12.0).collect();
            let a = auc(&g, &i).unwrap();
            prop_assert!((a - concordance(&g, &i)).abs() <= 1e-9);
            prop_assert!((a + auc(&i, &g).unwrap() - 1.0).abs() <= 1e-9);
            let shifted: Vec<f64> = g.iter().map(|v| libm::exp(3.0 * v) - 2.0).collect();
            let shifted_i: Vec<f64> = i.iter().map(|v| libm::exp(3.0 * v) - 2.0).collect();
            prop_assert_eq!(a, auc(&shifted, &shifted_i).unwrap());
            let e = eer(&g, &i).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let separated = g.iter().cloned().fold(f64::INFINITY, f64::min)
                > i.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(e == 0.0, separated);
        }
    }
}
