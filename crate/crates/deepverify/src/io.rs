//! Files on disk: embedding datasets (EMB1 or CSV), score and plot CSVs, JSON.
//!
//! Encoders return bytes so callers decide where they go; decoders take the
//! bytes plus the path used in diagnostics.

use std::path::{Path, PathBuf};

use deepverify_core::emb1::{self, FormatError};
use deepverify_core::metrics::{bin_edges, EvalReport};
use deepverify_core::pipeline::TsnePoint;
use deepverify_core::protocol::ScoreRecord;
use deepverify_core::{EmbeddingDataset, EmbeddingError, EmbeddingVector, LabeledEmbedding, Method, Realness};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Emb1 { path: PathBuf, source: FormatError },
    #[error("{}: line {line}: {message}", path.display())]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

/// On-disk encoding of an embedding dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum DataFormat {
    #[default]
    Emb1,
    Csv,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Emb1 => "emb1",
            DataFormat::Csv => "csv",
        }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads EMB1 or CSV, telling them apart by the magic bytes.
pub fn read_dataset(path: &Path) -> Result<EmbeddingDataset, IoError> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(&emb1::MAGIC) {
        emb1::decode(&bytes).map_err(|source| IoError::Emb1 {
            path: path.to_path_buf(),
            source,
        })
    } else {
        dataset_from_csv(&bytes, path)
    }
}

pub fn encode_dataset(ds: &EmbeddingDataset, format: DataFormat) -> Vec<u8> {
    match format {
        DataFormat::Emb1 => emb1::encode(ds),
        DataFormat::Csv => dataset_to_csv(ds),
    }
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `subject,host,realness,method,v0,..` with components written at `f32`
/// precision, which is all a dataset holds.
pub fn dataset_to_csv(ds: &EmbeddingDataset) -> Vec<u8> {
    let mut header = strings(&["subject", "host", "realness", "method"]);
    header.extend((0..ds.dim()).map(|k| format!("v{k}")));
    csv_bytes(
        &header,
        ds.iter().map(|r| {
            let mut row = vec![
                r.subject_id.to_string(),
                r.host_subject_id.to_string(),
                r.realness.name().to_string(),
                r.method.name().to_string(),
            ];
            row.extend(r.embedding.as_slice().iter().map(|&v| (v as f32).to_string()));
            row
        }),
    )
}

/// Parses the CSV layout of [`dataset_to_csv`]. Vectors that are not unit
/// length are normalized, so raw features from an external model load as is.
pub fn dataset_from_csv(bytes: &[u8], path: &Path) -> Result<EmbeddingDataset, IoError> {
    let err = |line: u64, message: String| IoError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let fixed = ["subject", "host", "realness", "method"];
    if header.len() < fixed.len() + 2 || fixed.iter().zip(header.iter()).any(|(a, b)| !a.eq_ignore_ascii_case(b)) {
        return Err(err(1, format!("expected header `{},v0,v1,..`", fixed.join(","))));
    }
    let dim = header.len() - fixed.len();
    let mut ds = EmbeddingDataset::new(dim).map_err(|e| err(1, e.to_string()))?;
    for row in reader.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(k).unwrap_or("");
        let subject: u32 = field(0).parse().map_err(|_| err(line, format!("bad subject `{}`", field(0))))?;
        let host: u32 = field(1).parse().map_err(|_| err(line, format!("bad host `{}`", field(1))))?;
        let realness: Realness = field(2).parse().map_err(|e: String| err(line, e))?;
        let method: Method = field(3).parse().map_err(|e: String| err(line, e))?;
        let values = (0..dim)
            .map(|k| {
                let s = field(fixed.len() + k);
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(err(line, format!("bad component v{k} `{s}`"))),
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let embedding = EmbeddingVector::unit_or_normalize(values).map_err(|e| err(line, e.to_string()))?;
        let record = LabeledEmbedding {
            subject_id: subject,
            host_subject_id: host,
            realness,
            method,
            embedding,
        };
        ds.push(record).map_err(|e: EmbeddingError| err(line, e.to_string()))?;
    }
    Ok(ds)
}

/// `score,kind,method,subject`.
pub fn scores_csv(scores: &[ScoreRecord]) -> Vec<u8> {
    csv_bytes(
        &strings(&["score", "kind", "method", "subject"]),
        scores.iter().map(|s| {
            vec![
                s.score.to_string(),
                s.kind.name().to_string(),
                s.method.name().to_string(),
                s.subject.to_string(),
            ]
        }),
    )
}

/// `method,far,gar,threshold`, one block per report row.
pub fn roc_csv(report: &EvalReport) -> Vec<u8> {
    csv_bytes(
        &strings(&["method", "far", "gar", "threshold"]),
        report.rows.iter().flat_map(|r| {
            r.roc.points.iter().map(move |p| {
                vec![
                    r.method.name().to_string(),
                    p.far.to_string(),
                    p.gar.to_string(),
                    p.threshold.to_string(),
                ]
            })
        }),
    )
}

/// `bin_lo,bin_hi,genuine,<method>..` over the report's bins on `[-1, 1]`.
pub fn histogram_csv(report: &EvalReport) -> Vec<u8> {
    let mut header = strings(&["bin_lo", "bin_hi", "genuine"]);
    header.extend(report.rows.iter().map(|r| r.method.name().to_string()));
    let edges = bin_edges(report.bins);
    csv_bytes(
        &header,
        (0..report.bins).map(|b| {
            let mut row = vec![
                edges[b].to_string(),
                edges[b + 1].to_string(),
                report.genuine_histogram[b].to_string(),
            ];
            row.extend(report.rows.iter().map(|r| r.imposter_histogram[b].to_string()));
            row
        }),
    )
}

/// `x,y,subject,realness,method`.
pub fn tsne_csv(points: &[TsnePoint]) -> Vec<u8> {
    csv_bytes(
        &strings(&["x", "y", "subject", "realness", "method"]),
        points.iter().map(|p| {
            vec![
                p.x.to_string(),
                p.y.to_string(),
                p.subject.to_string(),
                p.realness.name().to_string(),
                p.method.name().to_string(),
            ]
        }),
    )
}

/// Two-column series with a 1-based index, e.g. `iteration,kl` or `epoch,loss`.
pub fn series_csv(index: &str, value: &str, values: &[f64]) -> Vec<u8> {
    csv_bytes(
        &strings(&[index, value]),
        values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]),
    )
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use deepverify_core::l2_normalize;

    fn sample() -> EmbeddingDataset {
        let mut ds = EmbeddingDataset::new(3).unwrap();
        ds.push(LabeledEmbedding::real(4, l2_normalize(&[0.1, 0.7, -0.2]).unwrap()))
            .unwrap();
        ds.push(LabeledEmbedding::fake(9, 4, Method::FaceSwapK, l2_normalize(&[1.0, 1.0, 3.0]).unwrap()).unwrap())
            .unwrap();
        ds
    }

    #[test]
    fn csv_dataset_round_trip_is_exact() {
        let ds = sample();
        let bytes = dataset_to_csv(&ds);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("subject,host,realness,method,v0,v1,v2\n4,4,real,none,"));
        assert_eq!(dataset_from_csv(&bytes, Path::new("x.csv")).unwrap(), ds);
    }

    #[test]
    fn csv_normalizes_raw_features() {
        let text = "subject,host,realness,method,v0,v1\n1,1,real,none,3,4\n2,1,fake,FaceSwap,0,2\n";
        let ds = dataset_from_csv(text.as_bytes(), Path::new("x.csv")).unwrap();
        assert_eq!(ds.records()[0].embedding.as_slice(), &[0.6f32 as f64, 0.8f32 as f64]);
        assert_eq!(ds.records()[1].method, Method::FaceSwap);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let cases = [
            ("subject,host,realness,method,v0,v1\n1,1,real,none,1,0\n1,1,real,none,x,0\n", 3),
            ("subject,host,realness,method,v0,v1\n1,1,maybe,none,1,0\n", 2),
            ("subject,host,realness,method,v0,v1\n1,1,real,FaceSwap,1,0\n", 2),
            ("subject,host,realness,method,v0,v1\n1,1,real,none,0,0\n", 2),
            ("id,v0,v1\n", 1),
        ];
        for (text, expected) in cases {
            match dataset_from_csv(text.as_bytes(), Path::new("x.csv")) {
                Err(IoError::Csv { line, .. }) => assert_eq!(line, expected, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn series_is_one_based() {
        let text = String::from_utf8(series_csv("epoch", "loss", &[2.5, 1.0])).unwrap();
        assert_eq!(text, "epoch,loss\n1,2.5\n2,1\n");
    }
}
