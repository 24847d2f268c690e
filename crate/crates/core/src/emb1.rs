//! EMB1 binary embedding format.
//!
//! ```text
//! 0..4    magic "EMB1"
//! 4..8    u32 LE record count
//! 8..12   u32 LE dim
//! per record (12 + 4*dim bytes):
//!         u32 LE subject_id
//!         u32 LE host_subject_id
//!         u8     realness (0 real, 1 fake)
//!         u8     method code (0 none .. 6 FaceSwap-K)
//!         u16 LE reserved, zero
//!         dim x f32 LE
//! ```

use alloc::vec::Vec;
use core::fmt;

use crate::embedding::{
    EmbeddingDataset, EmbeddingVector, LabeledEmbedding, Method, Realness,
    NORM_TOLERANCE,
};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const HEADER_LEN: usize = 12;
pub const FORMAT_VERSION: &str = "EMB1";

pub fn record_len(dim: usize) -> usize {
    12 + 4 * dim
}

#[derive(Debug, Clone, PartialEq)]
pub enum FormatErrorKind {
    BadMagic([u8; 4]),
    Truncated { needed: usize, available: usize },
    InvalidDim(u32),
    InvalidRealness(u8),
    InvalidMethod(u8),
    NonzeroReserved(u16),
    InconsistentRecord(&'static str),
    NonFinite,
    DegenerateVector,
    TrailingBytes(usize),
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatErrorKind::BadMagic(m) => write!(f, "bad magic {m:02x?}, expected \"EMB1\""),
            FormatErrorKind::Truncated { needed, available } => {
                write!(f, "truncated payload: need {needed} bytes, {available} available")
            }
            FormatErrorKind::InvalidDim(d) => write!(f, "invalid dimension {d}"),
            FormatErrorKind::InvalidRealness(c) => write!(f, "invalid realness code {c}"),
            FormatErrorKind::InvalidMethod(c) => write!(f, "invalid method code {c}"),
            FormatErrorKind::NonzeroReserved(v) => write!(f, "reserved field is {v}, expected 0"),
            FormatErrorKind::InconsistentRecord(why) => write!(f, "inconsistent record: {why}"),
            FormatErrorKind::NonFinite => f.write_str("non-finite vector component"),
            FormatErrorKind::DegenerateVector => f.write_str("zero-norm embedding vector"),
            FormatErrorKind::TrailingBytes(n) => write!(f, "{n} trailing bytes after last record"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("EMB1 format error at byte {offset}: {kind}")]
pub struct FormatError {
    pub offset: usize,
    pub kind: FormatErrorKind,
}

fn err<T>(offset: usize, kind: FormatErrorKind) -> Result<T, FormatError> {
    Err(FormatError { offset, kind })
}

pub fn encode(dataset: &EmbeddingDataset) -> Vec<u8> {
    let dim = dataset.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * record_len(dim));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in dataset {
        out.extend_from_slice(&r.subject_id.to_le_bytes());
        out.extend_from_slice(&r.host_subject_id.to_le_bytes());
        out.push(r.realness.code());
        out.push(r.method.code());
        out.extend_from_slice(&0u16.to_le_bytes());
        for &v in r.embedding.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return err(self.pos, FormatErrorKind::Truncated { needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes an EMB1 byte buffer.
///
/// Vectors that are not unit-norm within tolerance (for example raw features
/// exported by an external model) are L2-normalized on the way in; unit-norm
/// vectors are kept bit for bit.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingDataset, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return err(0, FormatErrorKind::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let count = cur.u32()? as usize;
    let dim_raw = cur.u32()?;
    let dim = dim_raw as usize;
    if dim < 2 {
        return err(8, FormatErrorKind::InvalidDim(dim_raw));
    }
    let needed = count.saturating_mul(record_len(dim));
    let available = bytes.len() - HEADER_LEN;
    if available < needed {
        return err(HEADER_LEN, FormatErrorKind::Truncated { needed, available });
    }
    let mut dataset = EmbeddingDataset::new(dim).map_err(|_| FormatError {
        offset: 8,
        kind: FormatErrorKind::InvalidDim(dim_raw),
    })?;
    for _ in 0..count {
        let start = cur.pos;
        let subject_id = cur.u32()?;
        let host_subject_id = cur.u32()?;
        let flags = cur.take(4)?;
        let realness = Realness::from_code(flags[0]).ok_or(FormatError {
            offset: start + 8,
            kind: FormatErrorKind::InvalidRealness(flags[0]),
        })?;
        let method = Method::from_code(flags[1]).ok_or(FormatError {
            offset: start + 9,
            kind: FormatErrorKind::InvalidMethod(flags[1]),
        })?;
        let reserved = u16::from_le_bytes([flags[2], flags[3]]);
        if reserved != 0 {
            return err(start + 10, FormatErrorKind::NonzeroReserved(reserved));
        }
        let vec_start = cur.pos;
        let payload = cur.take(4 * dim)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return err(vec_start, FormatErrorKind::NonFinite);
        }
        let embedding = EmbeddingVector::unit_or_normalize(values).map_err(|_| FormatError {
            offset: vec_start,
            kind: FormatErrorKind::DegenerateVector,
        })?;
        let record = LabeledEmbedding {
            subject_id,
            host_subject_id,
            realness,
            method,
            embedding,
        };
        if let Err(e) = record.validate() {
            let why = match e {
                crate::EmbeddingError::InconsistentRecord(why) => why,
                _ => "invalid record",
            };
            return err(start, FormatErrorKind::InconsistentRecord(why));
        }
        dataset.push(record).map_err(|_| FormatError {
            offset: start,
            kind: FormatErrorKind::InconsistentRecord("record rejected"),
        })?;
    }
    if cur.pos != bytes.len() {
        return err(cur.pos, FormatErrorKind::TrailingBytes(bytes.len() - cur.pos));
    }
    debug_assert!(dataset
        .iter()
        .all(|r| (crate::linalg::norm(r.embedding.as_slice()) - 1.0).abs() <= NORM_TOLERANCE));
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_normalize;
    use proptest::prelude::*;

    fn sample() -> EmbeddingDataset {
        EmbeddingDataset::from_records(
            3,
            [
                LabeledEmbedding::real(7, l2_normalize(&[1.0, 2.0, 3.0]).unwrap()),
                LabeledEmbedding::fake(
                    9,
                    7,
                    Method::FaceSwap,
                    l2_normalize(&[-1.0, 0.5, 0.25]).unwrap(),
                )
                .unwrap(),
                LabeledEmbedding::fake(
                    7,
                    7,
                    Method::NeuralTextures,
                    l2_normalize(&[0.0, 0.0, 1.0]).unwrap(),
                )
                .unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_three_records() {
        let ds = sample();
        let bytes = encode(&ds);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * record_len(3));
        assert_eq!(&bytes[..4], b"EMB1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        // second record: subject 9, host 7, fake, FaceSwap
        let r = HEADER_LEN + record_len(3);
        assert_eq!(&bytes[r..r + 4], &9u32.to_le_bytes());
        assert_eq!(&bytes[r + 4..r + 8], &7u32.to_le_bytes());
        assert_eq!(bytes[r + 8], 1);
        assert_eq!(bytes[r + 9], 1);
        assert_eq!(&bytes[r + 10..r + 12], &[0, 0]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        let e = decode(&bytes).unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(matches!(e.kind, FormatErrorKind::BadMagic(_)));
    }

    #[test]
    fn count_larger_than_payload() {
        let mut bytes = encode(&sample());
        bytes[4..8].copy_from_slice(&4u32.to_le_bytes());
        let e = decode(&bytes).unwrap_err();
        assert_eq!(e.offset, HEADER_LEN);
        assert!(matches!(e.kind, FormatErrorKind::Truncated { .. }));
        assert!(decode(b"EMB").is_err());
    }

    #[test]
    fn bad_fields_report_offsets() {
        let base = encode(&sample());
        let mut b = base.clone();
        b[8..12].copy_from_slice(&1u32.to_le_bytes());
        assert_eq!(decode(&b).unwrap_err().offset, 8);

        let mut b = base.clone();
        b[HEADER_LEN + 9] = 1; // real record tagged FaceSwap
        let e = decode(&b).unwrap_err();
        assert_eq!(e.offset, HEADER_LEN);
        assert!(matches!(e.kind, FormatErrorKind::InconsistentRecord(_)));

        let mut b = base.clone();
        b[HEADER_LEN + 9] = 42;
        assert_eq!(decode(&b).unwrap_err().kind, FormatErrorKind::InvalidMethod(42));

        let mut b = base.clone();
        b[HEADER_LEN + 10] = 1;
        assert_eq!(decode(&b).unwrap_err().offset, HEADER_LEN + 10);

        let mut b = base.clone();
        b.push(0);
        assert!(matches!(decode(&b).unwrap_err().kind, FormatErrorKind::TrailingBytes(1)));

        let mut b = base;
        b[HEADER_LEN + 12..HEADER_LEN + 24].fill(0);
        assert_eq!(decode(&b).unwrap_err().kind, FormatErrorKind::DegenerateVector);
    }

    #[test]
    fn unnormalized_input_is_normalized() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        bytes.extend_from_slice(&4.0f32.to_le_bytes());
        let ds = decode(&bytes).unwrap();
        assert_eq!(ds.records()[0].embedding.as_slice(), &[0.6f32 as f64, 0.8f32 as f64]);
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(
            rows in prop::collection::vec(
                (0u32..50, 0u32..50, 0u8..7, prop::collection::vec(-1.0f64..1.0, 5)),
                0..20,
            )
        ) {
            let mut ds = EmbeddingDataset::new(5).unwrap();
            for (subject, host, method, v) in rows {
                let Ok(e) = l2_normalize(&v) else { continue };
                let rec = match Method::from_code(method).unwrap() {
                    Method::None => LabeledEmbedding::real(subject, e),
                    m => LabeledEmbedding::fake(subject, host, m, e).unwrap(),
                };
                ds.push(rec).unwrap();
            }
            let bytes = encode(&ds);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
