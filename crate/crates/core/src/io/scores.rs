//! Per-point class score matrices and the `AMVS` exchange format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AMVS"
//! 4       2     version (u16, = 1)
//! 6       2     K, number of classes (u16)
//! 8       4     N, number of rows (u32)
//! 12      4·N·K row-major float32 scores
//! ```
//! All integers and floats are little-endian.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

pub const SCORES_MAGIC: &[u8; 4] = b"AMVS";
pub const SCORES_VERSION: u16 = 1;
const HEADER_BYTES: usize = 12;

/// Rows whose sum is within this distance of 1 are kept verbatim.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Rows within this distance of 1 are renormalized; anything further is rejected.
pub const ROW_SUM_RENORMALIZE: f64 = 1e-2;
const NEGATIVE_TOLERANCE: f64 = 1e-6;

/// N×K non-negative class scores with unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// Validates and, where needed, renormalizes raw row-major scores.
    pub fn from_raw(rows: usize, num_classes: usize, mut data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("score matrix needs at least one class"));
        }
        if data.len() != rows * num_classes {
            return Err(Error::shape(format!(
                "{} values for {rows}x{num_classes} scores",
                data.len()
            )));
        }
        for (row, chunk) in data.chunks_exact_mut(num_classes).enumerate() {
            normalize_row(row, chunk)?;
        }
        Ok(Self { rows, num_classes, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("ragged score rows"));
        }
        Self::from_raw(rows.len(), k, rows.concat())
    }

    /// Builds a matrix from rows already known to be normalized and non-negative.
    pub(crate) fn from_normalized(rows: usize, num_classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * num_classes);
        Self { rows, num_classes, data }
    }

    pub fn uniform(rows: usize, num_classes: usize) -> Self {
        let v = 1.0 / num_classes as f64;
        Self { rows, num_classes, data: vec![v; rows * num_classes] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.num_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-row argmax with ties resolved to the lowest class id.
    pub fn argmax(&self) -> Vec<u32> {
        self.iter_rows().map(argmax).collect()
    }

    pub(crate) fn check_same_shape(&self, other: &ScoreMatrix) -> Result<()> {
        if self.rows != other.rows || self.num_classes != other.num_classes {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{} score matrices",
                self.rows, self.num_classes, other.rows, other.num_classes
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best as u32
}

fn normalize_row(row: usize, values: &mut [f64]) -> Result<()> {
    for v in values.iter_mut() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: row });
        }
        if *v < -NEGATIVE_TOLERANCE {
            return Err(Error::NegativeScore { row, value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_RENORMALIZE {
        return Err(Error::RowNotNormalized { row, sum });
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        values.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(())
}

pub fn read_scores(bytes: &[u8]) -> Result<ScoreMatrix> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::PayloadLength { expected: HEADER_BYTES, found: bytes.len() });
    }
    if &bytes[0..4] != SCORES_MAGIC {
        return Err(Error::BadMagic { expected: "AMVS" });
    }
    let version = LittleEndian::read_u16(&bytes[4..6]);
    if version != SCORES_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let k = LittleEndian::read_u16(&bytes[6..8]) as usize;
    let n = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let payload = &bytes[HEADER_BYTES..];
    let expected = n * k * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength { expected, found: payload.len() });
    }
    let data = payload.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect();
    ScoreMatrix::from_raw(n, k, data)
}

pub fn write_scores(scores: &ScoreMatrix) -> Result<Vec<u8>> {
    let k = u16::try_from(scores.num_classes)
        .map_err(|_| Error::invalid("more than 65535 classes"))?;
    let n = u32::try_from(scores.rows).map_err(|_| Error::invalid("more than 2^32 rows"))?;
    let mut out = vec![0u8; HEADER_BYTES + scores.data.len() * 4];
    out[0..4].copy_from_slice(SCORES_MAGIC);
    LittleEndian::write_u16(&mut out[4..6], SCORES_VERSION);
    LittleEndian::write_u16(&mut out[6..8], k);
    LittleEndian::write_u32(&mut out[8..12], n);
    for (v, c) in scores.data.iter().zip(out[HEADER_BYTES..].chunks_exact_mut(4)) {
        LittleEndian::write_f32(c, *v as f32);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn amvs(k: u16, n: u32, values: &[f32]) -> Vec<u8> {
        let mut out = b"AMVS".to_vec();
        out.extend(1u16.to_le_bytes());
        out.extend(k.to_le_bytes());
        out.extend(n.to_le_bytes());
        out.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        out
    }

    #[test]
    fn reads_single_row() {
        let s = read_scores(&amvs(2, 1, &[0.7, 0.3])).unwrap();
        assert_eq!((s.rows(), s.num_classes()), (1, 2));
        assert_eq!(s.row(0), &[0.7f32 as f64, 0.3f32 as f64]);
    }

    #[test]
    fn zero_entry_row_unchanged() {
        let s = read_scores(&amvs(3, 1, &[0.5, 0.5, 0.0])).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn unnormalized_row_rejected() {
        let err = read_scores(&amvs(2, 1, &[0.2, 0.2])).unwrap_err();
        assert!(err.to_string().contains("row 0 not normalized"));
    }

    #[test]
    fn slightly_off_row_renormalized() {
        let s = read_scores(&amvs(2, 1, &[0.5, 0.505])).unwrap();
        let sum: f64 = s.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn header_errors() {
        let mut bad = amvs(2, 1, &[0.5, 0.5]);
        bad[0] = b'X';
        assert!(matches!(read_scores(&bad), Err(Error::BadMagic { .. })));

        let mut v2 = amvs(2, 1, &[0.5, 0.5]);
        v2[4] = 2;
        assert!(matches!(read_scores(&v2), Err(Error::UnsupportedVersion(2))));

        let short = amvs(2, 2, &[0.5, 0.5]);
        assert!(matches!(read_scores(&short), Err(Error::PayloadLength { .. })));
        assert!(read_scores(b"AMV").is_err());
    }

    #[test]
    fn negative_entries() {
        assert!(matches!(
            read_scores(&amvs(2, 1, &[1.1, -0.1])),
            Err(Error::NegativeScore { .. })
        ));
        let s = read_scores(&amvs(2, 1, &[1.0, -1e-7])).unwrap();
        assert_eq!(s.row(0)[1], 0.0);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }
}
