//! Feature matrices and per-sample metadata on disk.
//!
//! The SFFM container is a fixed 24-byte little-endian header followed by a
//! row-major binary32 payload:
//!
//! | bytes   | content                     |
//! |---------|-----------------------------|
//! | 0..4    | magic `b"SFFM"`             |
//! | 4..8    | version, `u32` LE, always 1 |
//! | 8..16   | rows `n`, `u64` LE          |
//! | 16..24  | columns `d`, `u64` LE       |
//! | 24..    | `n * d` `f32` LE values     |
//!
//! Values live in memory as `f64` but are always held at binary32 precision,
//! so a save/load round trip is exact.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jsonl;

pub const MAGIC: [u8; 4] = *b"SFFM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// An `n x d` matrix of per-sample feature embeddings, row `i` belonging to sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data. Values are rounded to binary32.
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid(format!(
                "feature matrix must have n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(invalid(format!(
                "feature data has {} values, expected {n}x{d}",
                data.len()
            )));
        }
        let data: Vec<f64> = data.into_iter().map(|v| v as f32 as f64).collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(invalid(format!(
                "row {i} has length {}, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Serializes to the SFFM byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    /// Parses the SFFM byte layout; `path` is only used for error context.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let corrupt = |msg: String| Error::Corruption {
            path: path.to_path_buf(),
            msg,
        };
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(format(format!(
                "bad magic {:?}, expected \"SFFM\"",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!(
                "header truncated at {} bytes",
                bytes.len()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(4))
            .ok_or_else(|| corrupt(format!("declared shape {n}x{d} overflows")))?;
        if payload.len() as u64 != expected {
            return Err(corrupt(format!(
                "payload is {} bytes, declared shape {n}x{d} needs {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(n as usize, d as usize, data)
    }
}

pub fn save_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix.to_bytes()).map_err(|e| Error::storage(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    FeatureMatrix::from_bytes(&bytes, path)
}

/// Per-sample metadata, one JSON object per line, paired with feature rows by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionMeta {
    pub id: String,
    pub text_len: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl InstructionMeta {
    /// Value of the first tag of the form `key:value`.
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find_map(|t| t.strip_prefix(key).and_then(|rest| rest.strip_prefix(':')))
    }
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<InstructionMeta>> {
    let records: Vec<InstructionMeta> = jsonl::read(path)?;
    check_unique_ids(records.iter().map(|m| m.id.as_str()))?;
    Ok(records)
}

pub fn save_metadata(meta: &[InstructionMeta], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write(path, meta)
}

pub(crate) fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Checks that a feature matrix and its metadata describe the same samples.
pub fn check_pairing(features: &FeatureMatrix, meta: &[InstructionMeta]) -> Result<()> {
    if features.n() != meta.len() {
        return Err(invalid(format!(
            "feature matrix has {} rows but metadata has {} records",
            features.n(),
            meta.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_by_one_is_28_bytes() {
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(m.to_bytes().len(), 28);
    }

    #[test]
    fn two_by_three_layout() {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len() - HEADER_LEN, 24);
        assert_eq!(&bytes[..4], b"SFFM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[44..48], &6.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(FeatureMatrix::new(0, 3, vec![]).is_err());
        assert!(FeatureMatrix::new(1, 0, vec![]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        // finite in f64 but overflows binary32
        assert!(FeatureMatrix::new(1, 1, vec![1e300]).is_err());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = FeatureMatrix::new(1, 1, vec![0.5]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = FeatureMatrix::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = FeatureMatrix::new(1, 1, vec![0.5]).unwrap().to_bytes();
        bytes[4] = 2;
        let err = FeatureMatrix::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let bytes = FeatureMatrix::new(2, 3, vec![0.0; 6]).unwrap().to_bytes();
        for cut in [HEADER_LEN + 1, bytes.len() - 4, bytes.len() - 1, 10] {
            let err = FeatureMatrix::from_bytes(&bytes[..cut], Path::new("x")).unwrap_err();
            assert!(matches!(err, Error::Corruption { .. }), "cut {cut}: {err}");
        }
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(
            FeatureMatrix::from_bytes(&long, Path::new("x")),
            Err(Error::Corruption { .. })
        ));
    }

    #[test]
    fn non_finite_payload_rejected_on_load() {
        let mut bytes = FeatureMatrix::new(1, 2, vec![0.0, 0.0]).unwrap().to_bytes();
        bytes[28..32].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, Path::new("x")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn metadata_order_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"text_len\":3}\n{\"id\":\"b\",\"text_len\":0,\"tags\":[\"cluster:1\"]}\n").unwrap();
        let meta = load_metadata(&p).unwrap();
        assert_eq!(meta.len(), 2);
        assert_eq!(meta[0].id, "a");
        assert_eq!(meta[1].tag("cluster"), Some("1"));

        fs::write(
            &p,
            "{\"id\":\"a\",\"text_len\":3}\n{\"id\":\"a\",\"text_len\":1}\n",
        )
        .unwrap();
        let err = load_metadata(&p).unwrap_err();
        assert!(err.to_string().contains("\"a\""), "{err}");

        fs::write(&p, "").unwrap();
        assert!(load_metadata(&p).unwrap().is_empty());

        fs::write(&p, "{\"id\":\"a\",\"text_len\":3}\n{\"id\":\"b\"}\n").unwrap();
        match load_metadata(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }

        fs::write(&p, "{\"id\":\"a\",\"text_len\":-1}\n").unwrap();
        assert!(matches!(load_metadata(&p), Err(Error::Parse { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn save_load_round_trip(
            (n, d, data) in (1usize..8, 1usize..8).prop_flat_map(|(n, d)| {
                (Just(n), Just(d), prop::collection::vec(-1e6f64..1e6, n * d))
            })
        ) {
            let m = FeatureMatrix::new(n, d, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.sffm");
            save_features(&m, &p).unwrap();
            let back = load_features(&p).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(fs::read(&p).unwrap(), m.to_bytes());
        }
    }
}
