// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature banks: ordered, ID-tagged hidden-state vectors and their `.fbank`
//! on-disk container.
//!
//! A bank is immutable once built. Values are held in `f64` regardless of the
//! storage dtype; `f32` banks are rounded to single precision at construction
//! so that a save/load cycle is bit-exact.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::error::{Error, Result};

/// Magic bytes of the `.fbank` container.
pub const BANK_MAGIC: &str = "FBK1";

/// Longest accepted ID, in UTF-8 bytes.
pub const MAX_ID_BYTES: usize = 256;

/// What the rows of a bank represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankKind {
    /// Hidden states of text-only inputs.
    TextOnly,
    /// Hidden states of text paired with a real image.
    Multimodal,
    /// Hidden states of text paired with a content-free image.
    BlankImage,
    /// Modality-induced shift vectors.
    Shift,
    /// Anything else (ideal components, projected outputs, ...).
    Generic,
}

impl BankKind {
    /// Name used in headers and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextOnly => "text_only",
            Self::Multimodal => "multimodal",
            Self::BlankImage => "blank_image",
            Self::Shift => "shift",
            Self::Generic => "generic",
        }
    }
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Storage precision of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    /// 4-byte IEEE-754.
    F32,
    /// 8-byte IEEE-754.
    F64,
}

impl Dtype {
    /// Bytes per stored value.
    pub fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// An ordered collection of equal-length hidden-state vectors with unique IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    kind: BankKind,
    dtype: Dtype,
    ids: Vec<String>,
    data: Vec<f64>,
    meta: BTreeMap<String, String>,
}

// Field order is the sorted key order, so serde_json emits sorted keys.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankHeader {
    count: usize,
    dim: usize,
    dtype: Dtype,
    ids: Vec<String>,
    kind: BankKind,
    meta: BTreeMap<String, String>,
}

impl FeatureBank {
    /// Builds a bank from a row-major buffer, checking every invariant.
    ///
    /// For [`Dtype::F32`] the values are rounded to single precision; a value
    /// that overflows `f32` is reported as non-finite.
    pub fn new(
        dim: usize,
        ids: Vec<String>,
        kind: BankKind,
        dtype: Dtype,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        let count = ids.len();
        if count > 0 && dim == 0 {
            return Err(Error::InvalidArgument(
                "dim must be at least 1 for a non-empty bank".into(),
            ));
        }
        if data.len() != count * dim {
            return Err(Error::Shape {
                count,
                dim,
                expected: count * dim,
                found: data.len(),
            });
        }
        check_ids(&ids)?;
        if dtype == Dtype::F32 {
            for v in &mut data {
                *v = *v as f32 as f64;
            }
        }
        check_finite(dim, &ids, &data, None)?;
        Ok(Self {
            dim,
            kind,
            dtype,
            ids,
            data,
            meta: BTreeMap::new(),
        })
    }

    /// Convenience constructor from per-row vectors.
    pub fn from_rows(
        ids: Vec<String>,
        rows: &[Vec<f64>],
        kind: BankKind,
        dtype: Dtype,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if rows.len() != ids.len() {
            return Err(Error::Shape {
                count: ids.len(),
                dim,
                expected: ids.len() * dim,
                found: rows.len() * dim,
            });
        }
        Self::new(dim, ids, kind, dtype, rows.concat())
    }

    /// A bank with no rows.
    pub fn empty(dim: usize, kind: BankKind, dtype: Dtype) -> Self {
        Self {
            dim,
            kind,
            dtype,
            ids: Vec::new(),
            data: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    /// Returns the bank with `key` set to `value` in its metadata.
    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Returns the bank with its metadata replaced.
    pub fn with_meta_map(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    /// Returns the bank retagged as `kind`.
    pub fn with_kind(mut self, kind: BankKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-major values, `count * dim` long.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Row `i`. Panics if out of range.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Iterates rows in order.
    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.count()).map(move |i| self.row(i))
    }

    /// Position of `id`, if present.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Builds a bank of the same dim/kind/dtype/meta from replacement rows.
    ///
    /// Used by row-wise transforms; `data` must have `count * dim` values.
    pub fn map_data(&self, data: Vec<f64>) -> Result<Self> {
        let bank = Self::new(self.dim, self.ids.clone(), self.kind, self.dtype, data)?;
        Ok(bank.with_meta_map(self.meta.clone()))
    }

    /// Restriction to the given row indices, in the order given.
    pub(crate) fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            kind: self.kind,
            dtype: self.dtype,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            data,
            meta: self.meta.clone(),
        }
    }

    /// Serializes to the `.fbank` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = BankHeader {
            count: self.count(),
            dim: self.dim,
            dtype: self.dtype,
            ids: self.ids.clone(),
            kind: self.kind,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("bank header serializes");
        let payload = match self.dtype {
            Dtype::F32 => container::encode_f32(&self.data),
            Dtype::F64 => container::encode_f64(&self.data),
        };
        container::join(BANK_MAGIC, &header, &payload)
    }

    /// Parses the `.fbank` byte layout, validating every invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let frame = container::split(bytes, BANK_MAGIC)?;
        let header: BankHeader = container::parse_header(frame.header)?;
        if header.count != header.ids.len() {
            return Err(Error::InvalidHeader {
                offset: container::PREFIX_LEN,
                reason: format!(
                    "count is {} but {} ids are listed",
                    header.count,
                    header.ids.len()
                ),
            });
        }
        if header.count > 0 && header.dim == 0 {
            return Err(Error::InvalidHeader {
                offset: container::PREFIX_LEN,
                reason: "dim must be at least 1 for a non-empty bank".into(),
            });
        }
        let expected = header
            .count
            .checked_mul(header.dim)
            .and_then(|n| n.checked_mul(header.dtype.width()))
            .ok_or_else(|| Error::InvalidHeader {
                offset: container::PREFIX_LEN,
                reason: "count * dim overflows".into(),
            })?;
        if frame.payload.len() != expected {
            return Err(Error::PayloadLength {
                offset: frame.payload_offset,
                expected,
                found: frame.payload.len(),
            });
        }
        check_ids(&header.ids)?;
        let data = match header.dtype {
            Dtype::F32 => container::decode_f32(frame.payload),
            Dtype::F64 => container::decode_f64(frame.payload),
        };
        check_finite(
            header.dim,
            &header.ids,
            &data,
            Some((frame.payload_offset, header.dtype.width())),
        )?;
        Ok(Self {
            dim: header.dim,
            kind: header.kind,
            dtype: header.dtype,
            ids: header.ids,
            data,
            meta: header.meta,
        })
    }

    /// SHA-256 of the serialized bank, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if id.is_empty() {
            return Err(Error::InvalidId {
                id: id.clone(),
                reason: "empty",
            });
        }
        if id.len() > MAX_ID_BYTES {
            return Err(Error::InvalidId {
                id: id.clone(),
                reason: "longer than 256 bytes",
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

fn check_finite(
    dim: usize,
    ids: &[String],
    data: &[f64],
    file: Option<(usize, usize)>,
) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let (row, column) = (i / dim, i % dim);
        return Err(Error::NonFinite {
            id: ids[row].clone(),
            column,
            offset: file.map(|(start, width)| start + i * width),
        });
    }
    Ok(())
}

/// Reads a `.fbank` file.
pub fn load_bank(path: impl AsRef<Path>) -> Result<FeatureBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureBank::from_bytes(&bytes)
}

/// Writes a `.fbank` file. Output bytes depend only on the bank's contents.
///
/// Concurrent writers to the same path are not coordinated.
pub fn save_bank(bank: &FeatureBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bank.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Restricts `a` and `b` to their shared IDs, both ordered as in `a`.
pub fn align_by_id(a: &FeatureBank, b: &FeatureBank) -> Result<(FeatureBank, FeatureBank)> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let b_index: std::collections::HashMap<&str, usize> = b
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let (a_rows, b_rows): (Vec<usize>, Vec<usize>) = a
        .ids()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| b_index.get(id.as_str()).map(|&j| (i, j)))
        .unzip();
    if a_rows.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok((a.select(&a_rows), b.select(&b_rows)))
}
