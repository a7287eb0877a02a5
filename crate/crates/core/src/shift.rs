// SPDX-License-Identifier: MIT OR Apache-2.0

//! Empirical modality-induced shifts and the stacked shift matrix.
//!
//! A shift row is `h(text, blank image) - h(text)` for one prompt. Rows from
//! several anchor sets are concatenated into a [`ShiftMatrix`], which is what
//! the subspace fit consumes.

use sha2::{Digest, Sha256};

use crate::bank::{align_by_id, BankKind, Dtype, FeatureBank};
use crate::error::{Error, Result};
use crate::linalg::norm;

/// Meta key under which a shift bank records its matrix digest.
pub const META_SHIFT_DIGEST: &str = "shift_digest";
/// Meta key recording the digest of the contributing banks.
pub const META_SOURCE_DIGEST: &str = "source_digest";

/// Stacked shift vectors, one per row, in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    dim: usize,
    rows: Vec<f64>,
    source_ids: Vec<String>,
    source_digest: String,
}

impl ShiftMatrix {
    /// Builds a matrix directly from rows. `source_digest` is computed from
    /// the row contents.
    pub fn from_rows(dim: usize, rows: Vec<f64>, source_ids: Vec<String>) -> Result<Self> {
        let n = source_ids.len();
        if n == 0 {
            return Err(Error::EmptyInput("shift matrix needs at least one row"));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "shift dim must be at least 1".into(),
            ));
        }
        if rows.len() != n * dim {
            return Err(Error::Shape {
                count: n,
                dim,
                expected: n * dim,
                found: rows.len(),
            });
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: source_ids[i / dim].clone(),
                column: i % dim,
                offset: None,
            });
        }
        let mut m = Self {
            dim,
            rows,
            source_ids,
            source_digest: String::new(),
        };
        m.source_digest = m.digest();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of shift rows `N`.
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    /// Row-major `N x dim` values.
    pub fn data(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    /// Hash of the banks this matrix was stacked from.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    /// SHA-256 over the dimensions and row bytes (IDs excluded), hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.rows {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Copy with the column means subtracted. Off by default in fitting;
    /// exposed for ablations.
    pub fn centered(&self) -> Self {
        let mean = mean_shift(self);
        let mut rows = self.rows.clone();
        for row in rows.chunks_exact_mut(self.dim) {
            for (x, m) in row.iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        self.with_rows(rows)
    }

    /// Copy with every nonzero row scaled to unit norm.
    pub fn row_normalized(&self) -> Self {
        let mut rows = self.rows.clone();
        for row in rows.chunks_exact_mut(self.dim) {
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        self.with_rows(rows)
    }

    fn with_rows(&self, rows: Vec<f64>) -> Self {
        let mut m = Self {
            dim: self.dim,
            rows,
            source_ids: self.source_ids.clone(),
            source_digest: self.source_digest.clone(),
        };
        m.source_digest = format!("{}+{}", self.source_digest, &m.digest()[..16]);
        m
    }

    /// Mean row norm, used to match perturbation magnitudes to observed shifts.
    pub fn mean_row_norm(&self) -> f64 {
        self.rows().map(norm).sum::<f64>() / self.len() as f64
    }

    /// The matrix as a `shift` bank with its digests in meta.
    pub fn to_bank(&self) -> FeatureBank {
        FeatureBank::new(
            self.dim,
            self.source_ids.clone(),
            BankKind::Shift,
            Dtype::F64,
            self.rows.clone(),
        )
        .expect("shift matrix rows are finite with unique ids")
        .with_meta(META_SHIFT_DIGEST, self.digest())
        .with_meta(META_SOURCE_DIGEST, self.source_digest.clone())
    }
}

/// Per-ID difference `multimodal - text_only` over the shared IDs, in the
/// multimodal bank's order.
///
/// The multimodal bank must be tagged `blank_image` or `multimodal` and the
/// text bank `text_only`, unless `allow_kind_mismatch` is set.
pub fn compute_shifts(
    multimodal: &FeatureBank,
    text_only: &FeatureBank,
    allow_kind_mismatch: bool,
) -> Result<FeatureBank> {
    if !allow_kind_mismatch {
        if !matches!(
            multimodal.kind(),
            BankKind::BlankImage | BankKind::Multimodal
        ) {
            return Err(Error::KindMismatch {
                role: "multimodal",
                expected: "blank_image or multimodal".into(),
                found: multimodal.kind().to_string(),
            });
        }
        if text_only.kind() != BankKind::TextOnly {
            return Err(Error::KindMismatch {
                role: "text",
                expected: "text_only".into(),
                found: text_only.kind().to_string(),
            });
        }
    }
    let (mm, txt) = align_by_id(multimodal, text_only)?;
    let data = mm
        .data()
        .iter()
        .zip(txt.data())
        .map(|(a, b)| a - b)
        .collect();
    let bank = FeatureBank::new(
        mm.dim(),
        mm.ids().to_vec(),
        BankKind::Shift,
        Dtype::F64,
        data,
    )?;
    Ok(bank
        .with_meta("multimodal_digest", multimodal.digest())
        .with_meta("text_digest", text_only.digest()))
}

/// Concatenates shift banks row-wise in argument order.
///
/// Source IDs are prefixed with the bank's position (`"0/a"`, `"1/a"`) so
/// rows from different anchor sets stay distinguishable.
pub fn stack_shifts(banks: &[FeatureBank]) -> Result<ShiftMatrix> {
    let first = banks
        .first()
        .ok_or(Error::EmptyInput("no shift banks given"))?;
    let dim = first.dim();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut hasher = Sha256::new();
    for (i, bank) in banks.iter().enumerate() {
        if bank.kind() != BankKind::Shift {
            return Err(Error::KindMismatch {
                role: "shift",
                expected: "shift".into(),
                found: bank.kind().to_string(),
            });
        }
        if bank.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bank.dim(),
            });
        }
        rows.extend_from_slice(bank.data());
        ids.extend(bank.ids().iter().map(|id| format!("{i}/{id}")));
        hasher.update(bank.digest().as_bytes());
        hasher.update(b"\n");
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput("all shift banks are empty"));
    }
    let mut m = ShiftMatrix::from_rows(dim, rows, ids)?;
    m.source_digest = hex::encode(hasher.finalize());
    Ok(m)
}

/// Arithmetic mean of the rows of `d`.
pub fn mean_shift(d: &ShiftMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; d.dim()];
    for row in d.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let n = d.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(kind: BankKind, ids: &[&str], rows: &[Vec<f64>]) -> FeatureBank {
        FeatureBank::from_rows(
            ids.iter().map(|s| s.to_string()).collect(),
            rows,
            kind,
            Dtype::F64,
        )
        .unwrap()
    }

    fn matrix(rows: &[Vec<f64>]) -> ShiftMatrix {
        let ids: Vec<String> = (0..rows.len()).map(|i| i.to_string()).collect();
        ShiftMatrix::from_rows(rows[0].len(), rows.concat(), ids).unwrap()
    }

    #[test]
    fn shift_is_componentwise_difference() {
        let mm = bank(BankKind::BlankImage, &["a"], &[vec![1.0, 2.0]]);
        let txt = bank(BankKind::TextOnly, &["a"], &[vec![1.0, 0.0]]);
        let s = compute_shifts(&mm, &txt, false).unwrap();
        assert_eq!(s.kind(), BankKind::Shift);
        assert_eq!(s.row(0), &[0.0, 2.0]);
    }

    #[test]
    fn identical_banks_give_zero_shift() {
        let mm = bank(
            BankKind::Multimodal,
            &["a", "b"],
            &[vec![1.5, -2.0], vec![3.0, 4.0]],
        );
        let txt = mm.clone().with_kind(BankKind::TextOnly);
        let s = compute_shifts(&mm, &txt, false).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifts_follow_multimodal_order() {
        let mm = bank(
            BankKind::BlankImage,
            &["a", "b", "c"],
            &[vec![1.0], vec![2.0], vec![3.0]],
        );
        let txt = bank(BankKind::TextOnly, &["c", "a"], &[vec![0.5], vec![0.25]]);
        let s = compute_shifts(&mm, &txt, false).unwrap();
        assert_eq!(s.ids(), &["a".to_string(), "c".to_string()]);
        assert_eq!(s.data(), &[0.75, 2.5]);
    }

    #[test]
    fn kind_mismatch_is_overridable() {
        let mm = bank(BankKind::TextOnly, &["a"], &[vec![1.0]]);
        let txt = bank(BankKind::TextOnly, &["a"], &[vec![0.0]]);
        assert!(matches!(
            compute_shifts(&mm, &txt, false),
            Err(Error::KindMismatch {
                role: "multimodal",
                ..
            })
        ));
        assert!(compute_shifts(&mm, &txt, true).is_ok());
    }

    #[test]
    fn shift_errors() {
        let mm = bank(BankKind::BlankImage, &["a"], &[vec![1.0, 2.0]]);
        let other = bank(BankKind::TextOnly, &["b"], &[vec![1.0, 2.0]]);
        assert!(matches!(
            compute_shifts(&mm, &other, false),
            Err(Error::EmptyIntersection)
        ));
        let wide = bank(BankKind::TextOnly, &["a"], &[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            compute_shifts(&mm, &wide, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stacking_concatenates_rows() {
        let a = bank(BankKind::Shift, &["x", "y", "z"], &vec![vec![1.0; 8]; 3]);
        let b = bank(
            BankKind::Shift,
            &["x", "q", "r", "s", "t"],
            &vec![vec![2.0; 8]; 5],
        );
        let d = stack_shifts(&[a.clone(), b]).unwrap();
        assert_eq!(d.len(), 8);
        assert_eq!(d.dim(), 8);
        assert_eq!(d.source_ids()[0], "0/x");
        assert_eq!(d.source_ids()[3], "1/x");

        let single = stack_shifts(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.data(), a.data());
    }

    #[test]
    fn stacking_errors() {
        let a = bank(BankKind::Shift, &["x"], &[vec![1.0; 8]]);
        let b = bank(BankKind::Shift, &["x"], &[vec![1.0; 16]]);
        assert!(matches!(
            stack_shifts(&[a, b]),
            Err(Error::DimensionMismatch {
                expected: 8,
                found: 16
            })
        ));
        assert!(matches!(stack_shifts(&[]), Err(Error::EmptyInput(_))));
        let empty = FeatureBank::empty(4, BankKind::Shift, Dtype::F64);
        assert!(matches!(stack_shifts(&[empty]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mean_shift_cases() {
        assert_eq!(
            mean_shift(&matrix(&[vec![1.0, 0.0], vec![3.0, 0.0]])),
            vec![2.0, 0.0]
        );
        assert_eq!(mean_shift(&matrix(&[vec![0.3, -7.0]])), vec![0.3, -7.0]);
        assert_eq!(
            mean_shift(&matrix(&[vec![1.0, -1.0], vec![-1.0, 1.0]])),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn centering_zeroes_the_mean() {
        let d = matrix(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![2.0, 1.0]]).centered();
        assert!(mean_shift(&d).iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn bank_round_trip_keeps_rows() {
        let d = matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = d.to_bank();
        assert_eq!(b.meta()[META_SHIFT_DIGEST], d.digest());
        let again = stack_shifts(&[b]).unwrap();
        assert_eq!(again.data(), d.data());
        assert_eq!(again.digest(), d.digest());
    }
}
