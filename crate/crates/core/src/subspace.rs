// SPDX-License-Identifier: MIT OR Apache-2.0

//! Nuisance-subspace fitting from a shift matrix.
//!
//! The basis is the top-k right singular vectors of the raw (uncentered)
//! shift matrix `D`. Because every shift lies in the span of these vectors
//! once `k` reaches the rank of `D`, projecting them out removes the
//! modality-induced component while leaving anything orthogonal untouched.
//!
//! Vectors follow the `max-abs-positive` sign convention: each is flipped so
//! its largest-magnitude entry is positive, lowest index winning ties.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::error::{Error, Result};
use crate::linalg::{self, dot};
use crate::shift::ShiftMatrix;

/// Magic bytes of the `.nbasis` container.
pub const BASIS_MAGIC: &str = "NBS1";
/// Name of the sign convention recorded in `.nbasis` headers.
pub const SIGN_CONVENTION: &str = "max-abs-positive";
/// Rank used when the caller does not choose one.
pub const DEFAULT_RANK: usize = 32;
/// Relative singular-value cutoff for effective rank.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Meta key set when the requested rank exceeded the effective rank.
pub const META_TRUNCATED: &str = "truncated";

/// Orthonormal basis of the estimated nuisance subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBasis {
    dim: usize,
    vectors: Vec<f64>,
    singular_values: Vec<f64>,
    evr_cumulative: Vec<f64>,
    source_digest: String,
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisHeader {
    dim: usize,
    evr_cumulative: Vec<f64>,
    k: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
    sign_convention: String,
    singular_values: Vec<f64>,
    source_digest: String,
}

impl NuisanceBasis {
    /// Assembles a basis from its parts, checking shapes and finiteness only.
    /// Use [`validate_basis`] to check orthonormality.
    pub fn from_parts(
        dim: usize,
        vectors: Vec<Vec<f64>>,
        singular_values: Vec<f64>,
        evr_cumulative: Vec<f64>,
        source_digest: impl Into<String>,
    ) -> Result<Self> {
        let k = vectors.len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if singular_values.len() != k || evr_cumulative.len() != k {
            return Err(Error::InvalidArgument(format!(
                "basis of rank {k} needs {k} singular values and EVR entries, got {} and {}",
                singular_values.len(),
                evr_cumulative.len()
            )));
        }
        let flat = vectors.concat();
        if let Some(i) = flat
            .iter()
            .chain(&singular_values)
            .chain(&evr_cumulative)
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                id: "basis".into(),
                column: i,
                offset: None,
            });
        }
        Ok(Self {
            dim,
            vectors: flat,
            singular_values,
            evr_cumulative,
            source_digest: source_digest.into(),
            meta: BTreeMap::new(),
        })
    }

    /// The rank-0 basis; projecting onto its complement is the identity.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            singular_values: Vec::new(),
            evr_cumulative: Vec::new(),
            source_digest: String::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis vectors.
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.k()).map(move |i| self.vector(i))
    }

    /// Row-major `k x dim` values.
    pub fn data(&self) -> &[f64] {
        &self.vectors
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn evr_cumulative(&self) -> &[f64] {
        &self.evr_cumulative
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Coordinates of `h` along each basis vector.
    pub fn coefficients(&self, h: &[f64]) -> Vec<f64> {
        self.vectors().map(|v| dot(v, h)).collect()
    }

    /// Basis restricted to its first `k` vectors.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.k());
        Self {
            dim: self.dim,
            vectors: self.vectors[..k * self.dim].to_vec(),
            singular_values: self.singular_values[..k].to_vec(),
            evr_cumulative: self.evr_cumulative[..k].to_vec(),
            source_digest: self.source_digest.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Serializes to the `.nbasis` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = BasisHeader {
            dim: self.dim,
            evr_cumulative: self.evr_cumulative.clone(),
            k: self.k(),
            meta: self.meta.clone(),
            sign_convention: SIGN_CONVENTION.into(),
            singular_values: self.singular_values.clone(),
            source_digest: self.source_digest.clone(),
        };
        let header = serde_json::to_vec(&header).expect("basis header serializes");
        container::join(BASIS_MAGIC, &header, &container::encode_f64(&self.vectors))
    }

    /// Parses the `.nbasis` byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let frame = container::split(bytes, BASIS_MAGIC)?;
        let header: BasisHeader = container::parse_header(frame.header)?;
        if header.sign_convention != SIGN_CONVENTION {
            return Err(Error::InvalidHeader {
                offset: container::PREFIX_LEN,
                reason: format!("unsupported sign convention {:?}", header.sign_convention),
            });
        }
        if header.singular_values.len() != header.k || header.evr_cumulative.len() != header.k {
            return Err(Error::InvalidHeader {
                offset: container::PREFIX_LEN,
                reason: format!("k is {} but spectrum lists disagree", header.k),
            });
        }
        let expected = header.k * header.dim * 8;
        if frame.payload.len() != expected {
            return Err(Error::PayloadLength {
                offset: frame.payload_offset,
                expected,
                found: frame.payload.len(),
            });
        }
        let vectors = container::decode_f64(frame.payload);
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: format!("basis vector {}", i / header.dim.max(1)),
                column: i % header.dim.max(1),
                offset: Some(frame.payload_offset + 8 * i),
            });
        }
        Ok(Self {
            dim: header.dim,
            vectors,
            singular_values: header.singular_values,
            evr_cumulative: header.evr_cumulative,
            source_digest: header.source_digest,
            meta: header.meta,
        })
    }

    /// SHA-256 of the serialized basis, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Reads a `.nbasis` file.
pub fn load_basis(path: impl AsRef<Path>) -> Result<NuisanceBasis> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NuisanceBasis::from_bytes(&bytes)
}

/// Writes a `.nbasis` file.
pub fn save_basis(basis: &NuisanceBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, basis.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Knobs for [`fit_subspace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Relative cutoff used to clamp `k` to the effective rank.
    pub tol: f64,
    /// Subtract the mean shift before the SVD. Off by default: the mean
    /// direction belongs to the nuisance span.
    pub center: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            center: false,
        }
    }
}

/// Full singular spectrum of `d`, descending.
pub fn spectrum(d: &ShiftMatrix) -> Result<Vec<f64>> {
    linalg::singular_values(d.data(), d.len(), d.dim())
}

fn rank_of(spectrum: &[f64], tol: f64) -> usize {
    match spectrum.first() {
        Some(&top) if top > 0.0 => spectrum.iter().take_while(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

fn cumulative_evr(spectrum: &[f64]) -> Vec<f64> {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return vec![0.0; spectrum.len()];
    }
    let mut acc = 0.0;
    spectrum
        .iter()
        .map(|s| {
            acc += s * s;
            (acc / total).min(1.0)
        })
        .collect()
}

/// Fits the top-`k` nuisance basis of `d`.
///
/// `k` is clamped to the effective rank of `d` (relative cutoff
/// `options.tol`); when that happens the basis carries a
/// [`META_TRUNCATED`] note.
pub fn fit_subspace(d: &ShiftMatrix, k: usize, options: &FitOptions) -> Result<NuisanceBasis> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_tol(options.tol)?;
    if d.is_empty() {
        return Err(Error::EmptyInput("shift matrix has no rows"));
    }
    let centered;
    let source = if options.center {
        centered = d.centered();
        &centered
    } else {
        d
    };
    let svd = linalg::right_svd(source.data(), source.len(), source.dim())?;
    let rank = rank_of(&svd.singular_values, options.tol);
    let kept = k.min(rank);
    let evr = cumulative_evr(&svd.singular_values);
    let mut basis = NuisanceBasis::from_parts(
        d.dim(),
        svd.vectors[..kept].to_vec(),
        svd.singular_values[..kept].to_vec(),
        evr[..kept].to_vec(),
        d.digest(),
    )?;
    if kept < k {
        basis = basis.with_meta(
            META_TRUNCATED,
            format!("requested k={k}, effective rank {rank}"),
        );
    }
    if options.center {
        basis = basis.with_meta("centered", "true");
    }
    Ok(basis)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "tol must lie in (0, 1), got {tol}"
        )))
    }
}

/// Number of singular values above `tol * sigma_1`. Zero for a zero matrix.
pub fn effective_rank(d: &ShiftMatrix, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    Ok(rank_of(&spectrum(d)?, tol))
}

/// Explained-variance ratio of the top `k` directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evr {
    /// `sum_{i<=k} s_i^2 / sum_i s_i^2`, with `k` clamped to the effective rank.
    pub value: f64,
    /// `k` after clamping.
    pub k: usize,
    /// Set when `D` is identically zero; `value` is then 0.
    pub all_zero: bool,
}

/// Explained-variance ratio of the top `k` singular directions of `d`,
/// computed on squared singular values.
pub fn explained_variance_ratio(d: &ShiftMatrix, k: usize) -> Result<Evr> {
    if d.is_empty() {
        return Err(Error::EmptyInput("shift matrix has no rows"));
    }
    let s = spectrum(d)?;
    let rank = rank_of(&s, DEFAULT_TOL);
    if rank == 0 {
        return Ok(Evr {
            value: 0.0,
            k: 0,
            all_zero: true,
        });
    }
    let k = k.min(rank);
    Ok(Evr {
        value: cumulative_evr(&s)[k - 1],
        k,
        all_zero: false,
    })
}

/// Outcome of [`validate_basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct BasisReport {
    /// `max |v_i . v_j - delta_ij|` over all pairs.
    pub max_orthonormality_error: f64,
    pub spectrum_descending: bool,
    pub evr_nondecreasing: bool,
    pub passed: bool,
    /// Human-readable failure descriptions, empty on success.
    pub failures: Vec<String>,
}

/// Tolerance used by [`validate_basis`].
pub const VALIDATION_TOL: f64 = 1e-10;

/// Checks orthonormality, spectrum ordering and EVR monotonicity.
pub fn validate_basis(basis: &NuisanceBasis) -> BasisReport {
    let k = basis.k();
    let mut max_err = 0.0f64;
    for i in 0..k {
        for j in i..k {
            let target = if i == j { 1.0 } else { 0.0 };
            max_err = max_err.max((dot(basis.vector(i), basis.vector(j)) - target).abs());
        }
    }
    let s = basis.singular_values();
    let spectrum_descending =
        s.iter().all(|&x| x >= 0.0) && s.windows(2).all(|w| w[1] <= w[0] + VALIDATION_TOL * w[0]);
    let e = basis.evr_cumulative();
    let evr_nondecreasing = e.windows(2).all(|w| w[1] >= w[0] - VALIDATION_TOL)
        && e.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x));

    let mut failures = Vec::new();
    if max_err > VALIDATION_TOL {
        failures.push(format!(
            "orthonormality error {max_err:e} exceeds {VALIDATION_TOL:e}"
        ));
    }
    if !spectrum_descending {
        failures.push("singular values are not non-negative and descending".into());
    }
    if !evr_nondecreasing {
        failures.push("cumulative EVR is not nondecreasing within [0, 1]".into());
    }
    BasisReport {
        max_orthonormality_error: max_err,
        spectrum_descending,
        evr_nondecreasing,
        passed: failures.is_empty(),
        failures,
    }
}
