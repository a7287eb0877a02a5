// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense helpers over row-major `f64` slices, plus the SVD entry point.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Right singular vectors of a matrix, sorted by descending singular value.
#[derive(Debug, Clone)]
pub struct RightSvd {
    /// All `min(rows, cols)` singular values, descending.
    pub singular_values: Vec<f64>,
    /// One unit vector per singular value, `cols` long each.
    pub vectors: Vec<Vec<f64>>,
}

// Bound on implicit-QR sweeps; nalgebra treats 0 as unbounded.
const MAX_SVD_ITERATIONS: usize = 1_000_000;

/// Thin SVD of the `rows x cols` row-major matrix `data`, keeping only the
/// right factor.
///
/// Each vector is flipped so its largest-magnitude entry is positive (ties
/// go to the lowest index). Equal singular values are ordered by
/// lexicographic comparison of the canonical vectors.
pub fn right_svd(data: &[f64], rows: usize, cols: usize) -> Result<RightSvd> {
    if rows == 0 || cols == 0 {
        return Ok(RightSvd {
            singular_values: Vec::new(),
            vectors: Vec::new(),
        });
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    let svd = m
        .try_svd_unordered(false, true, f64::EPSILON, MAX_SVD_ITERATIONS)
        .ok_or(Error::SvdNonConvergence { rows, cols })?;
    let v_t = svd.v_t.expect("right factor requested");
    let mut pairs: Vec<(f64, Vec<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
            canonical_sign(&mut v);
            (s.abs(), v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| lexicographic(&b.1, &a.1))
    });
    let (singular_values, vectors) = pairs.into_iter().unzip();
    Ok(RightSvd {
        singular_values,
        vectors,
    })
}

/// Flips `v` so that its largest-magnitude component is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Singular values only, descending.
pub fn singular_values(data: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    let svd = m
        .try_svd_unordered(false, false, f64::EPSILON, MAX_SVD_ITERATIONS)
        .ok_or(Error::SvdNonConvergence { rows, cols })?;
    let mut s: Vec<f64> = svd.singular_values.iter().map(|x| x.abs()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    Ok(s)
}

/// Orthonormalizes `rows` in place with two passes of modified Gram-Schmidt.
/// Returns false if a row collapses below `1e-12` of its original norm.
pub fn orthonormalize(rows: &mut [Vec<f64>]) -> bool {
    for i in 0..rows.len() {
        let original = norm(&rows[i]);
        for _ in 0..2 {
            for j in 0..i {
                let (done, rest) = rows.split_at_mut(i);
                let c = dot(&rest[0], &done[j]);
                axpy(-c, &done[j], &mut rest[0]);
            }
        }
        let n = norm(&rows[i]);
        if n.is_nan() || n <= 1e-12 * original || n == 0.0 {
            return false;
        }
        rows[i].iter_mut().for_each(|x| *x /= n);
    }
    true
}
