// SPDX-License-Identifier: MIT OR Apache-2.0

//! Diagnostics over fitted bases and banks: top-direction agreement,
//! principal angles, EVR curves and a normalized 2D PCA for plotting.
//! Every table has a CSV form with fixed columns and 17 significant digits.

use std::fmt::Write as _;

use crate::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm};
use crate::shift::ShiftMatrix;
use crate::subspace::{spectrum, NuisanceBasis, DEFAULT_TOL};

/// Lossless decimal rendering used in every CSV export.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn check_pair(a: &NuisanceBasis, b: &NuisanceBasis) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.k() == 0 || b.k() == 0 {
        return Err(Error::InvalidArgument(
            "basis has no vectors (k = 0)".into(),
        ));
    }
    Ok(())
}

/// `|v_a . v_b|` for the leading vectors of two bases.
pub fn top_direction_cosine(a: &NuisanceBasis, b: &NuisanceBasis) -> Result<f64> {
    check_pair(a, b)?;
    Ok(dot(a.vector(0), b.vector(0)).abs().min(1.0))
}

/// Principal angles between the spans of two bases, ascending, in radians.
///
/// Cosines come from the singular values of `V_a V_b^T`; angles below
/// `pi/4` are taken from the sines instead (singular values of the part of
/// the smaller basis orthogonal to the larger one), which keeps them
/// accurate near zero where `acos` loses half the digits.
pub fn principal_angles(a: &NuisanceBasis, b: &NuisanceBasis) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    let (small, large) = if a.k() <= b.k() { (a, b) } else { (b, a) };
    let (ks, kl, dim) = (small.k(), large.k(), small.dim());

    let mut cross = Vec::with_capacity(ks * kl);
    for s in small.vectors() {
        cross.extend(large.vectors().map(|l| dot(s, l)));
    }
    let cosines = linalg::singular_values(&cross, ks, kl)?;

    let mut residual = Vec::with_capacity(ks * dim);
    for (i, s) in small.vectors().enumerate() {
        let mut r = s.to_vec();
        for (j, l) in large.vectors().enumerate() {
            linalg::axpy(-cross[i * kl + j], l, &mut r);
        }
        residual.extend(r);
    }
    let mut sines = linalg::singular_values(&residual, ks, dim)?;
    sines.reverse();

    Ok((0..ks)
        .map(|i| {
            let c = cosines.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let s = sines.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let angle = if c * c > 0.5 { s.asin() } else { c.acos() };
            angle.clamp(0.0, std::f64::consts::FRAC_PI_2)
        })
        .collect())
}

/// Pairwise agreement between two bases.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub cos_top1: f64,
    pub principal_angles: Vec<f64>,
    pub k_a: usize,
    pub k_b: usize,
    pub digest_a: String,
    pub digest_b: String,
}

pub fn consistency(a: &NuisanceBasis, b: &NuisanceBasis) -> Result<ConsistencyReport> {
    Ok(ConsistencyReport {
        cos_top1: top_direction_cosine(a, b)?,
        principal_angles: principal_angles(a, b)?,
        k_a: a.k(),
        k_b: b.k(),
        digest_a: a.digest(),
        digest_b: b.digest(),
    })
}

/// `consistency.csv`: one line per report.
pub fn consistency_csv(reports: &[ConsistencyReport]) -> String {
    let mut out = String::from("digest_a,digest_b,k_a,k_b,cos_top1,max_angle,principal_angles\n");
    for r in reports {
        let max = r.principal_angles.iter().copied().fold(0.0, f64::max);
        let angles: Vec<String> = r.principal_angles.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.digest_a,
            r.digest_b,
            r.k_a,
            r.k_b,
            fmt_f64(r.cos_top1),
            fmt_f64(max),
            angles.join(";")
        );
    }
    out
}

/// `angles.csv`: index and angle per line.
pub fn angles_csv(angles: &[f64]) -> String {
    let mut out = String::from("index,angle\n");
    for (i, a) in angles.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_f64(*a));
    }
    out
}

/// One point of a PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaPoint {
    pub id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// Pools the banks, unit-normalizes every row, centers the cloud and
/// projects it onto its top two principal directions.
pub fn pca2d(banks: &[FeatureBank], labels: &[String]) -> Result<Vec<PcaPoint>> {
    if banks.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} banks but {} labels",
            banks.len(),
            labels.len()
        )));
    }
    let dim = banks
        .first()
        .ok_or(Error::EmptyInput("no banks given"))?
        .dim();
    if let Some(b) = banks.iter().find(|b| b.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: b.dim(),
        });
    }
    let n: usize = banks.iter().map(FeatureBank::count).sum();
    if n < 2 {
        return Err(Error::EmptyInput("PCA needs at least two rows"));
    }

    let mut pooled = Vec::with_capacity(n * dim);
    for row in banks.iter().flat_map(FeatureBank::rows) {
        let r = norm(row);
        if r > 0.0 {
            pooled.extend(row.iter().map(|x| x / r));
        } else {
            pooled.extend_from_slice(row);
        }
    }
    let mut mean = vec![0.0; dim];
    for row in pooled.chunks_exact(dim) {
        linalg::axpy(1.0, row, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in pooled.chunks_exact_mut(dim) {
        linalg::axpy(-1.0, &mean, row);
    }

    let svd = linalg::right_svd(&pooled, n, dim)?;
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    if top <= 1e-12 * (n as f64).sqrt() {
        return Err(Error::Degenerate(
            "all rows coincide after normalization; covariance is zero".into(),
        ));
    }
    let v1 = &svd.vectors[0];
    let v2 = svd.vectors.get(1);

    let mut points = Vec::with_capacity(n);
    let mut rows = pooled.chunks_exact(dim);
    for (bank, label) in banks.iter().zip(labels) {
        for id in bank.ids() {
            let row = rows.next().expect("pooled rows match bank counts");
            points.push(PcaPoint {
                id: id.clone(),
                label: label.clone(),
                x: dot(row, v1),
                y: v2.map_or(0.0, |v| dot(row, v)),
            });
        }
    }
    Ok(points)
}

/// `pca2d.csv`: `id,label,x,y`.
pub fn pca_csv(points: &[PcaPoint]) -> String {
    let mut out = String::from("id,label,x,y\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&p.id),
            csv_field(&p.label),
            fmt_f64(p.x),
            fmt_f64(p.y)
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Cumulative EVR for `k = 1..=min(max_k, rank)`.
pub fn evr_curve(d: &ShiftMatrix, max_k: usize) -> Result<Vec<(usize, f64)>> {
    if d.is_empty() {
        return Err(Error::EmptyInput("shift matrix has no rows"));
    }
    if max_k == 0 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let s = spectrum(d)?;
    let top = s.first().copied().unwrap_or(0.0);
    let rank = s
        .iter()
        .take_while(|&&x| x > DEFAULT_TOL * top && top > 0.0)
        .count();
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut acc = 0.0;
    Ok(s.iter()
        .take(max_k.min(rank))
        .enumerate()
        .map(|(i, x)| {
            acc += x * x;
            (i + 1, (acc / total).min(1.0))
        })
        .collect())
}

/// `evr.csv`: `k,evr`.
pub fn evr_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,evr\n");
    for (k, e) in curve {
        let _ = writeln!(out, "{k},{}", fmt_f64(*e));
    }
    out
}
