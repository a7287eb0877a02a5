// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic worlds with a known nuisance subspace.
//!
//! Each sample is built as
//!
//! ```text
//! blank_i      = text_i + shift_i              shift_i in span(truth)
//! multimodal_i = ideal_i + alpha_i * (blank_i - text_i)
//! ideal_i      orthogonal to span(truth)
//! ```
//!
//! so that projecting the fitted nuisance span out of `multimodal_i` should
//! return `ideal_i`. The distributions are choices of this generator and make
//! no claim about real transformer features.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::principal_angles;
use crate::bank::{load_bank, save_bank, BankKind, Dtype, FeatureBank};
use crate::error::{Error, Result};
use crate::intervention::project_out;
use crate::linalg::{self, axpy, dot, norm};
use crate::rng::{Domain, Stream};
use crate::subspace::{load_basis, save_basis, NuisanceBasis};

/// Parameters of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dim: usize,
    pub nuisance_rank: usize,
    pub n_samples: usize,
    /// Per-sample shift intensity drawn uniformly from `[lo, hi]`.
    pub alpha_range: (f64, f64),
    /// Expected norm of ideal and text-only features.
    pub ideal_scale: f64,
    /// Per-coordinate measurement noise on the observed banks.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Noiseless config with `alpha` in `[0.5, 1.5]` and unit ideal scale.
    pub fn new(dim: usize, nuisance_rank: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            dim,
            nuisance_rank,
            n_samples,
            alpha_range: (0.5, 1.5),
            ideal_scale: 1.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.nuisance_rank == 0 || self.nuisance_rank >= self.dim {
            return fail(format!(
                "nuisance rank must satisfy 1 <= r < dim, got r={} dim={}",
                self.nuisance_rank, self.dim
            ));
        }
        if self.n_samples < self.nuisance_rank {
            return fail(format!(
                "need at least r={} samples, got {}",
                self.nuisance_rank, self.n_samples
            ));
        }
        let (lo, hi) = self.alpha_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail(format!(
                "alpha range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            ));
        }
        if !(self.ideal_scale > 0.0 && self.ideal_scale.is_finite()) {
            return fail(format!(
                "ideal scale must be positive, got {}",
                self.ideal_scale
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// A generated world and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub config: ScenarioConfig,
    pub truth_basis: NuisanceBasis,
    pub text_bank: FeatureBank,
    pub blank_bank: FeatureBank,
    pub multimodal_bank: FeatureBank,
    pub ideal_bank: FeatureBank,
    pub alphas: Vec<f64>,
}

/// Standard deviation of the shift coefficient along truth direction `j`.
fn direction_weight(j: usize) -> f64 {
    1.0 / (j as f64 + 1.0)
}

/// Draws an orthonormal rank-`r` basis in `dim` dimensions from `seed`.
pub fn random_truth_basis(dim: usize, r: usize, seed: u64) -> Result<NuisanceBasis> {
    if r == 0 || r > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot draw rank {r} in dim {dim}"
        )));
    }
    let mut stream = Stream::new(seed, Domain::TruthBasis, 0);
    let mut rows: Vec<Vec<f64>> = (0..r).map(|_| stream.normals(dim)).collect();
    if !linalg::orthonormalize(&mut rows) {
        return Err(Error::Degenerate(
            "random truth basis is rank deficient".into(),
        ));
    }
    rows.iter_mut().for_each(|v| linalg::canonical_sign(v));
    let weights: Vec<f64> = (0..r).map(direction_weight).collect();
    let total: f64 = weights.iter().map(|w| w * w).sum();
    let mut acc = 0.0;
    let evr = weights
        .iter()
        .map(|w| {
            acc += w * w;
            (acc / total).min(1.0)
        })
        .collect();
    Ok(
        NuisanceBasis::from_parts(dim, rows, weights, evr, format!("synthetic-truth:{seed}"))?
            .with_meta("synthetic", "truth"),
    )
}

/// Generates a scenario with a fresh truth basis drawn from `config.seed`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<SyntheticScenario> {
    config.validate()?;
    let truth = random_truth_basis(config.dim, config.nuisance_rank, config.seed)?;
    generate_scenario_with_basis(config, &truth)
}

/// Generates a scenario around a given orthonormal truth basis. The basis
/// rank overrides `config.nuisance_rank`.
pub fn generate_scenario_with_basis(
    config: &ScenarioConfig,
    truth: &NuisanceBasis,
) -> Result<SyntheticScenario> {
    let config = ScenarioConfig {
        nuisance_rank: truth.k(),
        ..config.clone()
    };
    config.validate()?;
    if truth.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            found: truth.dim(),
        });
    }
    let (d, r, n) = (config.dim, truth.k(), config.n_samples);
    let text_scale = config.ideal_scale / (d as f64).sqrt();
    let ideal_scale = config.ideal_scale / ((d - r) as f64).sqrt();
    let (lo, hi) = config.alpha_range;

    let mut text = Vec::with_capacity(n * d);
    let mut blank = Vec::with_capacity(n * d);
    let mut multimodal = Vec::with_capacity(n * d);
    let mut ideal = Vec::with_capacity(n * d);
    let mut alphas = Vec::with_capacity(n);

    for i in 0..n {
        let mut s = Stream::new(config.seed, Domain::Sample, i as u64);

        let text_i: Vec<f64> = s.normals(d).iter().map(|x| x * text_scale).collect();

        let mut shift = vec![0.0; d];
        for (j, v) in truth.vectors().enumerate() {
            axpy(s.normal() * direction_weight(j), v, &mut shift);
        }
        let sn = norm(&shift);
        shift.iter_mut().for_each(|x| *x /= sn);
        let blank_i: Vec<f64> = text_i.iter().zip(&shift).map(|(t, x)| t + x).collect();

        let mut ideal_i: Vec<f64> = s.normals(d).iter().map(|x| x * ideal_scale).collect();
        for _ in 0..2 {
            for v in truth.vectors() {
                let c = dot(v, &ideal_i);
                axpy(-c, v, &mut ideal_i);
            }
        }

        let alpha = s.uniform_in(lo, hi);
        let mut mm_i = ideal_i.clone();
        for ((m, b), t) in mm_i.iter_mut().zip(&blank_i).zip(&text_i) {
            *m += alpha * (b - t);
        }

        let (mut text_i, mut blank_i) = (text_i, blank_i);
        if config.noise_sigma > 0.0 {
            let mut noise = Stream::new(config.seed, Domain::MeasurementNoise, i as u64);
            for row in [&mut text_i, &mut blank_i, &mut mm_i] {
                row.iter_mut()
                    .for_each(|x| *x += config.noise_sigma * noise.normal());
            }
        }

        text.extend(text_i);
        blank.extend(blank_i);
        multimodal.extend(mm_i);
        ideal.extend(ideal_i);
        alphas.push(alpha);
    }

    let ids: Vec<String> = (0..n).map(|i| format!("s{i:05}")).collect();
    let make = |kind, data| -> Result<FeatureBank> {
        Ok(FeatureBank::new(d, ids.clone(), kind, Dtype::F64, data)?
            .with_meta("synthetic_seed", config.seed.to_string()))
    };
    Ok(SyntheticScenario {
        text_bank: make(BankKind::TextOnly, text)?,
        blank_bank: make(BankKind::BlankImage, blank)?,
        multimodal_bank: make(BankKind::Multimodal, multimodal)?,
        ideal_bank: make(BankKind::Generic, ideal)?,
        truth_basis: truth.clone(),
        alphas,
        config,
    })
}

/// How well a fitted basis recovers the scenario's ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryError {
    /// Largest principal angle between the fitted and true spans
    /// (`pi/2` for an empty basis).
    pub max_principal_angle: f64,
    /// Mean of `||project_out(mm_i) - ideal_i|| / max(1, ||ideal_i||)`.
    pub mean_ideal_residual: f64,
}

pub fn recovery_error(
    scenario: &SyntheticScenario,
    basis: &NuisanceBasis,
) -> Result<RecoveryError> {
    let truth = &scenario.truth_basis;
    if basis.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: basis.dim(),
        });
    }
    let max_principal_angle = if basis.k() == 0 {
        std::f64::consts::FRAC_PI_2
    } else {
        principal_angles(basis, truth)?
            .into_iter()
            .fold(0.0, f64::max)
    };
    let mut total = 0.0;
    let (mm, ideal) = (&scenario.multimodal_bank, &scenario.ideal_bank);
    for (m, h) in mm.rows().zip(ideal.rows()) {
        let projected = project_out(m, basis)?;
        let diff: Vec<f64> = projected.iter().zip(h).map(|(a, b)| a - b).collect();
        total += norm(&diff) / norm(h).max(1.0);
    }
    Ok(RecoveryError {
        max_principal_angle,
        mean_ideal_residual: total / mm.count().max(1) as f64,
    })
}

type BankField = fn(&SyntheticScenario) -> &FeatureBank;

const FILES: [(&str, BankField); 4] = [
    ("text.fbank", |s| &s.text_bank),
    ("blank.fbank", |s| &s.blank_bank),
    ("multimodal.fbank", |s| &s.multimodal_bank),
    ("ideal.fbank", |s| &s.ideal_bank),
];
const TRUTH_FILE: &str = "truth.nbasis";
const MANIFEST_FILE: &str = "scenario.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    alphas: Vec<f64>,
    config: ScenarioConfig,
    digests: BTreeMap<String, String>,
}

/// Writes the scenario as `.fbank`/`.nbasis` files plus `scenario.json`.
/// Returns the written paths.
pub fn save_scenario(
    scenario: &SyntheticScenario,
    dir: impl AsRef<Path>,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut digests = BTreeMap::new();
    for (name, get) in FILES {
        let bank = get(scenario);
        let path = dir.join(name);
        save_bank(bank, &path)?;
        digests.insert(name.to_string(), bank.digest());
        written.push(path);
    }
    let path = dir.join(TRUTH_FILE);
    save_basis(&scenario.truth_basis, &path)?;
    digests.insert(TRUTH_FILE.to_string(), scenario.truth_basis.digest());
    written.push(path);

    let manifest = Manifest {
        alphas: scenario.alphas.clone(),
        config: scenario.config.clone(),
        digests,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Reads a directory written by [`save_scenario`], checking file digests.
pub fn load_scenario(dir: impl AsRef<Path>) -> Result<SyntheticScenario> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let check = |name: &str, digest: String| -> Result<()> {
        match manifest.digests.get(name) {
            Some(expected) if *expected != digest => Err(Error::InvalidArgument(format!(
                "{name} does not match the digest recorded in {MANIFEST_FILE}"
            ))),
            _ => Ok(()),
        }
    };
    let mut banks = Vec::with_capacity(FILES.len());
    for (name, _) in FILES {
        let bank = load_bank(dir.join(name))?;
        check(name, bank.digest())?;
        banks.push(bank);
    }
    let truth_basis = load_basis(dir.join(TRUTH_FILE))?;
    check(TRUTH_FILE, truth_basis.digest())?;
    let mut banks = banks.into_iter();
    let mut next = || banks.next().expect("four banks");
    Ok(SyntheticScenario {
        text_bank: next(),
        blank_bank: next(),
        multimodal_bank: next(),
        ideal_bank: next(),
        truth_basis,
        alphas: manifest.alphas,
        config: manifest.config,
    })
}
