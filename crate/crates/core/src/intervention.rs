// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature-level interventions on hidden states.
//!
//! - **Projection**: `h - V^T (V h)`, removing the nuisance component. The
//!   `d x d` projector is never formed; cost is `O(k d)` per vector.
//! - **Steering**: `h + gamma * b` along a unit basis direction, used to
//!   amplify the bias.
//! - **CMRM correction**: `h - alpha * delta` against a mean shift.
//! - **Noise**: an isotropic draw rescaled to an exact norm, the control for
//!   steering.
//!
//! Bank-level variants append a record to the bank's `interventions` meta
//! entry (a JSON array).

use serde_json::{json, Value};

use crate::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::rng::{Domain, Stream};
use crate::shift::ShiftMatrix;
use crate::subspace::NuisanceBasis;

/// Meta key holding the JSON array of applied interventions.
pub const META_INTERVENTIONS: &str = "interventions";

const UNIT_TOL: f64 = 1e-10;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_finite(h: &[f64]) -> Result<()> {
    match h.iter().position(|v| !v.is_finite()) {
        Some(column) => Err(Error::NonFinite {
            id: "input vector".into(),
            column,
            offset: None,
        }),
        None => Ok(()),
    }
}

/// Removes the component of `h` lying in the span of `basis`.
pub fn project_out(h: &[f64], basis: &NuisanceBasis) -> Result<Vec<f64>> {
    check_dim(basis.dim(), h.len())?;
    check_finite(h)?;
    let mut out = h.to_vec();
    // coefficients from the original h, then one subtraction per direction
    for (v, c) in basis.vectors().zip(basis.coefficients(h)) {
        axpy(-c, v, &mut out);
    }
    Ok(out)
}

/// Adds `gamma * direction` to `h`. `direction` must have unit norm.
pub fn steer(h: &[f64], direction: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_dim(h.len(), direction.len())?;
    let n = norm(direction);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "steering direction must be unit norm, got norm {n}"
        )));
    }
    let mut out = h.to_vec();
    axpy(gamma, direction, &mut out);
    Ok(out)
}

/// Interpolation correction `h - alpha * delta`.
pub fn cmrm_correct(h: &[f64], delta: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dim(h.len(), delta.len())?;
    let mut out = h.to_vec();
    axpy(-alpha, delta, &mut out);
    Ok(out)
}

/// Shape of the random perturbation before norm matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Per-coordinate standard normal (isotropic).
    Gaussian,
    /// Per-coordinate uniform on `[-1, 1]`.
    Uniform,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
        }
    }
}

/// Adds noise of exactly `target_norm` to `h`, deterministic in `seed`.
pub fn perturb(h: &[f64], kind: NoiseKind, target_norm: f64, seed: u64) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot perturb a zero-length vector".into(),
        ));
    }
    if !target_norm.is_finite() || target_norm < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise norm must be finite and non-negative, got {target_norm}"
        )));
    }
    if target_norm == 0.0 {
        return Ok(h.to_vec());
    }
    let mut stream = Stream::new(seed, Domain::Noise, 0);
    let mut noise = loop {
        let draw: Vec<f64> = match kind {
            NoiseKind::Gaussian => stream.normals(h.len()),
            NoiseKind::Uniform => (0..h.len()).map(|_| stream.uniform_in(-1.0, 1.0)).collect(),
        };
        // an all-zero draw has no direction; redraw from the same stream
        if norm(&draw) > 0.0 {
            break draw;
        }
    };
    let scale = target_norm / norm(&noise);
    noise.iter_mut().for_each(|x| *x *= scale);
    Ok(h.iter().zip(&noise).map(|(a, b)| a + b).collect())
}

/// Isotropic Gaussian perturbation of exactly `target_norm`.
pub fn gaussian_perturb(h: &[f64], target_norm: f64, seed: u64) -> Result<Vec<f64>> {
    perturb(h, NoiseKind::Gaussian, target_norm, seed)
}

/// How the magnitude of a noise intervention is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseNorm {
    /// A fixed norm.
    Fixed(f64),
    /// The mean row norm of a reference shift matrix.
    MatchMeanShift,
}

impl NoiseNorm {
    /// Resolves to a concrete norm. `MatchMeanShift` needs `shifts`.
    pub fn resolve(self, shifts: Option<&ShiftMatrix>) -> Result<f64> {
        match self {
            Self::Fixed(n) => Ok(n),
            Self::MatchMeanShift => shifts.map(ShiftMatrix::mean_row_norm).ok_or_else(|| {
                Error::InvalidArgument("match-mean-shift needs a shift bank".into())
            }),
        }
    }
}

/// A bank-level intervention with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum InterventionSpec {
    /// Null-space projection against `basis`.
    Project { basis: NuisanceBasis },
    /// Add `gamma` times basis row `direction_index`.
    Steer {
        basis: NuisanceBasis,
        direction_index: usize,
        gamma: f64,
    },
    /// Subtract `alpha` times `delta` (usually the mean shift).
    Cmrm { delta: Vec<f64>, alpha: f64 },
    /// Norm-matched noise; row `i` uses seed `seed ^ i`.
    Noise {
        kind: NoiseKind,
        norm: f64,
        seed: u64,
    },
}

impl InterventionSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            Self::Project { .. } => "project",
            Self::Steer { .. } => "steer",
            Self::Cmrm { .. } => "cmrm",
            Self::Noise { .. } => "noise",
        }
    }

    /// Checks parameter invariants independent of any bank.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Project { .. } => Ok(()),
            Self::Steer {
                basis,
                direction_index,
                gamma,
            } => {
                if *direction_index >= basis.k() {
                    return Err(Error::InvalidArgument(format!(
                        "direction {direction_index} out of range for a basis of rank {}",
                        basis.k()
                    )));
                }
                if !gamma.is_finite() {
                    return Err(Error::InvalidArgument("gamma must be finite".into()));
                }
                Ok(())
            }
            Self::Cmrm { delta, alpha } => {
                if !alpha.is_finite() || delta.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "cmrm parameters must be finite".into(),
                    ));
                }
                Ok(())
            }
            Self::Noise { norm, .. } => {
                if !norm.is_finite() || *norm < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "noise norm must be finite and non-negative, got {norm}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            Self::Project { basis } | Self::Steer { basis, .. } => Some(basis.dim()),
            Self::Cmrm { delta, .. } => Some(delta.len()),
            Self::Noise { .. } => None,
        }
    }

    /// Applies the intervention to one vector. `row` only matters for noise.
    pub fn apply_vector(&self, h: &[f64], row: u64) -> Result<Vec<f64>> {
        match self {
            Self::Project { basis } => project_out(h, basis),
            Self::Steer {
                basis,
                direction_index,
                gamma,
            } => steer(h, basis.vector(*direction_index), *gamma),
            Self::Cmrm { delta, alpha } => cmrm_correct(h, delta, *alpha),
            Self::Noise { kind, norm, seed } => perturb(h, *kind, *norm, seed ^ row),
        }
    }

    /// The record appended to bank meta.
    pub fn record(&self) -> Value {
        let (params, basis_digest) = match self {
            Self::Project { basis } => (json!({ "k": basis.k() }), Some(basis.digest())),
            Self::Steer {
                basis,
                direction_index,
                gamma,
            } => (
                json!({ "direction": direction_index, "gamma": gamma }),
                Some(basis.digest()),
            ),
            Self::Cmrm { delta, alpha } => {
                (json!({ "alpha": alpha, "delta_norm": norm(delta) }), None)
            }
            Self::Noise { kind, norm, seed } => (
                json!({ "noise": kind.as_str(), "target_norm": norm, "seed": seed }),
                None,
            ),
        };
        json!({
            "intervention": self.mode(),
            "params": params,
            "basis_digest": basis_digest,
        })
    }

    /// Applies the intervention row by row. IDs, kind and meta are kept and
    /// the intervention record is appended to meta.
    pub fn apply(&self, bank: &FeatureBank) -> Result<FeatureBank> {
        self.validate()?;
        if let Some(dim) = self.input_dim() {
            check_dim(dim, bank.dim())?;
        }
        let mut data = Vec::with_capacity(bank.data().len());
        for (i, row) in bank.rows().enumerate() {
            data.extend(self.apply_vector(row, i as u64)?);
        }
        let out = bank.map_data(data)?;
        let mut records: Vec<Value> = bank
            .meta()
            .get(META_INTERVENTIONS)
            .and_then(|s| serde_json::from_str(s).ok())
            .unwrap_or_default();
        records.push(self.record());
        Ok(out.with_meta(
            META_INTERVENTIONS,
            serde_json::to_string(&records).expect("records serialize"),
        ))
    }
}

/// Row-wise [`project_out`] over a bank.
pub fn project_bank(bank: &FeatureBank, basis: &NuisanceBasis) -> Result<FeatureBank> {
    InterventionSpec::Project {
        basis: basis.clone(),
    }
    .apply(bank)
}

/// Settings for [`steering_dominance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceConfig {
    pub trials: usize,
    pub dim: usize,
    /// Lower bound on the cosine between the score weights and the bias
    /// direction.
    pub min_cosine: f64,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            dim: 64,
            min_cosine: 0.9,
        }
    }
}

/// Outcome of [`steering_dominance`].
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub trials: usize,
    /// Trials where the steering change exceeded the noise-induced |change|.
    pub wins: usize,
    /// Mean steering change `gamma * w.b`.
    pub mean_steer_change: f64,
    /// Mean absolute noise-induced change.
    pub mean_noise_change: f64,
    /// Largest relative gap between the measured steering change and
    /// `gamma * w.b`.
    pub max_steer_formula_error: f64,
}

impl DominanceReport {
    pub fn win_fraction(&self) -> f64 {
        self.wins as f64 / self.trials as f64
    }
}

fn random_unit(stream: &mut Stream, dim: usize) -> Vec<f64> {
    loop {
        let mut v = stream.normals(dim);
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Compares steering along a bias direction with equal-norm Gaussian noise
/// under a linear score `s(h) = w.h`.
///
/// Each trial draws a unit direction `b`, weights `w` whose cosine to `b` is
/// at least `min_cosine`, an intensity `gamma > 0` and a state `h`, then
/// measures `s(steer(h, b, gamma)) - s(h)` against
/// `|s(h + n) - s(h)|` with `||n|| = gamma`.
pub fn steering_dominance(master_seed: u64, config: &DominanceConfig) -> Result<DominanceReport> {
    if config.dim < 2 || config.trials == 0 {
        return Err(Error::InvalidArgument(
            "dominance experiment needs dim >= 2 and at least one trial".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.min_cosine) {
        return Err(Error::InvalidArgument(
            "min_cosine must lie in [0, 1]".into(),
        ));
    }
    let dim = config.dim;
    let mut wins = 0;
    let (mut steer_sum, mut noise_sum, mut max_err) = (0.0, 0.0, 0.0f64);
    for t in 0..config.trials as u64 {
        let mut s = Stream::new(master_seed, Domain::Dominance, t);
        let b = random_unit(&mut s, dim);
        let mut u = s.normals(dim);
        let along = dot(&u, &b);
        axpy(-along, &b, &mut u);
        let un = norm(&u);
        u.iter_mut().for_each(|x| *x /= un);
        let cos = s.uniform_in(config.min_cosine, 1.0);
        let scale = s.uniform_in(0.5, 2.0);
        let w: Vec<f64> = b
            .iter()
            .zip(&u)
            .map(|(bi, ui)| scale * (cos * bi + (1.0 - cos * cos).sqrt() * ui))
            .collect();
        let gamma = s.uniform_in(0.5, 2.0);
        let h = s.normals(dim);
        let noise_seed = (s.uniform() * (1u64 << 53) as f64) as u64;

        let base = dot(&w, &h);
        let steer_change = dot(&w, &steer(&h, &b, gamma)?) - base;
        let expected = gamma * dot(&w, &b);
        max_err = max_err.max((steer_change - expected).abs() / expected.abs().max(1.0));
        let noise_change = (dot(&w, &gaussian_perturb(&h, gamma, noise_seed)?) - base).abs();

        if steer_change > noise_change {
            wins += 1;
        }
        steer_sum += steer_change;
        noise_sum += noise_change;
    }
    let n = config.trials as f64;
    Ok(DominanceReport {
        trials: config.trials,
        wins,
        mean_steer_change: steer_sum / n,
        mean_noise_change: noise_sum / n,
        max_steer_formula_error: max_err,
    })
}
