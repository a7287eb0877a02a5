// SPDX-License-Identifier: MIT OR Apache-2.0

//! Estimation and removal of the modality-induced nuisance subspace in
//! vision-language hidden states.
//!
//! The pipeline is:
//!
//! 1. [`shift::compute_shifts`]: per-prompt difference between the hidden
//!    state with a blank image and the text-only hidden state.
//! 2. [`shift::stack_shifts`]: concatenate anchor sets into a shift matrix.
//! 3. [`subspace::fit_subspace`]: top-k right singular vectors of that matrix.
//! 4. [`intervention::project_out`]: `h - V^T (V h)` at inference time.
//!
//! [`analysis`] holds the diagnostics, [`synthetic`] a generator with known
//! ground truth for testing the whole chain.

pub mod analysis;
pub mod bank;
mod container;
pub mod error;
pub mod intervention;
pub mod linalg;
pub mod rng;
pub mod shift;
pub mod subspace;
pub mod synthetic;

pub use bank::{align_by_id, load_bank, save_bank, BankKind, Dtype, FeatureBank};
pub use error::{Error, Result};
pub use intervention::{
    cmrm_correct, gaussian_perturb, project_bank, project_out, steer, InterventionSpec, NoiseKind,
    NoiseNorm,
};
pub use shift::{compute_shifts, mean_shift, stack_shifts, ShiftMatrix};
pub use subspace::{
    effective_rank, explained_variance_ratio, fit_subspace, load_basis, save_basis, validate_basis,
    FitOptions, NuisanceBasis, DEFAULT_RANK,
};
pub use synthetic::{generate_scenario, recovery_error, ScenarioConfig, SyntheticScenario};
