// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fitting and projection checked against independently computed references.

use nullspace_core::analysis::principal_angles;
use nullspace_core::rng::{Domain, Stream};
use nullspace_core::{
    compute_shifts, fit_subspace, generate_scenario, project_bank, project_out, recovery_error,
    stack_shifts, FitOptions, ScenarioConfig, ShiftMatrix,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Textbook classical Gram-Schmidt with reorthogonalization, kept separate
/// from the library's helpers.
fn gram_schmidt(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            let coeffs: Vec<f64> = out.iter().map(|q| dot(q, &w)).collect();
            for (q, c) in out.iter().zip(coeffs) {
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let n = norm(&w);
        out.push(w.iter().map(|x| x / n).collect());
    }
    out
}

/// Distance of `v` from span(`q`) for orthonormal `q`.
fn residual(v: &[f64], q: &[Vec<f64>]) -> f64 {
    let mut w = v.to_vec();
    for qi in q {
        let c = dot(qi, v);
        for (wi, x) in w.iter_mut().zip(qi) {
            *wi -= c * x;
        }
    }
    norm(&w)
}

#[test]
fn fit_recovers_a_known_three_dimensional_subspace() {
    let dim = 20;
    let mut s = Stream::new(7, Domain::Sample, 0);
    let generators: Vec<Vec<f64>> = (0..3).map(|_| s.normals(dim)).collect();
    let mut rows = Vec::new();
    for _ in 0..50 {
        let c = s.normals(3);
        let mut r = vec![0.0; dim];
        for (g, ci) in generators.iter().zip(&c) {
            for (ri, gi) in r.iter_mut().zip(g) {
                *ri += ci * gi;
            }
        }
        rows.extend(r);
    }
    let ids = (0..50).map(|i| format!("r{i}")).collect();
    let d = ShiftMatrix::from_rows(dim, rows, ids).unwrap();
    let basis = fit_subspace(&d, 3, &FitOptions::default()).unwrap();
    assert_eq!(basis.k(), 3);

    let oracle = gram_schmidt(&generators);
    for v in basis.vectors() {
        assert!(
            residual(v, &oracle) < 1e-8,
            "fitted vector leaves oracle span"
        );
    }
    for q in &oracle {
        let back: Vec<Vec<f64>> = basis.vectors().map(<[f64]>::to_vec).collect();
        assert!(
            residual(q, &back) < 1e-8,
            "oracle vector leaves fitted span"
        );
    }
    let oracle_basis = nullspace_core::NuisanceBasis::from_parts(
        dim,
        oracle,
        vec![1.0; 3],
        vec![1.0; 3],
        "oracle",
    )
    .unwrap();
    for angle in principal_angles(&basis, &oracle_basis).unwrap() {
        assert!(angle < 1e-8, "angle {angle}");
    }
}

#[test]
fn synthetic_seed_42_recovers_truth_and_ideal() {
    let cfg = ScenarioConfig::new(64, 8, 200, 42);
    let s = generate_scenario(&cfg).unwrap();
    let shifts = compute_shifts(&s.blank_bank, &s.text_bank, false).unwrap();
    let d = stack_shifts(&[shifts]).unwrap();
    let basis = fit_subspace(&d, 8, &FitOptions::default()).unwrap();
    assert_eq!(basis.k(), 8);
    for angle in principal_angles(&basis, &s.truth_basis).unwrap() {
        assert!(angle < 1e-8, "angle {angle}");
    }

    let projected = project_bank(&s.multimodal_bank, &basis).unwrap();
    for (p, h) in projected.rows().zip(s.ideal_bank.rows()) {
        let diff: Vec<f64> = p.iter().zip(h).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-6 * norm(h));
    }
    let r = recovery_error(&s, &basis).unwrap();
    assert!(r.mean_ideal_residual < 1e-6);
    assert!(r.max_principal_angle < 1e-8);
}

#[test]
fn shift_rows_vanish_under_their_own_full_rank_basis() {
    let s = generate_scenario(&ScenarioConfig::new(32, 5, 60, 3)).unwrap();
    let shifts = compute_shifts(&s.blank_bank, &s.text_bank, false).unwrap();
    let d = stack_shifts(std::slice::from_ref(&shifts)).unwrap();
    let basis = fit_subspace(&d, 32, &FitOptions::default()).unwrap();
    assert_eq!(basis.k(), 5);
    let out = project_bank(&shifts, &basis).unwrap();
    for (p, row) in out.rows().zip(shifts.rows()) {
        assert!(norm(p) <= 1e-8 * norm(row).max(1.0));
    }
}

#[test]
fn projection_matches_explicit_projector() {
    // oracle: materialize P = I - V^T V and multiply
    let s = generate_scenario(&ScenarioConfig::new(12, 4, 30, 5)).unwrap();
    let v: Vec<Vec<f64>> = s.truth_basis.vectors().map(<[f64]>::to_vec).collect();
    let dim = 12;
    let mut p = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let outer: f64 = v.iter().map(|r| r[i] * r[j]).sum();
            p[i][j] = if i == j { 1.0 } else { 0.0 } - outer;
        }
    }
    for h in s.multimodal_bank.rows() {
        let expected: Vec<f64> = p.iter().map(|row| dot(row, h)).collect();
        let got = project_out(h, &s.truth_basis).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
