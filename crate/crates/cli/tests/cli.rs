// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use nullspace_cli::{run, CommandOutcome, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use nullspace_core::{load_bank, load_basis, save_bank, BankKind, Dtype, FeatureBank};

fn nullspace(args: &[&str]) -> CommandOutcome {
    let mut argv = vec!["nullspace"];
    argv.extend_from_slice(args);
    run(argv)
}

fn ok(args: &[&str]) -> CommandOutcome {
    let out = nullspace(args);
    assert_eq!(out.exit_code, EXIT_OK, "{args:?} failed: {}", out.stderr);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bank(ids: &[&str], rows: &[Vec<f64>], kind: BankKind) -> FeatureBank {
    FeatureBank::from_rows(
        ids.iter().map(|s| s.to_string()).collect(),
        rows,
        kind,
        Dtype::F32,
    )
    .unwrap()
}

struct Scenario {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Scenario {
    fn new(seed: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth",
            "--out",
            s(&root.join("world")),
            "--seed",
            seed,
            "--dim",
            "24",
            "--nuisance-rank",
            "4",
            "--samples",
            "60",
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn world(&self, name: &str) -> PathBuf {
        self.root.join("world").join(name)
    }
}

#[test]
fn end_to_end_recovery_is_exact_on_noiseless_world() {
    let w = Scenario::new("5");
    ok(&[
        "estimate",
        "--multimodal",
        s(&w.world("blank.fbank")),
        "--text",
        s(&w.world("text.fbank")),
        "--out",
        s(&w.path("shift.fbank")),
    ]);
    ok(&[
        "fit",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("b.nbasis")),
    ]);
    ok(&[
        "project",
        "--bank",
        s(&w.world("multimodal.fbank")),
        "--basis",
        s(&w.path("b.nbasis")),
        "--out",
        s(&w.path("proj.fbank")),
    ]);
    let out = ok(&[
        "--format",
        "csv",
        "recover",
        "--scenario",
        s(&w.path("world")),
        "--basis",
        s(&w.path("b.nbasis")),
    ]);
    let residual: f64 = out
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("mean_ideal_residual,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual < 1e-6, "residual {residual}");

    let projected = load_bank(w.path("proj.fbank")).unwrap();
    let ideal = load_bank(w.world("ideal.fbank")).unwrap();
    for (p, h) in projected.rows().zip(ideal.rows()) {
        for (a, b) in p.iter().zip(h) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn fit_defaults_to_rank_32_clamped_to_effective_rank() {
    let w = Scenario::new("1");
    ok(&[
        "estimate",
        "--multimodal",
        s(&w.world("blank.fbank")),
        "--text",
        s(&w.world("text.fbank")),
        "--out",
        s(&w.path("shift.fbank")),
    ]);
    let out = ok(&[
        "fit",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("b.nbasis")),
    ]);
    assert!(
        out.stdout.contains("requested k=32, effective rank 4"),
        "{}",
        out.stdout
    );
    assert_eq!(load_basis(w.path("b.nbasis")).unwrap().k(), 4);
    assert_eq!(out.artifacts, vec![w.path("b.nbasis")]);

    ok(&[
        "fit",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("b2.nbasis")),
        "-k",
        "2",
    ]);
    assert_eq!(load_basis(w.path("b2.nbasis")).unwrap().k(), 2);
}

#[test]
fn fit_vectors_do_not_depend_on_flag_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fbank");
    let b = dir.path().join("b.fbank");
    save_bank(
        &bank(
            &["x", "y"],
            &[vec![3.0, 1.0, 0.0], vec![1.0, 2.0, 0.5]],
            BankKind::Shift,
        ),
        &a,
    )
    .unwrap();
    save_bank(
        &bank(
            &["x", "z"],
            &[vec![0.0, 1.0, -1.0], vec![2.0, 0.0, 0.25]],
            BankKind::Shift,
        ),
        &b,
    )
    .unwrap();
    let ab = dir.path().join("ab.nbasis");
    let ba = dir.path().join("ba.nbasis");
    ok(&["fit", "--shifts", s(&a), "--shifts", s(&b), "--out", s(&ab)]);
    ok(&["fit", "--shifts", s(&b), "--shifts", s(&a), "--out", s(&ba)]);
    let (x, y) = (load_basis(&ab).unwrap(), load_basis(&ba).unwrap());
    assert_eq!(x.k(), y.k());
    for (p, q) in x.data().iter().zip(y.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn project_of_empty_bank_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let shifts = dir.path().join("s.fbank");
    save_bank(
        &bank(&["a"], &[vec![1.0, 0.0, 0.0, 0.0, 0.0]], BankKind::Shift),
        &shifts,
    )
    .unwrap();
    let basis = dir.path().join("b.nbasis");
    ok(&["fit", "--shifts", s(&shifts), "--out", s(&basis)]);
    let empty = dir.path().join("x.fbank");
    save_bank(
        &FeatureBank::empty(5, BankKind::Multimodal, Dtype::F32),
        &empty,
    )
    .unwrap();
    let out = dir.path().join("y.fbank");
    ok(&[
        "project",
        "--bank",
        s(&empty),
        "--basis",
        s(&basis),
        "--out",
        s(&out),
    ]);
    let y = load_bank(&out).unwrap();
    assert_eq!((y.count(), y.dim()), (0, 5));
}

#[test]
fn estimate_with_disjoint_ids_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.fbank");
    let t = dir.path().join("t.fbank");
    save_bank(&bank(&["a"], &[vec![1.0, 2.0]], BankKind::BlankImage), &m).unwrap();
    save_bank(&bank(&["b"], &[vec![1.0, 2.0]], BankKind::TextOnly), &t).unwrap();
    let out = dir.path().join("s.fbank");
    let r = nullspace(&[
        "estimate",
        "--multimodal",
        s(&m),
        "--text",
        s(&t),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.exit_code, EXIT_DATA);
    assert!(r.stderr.contains("share no ids"));
    assert!(!out.exists());
    assert!(r.artifacts.is_empty());
}

#[test]
fn estimate_checks_kinds_unless_told_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.fbank");
    let t = dir.path().join("t.fbank");
    save_bank(&bank(&["a"], &[vec![1.0, 2.0]], BankKind::Generic), &m).unwrap();
    save_bank(&bank(&["a"], &[vec![1.0, 0.0]], BankKind::TextOnly), &t).unwrap();
    let out = dir.path().join("s.fbank");
    let args = [
        "estimate",
        "--multimodal",
        s(&m),
        "--text",
        s(&t),
        "--out",
        s(&out),
    ];
    assert_eq!(nullspace(&args).exit_code, EXIT_DATA);
    let mut forced = args.to_vec();
    forced.push("--allow-kind-mismatch");
    ok(&forced);
    assert_eq!(load_bank(&out).unwrap().row(0), &[0.0, 2.0]);
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["frobnicate"],
        vec!["fit", "--bogus"],
        vec!["fit", "--out", "x.nbasis"],
        vec!["perturb", "--bank", "x", "--target-norm", "1", "--out", "y"],
        vec!["analyze", "median"],
        vec![],
    ] {
        let r = nullspace(&args);
        assert_eq!(r.exit_code, EXIT_USAGE, "{args:?}");
        assert!(!r.stderr.is_empty());
        assert!(r.stdout.is_empty());
    }
    let help = nullspace(&["--help"]);
    assert_eq!(help.exit_code, EXIT_OK);
    assert!(help.stdout.contains("estimate"));
}

#[test]
fn corrupted_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fbank");
    std::fs::write(&bad, b"NOPE\x00\x00\x00\x00").unwrap();
    let r = nullspace(&["info", "--bank", s(&bad)]);
    assert_eq!(r.exit_code, EXIT_DATA);
    assert!(r.stderr.contains("bad magic"));
    let missing = nullspace(&["info", "--bank", s(&dir.path().join("nope.fbank"))]);
    assert_eq!(missing.exit_code, EXIT_DATA);
}

#[test]
fn steering_direction_must_exist() {
    let w = Scenario::new("2");
    ok(&[
        "estimate",
        "--multimodal",
        s(&w.world("blank.fbank")),
        "--text",
        s(&w.world("text.fbank")),
        "--out",
        s(&w.path("shift.fbank")),
    ]);
    ok(&[
        "fit",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("b.nbasis")),
        "-k",
        "2",
    ]);
    let r = nullspace(&[
        "steer",
        "--bank",
        s(&w.world("text.fbank")),
        "--basis",
        s(&w.path("b.nbasis")),
        "--direction",
        "2",
        "--out",
        s(&w.path("x.fbank")),
    ]);
    assert_eq!(r.exit_code, EXIT_USAGE);
    ok(&[
        "steer",
        "--bank",
        s(&w.world("text.fbank")),
        "--basis",
        s(&w.path("b.nbasis")),
        "--gamma",
        "-1.5",
        "--direction",
        "1",
        "--out",
        s(&w.path("x.fbank")),
    ]);

    let before = load_bank(w.world("text.fbank")).unwrap();
    let after = load_bank(w.path("x.fbank")).unwrap();
    let b = load_basis(w.path("b.nbasis")).unwrap();
    for (x, y) in before.rows().zip(after.rows()) {
        for j in 0..x.len() {
            assert!((y[j] - (x[j] - 1.5 * b.vector(1)[j])).abs() < 1e-12);
        }
    }
    assert!(after.meta()["interventions"].contains("\"steer\""));
}

#[test]
fn cmrm_and_perturb_commands() {
    let w = Scenario::new("3");
    ok(&[
        "estimate",
        "--multimodal",
        s(&w.world("blank.fbank")),
        "--text",
        s(&w.world("text.fbank")),
        "--out",
        s(&w.path("shift.fbank")),
    ]);
    ok(&[
        "cmrm",
        "--bank",
        s(&w.world("multimodal.fbank")),
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("c.fbank")),
    ]);
    let c0 = load_bank(w.path("c.fbank")).unwrap();
    assert_eq!(c0.count(), 60);
    ok(&[
        "cmrm",
        "--bank",
        s(&w.world("multimodal.fbank")),
        "--shifts",
        s(&w.path("shift.fbank")),
        "--alpha",
        "0",
        "--out",
        s(&w.path("c0.fbank")),
    ]);
    assert_eq!(
        load_bank(w.path("c0.fbank")).unwrap().data(),
        load_bank(w.world("multimodal.fbank")).unwrap().data()
    );

    ok(&[
        "perturb",
        "--bank",
        s(&w.world("text.fbank")),
        "--norm-match",
        s(&w.path("shift.fbank")),
        "--seed",
        "9",
        "--out",
        s(&w.path("n.fbank")),
    ]);
    ok(&[
        "perturb",
        "--bank",
        s(&w.world("text.fbank")),
        "--noise",
        "uniform",
        "--target-norm",
        "0.5",
        "--seed",
        "9",
        "--out",
        s(&w.path("u.fbank")),
    ]);
    let text = load_bank(w.world("text.fbank")).unwrap();
    let u = load_bank(w.path("u.fbank")).unwrap();
    for (a, b) in u.rows().zip(text.rows()) {
        let d: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d - 0.5).abs() < 1e-12);
    }
    let r = nullspace(&[
        "perturb",
        "--bank",
        s(&w.world("text.fbank")),
        "--target-norm",
        "-1",
        "--seed",
        "1",
        "--out",
        s(&w.path("bad.fbank")),
    ]);
    assert_eq!(r.exit_code, EXIT_USAGE);
}

#[test]
fn analyze_commands_write_tables() {
    let w = Scenario::new("4");
    ok(&[
        "estimate",
        "--multimodal",
        s(&w.world("blank.fbank")),
        "--text",
        s(&w.world("text.fbank")),
        "--out",
        s(&w.path("shift.fbank")),
    ]);
    ok(&[
        "fit",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--out",
        s(&w.path("b.nbasis")),
    ]);

    let r = ok(&[
        "analyze",
        "cosine",
        "--basis",
        s(&w.path("b.nbasis")),
        "--basis",
        s(&w.world("truth.nbasis")),
        "--out",
        s(&w.path("consistency.csv")),
    ]);
    assert!(r.stdout.contains("cos_top1"));
    let table = std::fs::read_to_string(w.path("consistency.csv")).unwrap();
    assert!(table.starts_with("digest_a,digest_b,k_a,k_b,cos_top1,max_angle,principal_angles\n"));

    let r = ok(&[
        "--format",
        "csv",
        "analyze",
        "angles",
        "--basis",
        s(&w.path("b.nbasis")),
        "--basis",
        s(&w.world("truth.nbasis")),
    ]);
    assert_eq!(r.stdout.lines().count(), 5);
    for line in r.stdout.lines().skip(1) {
        let angle: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(angle < 1e-8);
    }
    assert_eq!(
        nullspace(&["analyze", "angles", "--basis", s(&w.path("b.nbasis"))]).exit_code,
        EXIT_USAGE
    );

    ok(&[
        "analyze",
        "evr",
        "--shifts",
        s(&w.path("shift.fbank")),
        "--max-k",
        "10",
        "--out",
        s(&w.path("evr.csv")),
    ]);
    let evr = std::fs::read_to_string(w.path("evr.csv")).unwrap();
    assert_eq!(evr.lines().count(), 5);
    assert!(evr.lines().last().unwrap().starts_with("4,"));

    ok(&[
        "analyze",
        "pca",
        "--bank",
        s(&w.world("text.fbank")),
        "--bank",
        s(&w.world("blank.fbank")),
        "--label",
        "txt",
        "--label",
        "img",
        "--out",
        s(&w.path("pca2d.csv")),
    ]);
    let pca = std::fs::read_to_string(w.path("pca2d.csv")).unwrap();
    assert_eq!(pca.lines().count(), 121);
    assert!(pca.starts_with("id,label,x,y\n"));
    assert_eq!(
        nullspace(&[
            "analyze",
            "pca",
            "--bank",
            s(&w.world("text.fbank")),
            "--label",
            "a",
            "--label",
            "b"
        ])
        .exit_code,
        EXIT_USAGE
    );
}

#[test]
fn info_reports_basis_validity() {
    let w = Scenario::new("6");
    let r = ok(&[
        "--format",
        "csv",
        "info",
        "--basis",
        s(&w.world("truth.nbasis")),
    ]);
    assert!(r.stdout.contains("valid,true"));
    assert!(r.stdout.contains("k,4"));
    let r = ok(&["info", "--bank", s(&w.world("text.fbank"))]);
    assert!(r.stdout.contains("text_only"));
}

#[test]
fn binary_maps_outcome_to_process_exit() {
    let bin = env!("CARGO_BIN_EXE_nullspace");
    let out = std::process::Command::new(bin)
        .arg("nope")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let out = std::process::Command::new(bin)
        .arg("--version")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
}
