// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. [`run`] takes an argument vector and returns a
//! [`CommandOutcome`]; the binary only prints it and exits.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use nullspace_core::analysis::{self, fmt_f64};
use nullspace_core::intervention::{InterventionSpec, NoiseKind, NoiseNorm};
use nullspace_core::subspace::{validate_basis, DEFAULT_TOL, META_TRUNCATED};
use nullspace_core::synthetic::{load_scenario, save_scenario};
use nullspace_core::{
    compute_shifts, fit_subspace, generate_scenario, load_bank, load_basis, mean_shift,
    recovery_error, save_bank, save_basis, stack_shifts, Error, FeatureBank, FitOptions,
    ScenarioConfig, ShiftMatrix, DEFAULT_RANK,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Result of one invocation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Files written, in order.
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "nullspace",
    version,
    about = "Estimate and project out the modality-shift subspace of hidden states"
)]
struct Cli {
    /// Stdout format; files are always machine formats.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Human,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a bank or a basis file.
    Info(InfoArgs),
    /// Per-prompt shifts: multimodal (or blank-image) minus text-only.
    Estimate(EstimateArgs),
    /// Fit the nuisance basis from one or more shift banks.
    Fit(FitArgs),
    /// Project the nuisance subspace out of every row.
    Project(ProjectArgs),
    /// Add gamma times a basis direction to every row.
    Steer(SteerArgs),
    /// Subtract alpha times the mean shift from every row.
    Cmrm(CmrmArgs),
    /// Add norm-matched random noise to every row.
    Perturb(PerturbArgs),
    /// Diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Generate a synthetic scenario with known ground truth.
    Synth(SynthArgs),
    /// Score a basis against a synthetic scenario's ground truth.
    Recover(RecoverArgs),
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long, required_unless_present = "basis", conflicts_with = "basis")]
    bank: Option<PathBuf>,
    #[arg(long)]
    basis: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    multimodal: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Accept banks whose kind tags do not match their roles.
    #[arg(long)]
    allow_kind_mismatch: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Shift bank; repeat to mix anchor sets.
    #[arg(long, required = true)]
    shifts: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(short = 'k', long = "rank", default_value_t = DEFAULT_RANK)]
    rank: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Subtract the mean shift before fitting (ablation).
    #[arg(long)]
    center: bool,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long, default_value_t = 0)]
    direction: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CmrmArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Shift bank(s) whose mean is the correction direction.
    #[arg(long, required = true)]
    shifts: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Uniform,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseArg::Gaussian)]
    noise: NoiseArg,
    #[arg(
        long,
        required_unless_present = "norm_match",
        conflicts_with = "norm_match"
    )]
    target_norm: Option<f64>,
    /// Shift bank whose mean row norm sets the noise norm.
    #[arg(long)]
    norm_match: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Absolute cosine between the leading directions of two bases.
    Cosine(PairArgs),
    /// Principal angles between two bases.
    Angles(PairArgs),
    /// Cumulative explained-variance ratio of the shift spectrum.
    Evr(EvrArgs),
    /// Normalized 2D PCA coordinates of pooled banks.
    Pca(PcaArgs),
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Exactly two bases.
    #[arg(long, num_args = 1, required = true)]
    basis: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvrArgs {
    #[arg(long, required = true)]
    shifts: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RANK)]
    max_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[arg(long, required = true)]
    bank: Vec<PathBuf>,
    /// One label per bank; defaults to the file stem.
    #[arg(long)]
    label: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    nuisance_rank: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha_lo: f64,
    #[arg(long, default_value_t = 1.5)]
    alpha_hi: f64,
    #[arg(long, default_value_t = 1.0)]
    ideal_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    basis: PathBuf,
}

/// Failure of a command, already classified by exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_DATA
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Key/value summary rendered per `--format`.
#[derive(Default)]
struct Summary(Vec<(String, String)>);

impl Summary {
    fn add(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Csv => {
                out.push_str("key,value\n");
                for (k, v) in &self.0 {
                    let _ = writeln!(out, "{k},{v}");
                }
            }
            Format::Human => {
                let width = self.0.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in &self.0 {
                    let _ = writeln!(out, "{k:<width$}  {v}");
                }
            }
        }
        out
    }
}

struct Ctx {
    format: Format,
    artifacts: Vec<PathBuf>,
}

impl Ctx {
    fn save_bank(&mut self, bank: &FeatureBank, path: &Path) -> Result<(), Failure> {
        save_bank(bank, path)?;
        self.artifacts.push(path.to_path_buf());
        Ok(())
    }

    fn write_text(&mut self, text: &str, path: &Path) -> Result<(), Failure> {
        std::fs::write(path, text).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?;
        self.artifacts.push(path.to_path_buf());
        Ok(())
    }
}

fn load_shifts(paths: &[PathBuf]) -> Result<ShiftMatrix, Failure> {
    let banks = paths.iter().map(load_bank).collect::<Result<Vec<_>, _>>()?;
    Ok(stack_shifts(&banks)?)
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CommandOutcome {
                    exit_code: EXIT_OK,
                    stdout: text,
                    ..CommandOutcome::default()
                },
                _ => CommandOutcome {
                    exit_code: EXIT_USAGE,
                    stderr: text,
                    ..CommandOutcome::default()
                },
            };
        }
    };
    let mut ctx = Ctx {
        format: cli.format,
        artifacts: Vec::new(),
    };
    match dispatch(cli.command, &mut ctx) {
        Ok(stdout) => CommandOutcome {
            exit_code: EXIT_OK,
            stdout,
            stderr: String::new(),
            artifacts: ctx.artifacts,
        },
        Err(f) => CommandOutcome {
            exit_code: f.code,
            stdout: String::new(),
            stderr: format!("error: {}\n", f.message),
            artifacts: ctx.artifacts,
        },
    }
}

fn dispatch(command: Command, ctx: &mut Ctx) -> Result<String, Failure> {
    match command {
        Command::Info(a) => info(a, ctx),
        Command::Estimate(a) => estimate(a, ctx),
        Command::Fit(a) => fit(a, ctx),
        Command::Project(a) => {
            let bank = load_bank(&a.bank)?;
            let basis = load_basis(&a.basis)?;
            apply(InterventionSpec::Project { basis }, &bank, &a.out, ctx)
        }
        Command::Steer(a) => {
            let bank = load_bank(&a.bank)?;
            let basis = load_basis(&a.basis)?;
            let spec = InterventionSpec::Steer {
                basis,
                direction_index: a.direction,
                gamma: a.gamma,
            };
            apply(spec, &bank, &a.out, ctx)
        }
        Command::Cmrm(a) => {
            let bank = load_bank(&a.bank)?;
            let delta = mean_shift(&load_shifts(&a.shifts)?);
            apply(
                InterventionSpec::Cmrm {
                    delta,
                    alpha: a.alpha,
                },
                &bank,
                &a.out,
                ctx,
            )
        }
        Command::Perturb(a) => perturb(a, ctx),
        Command::Analyze(a) => analyze(a, ctx),
        Command::Synth(a) => synth(a, ctx),
        Command::Recover(a) => recover(a, ctx),
    }
}

fn info(a: InfoArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    let mut s = Summary::default();
    if let Some(path) = a.bank {
        let b = load_bank(&path)?;
        s.add("file", path.display())
            .add("container", "fbank")
            .add("kind", b.kind())
            .add("dtype", format!("{:?}", b.dtype()).to_lowercase())
            .add("dim", b.dim())
            .add("count", b.count())
            .add("digest", b.digest());
        for (k, v) in b.meta() {
            s.add(&format!("meta.{k}"), v);
        }
    } else if let Some(path) = a.basis {
        let b = load_basis(&path)?;
        let report = validate_basis(&b);
        let spectrum: Vec<String> = b.singular_values().iter().map(|&x| fmt_f64(x)).collect();
        let evr: Vec<String> = b.evr_cumulative().iter().map(|&x| fmt_f64(x)).collect();
        s.add("file", path.display())
            .add("container", "nbasis")
            .add("dim", b.dim())
            .add("k", b.k())
            .add("singular_values", spectrum.join(";"))
            .add("evr_cumulative", evr.join(";"))
            .add("source_digest", b.source_digest())
            .add("digest", b.digest())
            .add(
                "orthonormality_error",
                fmt_f64(report.max_orthonormality_error),
            )
            .add("valid", report.passed);
        for (k, v) in b.meta() {
            s.add(&format!("meta.{k}"), v);
        }
    }
    Ok(s.render(ctx.format))
}

fn estimate(a: EstimateArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    let mm = load_bank(&a.multimodal)?;
    let txt = load_bank(&a.text)?;
    let shifts = compute_shifts(&mm, &txt, a.allow_kind_mismatch)?;
    let d = ShiftMatrix::from_rows(shifts.dim(), shifts.data().to_vec(), shifts.ids().to_vec())?;
    let shifts = shifts.with_meta(nullspace_core::shift::META_SHIFT_DIGEST, d.digest());
    ctx.save_bank(&shifts, &a.out)?;
    let mut s = Summary::default();
    s.add("out", a.out.display())
        .add("rows", shifts.count())
        .add("dim", shifts.dim())
        .add("mean_row_norm", fmt_f64(d.mean_row_norm()));
    Ok(s.render(ctx.format))
}

fn fit(a: FitArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    if a.rank == 0 {
        return Err(usage("-k/--rank must be at least 1"));
    }
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(usage("--tol must lie in (0, 1)"));
    }
    let d = load_shifts(&a.shifts)?;
    let options = FitOptions {
        tol: a.tol,
        center: a.center,
    };
    let basis = fit_subspace(&d, a.rank, &options)?;
    save_basis(&basis, &a.out)?;
    ctx.artifacts.push(a.out.clone());
    let mut s = Summary::default();
    s.add("out", a.out.display())
        .add("rows", d.len())
        .add("dim", d.dim())
        .add("k", basis.k())
        .add(
            "evr",
            basis
                .evr_cumulative()
                .last()
                .map_or("0".into(), |&x| fmt_f64(x)),
        );
    if let Some(note) = basis.meta().get(META_TRUNCATED) {
        s.add("truncated", note);
    }
    Ok(s.render(ctx.format))
}

fn apply(
    spec: InterventionSpec,
    bank: &FeatureBank,
    out: &Path,
    ctx: &mut Ctx,
) -> Result<String, Failure> {
    if let InterventionSpec::Steer { .. } = spec {
        spec.validate().map_err(|e| usage(e.to_string()))?;
    }
    let result = spec.apply(bank)?;
    ctx.save_bank(&result, out)?;
    let mut s = Summary::default();
    s.add("out", out.display())
        .add("intervention", spec.mode())
        .add("rows", result.count())
        .add("dim", result.dim());
    Ok(s.render(ctx.format))
}

fn perturb(a: PerturbArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    let bank = load_bank(&a.bank)?;
    let norm = match (a.target_norm, &a.norm_match) {
        (Some(n), _) => NoiseNorm::Fixed(n).resolve(None)?,
        (None, Some(path)) => {
            let d = load_shifts(std::slice::from_ref(path))?;
            NoiseNorm::MatchMeanShift.resolve(Some(&d))?
        }
        (None, None) => return Err(usage("one of --target-norm or --norm-match is required")),
    };
    if !(norm.is_finite() && norm >= 0.0) {
        return Err(usage("--target-norm must be finite and non-negative"));
    }
    let kind = match a.noise {
        NoiseArg::Gaussian => NoiseKind::Gaussian,
        NoiseArg::Uniform => NoiseKind::Uniform,
    };
    apply(
        InterventionSpec::Noise {
            kind,
            norm,
            seed: a.seed,
        },
        &bank,
        &a.out,
        ctx,
    )
}

fn emit_table(
    table: String,
    out: Option<&Path>,
    ctx: &mut Ctx,
    human: String,
) -> Result<String, Failure> {
    if let Some(path) = out {
        ctx.write_text(&table, path)?;
    }
    Ok(match ctx.format {
        Format::Csv => table,
        Format::Human => human,
    })
}

fn two_bases(
    paths: &[PathBuf],
) -> Result<(nullspace_core::NuisanceBasis, nullspace_core::NuisanceBasis), Failure> {
    match paths {
        [a, b] => Ok((load_basis(a)?, load_basis(b)?)),
        _ => Err(usage(format!(
            "expected exactly two --basis flags, got {}",
            paths.len()
        ))),
    }
}

fn analyze(cmd: AnalyzeCommand, ctx: &mut Ctx) -> Result<String, Failure> {
    match cmd {
        AnalyzeCommand::Cosine(a) => {
            let (x, y) = two_bases(&a.basis)?;
            let report = analysis::consistency(&x, &y)?;
            let mut s = Summary::default();
            s.add("cos_top1", fmt_f64(report.cos_top1))
                .add("k_a", report.k_a)
                .add("k_b", report.k_b);
            let human = s.render(Format::Human);
            emit_table(
                analysis::consistency_csv(&[report]),
                a.out.as_deref(),
                ctx,
                human,
            )
        }
        AnalyzeCommand::Angles(a) => {
            let (x, y) = two_bases(&a.basis)?;
            let angles = analysis::principal_angles(&x, &y)?;
            let mut human = String::new();
            for (i, t) in angles.iter().enumerate() {
                let _ = writeln!(
                    human,
                    "angle {:>3}  {:.6e} rad  ({:.4} deg)",
                    i + 1,
                    t,
                    t.to_degrees()
                );
            }
            emit_table(analysis::angles_csv(&angles), a.out.as_deref(), ctx, human)
        }
        AnalyzeCommand::Evr(a) => {
            if a.max_k == 0 {
                return Err(usage("--max-k must be at least 1"));
            }
            let d = load_shifts(&a.shifts)?;
            let curve = analysis::evr_curve(&d, a.max_k)?;
            let mut human = String::new();
            for (k, e) in &curve {
                let _ = writeln!(human, "k={k:<4} evr={e:.6}");
            }
            if curve.is_empty() {
                human.push_str("shift matrix is zero; EVR undefined\n");
            }
            emit_table(analysis::evr_csv(&curve), a.out.as_deref(), ctx, human)
        }
        AnalyzeCommand::Pca(a) => {
            let labels = if a.label.is_empty() {
                a.bank
                    .iter()
                    .map(|p| {
                        p.file_stem().map_or_else(
                            || p.display().to_string(),
                            |s| s.to_string_lossy().into_owned(),
                        )
                    })
                    .collect()
            } else if a.label.len() == a.bank.len() {
                a.label
            } else {
                return Err(usage("give one --label per --bank"));
            };
            let banks = a
                .bank
                .iter()
                .map(load_bank)
                .collect::<Result<Vec<_>, _>>()?;
            let points = analysis::pca2d(&banks, &labels)?;
            let mut human = String::new();
            for p in &points {
                let _ = writeln!(
                    human,
                    "{:<16} {:<12} {:>12.6} {:>12.6}",
                    p.id, p.label, p.x, p.y
                );
            }
            emit_table(analysis::pca_csv(&points), a.out.as_deref(), ctx, human)
        }
    }
}

fn synth(a: SynthArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    let config = ScenarioConfig {
        dim: a.dim,
        nuisance_rank: a.nuisance_rank,
        n_samples: a.samples,
        alpha_range: (a.alpha_lo, a.alpha_hi),
        ideal_scale: a.ideal_scale,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let scenario = generate_scenario(&config)?;
    let written = save_scenario(&scenario, &a.out)?;
    ctx.artifacts.extend(written);
    let mut s = Summary::default();
    s.add("out", a.out.display())
        .add("dim", config.dim)
        .add("nuisance_rank", config.nuisance_rank)
        .add("samples", config.n_samples)
        .add("seed", config.seed);
    Ok(s.render(ctx.format))
}

fn recover(a: RecoverArgs, ctx: &mut Ctx) -> Result<String, Failure> {
    let scenario = load_scenario(&a.scenario)?;
    let basis = load_basis(&a.basis)?;
    let r = recovery_error(&scenario, &basis)?;
    let mut s = Summary::default();
    s.add("k", basis.k())
        .add("max_principal_angle", fmt_f64(r.max_principal_angle))
        .add("mean_ideal_residual", fmt_f64(r.mean_ideal_residual));
    Ok(s.render(ctx.format))
}
