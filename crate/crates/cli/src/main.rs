//! `deed` — batch front end for the edge-enhancing diffusion denoiser.
//!
//! Subcommands: `denoise` (the full fixed-point run), `inpaint-precond`
//! (one application of the inpainting operator), `probe-tensor`
//! (continuity / SPD scan of a tensor constructor), `selftest` (built-in
//! oracle-equivalence suite). Exit codes: 2 bad configuration, 3 i/o or
//! file format, 4 non-convergence, 5 violated invariant.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deed_cli::config::{self, KeyValues, RawDenoise, RawParams};
use deed_cli::pgm::{self, PgmError};
use deed_core::fixed_point::{run_fixed_point, FixedPointConfig, Outcome};
use deed_core::grid::{mask_full, Mask};
use deed_core::tensor::{make_tensor, tensor_continuity_probe, TensorKind};
use deed_core::{oracle, Error as CoreError, ScalarField64};

#[derive(Parser)]
#[command(name = "deed", version, about = "Edge-enhancing diffusion denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fixed-point denoiser on a PGM image.
    Denoise(Box<DenoiseArgs>),
    /// Apply the inpainting preconditioner once and write the result.
    InpaintPrecond(InpaintArgs),
    /// Probe a tensor constructor: SPD scan and continuity under perturbation.
    ProbeTensor(ProbeArgs),
    /// Run the built-in oracle-equivalence suite on tiny grids.
    Selftest,
}

#[derive(Args, Clone, Default)]
struct ParamArgs {
    /// Data-term weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Data-term exponent (> 1).
    #[arg(long)]
    t: Option<f64>,
    /// Mollification scale of the tensor argument.
    #[arg(long)]
    sigma: Option<f64>,
    /// Exponent of the cross-edge eigenvalue (any sign).
    #[arg(long)]
    mu: Option<f64>,
    /// Second smoothing scale (weighted tensor).
    #[arg(long)]
    delta: Option<f64>,
    /// Weight exponent of the weighted tensor (> 1).
    #[arg(long)]
    p_weight: Option<f64>,
    /// SPD floor of the weighted tensor.
    #[arg(long)]
    eps_weight: Option<f64>,
    /// Inpainting exponent (1 < s < 1 + t/2 for the inpaint tensor).
    #[arg(long)]
    s: Option<f64>,
    /// Coupling constant of the preconditioner solve.
    #[arg(long)]
    lambda_pre: Option<f64>,
    /// Smoothing of |.|^t (defaults to 1e-9 when t < 2, else 0).
    #[arg(long)]
    eps_data: Option<f64>,
    /// Inner gradient tolerance on [0,1]-scaled fields.
    #[arg(long)]
    tol_inner: Option<f64>,
}

impl ParamArgs {
    fn raw(&self) -> RawParams {
        RawParams {
            lambda: self.lambda,
            t: self.t,
            sigma: self.sigma,
            mu: self.mu,
            delta: self.delta,
            p_weight: self.p_weight,
            eps_weight: self.eps_weight,
            s: self.s,
            lambda_pre: self.lambda_pre,
            eps_data: self.eps_data,
            tol_inner: self.tol_inner,
        }
    }
}

#[derive(Args)]
struct DenoiseArgs {
    /// key=value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input image (binary PGM, 8- or 16-bit).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Mask image; pixels > 0 form the data set (absent: whole domain).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output image (8-bit binary PGM).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Convergence log (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// eed | weighted | galerkin | tikhonov | inpaint.
    #[arg(long)]
    tensor: Option<String>,
    #[command(flatten)]
    params: ParamArgs,
    /// Outer iteration cap.
    #[arg(long)]
    max_outer: Option<usize>,
    /// Sup-norm step tolerance.
    #[arg(long)]
    tol_fp: Option<f64>,
    /// Sup-norm tolerance of the quasilinear residual.
    #[arg(long)]
    tol_residual: Option<f64>,
    /// Averaging factor in (0, 1]; 1 is the pure iteration.
    #[arg(long)]
    damping: Option<f64>,
    /// data | zero.
    #[arg(long)]
    init: Option<String>,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<String>,
    #[command(flatten)]
    params: ParamArgs,
    /// Number of random perturbations.
    #[arg(long, default_value_t = 8)]
    trials: usize,
    /// Perturbation size in the discrete W^{1,2} norm.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// RNG seed for the probe.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes with their exit codes.
enum CliError {
    Config(String),
    Io(String),
    NonConvergence(String),
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::NonConvergence(_) => 4,
            Self::Invariant(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::NonConvergence(m) => write!(f, "non-convergence: {m}"),
            Self::Invariant(m) => write!(f, "invariant violation: {m}"),
        }
    }
}

fn classify_core(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidGrid { .. }
        | CoreError::GridMismatch
        | CoreError::LengthMismatch { .. }
        | CoreError::EmptyMask
        | CoreError::InvalidParam(_)
        | CoreError::ExponentGate { .. } => CliError::Config(e.to_string()),
        CoreError::InnerSolveFailed { .. } => CliError::NonConvergence(e.to_string()),
        CoreError::NonFinite { .. } | CoreError::NotSpd { .. } | CoreError::Invariant(_) => {
            CliError::Invariant(e.to_string())
        }
    }
}

fn classify_pgm(e: PgmError) -> CliError {
    match e {
        PgmError::DimensionMismatch { .. } | PgmError::EmptyMask => {
            CliError::Config(e.to_string())
        }
        other => CliError::Io(other.to_string()),
    }
}

fn load_file(path: &Option<PathBuf>) -> Result<KeyValues, CliError> {
    match path {
        Some(p) => KeyValues::load(p).map_err(CliError::Config),
        None => Ok(KeyValues::default()),
    }
}

fn read_inputs(
    input: &PathBuf,
    mask_path: &Option<PathBuf>,
) -> Result<(ScalarField64, Mask), CliError> {
    let image = pgm::read_pgm(input).map_err(classify_pgm)?;
    let mask = match mask_path {
        Some(p) => pgm::read_mask(p, image.grid()).map_err(classify_pgm)?,
        None => mask_full(image.grid()),
    };
    Ok((image, mask))
}

fn run_denoise(args: &DenoiseArgs) -> Result<(), CliError> {
    let file = load_file(&args.config)?;
    let raw = RawDenoise {
        input: args.input.clone(),
        mask: args.mask.clone(),
        output: args.output.clone(),
        trace: args.trace.clone(),
        tensor: args.tensor.clone(),
        params: args.params.raw(),
        max_outer: args.max_outer,
        tol_fp: args.tol_fp,
        tol_residual: args.tol_residual,
        damping: args.damping,
        init: args.init.clone(),
    };
    let cfg = config::build_denoise(&raw, &file).map_err(CliError::Config)?;
    // fail the exponent gate before any file i/o
    if cfg.tensor == TensorKind::Inpaint {
        deed_core::tensor::check_exponent_gate(cfg.params.s, cfg.params.t)
            .map_err(classify_core)?;
    }
    let fp_config = FixedPointConfig {
        max_outer: cfg.max_outer,
        tol_fp: cfg.tol_fp,
        tol_residual: cfg.tol_residual,
        damping: cfg.damping,
        init: cfg.init.clone(),
    };
    fp_config.validate().map_err(classify_core)?;
    cfg.params.validate().map_err(classify_core)?;

    let (image, mask) = read_inputs(&cfg.input, &cfg.mask)?;
    let tensor = make_tensor::<f64>(cfg.tensor, &cfg.params, &mask).map_err(classify_core)?;
    let (u, trace) = run_fixed_point(&image, &mask, &cfg.params, tensor.as_ref(), &fp_config)
        .map_err(classify_core)?;

    if let Some(path) = &cfg.trace {
        std::fs::write(path, trace.to_csv())
            .map_err(|e| CliError::Io(format!("cannot write trace {}: {e}", path.display())))?;
    }
    match trace.outcome {
        Outcome::Converged => {
            pgm::write_pgm(&u, &cfg.output).map_err(classify_pgm)?;
            let last = trace.rows.last().expect("converged run has rows");
            println!(
                "converged in {} outer iterations: step_sup {:.3e}, residual_sup {:.3e}",
                last.iter, last.step_sup, last.residual_sup
            );
            Ok(())
        }
        Outcome::MaxOuterReached => Err(CliError::NonConvergence(format!(
            "outer iteration cap {} reached; trace has {} rows",
            cfg.max_outer,
            trace.rows.len()
        ))),
        Outcome::InnerSolveStalled => Err(CliError::NonConvergence(
            "an inner solve failed to converge".into(),
        )),
    }
}

fn run_inpaint(args: &InpaintArgs) -> Result<(), CliError> {
    let file = load_file(&args.config)?;
    let params = config::merge_params(&args.params.raw(), &file).map_err(CliError::Config)?;
    let input = args
        .input
        .clone()
        .map(Ok)
        .unwrap_or_else(|| match file_path(&file, "input") {
            Ok(Some(p)) => Ok(p),
            Ok(None) => Err(CliError::Config("missing required --input path".into())),
            Err(e) => Err(e),
        })?;
    let output = args
        .output
        .clone()
        .map(Ok)
        .unwrap_or_else(|| match file_path(&file, "output") {
            Ok(Some(p)) => Ok(p),
            Ok(None) => Err(CliError::Config("missing required --output path".into())),
            Err(e) => Err(e),
        })?;
    let (image, mask) = read_inputs(&input, &args.mask)?;
    let report = deed_core::inpaint::solve_i(
        &image,
        params.s,
        params.lambda_pre,
        &mask,
        &params.solver,
    )
    .map_err(classify_core)?;
    if !report.converged {
        return Err(CliError::NonConvergence(format!(
            "inpainting solve stopped after {} iterations at gradient sup-norm {:.3e}",
            report.iterations, report.final_gradient_norm
        )));
    }
    pgm::write_pgm(&report.solution, &output).map_err(classify_pgm)?;
    println!(
        "inpainting solve converged in {} iterations (gradient sup-norm {:.3e})",
        report.iterations, report.final_gradient_norm
    );
    Ok(())
}

fn file_path(file: &KeyValues, key: &str) -> Result<Option<PathBuf>, CliError> {
    let value: Option<String> = file_get(file, key)?;
    Ok(value.map(PathBuf::from))
}

fn file_get<T: std::str::FromStr>(file: &KeyValues, key: &str) -> Result<Option<T>, CliError> {
    // KeyValues::get is private to the config module; re-parse through the
    // public surface used by build_denoise
    config::lookup(file, key).map_err(CliError::Config)
}

fn run_probe(args: &ProbeArgs) -> Result<(), CliError> {
    let file = load_file(&args.config)?;
    let params = config::merge_params(&args.params.raw(), &file).map_err(CliError::Config)?;
    let tensor_name = args
        .tensor
        .clone()
        .or(config::lookup(&file, "tensor").map_err(CliError::Config)?)
        .unwrap_or_else(|| "eed".into());
    let kind: TensorKind = tensor_name.parse().map_err(classify_core)?;
    let input = args
        .input
        .clone()
        .or(file_path(&file, "input")?)
        .ok_or_else(|| CliError::Config("missing required --input path".into()))?;
    let (image, mask) = read_inputs(&input, &args.mask)?;
    let tensor = make_tensor::<f64>(kind, &params, &mask).map_err(classify_core)?;

    let field = tensor.tensor(&image).map_err(classify_core)?;
    let min_eig = field.min_eigenvalue();
    println!("tensor: {kind}");
    println!("min pixel-wise eigenvalue of D(u): {min_eig:.6e}");
    if min_eig <= 0.0 {
        return Err(CliError::Invariant(
            "tensor field is not positive definite".into(),
        ));
    }
    let report = tensor_continuity_probe(tensor.as_ref(), &image, args.trials, args.step, args.seed)
        .map_err(classify_core)?;
    println!(
        "continuity probe: step {:.3e}, trials {}, max sup-norm deviation {:.6e}, deviation/step {:.6e}",
        report.step, report.trials, report.max_deviation, report.ratio
    );
    Ok(())
}

fn run_selftest() -> Result<(), CliError> {
    let reports = oracle::selftest();
    let mut failed = 0;
    for r in &reports {
        println!(
            "{}: {} ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
        if !r.passed {
            failed += 1;
        }
    }
    println!("selftest: {}/{} passed", reports.len() - failed, reports.len());
    if failed > 0 {
        Err(CliError::Invariant(format!("{failed} selftest check(s) failed")))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Denoise(args) => run_denoise(args),
        Command::InpaintPrecond(args) => run_inpaint(args),
        Command::ProbeTensor(args) => run_probe(args),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
