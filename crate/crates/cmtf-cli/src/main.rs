//! Command-line frontend: synthetic data generation, the baseline and
//! sampled solvers, the missing-data solver, metrics, prediction, and
//! leave-two-out evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cmtf::als::{cmtf_als, objective, SolverOptions};
use cmtf::driver::{turbo_cmtf, CoreSolver, RunReport, TurboOptions};
use cmtf::eval::{
    leave_two_out, predict_from_side, relative_cost, relative_sparsity, snr, PredictScaling,
};
use cmtf::io;
use cmtf::linalg::PinvOptions;
use cmtf::missing::{cmtf_wals, weighted_objective, WeightMask};
use cmtf::sampler::SamplingOptions;
use cmtf::synth::{generate, SynthOptions};
use cmtf::tensor::{CoupledData, Matrix};
use cmtf::Error;

/// Parallelism used when `--parallel`/`--r` are not given: the
/// `CMTF_PARALLEL` variable when set, otherwise the machine's thread count.
fn default_parallelism() -> usize {
    std::env::var("CMTF_PARALLEL")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Parser)]
#[command(
    name = "cmtf",
    version,
    about = "Coupled matrix-tensor factorization: baseline ALS, a sampled parallel solver, and a missing-data variant"
)]
struct RunConfig {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic coupled instance
    Gen(GenArgs),
    /// Fit the baseline alternating-least-squares solver
    FitAls(FitAlsArgs),
    /// Fit the sampled, parallel pipeline
    FitTurbo(FitTurboArgs),
    /// Fit the weighted solver that ignores masked (missing) entries
    FitMissing(FitMissingArgs),
    /// Compare two factor directories on the same data
    Eval(EvalArgs),
    /// Predict a second-mode vector from a side-matrix row vector
    Predict(PredictArgs),
    /// Leave-two-out pairwise classification accuracy
    Loo(LooArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Tensor file (`tensor I J K nnz` header; `.gz` accepted)
    #[arg(long)]
    tensor: PathBuf,
    /// Side matrix coupled on mode 1
    #[arg(long)]
    y1: Option<PathBuf>,
    /// Side matrix coupled on mode 2
    #[arg(long)]
    y2: Option<PathBuf>,
    /// Side matrix coupled on mode 3
    #[arg(long)]
    y3: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> cmtf::Result<CoupledData> {
        let x = io::read_tensor(&self.tensor)?;
        let side = |p: &Option<PathBuf>| -> cmtf::Result<Option<Matrix>> {
            p.as_ref().map(io::read_matrix).transpose()
        };
        CoupledData::new(x, side(&self.y1)?, side(&self.y2)?, side(&self.y3)?)
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Number of factors
    #[arg(long, short = 'f', default_value_t = 2)]
    rank: usize,
    /// Maximum outer iterations
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative objective-change convergence threshold
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Master seed; every stream in the run derives from it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative singular-value cutoff for pseudoinverses
    #[arg(long, default_value_t = 1e-10)]
    pinv_tol: f64,
}

impl SolverArgs {
    fn to_options(&self) -> SolverOptions {
        SolverOptions {
            rank: self.rank,
            max_iters: self.max_iters,
            rel_change_tol: self.tol,
            seed: self.seed,
            pinv: PinvOptions {
                rank_tolerance: self.pinv_tol,
            },
        }
    }
}

#[derive(Args)]
struct MaskArgs {
    /// Tensor observation mask (1 = observed, 0 = missing)
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Observation mask for the mode-1 side matrix
    #[arg(long)]
    w1: Option<PathBuf>,
    /// Observation mask for the mode-2 side matrix
    #[arg(long)]
    w2: Option<PathBuf>,
    /// Observation mask for the mode-3 side matrix
    #[arg(long)]
    w3: Option<PathBuf>,
}

impl MaskArgs {
    fn load(&self, data: &CoupledData) -> cmtf::Result<Option<WeightMask>> {
        let side = |p: &Option<PathBuf>| -> cmtf::Result<Option<Matrix>> {
            p.as_ref().map(io::read_matrix).transpose()
        };
        match &self.mask {
            Some(path) => {
                let w = io::read_tensor(path)?;
                let mask = WeightMask::new(w, side(&self.w1)?, side(&self.w2)?, side(&self.w3)?)?;
                mask.validate_for(data)?;
                Ok(Some(mask))
            }
            None => {
                if self.w1.is_some() || self.w2.is_some() || self.w3.is_some() {
                    Err(Error::InvalidArgument(
                        "side masks require --mask for the tensor".into(),
                    ))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output directory
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Tensor dimensions as `I,J,K`
    #[arg(long, default_value = "20,20,20")]
    dims: String,
    /// Uncoupled side-matrix dimensions as `I2,J2,K2`; 0 omits a matrix
    #[arg(long, default_value = "10,0,0")]
    side_dims: String,
    /// Planted rank
    #[arg(long, short = 'f', default_value_t = 2)]
    rank: usize,
    /// Additive Gaussian noise at this signal-to-noise ratio (dB)
    #[arg(long)]
    noise_db: Option<f64>,
    /// Fraction of tensor cells kept as nonzeros
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    /// Fraction of tensor cells marked missing (writes mask.txt)
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    /// Exponential decay of factor row magnitudes (0 = uniform rows)
    #[arg(long, default_value_t = 0.0)]
    row_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitAlsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for factor files
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct FitTurboArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    masks: MaskArgs,
    /// Tensor-mode sampling factors: one value or `sI,sJ,sK`
    #[arg(long, default_value = "2")]
    s: String,
    /// Side-matrix column sampling factors: one value or `s1,s2,s3`
    #[arg(long, default_value = "1")]
    s_side: String,
    /// Fraction of each sample common to all repetitions, in [0, 1)
    #[arg(long, default_value_t = 0.35)]
    p: f64,
    /// Sampling repetitions (defaults to the machine parallelism)
    #[arg(long, short = 'r')]
    r: Option<usize>,
    /// Maximum repetitions fitted concurrently
    #[arg(long)]
    parallel: Option<usize>,
    /// Core solver fitted to each sample
    #[arg(long, value_parser = ["als", "wals"], default_value = "als")]
    core: String,
    /// Output directory for factor files
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct FitMissingArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    masks: MaskArgs,
    /// Output directory for factor files
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Factor directory of the method under evaluation
    #[arg(long)]
    fast: PathBuf,
    /// Factor directory of the baseline
    #[arg(long)]
    base: PathBuf,
    /// Also write the metrics to this file
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Factor directory to predict from
    #[arg(long)]
    factors: PathBuf,
    /// Query vector file (n-by-1 or 1-by-n matrix format)
    #[arg(long)]
    q: PathBuf,
    /// Skip the factor scale vectors during projection
    #[arg(long)]
    unscaled: bool,
    /// Write the prediction as an n-by-1 matrix file
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LooArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Held-out pair of first-mode indices, 1-based, as `i,j`
    #[arg(long)]
    pair: String,
    /// Reseeded fit repetitions to average over
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Tensor-mode sampling factors for the inner fits
    #[arg(long, default_value = "1")]
    s: String,
    #[arg(long, default_value = "1")]
    s_side: String,
    #[arg(long, default_value_t = 0.35)]
    p: f64,
    #[arg(long, short = 'r')]
    r: Option<usize>,
    #[arg(long)]
    parallel: Option<usize>,
}

fn parse_triple(text: &str, what: &str) -> cmtf::Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parse = |t: &str| -> cmtf::Result<f64> {
        t.parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("invalid {} value {:?}", what, t)))
    };
    match parts.len() {
        1 => {
            let v = parse(parts[0])?;
            Ok([v, v, v])
        }
        3 => Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?]),
        n => Err(Error::InvalidArgument(format!(
            "{} takes one value or three comma-separated values, got {}",
            what, n
        ))),
    }
}

fn parse_dims(text: &str, what: &str) -> cmtf::Result<[usize; 3]> {
    let v = parse_triple(text, what)?;
    let mut out = [0usize; 3];
    for (o, x) in out.iter_mut().zip(v) {
        if x < 0.0 || x.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{} must be non-negative integers, got {}",
                what, text
            )));
        }
        *o = x as usize;
    }
    Ok(out)
}

fn parse_pair(text: &str) -> cmtf::Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "--pair takes `i,j`, got {:?}",
            text
        )));
    }
    let parse = |t: &str| -> cmtf::Result<usize> {
        let v = t
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("invalid pair index {:?}", t)))?;
        if v == 0 {
            return Err(Error::InvalidArgument("pair indices are 1-based".into()));
        }
        Ok(v - 1)
    };
    Ok((parse(parts[0])?, parse(parts[1])?))
}

fn turbo_options(
    solver: &SolverArgs,
    s: &str,
    s_side: &str,
    p: f64,
    r: Option<usize>,
    parallel: Option<usize>,
    core: CoreSolver,
) -> cmtf::Result<TurboOptions> {
    Ok(TurboOptions {
        solver: solver.to_options(),
        sampling: SamplingOptions {
            s_tensor: parse_triple(s, "--s")?,
            s_side: parse_triple(s_side, "--s-side")?,
            p,
            r: r.unwrap_or_else(default_parallelism),
            seed: solver.seed,
        },
        parallel: parallel.unwrap_or_else(default_parallelism),
        core,
    })
}

fn run_gen(args: &GenArgs) -> cmtf::Result<()> {
    let dims = parse_dims(&args.dims, "--dims")?;
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(
            "tensor dimensions must be positive".into(),
        ));
    }
    let side = parse_dims(&args.side_dims, "--side-dims")?;
    let opts = SynthOptions {
        dims: (dims[0], dims[1], dims[2]),
        side_dims: side.map(|d| if d == 0 { None } else { Some(d) }),
        rank: args.rank,
        noise_snr_db: args.noise_db,
        density: args.density,
        missing_fraction: args.missing,
        row_decay: args.row_decay,
        seed: args.seed,
    };
    let inst = generate(&opts)?;
    let dir = &args.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    io::write_tensor(&inst.data.x, dir.join("tensor.txt"))?;
    println!("wrote {}", dir.join("tensor.txt").display());
    for (m, name) in ["Y1.txt", "Y2.txt", "Y3.txt"].iter().enumerate() {
        if let Some(y) = inst.data.side(m) {
            io::write_matrix(y, dir.join(name))?;
            println!("wrote {}", dir.join(name).display());
        }
    }
    if let Some(mask) = &inst.mask {
        io::write_tensor(&mask.w, dir.join("mask.txt"))?;
        println!("wrote {}", dir.join("mask.txt").display());
    }
    io::write_factors(&inst.truth, &RunReport::default(), dir.join("truth"))?;
    println!("wrote {}", dir.join("truth").display());
    Ok(())
}

fn run_fit_als(args: &FitAlsArgs) -> cmtf::Result<()> {
    let data = args.data.load()?;
    let opts = args.solver.to_options();
    let t0 = Instant::now();
    let (f, trace) = cmtf_als(&data, &opts)?;
    let fit_seconds = t0.elapsed().as_secs_f64();
    let final_objective = objective(&data, &f)?;
    let report = RunReport {
        rep_traces: vec![trace],
        rep_dims: vec![data.x.dims()],
        phase_seconds: [0.0, fit_seconds, 0.0],
        final_objective,
        ..Default::default()
    };
    io::write_factors(&f, &report, &args.out)?;
    println!(
        "fit-als: objective {:.6e} after {} iterations in {:.2}s -> {}",
        final_objective,
        report.rep_traces[0].len() - 1,
        fit_seconds,
        args.out.display()
    );
    Ok(())
}

fn run_fit_turbo(args: &FitTurboArgs) -> cmtf::Result<()> {
    let data = args.data.load()?;
    let core = if args.core == "wals" {
        CoreSolver::Wals
    } else {
        CoreSolver::Als
    };
    let opts = turbo_options(
        &args.solver,
        &args.s,
        &args.s_side,
        args.p,
        args.r,
        args.parallel,
        core,
    )?;
    let mask = args.masks.load(&data)?;
    let (f, report) = turbo_cmtf(&data, mask.as_ref(), &opts)?;
    io::write_factors(&f, &report, &args.out)?;
    println!(
        "fit-turbo: objective {:.6e}, {} repetitions, phases {:.2}s/{:.2}s/{:.2}s -> {}",
        report.final_objective,
        opts.sampling.r,
        report.phase_seconds[0],
        report.phase_seconds[1],
        report.phase_seconds[2],
        args.out.display()
    );
    if !report.ambiguities.is_empty() {
        println!(
            "fit-turbo: {} ambiguous column assignments (see report.txt)",
            report.ambiguities.len()
        );
    }
    Ok(())
}

fn run_fit_missing(args: &FitMissingArgs) -> cmtf::Result<()> {
    let data = args.data.load()?;
    let mask = args
        .masks
        .load(&data)?
        .ok_or_else(|| Error::InvalidArgument("fit-missing requires --mask".into()))?;
    let opts = args.solver.to_options();
    let t0 = Instant::now();
    let (f, trace) = cmtf_wals(&data, &mask, &opts)?;
    let fit_seconds = t0.elapsed().as_secs_f64();
    let final_objective = weighted_objective(&data, &mask, &f)?;
    let report = RunReport {
        rep_traces: vec![trace],
        rep_dims: vec![data.x.dims()],
        phase_seconds: [0.0, fit_seconds, 0.0],
        final_objective,
        ..Default::default()
    };
    io::write_factors(&f, &report, &args.out)?;
    println!(
        "fit-missing: weighted objective {:.6e} ({}% observed) in {:.2}s -> {}",
        final_objective,
        (mask.observed_fraction() * 100.0).round(),
        fit_seconds,
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: &EvalArgs) -> cmtf::Result<()> {
    let data = args.data.load()?;
    let fast = io::read_factors(&args.fast)?;
    let base = io::read_factors(&args.base)?;
    let rc = relative_cost(&data, &fast, &base)?;
    let rs = relative_sparsity(&base, &fast)?;
    let snr_v = snr(
        &fast.reconstruct_tensor()?,
        &base.reconstruct_tensor()?,
    )?;
    let wall = match (
        io::read_report_total_seconds(args.fast.join("report.txt")),
        io::read_report_total_seconds(args.base.join("report.txt")),
    ) {
        (Some(f), Some(b)) if b > 0.0 => f / b,
        _ => f64::NAN,
    };
    let lines = format!(
        "relative_cost {}\nrelative_sparsity {}\nsnr {}\nwall_clock_fraction {}\n",
        rc, rs, snr_v, wall
    );
    print!("{}", lines);
    if let Some(out) = &args.out {
        std::fs::write(out, lines).map_err(|e| Error::Io {
            path: out.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

fn run_predict(args: &PredictArgs) -> cmtf::Result<()> {
    let f = io::read_factors(&args.factors)?;
    let q = io::read_vector(&args.q)?;
    let scaling = if args.unscaled {
        PredictScaling::Unscaled
    } else {
        PredictScaling::Scaled
    };
    let v = predict_from_side(&f, &q, scaling)?;
    if let Some(out) = &args.out {
        let rows: Vec<Vec<f64>> = v.iter().map(|&x| vec![x]).collect();
        let col = Matrix::from_rows(&rows)?;
        io::write_matrix(&col, out)?;
        println!("wrote {}", out.display());
    } else {
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        println!("{}", text.join(" "));
    }
    Ok(())
}

fn run_loo(args: &LooArgs) -> cmtf::Result<()> {
    let data = args.data.load()?;
    let pair = parse_pair(&args.pair)?;
    let opts = turbo_options(
        &args.solver,
        &args.s,
        &args.s_side,
        args.p,
        args.r,
        args.parallel,
        CoreSolver::Als,
    )?;
    let accuracy = leave_two_out(&data, pair, &opts, args.trials)?;
    println!("accuracy {}", accuracy);
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidMode(_) => 1,
        Error::SvdNonConvergence { .. } | Error::Numeric(_) | Error::RepetitionFailed { .. } => 3,
        _ => 2,
    }
}

fn run(config: RunConfig) -> cmtf::Result<()> {
    match &config.command {
        Command::Gen(args) => run_gen(args),
        Command::FitAls(args) => run_fit_als(args),
        Command::FitTurbo(args) => run_fit_turbo(args),
        Command::FitMissing(args) => run_fit_missing(args),
        Command::Eval(args) => run_eval(args),
        Command::Predict(args) => run_predict(args),
        Command::Loo(args) => run_loo(args),
    }
}

fn main() {
    env_logger::init();
    let config = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(config) {
        eprintln!("error: {}", e);
        std::process::exit(exit_code(&e));
    }
}
