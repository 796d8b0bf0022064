//! Command-line front end.
//!
//! Every subcommand writes its artifacts and a `run.txt` manifest under `--out-dir`.
//! Input paths are used as given; output paths are resolved against `--out-dir`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointfuse_core::denoiser::{
    train, Denoiser, FusionTask, LossHyper, OracleDenoiser, TinyDenoiser, TrainConfig, TrainingSet,
    DEFAULT_LEARNING_RATE,
};
use jointfuse_core::joint::{check_mp_conditions, JointOperator, JointState};
use jointfuse_core::metrics::MetricReport;
use jointfuse_core::ops::{LinearDegradation, OpSpec};
use jointfuse_core::rng::gaussian_noise;
use jointfuse_core::sampler::{
    initial_state, run_fusion, FusionConfig, DEFAULT_ALPHA_BAR_FIRST, DEFAULT_ALPHA_BAR_LAST,
    DEFAULT_STEPS,
};
use jointfuse_core::{Dims, Error as CoreError, ImagePlane, SeededRng};

use crate::manifest::Manifest;
use crate::params::{load_params, save_params, ParamsError};
use crate::pgm::{load_pgm, save_pgm, PgmError};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(CoreError),
    #[error("{0}")]
    Core(CoreError),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonConvergence { .. }
            | CoreError::NonFiniteLoss { .. }
            | CoreError::NonFiniteState { .. } => CliError::Numerical(e),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Verification(_) => EXIT_VERIFICATION,
            _ => EXIT_USAGE,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "jointfuse",
    version,
    about = "Degradation-aware diffusion fusion of two source images"
)]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Directory receiving all outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a degradation operator and additive Gaussian noise to an image.
    Degrade(DegradeArgs),
    /// Fuse two degraded observations.
    Fuse(FuseArgs),
    /// Train the tiny denoiser on procedurally generated pairs.
    Train(TrainArgs),
    /// Score fused images against two source images.
    Eval(EvalArgs),
    /// Check the Moore–Penrose conditions of the joint operator on a small grid.
    Verify(VerifyArgs),
    /// Sweep the number of sampling steps and record quality and wall time.
    AblateT(AblateArgs),
}

/// `HxW` or a single side length for square grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSize(pub Dims);

impl FromStr for GridSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
        let dims = match s.split_once(['x', 'X']) {
            Some((h, w)) => parse(h).zip(parse(w)).map(|(h, w)| Dims::new(h, w)),
            None => parse(s).map(|n| Dims::new(n, n)),
        };
        dims.map(GridSize)
            .ok_or_else(|| format!("expected HxW or N, got {s:?}"))
    }
}

impl std::fmt::Display for GridSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `oracle`, `oracle:w1=<weight>` or `tiny:<params file>`.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserChoice {
    Oracle { w1: f64 },
    Tiny(PathBuf),
}

impl FromStr for DenoiserChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "oracle" {
            return Ok(Self::Oracle { w1: 0.5 });
        }
        if let Some(rest) = s.strip_prefix("oracle:") {
            let w = rest
                .strip_prefix("w1=")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|w| *w > 0.0 && *w < 1.0)
                .ok_or_else(|| format!("expected oracle:w1=<value in (0,1)>, got {s:?}"))?;
            return Ok(Self::Oracle { w1: w });
        }
        if let Some(path) = s.strip_prefix("tiny:") {
            if path.is_empty() {
                return Err("tiny: needs a parameter file path".into());
            }
            return Ok(Self::Tiny(PathBuf::from(path)));
        }
        Err(format!(
            "unknown denoiser {s:?}; use oracle, oracle:w1=<w> or tiny:<params.bin>"
        ))
    }
}

impl std::fmt::Display for DenoiserChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Oracle { w1 } => write!(f, "oracle:w1={w1}"),
            Self::Tiny(p) => write!(f, "tiny:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    IrVis,
    Medical,
}

impl TaskArg {
    fn task(self) -> FusionTask {
        match self {
            TaskArg::IrVis => FusionTask::IrVis,
            TaskArg::Medical => FusionTask::Medical,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TaskArg::IrVis => "ir-vis",
            TaskArg::Medical => "medical",
        }
    }
}

fn parse_maxval(s: &str) -> Result<u32, String> {
    match s {
        "255" => Ok(255),
        "65535" => Ok(65535),
        _ => Err(format!("maxval must be 255 or 65535, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Operator chain, e.g. `blur:sigma=1.0+down:s=2`.
    #[arg(long)]
    pub op: OpSpec,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value = "degraded.pgm")]
    pub out: PathBuf,
    #[arg(long, default_value = "255", value_parser = parse_maxval)]
    pub maxval: u32,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Number of reverse diffusion steps.
    #[arg(long = "T", default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    /// Observation noise level used to attenuate the correction.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_y: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA_BAR_FIRST)]
    pub alpha_bar_first: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA_BAR_LAST)]
    pub alpha_bar_last: f64,
    /// Divide the clean estimate by sqrt(alpha_bar_t).
    #[arg(long)]
    pub ddim_normalize: bool,
}

impl SamplerArgs {
    fn config(&self, seed: u64) -> FusionConfig {
        FusionConfig {
            steps: self.steps,
            alpha_bar_first: self.alpha_bar_first,
            alpha_bar_last: self.alpha_bar_last,
            sigma_y: self.sigma_y,
            ddim_normalize: self.ddim_normalize,
            seed,
            keep_trace: false,
        }
    }

    fn record(&self, m: &mut Manifest, include_steps: bool) {
        if include_steps {
            m.opt("T", self.steps);
        }
        m.opt("sigma-y", self.sigma_y)
            .opt("alpha-bar-first", self.alpha_bar_first)
            .opt("alpha-bar-last", self.alpha_bar_last)
            .switch("ddim-normalize", self.ddim_normalize);
    }
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    #[arg(long)]
    pub y1: PathBuf,
    #[arg(long)]
    pub y2: PathBuf,
    #[arg(long)]
    pub a1: OpSpec,
    #[arg(long)]
    pub a2: OpSpec,
    /// `oracle`, `oracle:w1=<w>` or `tiny:<params.bin>`.
    #[arg(long, default_value = "oracle")]
    pub denoiser: DenoiserChoice,
}

impl SourceArgs {
    fn record(&self, m: &mut Manifest) {
        m.opt("y1", self.y1.display())
            .opt("y2", self.y2.display())
            .opt("a1", &self.a1)
            .opt("a2", &self.a2)
            .opt("denoiser", &self.denoiser);
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub sources: SourceArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value = "fused.pgm")]
    pub out: PathBuf,
    #[arg(long, default_value = "255", value_parser = parse_maxval)]
    pub maxval: u32,
    /// Directory for per-step snapshots of the corrected state and weight map.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Number of procedurally generated training pairs.
    #[arg(long, default_value_t = 64)]
    pub pairs: usize,
    /// Clean image size.
    #[arg(long, default_value = "32")]
    pub size: GridSize,
    #[arg(long, default_value = "id")]
    pub a1: OpSpec,
    #[arg(long, default_value = "blur+down:s=2")]
    pub a2: OpSpec,
    /// Noise added to the simulated observations.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = TaskArg::IrVis)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub phi: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value = "params.bin")]
    pub params: PathBuf,
    #[arg(long, default_value = "loss.csv")]
    pub loss_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub src1: PathBuf,
    #[arg(long)]
    pub src2: PathBuf,
    /// One or more fused images.
    #[arg(long, required = true, num_args = 1..)]
    pub fused: Vec<PathBuf>,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub a1: OpSpec,
    #[arg(long)]
    pub a2: OpSpec,
    /// Clean grid size used for the dense check.
    #[arg(long, default_value = "4x4")]
    pub size: GridSize,
    /// Constant fusion weight; a seeded random map when omitted.
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value = "verify.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub sources: SourceArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Clean reference for the first source; the pseudoinverse restoration when omitted.
    #[arg(long)]
    pub ref1: Option<PathBuf>,
    #[arg(long)]
    pub ref2: Option<PathBuf>,
    /// Largest step count of the sweep.
    #[arg(long, default_value_t = 5)]
    pub max_t: usize,
    /// Timed repetitions per step count; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value = "ablate_t.csv")]
    pub out: PathBuf,
}

struct Context {
    seed: u64,
    out_dir: PathBuf,
}

impl Context {
    fn output(&self, p: &Path) -> PathBuf {
        self.out_dir.join(p)
    }

    fn manifest(&self, sub: &str) -> Manifest {
        Manifest::new(sub)
            .global("seed", self.seed)
            .global("out-dir", self.out_dir.display())
    }

    fn write(&self, path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let full = self.output(path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&full, contents).map_err(io_err(&full))
    }

    fn save_pgm(&self, img: &ImagePlane, path: &Path, maxval: u32) -> CliResult<()> {
        let full = self.output(path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(save_pgm(img, &full, maxval)?)
    }

    fn finish(&self, m: &Manifest) -> CliResult<()> {
        m.write(&self.out_dir).map_err(io_err(&self.out_dir))
    }
}

/// Observations, operators and clean grid shared by `fuse` and `ablate-t`.
struct Problem {
    y1: ImagePlane,
    y2: ImagePlane,
    a1: LinearDegradation,
    a2: LinearDegradation,
}

impl Problem {
    fn load(s: &SourceArgs) -> CliResult<Self> {
        let y1 = load_pgm(&s.y1)?;
        let y2 = load_pgm(&s.y2)?;
        let d1 = s.a1.in_dims_for(y1.dims());
        let d2 = s.a2.in_dims_for(y2.dims());
        if d1 != d2 {
            return Err(CliError::Usage(format!(
                "observations imply different clean grids: {d1} from --y1/--a1, {d2} from --y2/--a2"
            )));
        }
        Ok(Self {
            a1: s.a1.build(d1)?,
            a2: s.a2.build(d2)?,
            y1,
            y2,
        })
    }

    fn denoiser(&self, choice: &DenoiserChoice, normalize: bool) -> CliResult<Box<dyn Denoiser>> {
        Ok(match choice {
            DenoiserChoice::Oracle { w1 } => {
                let init = initial_state(&self.y1, &self.y2, &self.a1, &self.a2)?;
                let xf = init.x1.zip_map(&init.x2, |a, b| w1 * a + (1.0 - w1) * b);
                let clean = JointState::new(init.x1, init.x2, xf)?;
                Box::new(OracleDenoiser::new(clean, *w1)?.normalized(normalize))
            }
            DenoiserChoice::Tiny(path) => Box::new(TinyDenoiser::new(load_params(path)?)),
        })
    }
}

fn cmd_degrade(ctx: &Context, a: &DegradeArgs) -> CliResult<()> {
    if !(a.sigma >= 0.0) || !a.sigma.is_finite() {
        return Err(CliError::Usage(format!(
            "--sigma must be non-negative, got {}",
            a.sigma
        )));
    }
    let input = load_pgm(&a.input)?;
    let op = a.op.build(input.dims())?;
    let mut rng = SeededRng::new(ctx.seed);
    let out = gaussian_noise(&op.apply(&input)?, a.sigma, &mut rng);
    ctx.save_pgm(&out, &a.out, a.maxval)?;

    let mut m = ctx.manifest("degrade");
    m.opt("input", a.input.display())
        .opt("op", &a.op)
        .opt("sigma", a.sigma)
        .opt("out", a.out.display())
        .opt("maxval", a.maxval);
    ctx.finish(&m)
}

fn cmd_fuse(ctx: &Context, a: &FuseArgs) -> CliResult<()> {
    let problem = Problem::load(&a.sources)?;
    let mut cfg = a.sampler.config(ctx.seed);
    cfg.keep_trace = a.trace.is_some();
    let den = problem.denoiser(&a.sources.denoiser, cfg.ddim_normalize)?;
    let out = run_fusion(
        &problem.y1,
        &problem.y2,
        &problem.a1,
        &problem.a2,
        den.as_ref(),
        &cfg,
    )?;
    if !out.fused.is_finite() {
        return Err(CliError::Numerical(CoreError::NonFiniteState { t: 0 }));
    }
    ctx.save_pgm(&out.fused, &a.out, a.maxval)?;
    if let Some(dir) = &a.trace {
        for rec in &out.trace {
            let t = rec.t;
            for (name, plane) in [
                ("x1", &rec.corrected.x1),
                ("x2", &rec.corrected.x2),
                ("xf", &rec.corrected.xf),
                ("w1", &rec.w1),
            ] {
                ctx.save_pgm(plane, &dir.join(format!("step{t}_{name}.pgm")), 65535)?;
            }
        }
    }

    let mut m = ctx.manifest("fuse");
    a.sources.record(&mut m);
    a.sampler.record(&mut m, true);
    m.opt("out", a.out.display()).opt("maxval", a.maxval);
    if let Some(dir) = &a.trace {
        m.opt("trace", dir.display());
    }
    ctx.finish(&m)
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> CliResult<()> {
    let dims = a.size.0;
    let a1 = a.a1.build(dims)?;
    let a2 = a.a2.build(dims)?;
    if a.pairs == 0 || a.batch == 0 {
        return Err(CliError::Usage(
            "--pairs and --batch must be positive".into(),
        ));
    }
    let set = TrainingSet::synthetic(a.pairs, a1, a2, a.noise, ctx.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        seed: ctx.seed.wrapping_add(1),
        hyper: LossHyper {
            lambda: a.lambda,
            gamma: a.gamma,
            phi: a.phi,
            task: a.task.task(),
        },
        fusion: a.sampler.config(ctx.seed),
    };
    let out = train(&set, &cfg)?;
    let params_path = ctx.output(&a.params);
    if let Some(parent) = params_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_params(&out.params, &params_path)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        writeln!(csv, "{i},{l:.10e}").unwrap();
    }
    ctx.write(&a.loss_csv, csv)?;

    let mut m = ctx.manifest("train");
    m.opt("pairs", a.pairs)
        .opt("size", a.size)
        .opt("a1", &a.a1)
        .opt("a2", &a.a2)
        .opt("noise", a.noise)
        .opt("epochs", a.epochs)
        .opt("batch", a.batch)
        .opt("lr", a.lr)
        .opt("task", a.task.name())
        .opt("lambda", a.lambda)
        .opt("gamma", a.gamma)
        .opt("phi", a.phi);
    a.sampler.record(&mut m, true);
    m.opt("params", a.params.display())
        .opt("loss-csv", a.loss_csv.display());
    ctx.finish(&m)
}

fn metrics_row(path: &str, r: &MetricReport) -> String {
    format!(
        "{path},{:.6},{:.6},{:.6},{:.6}\n",
        r.q_mi, r.q_abf, r.ssim_src1, r.ssim_src2
    )
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> CliResult<()> {
    let s1 = load_pgm(&a.src1)?;
    let s2 = load_pgm(&a.src2)?;
    let mut csv = String::from("path,q_mi,q_abf,ssim_src1,ssim_src2\n");
    for f in &a.fused {
        let fused = load_pgm(f)?;
        let report = MetricReport::evaluate(&s1, &s2, &fused)?;
        csv.push_str(&metrics_row(&f.display().to_string(), &report));
    }
    print!("{csv}");
    ctx.write(&a.out, &csv)?;

    let mut m = ctx.manifest("eval");
    m.opt("src1", a.src1.display())
        .opt("src2", a.src2.display());
    for f in &a.fused {
        m.opt("fused", f.display());
    }
    m.opt("out", a.out.display());
    ctx.finish(&m)
}

fn cmd_verify(ctx: &Context, a: &VerifyArgs) -> CliResult<()> {
    let dims = a.size.0;
    let a1 = a.a1.build(dims)?;
    let a2 = a.a2.build(dims)?;
    let w1 = match a.w1 {
        Some(w) if (0.0..=1.0).contains(&w) => ImagePlane::filled(dims, w),
        Some(w) => return Err(CliError::Usage(format!("--w1 must lie in [0, 1], got {w}"))),
        None => {
            let mut rng = SeededRng::new(ctx.seed);
            ImagePlane::from_fn(dims, |_, _| rng.uniform())
        }
    };
    let joint = JointOperator::new(a1, a2, &w1)?;
    let report = check_mp_conditions(&joint, a.tol)?;
    let text = format!(
        "joint operator for a1={} a2={} on {}\n{report}\n",
        a.a1, a.a2, dims
    );
    print!("{text}");
    ctx.write(&a.out, &text)?;

    let mut m = ctx.manifest("verify");
    m.opt("a1", &a.a1).opt("a2", &a.a2).opt("size", a.size);
    if let Some(w) = a.w1 {
        m.opt("w1", w);
    }
    m.opt("tol", a.tol).opt("out", a.out.display());
    ctx.finish(&m)?;

    if !(report.passes(0) && report.passes(1)) {
        return Err(CliError::Verification(
            "conditions (1) and (2) must hold for a generalized inverse".into(),
        ));
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_ablate(ctx: &Context, a: &AblateArgs) -> CliResult<()> {
    if a.max_t == 0 || a.repeats == 0 {
        return Err(CliError::Usage(
            "--max-t and --repeats must be positive".into(),
        ));
    }
    let problem = Problem::load(&a.sources)?;
    let init = initial_state(&problem.y1, &problem.y2, &problem.a1, &problem.a2)?;
    let ref1 = match &a.ref1 {
        Some(p) => load_pgm(p)?,
        None => init.x1.clamped(0.0, 1.0),
    };
    let ref2 = match &a.ref2 {
        Some(p) => load_pgm(p)?,
        None => init.x2.clamped(0.0, 1.0),
    };
    let den = problem.denoiser(&a.sources.denoiser, a.sampler.ddim_normalize)?;

    let mut csv = String::from("T,q_mi,q_abf,ssim,wall_ms\n");
    for steps in 1..=a.max_t {
        let cfg = FusionConfig {
            steps,
            ..a.sampler.config(ctx.seed)
        };
        let mut times = Vec::with_capacity(a.repeats);
        let mut fused = None;
        for _ in 0..a.repeats {
            let start = Instant::now();
            let out = run_fusion(
                &problem.y1,
                &problem.y2,
                &problem.a1,
                &problem.a2,
                den.as_ref(),
                &cfg,
            )?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            fused = Some(out.fused);
        }
        let fused = fused.expect("at least one repeat");
        let r = MetricReport::evaluate(&ref1, &ref2, &fused)?;
        writeln!(
            csv,
            "{steps},{:.6},{:.6},{:.6},{:.3}",
            r.q_mi,
            r.q_abf,
            r.ssim(),
            median(times)
        )
        .unwrap();
    }
    print!("{csv}");
    ctx.write(&a.out, &csv)?;

    let mut m = ctx.manifest("ablate-t");
    a.sources.record(&mut m);
    a.sampler.record(&mut m, false);
    if let Some(p) = &a.ref1 {
        m.opt("ref1", p.display());
    }
    if let Some(p) = &a.ref2 {
        m.opt("ref2", p.display());
    }
    m.opt("max-t", a.max_t)
        .opt("repeats", a.repeats)
        .opt("out", a.out.display());
    ctx.finish(&m)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    fs::create_dir_all(&cli.out_dir).map_err(io_err(&cli.out_dir))?;
    let ctx = Context {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
    };
    match &cli.command {
        Command::Degrade(a) => cmd_degrade(&ctx, a),
        Command::Fuse(a) => cmd_fuse(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::AblateT(a) => cmd_ablate(&ctx, a),
    }
}

/// Parse `args`, run, and map the outcome to a process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
