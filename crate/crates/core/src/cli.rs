//! Command-line front end.
//!
//! Every command resolves its settings (config file, then flags), writes
//! them to `run_config.toml` in the output directory and only then starts
//! work. Passing that file back through `--config` reproduces the run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{decomposition_r2, score_embedding};
use crate::datasets::{generate, Dataset, GeneratorSpec, SystemName};
use crate::error::Error;
use crate::gradients::smoke::{run_gradcheck, small_kernel_case, smoke_cases};
use crate::gradients::{kernel_scale_sweep, render_sweep, GradMode};
use crate::training::{
    decompose, embed, evaluate, extrapolate, history_csv, horizon_mse, make_node_baseline, train, Checkpoint,
    IntervalKind, MaskPolicy, ModelKind, ModelSpec, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Parser)]
#[command(name = "nide", version, about = "Fit and analyse neural integro-differential equations")]
pub struct Cli {
    /// Worker threads for curve- and batch-level parallelism; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a versioned analytic system.
    Generate(GenerateArgs),
    /// Fit a NIDE or its parameter-matched NODE baseline to a dataset.
    Train(TrainArgs),
    /// Score a checkpoint's fits on a dataset.
    Eval(AnalysisArgs),
    /// Extrapolate each trajectory from a prefix and score by horizon.
    Extrapolate(ExtrapolateArgs),
    /// Split fitted dynamics into Markovian and memory terms.
    Decompose(AnalysisArgs),
    /// Embed observed states through the learned integrand.
    Embed(EmbedArgs),
    /// Compare unrolled, adjoint and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<SystemName>,
    #[arg(long)]
    pub curves: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Nide,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradChoice {
    Unrolled,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskChoice {
    None,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntervalChoice {
    Volterra,
    Fredholm,
}

/// Comma-separated hidden-layer widths; the empty string is a linear map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

fn parse_widths(s: &str) -> Result<Widths, String> {
    if s.trim().is_empty() {
        return Ok(Widths(Vec::new()));
    }
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("`{w}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Widths)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    #[arg(long, value_enum)]
    pub grad: Option<GradChoice>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub lr_period: Option<usize>,
    /// Points kept per trajectory; 0 keeps all.
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskChoice>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Solver nodes over the unit normalized window.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Comma-separated hidden widths; empty for a linear map.
    #[arg(long, value_parser = parse_widths)]
    pub f_hidden: Option<Widths>,
    #[arg(long, value_parser = parse_widths)]
    pub kernel_hidden: Option<Widths>,
    #[arg(long, value_parser = parse_widths)]
    pub integrand_hidden: Option<Widths>,
    /// Drop the local term from the NIDE.
    #[arg(long)]
    pub no_local_term: bool,
    #[arg(long, value_enum)]
    pub interval: Option<IntervalChoice>,
}

/// Inputs shared by the commands that analyse a fitted checkpoint.
#[derive(Debug, Args)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    #[command(flatten)]
    pub common: AnalysisArgs,
    /// Leading points given to the model; the rest are scored by horizon.
    #[arg(long)]
    pub prefix: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: AnalysisArgs,
    /// Neighbours for the time-regression score (default 3).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Check(_) => EXIT_CHECK_FAILED,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Resolved settings of one run, as written to `run_config.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Extrapolation prefix length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<usize>,
    /// Embedding neighbour count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    fn load_opt(path: &Option<PathBuf>) -> Result<Self, Failure> {
        path.as_deref().map_or(Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(RUN_CONFIG_FILE);
        let text = toml::to_string(self).map_err(|e| Failure::Data(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    let file = RunConfig::load_opt(&args.config)?;
    let mut spec = match (file.generate, args.system) {
        (Some(mut s), system) => {
            if let Some(system) = system {
                s.system = system;
            }
            s
        }
        (None, Some(system)) => GeneratorSpec::new(system, 1, 0),
        (None, None) => return Err(Failure::Usage("generate needs --system or a [generate] config section".into())),
    };
    let seed = args.seed.or(file.seed);
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(c) = args.curves {
        spec.n_curves = c;
    }
    if let Some(p) = args.points {
        spec.points_per_curve = p;
    }
    if let Some(g) = args.gamma {
        spec.gamma = g;
    }
    if args.t0.is_some() || args.t1.is_some() {
        let (d0, d1) = spec.window();
        spec.window = Some((args.t0.unwrap_or(d0), args.t1.unwrap_or(d1)));
    }
    let out = args
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from(format!("data_{}_{}", spec.system, spec.seed)));
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    RunConfig {
        command: Some("generate".into()),
        seed: Some(spec.seed),
        out: Some(out.clone()),
        generate: Some(spec.clone()),
        ..RunConfig::default()
    }
    .save(&out)?;
    let data = generate(&spec)?;
    let manifest = data.write(&out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn resolve_train(args: &TrainArgs, file: RunConfig, dim: usize) -> Result<(ModelSpec, TrainConfig, ModelChoice), Failure> {
    let mut config = file.train.unwrap_or_default();
    if let Some(s) = args.seed.or(file.seed) {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(v) = args.lr_max {
        config.schedule.max_lr = v;
    }
    if let Some(v) = args.lr_min {
        config.schedule.min_lr = v;
    }
    if let Some(v) = args.lr_period {
        config.schedule.period = v;
    }
    if let Some(d) = args.downsample {
        config.downsample_to = (d > 0).then_some(d);
    }
    match args.grad {
        Some(GradChoice::Unrolled) => config.grad_mode = GradMode::Unrolled,
        Some(GradChoice::Adjoint) => config.grad_mode = GradMode::Adjoint,
        None => {}
    }
    let fraction = args.mask_fraction.unwrap_or(0.5);
    match args.mask {
        Some(MaskChoice::None) => config.mask = MaskPolicy::None,
        Some(MaskChoice::Tail) => config.mask = MaskPolicy::TailFraction { max_fraction: fraction },
        None => {
            if let (Some(f), MaskPolicy::TailFraction { .. }) = (args.mask_fraction, config.mask) {
                config.mask = MaskPolicy::TailFraction { max_fraction: f };
            }
        }
    }
    if let Some(g) = args.grid {
        config.solver.grid_size = g;
    }
    if let Some(m) = args.max_iter {
        config.solver.max_iter = m;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let mut model = file
        .model
        .unwrap_or_else(|| ModelSpec::nide(dim, dim, &[16, 16], &[16, 16], &[16]));
    if model.state_dim != dim {
        return Err(Failure::Data(format!(
            "model state dimension {} does not match the dataset's {dim}",
            model.state_dim
        )));
    }
    // Architecture flags shape the NIDE template; a NODE is derived from it.
    if model.kind == ModelKind::Nide {
        if let Some(m) = args.latent_dim {
            model.latent_dim = m;
        }
        if let Some(h) = &args.f_hidden {
            model.f_hidden = Some(h.0.clone());
        }
        if args.no_local_term {
            model.f_hidden = None;
        }
        if let Some(h) = &args.kernel_hidden {
            model.kernel_hidden = h.0.clone();
        }
        if let Some(h) = &args.integrand_hidden {
            model.integrand_hidden = h.0.clone();
        }
    }
    match args.interval {
        Some(IntervalChoice::Volterra) => model.interval = IntervalKind::Volterra,
        Some(IntervalChoice::Fredholm) => model.interval = IntervalKind::Fredholm,
        None => {}
    }
    let choice = args.model.unwrap_or(match model.kind {
        ModelKind::Nide => ModelChoice::Nide,
        ModelKind::Node => ModelChoice::Node,
    });
    if choice == ModelChoice::Node && model.kind == ModelKind::Nide {
        let baseline = make_node_baseline(&model)?;
        if let Some(w) = &baseline.warning {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "NODE baseline: {} parameters for a {}-parameter NIDE",
            baseline.count, baseline.target
        );
        model = baseline.spec;
    } else if choice == ModelChoice::Nide && model.kind == ModelKind::Node {
        return Err(Failure::Usage("--model nide given with a NODE [model] section".into()));
    }
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((model, config, choice))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let file = RunConfig::load_opt(&args.config)?;
    let data_path = args
        .data
        .clone()
        .or(file.data.clone())
        .ok_or_else(|| Failure::Usage("train needs --data".into()))?;
    let out = args
        .out
        .clone()
        .or(file.out.clone())
        .ok_or_else(|| Failure::Usage("train needs --out".into()))?;
    let data = Dataset::load(&data_path)?;
    let (model, config, _) = resolve_train(&args, file, data.dim())?;
    RunConfig {
        command: Some("train".into()),
        seed: Some(config.seed),
        data: Some(data_path),
        out: Some(out.clone()),
        model: Some(model.clone()),
        train: Some(config.clone()),
        ..RunConfig::default()
    }
    .save(&out)?;
    let outcome = train(&data.trajectories, &model, &config)?;
    let ckpt_dir = out.join("checkpoint");
    outcome.checkpoint.save(&ckpt_dir)?;
    write(&out.join("history.csv"), history_csv(&outcome.checkpoint.history))?;
    if let Some(d) = outcome.divergence {
        return Err(Failure::Diverged(format!(
            "training diverged at epoch {}: {}; last good checkpoint: {}",
            d.epoch,
            d.reason,
            ckpt_dir.display()
        )));
    }
    if let Some(mse) = outcome.checkpoint.final_train_mse() {
        println!("final train_mse {mse:.6e}");
    }
    println!("{}", ckpt_dir.display());
    Ok(())
}

/// Resolved inputs of an analysis command, recorded before any work.
struct Analysis {
    ckpt: Checkpoint,
    data: Dataset,
    out: PathBuf,
    file: RunConfig,
}

fn start_analysis(command: &str, args: &AnalysisArgs, extra: impl FnOnce(&mut RunConfig)) -> Result<Analysis, Failure> {
    let mut file = RunConfig::load_opt(&args.config)?;
    let need = |flag: Option<PathBuf>, stored: Option<PathBuf>, name: &str| {
        flag.or(stored)
            .ok_or_else(|| Failure::Usage(format!("{command} needs --{name}")))
    };
    let checkpoint = need(args.checkpoint.clone(), file.checkpoint.take(), "checkpoint")?;
    let data_path = need(args.data.clone(), file.data.take(), "data")?;
    let out = need(args.out.clone(), file.out.take(), "out")?;
    let mut resolved = RunConfig {
        command: Some(command.into()),
        checkpoint: Some(checkpoint.clone()),
        data: Some(data_path.clone()),
        out: Some(out.clone()),
        prefix: file.prefix,
        k: file.k,
        ..RunConfig::default()
    };
    extra(&mut resolved);
    resolved.save(&out)?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let data = Dataset::load(&data_path)?;
    if data.dim() != ckpt.model.state_dim {
        return Err(Failure::Data(format!(
            "dataset dimension {} does not match checkpoint dimension {}",
            data.dim(),
            ckpt.model.state_dim
        )));
    }
    Ok(Analysis {
        ckpt,
        data,
        out,
        file: resolved,
    })
}

fn cmd_eval(args: AnalysisArgs) -> CmdResult {
    let Analysis { ckpt, data, out, .. } = start_analysis("eval", &args, |_| {})?;
    let metrics = evaluate(&ckpt, &data.trajectories, None)?;
    let mut text = metrics.render();
    if let Some(m) = ckpt.final_train_mse() {
        text.push_str(&format!("final_train_mse {m:.6e}\n"));
    }
    write(&out.join("metrics.txt"), &text)?;
    write(&out.join("metrics.csv"), metrics.to_csv())?;
    println!("mse {:.6e}", metrics.mse);
    match metrics.r2 {
        Some(r) => println!("r2 {r:.6}"),
        None => println!("r2 undefined"),
    }
    if let Some(m) = ckpt.final_train_mse() {
        println!("final_train_mse {m:.6e}");
    }
    Ok(())
}

fn cmd_extrapolate(args: ExtrapolateArgs) -> CmdResult {
    let flag = args.prefix;
    let a = start_analysis("extrapolate", &args.common, |r| r.prefix = flag.or(r.prefix))?;
    let prefix = a
        .file
        .prefix
        .ok_or_else(|| Failure::Usage("extrapolate needs --prefix".into()))?;
    if prefix < 1 {
        return Err(Failure::Usage("--prefix must keep the initial condition".into()));
    }
    for (k, traj) in a.data.trajectories.iter().enumerate() {
        let cut = prefix.min(traj.len());
        let ex = extrapolate(&a.ckpt, &traj.prefix(cut)?, &traj.times()[cut..])?;
        ex.trajectory.save_csv(&a.out.join(format!("extrapolated_{k}.csv")))?;
    }
    let report = horizon_mse(&a.ckpt, &a.data.trajectories, prefix)?;
    write(&a.out.join("horizon_mse.csv"), report.to_csv())?;
    print!("{}", report.to_csv());
    if !report.converged {
        eprintln!("warning: at least one extrapolation did not converge");
    }
    Ok(())
}

fn cmd_decompose(args: AnalysisArgs) -> CmdResult {
    let Analysis { ckpt, data, out, .. } = start_analysis("decompose", &args, |_| {})?;
    let mut fitted = Vec::with_capacity(data.len());
    for (k, traj) in data.trajectories.iter().enumerate() {
        let d = decompose(&ckpt, traj)?;
        write(&out.join(format!("decomp_{k}_rates.csv")), d.rates_csv())?;
        write(&out.join(format!("decomp_{k}_paths.csv")), d.paths_csv())?;
        fitted.push(d);
    }
    let worst = fitted.iter().map(|d| d.rate_sum_error()).fold(0.0, f64::max);
    let mut summary = format!("rate_sum_error {worst:.3e}\n");
    if data.ground_truth.len() == fitted.len() {
        summary.push_str(&decomposition_r2(&fitted, &data.ground_truth)?.render());
    }
    write(&out.join("decomposition.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> CmdResult {
    let flag = args.k;
    let a = start_analysis("embed", &args.common, |r| r.k = Some(flag.or(r.k).unwrap_or(3)))?;
    let k = a.file.k.unwrap_or(3);
    let mut embeddings = Vec::with_capacity(a.data.len());
    for (i, traj) in a.data.trajectories.iter().enumerate() {
        let e = embed(&a.ckpt, traj)?;
        write(&a.out.join(format!("embed_{i}.csv")), e.to_csv())?;
        embeddings.push(e);
    }
    let states: Vec<_> = a.data.trajectories.iter().map(|t| t.states()).collect();
    let scores = score_embedding(&embeddings, &states, k)?;
    write(&a.out.join("embedding.txt"), scores.render())?;
    print!("{}", scores.render());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    if let Some(out) = &args.out {
        RunConfig {
            command: Some("gradcheck".into()),
            out: Some(out.clone()),
            ..RunConfig::default()
        }
        .save(out)?;
    }
    let cases = smoke_cases()?;
    let small = small_kernel_case()?;
    let report = run_gradcheck(&cases, Some(&small))?;
    let table = report.render();
    print!("{table}");
    if let Some(out) = &args.out {
        write(&out.join("gradcheck.txt"), &table)?;
        let volterra = cases
            .iter()
            .find(|c| c.has_kernel())
            .ok_or_else(|| Failure::Data("no smoke case with a kernel".into()))?;
        let sweep = kernel_scale_sweep(&volterra.system, &volterra.problem, &volterra.config, &[0.0, 0.01, 0.1, 0.5, 1.0, 2.0])?;
        write(&out.join("kernel_sweep.csv"), render_sweep(&sweep))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let worst = report
            .worst()
            .map(|r| {
                format!(
                    "{} {} vs {}: rel_err {:.3e}, cosine {:.6}",
                    r.system, r.mode, r.reference, r.comparison.rel_err, r.comparison.cosine
                )
            })
            .unwrap_or_default();
        Err(Failure::Check(format!("gradient check failed; worst: {worst}")))
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Extrapolate(a) => cmd_extrapolate(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
