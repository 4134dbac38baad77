use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use gsinpaint_core::losses::ImageLossVariant;
use gsinpaint_core::pipeline::{
    read_json, EvalStage, FitStage, InpainterConfig, MasksStage, PipelineStage, RefineStage, RemoveStage,
    RenderStage, RunConfig, SynthStage,
};
use gsinpaint_core::stages::{FitConfig, RefineConfig};
use gsinpaint_core::synth::SceneSpec;

const THREADS_ENV: &str = "GSINPAINT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "gsinpaint", version, about = "Remove an object from a 3D Gaussian scene and inpaint the hole")]
struct Cli {
    /// Worker threads (default: GSINPAINT_THREADS, else one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Fit Gaussians to a dataset.
    Fit(FitArgs),
    /// Infer depth-guided inpainting masks.
    InferMasks(MasksArgs),
    /// Remove the object, inpaint the reference view, seed replacements.
    Remove(RemoveArgs),
    /// Optimize the replacement Gaussians.
    Refine(RefineArgs),
    /// Render a scene from a dataset's cameras.
    Render(RenderArgs),
    /// Score a scene against object-removed ground truth.
    Eval(EvalArgs),
    /// Run fit, infer-masks, remove, refine, render and eval.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON run config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossVariant {
    Literal,
    Weighted,
}

impl From<LossVariant> for ImageLossVariant {
    fn from(v: LossVariant) -> Self {
        match v {
            LossVariant::Literal => ImageLossVariant::Literal,
            LossVariant::Weighted => ImageLossVariant::Weighted,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InpainterName {
    Constant,
    Diffuse,
    Oracle,
    External,
}

impl InpainterName {
    fn as_str(self) -> &'static str {
        match self {
            InpainterName::Constant => "constant",
            InpainterName::Diffuse => "diffuse",
            InpainterName::Oracle => "oracle",
            InpainterName::External => "external",
        }
    }
}

#[derive(Args, Debug)]
struct InpainterArgs {
    /// Inpainting backend.
    #[arg(long, value_enum)]
    inpainter: Option<InpainterName>,
    /// Exchange directory of the external backend.
    #[arg(long)]
    exchange_dir: Option<PathBuf>,
    /// Seconds to wait for the external backend.
    #[arg(long)]
    inpainter_timeout: Option<f64>,
}

impl InpainterArgs {
    fn apply(&self, c: &mut InpainterConfig) {
        set(&mut c.name, self.inpainter.map(|n| n.as_str().to_string()));
        if self.exchange_dir.is_some() {
            c.exchange_dir = self.exchange_dir.clone();
        }
        set(&mut c.timeout_secs, self.inpainter_timeout);
    }
}

#[derive(Args, Debug)]
struct FitOptions {
    /// Fit iterations.
    #[arg(long)]
    fit_iterations: Option<usize>,
    /// Weight λ of the image loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// How λ combines the L1 and SSIM terms.
    #[arg(long, value_enum)]
    loss_eq1_variant: Option<LossVariant>,
    /// Weight of the identity cross-entropy.
    #[arg(long)]
    identity_weight: Option<f64>,
}

impl FitOptions {
    fn apply(&self, c: &mut FitConfig) {
        set(&mut c.iterations, self.fit_iterations);
        set(&mut c.lambda, self.lambda);
        set(&mut c.variant, self.loss_eq1_variant.map(Into::into));
        set(&mut c.identity_weight, self.identity_weight);
    }
}

#[derive(Args, Debug)]
struct RefineOptions {
    /// Refinement iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Re-inpaint the reference view every this many iterations.
    #[arg(long)]
    reinpaint_period: Option<usize>,
    /// Optimize every Gaussian, not only the replacements.
    #[arg(long)]
    unfreeze_all: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Metrics row period.
    #[arg(long)]
    log_every: Option<usize>,
    /// Seed of the perceptual feature network.
    #[arg(long)]
    perceptual_seed: Option<u64>,
}

impl RefineOptions {
    fn apply(&self, c: &mut RefineConfig) {
        set(&mut c.iterations, self.iterations);
        set(&mut c.reinpaint_period, self.reinpaint_period);
        if self.unfreeze_all {
            c.unfreeze_all = true;
        }
        set(&mut c.checkpoint_every, self.checkpoint_every);
        set(&mut c.log_every, self.log_every);
        set(&mut c.perceptual_seed, self.perceptual_seed);
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Scene spec JSON (default: the built-in ring scene).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Starting scene (default: random).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Size of the random starting scene.
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Args, Debug)]
struct MasksArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Fitted scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    opening_radius: Option<usize>,
    /// Depth maps to use instead of rendering the scene.
    #[arg(long)]
    depth_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RemoveArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory of infer-masks.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Object label (default: inferred from the masks).
    #[arg(long)]
    label: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    inpainter: InpainterArgs,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory of remove.
    #[arg(long)]
    removal: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    inpainter: InpainterArgs,
    #[command(flatten)]
    refine: RefineOptions,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset whose cameras are rendered.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render only this view.
    #[arg(long)]
    view: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Starting scene for the fit (default: random).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    opening_radius: Option<usize>,
    #[arg(long)]
    depth_dir: Option<PathBuf>,
    #[arg(long)]
    label: Option<u8>,
    /// Dataset to render and score (default: heldout/ of the dataset).
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
    #[command(flatten)]
    inpainter: InpainterArgs,
    #[command(flatten)]
    refine: RefineOptions,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

/// Base configuration: the `--config` file if given (a run config of the
/// same command or a bare stage object), else defaults.
fn base<T: DeserializeOwned + Default>(config: &ConfigArg, command: &str) -> Result<T, String> {
    let Some(path) = &config.config else {
        return Ok(T::default());
    };
    let mut value: serde_json::Value = read_json(path).map_err(|e| e.to_string())?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(found) = obj.remove("command") {
            if found.as_str() != Some(command) {
                return Err(format!("{}: config is for command {found}, not {command}", path.display()));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_spec(path: &Path) -> Result<SceneSpec, String> {
    read_json(path).map_err(|e| e.to_string())
}

fn build(command: Command) -> Result<RunConfig, String> {
    Ok(match command {
        Command::Synth(a) => {
            let mut c: SynthStage = base(&a.config, "synth")?;
            if let Some(p) = &a.spec {
                c.spec = load_spec(p)?;
            }
            set(&mut c.spec.seed, a.seed);
            set(&mut c.out, a.out);
            RunConfig::Synth(c)
        }
        Command::Fit(a) => {
            let mut c: FitStage = base(&a.config, "fit")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.out, a.out);
            set_opt(&mut c.init, &a.init);
            set(&mut c.gaussians, a.gaussians);
            set(&mut c.seed, a.seed);
            a.fit.apply(&mut c.fit);
            RunConfig::Fit(c)
        }
        Command::InferMasks(a) => {
            let mut c: MasksStage = base(&a.config, "infer-masks")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.scene, a.scene);
            set(&mut c.out, a.out);
            set(&mut c.opening_radius, a.opening_radius);
            set_opt(&mut c.depth_dir, &a.depth_dir);
            RunConfig::InferMasks(c)
        }
        Command::Remove(a) => {
            let mut c: RemoveStage = base(&a.config, "remove")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.scene, a.scene);
            set(&mut c.masks, a.masks);
            set(&mut c.out, a.out);
            set_opt(&mut c.label, &a.label);
            set(&mut c.seed, a.seed);
            a.inpainter.apply(&mut c.inpainter);
            RunConfig::Remove(c)
        }
        Command::Refine(a) => {
            let mut c: RefineStage = base(&a.config, "refine")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.removal, a.removal);
            set(&mut c.out, a.out);
            a.inpainter.apply(&mut c.inpainter);
            a.refine.apply(&mut c.refine);
            RunConfig::Refine(c)
        }
        Command::Render(a) => {
            let mut c: RenderStage = base(&a.config, "render")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.scene, a.scene);
            set(&mut c.out, a.out);
            set_opt(&mut c.view, &a.view);
            RunConfig::Render(c)
        }
        Command::Eval(a) => {
            let mut c: EvalStage = base(&a.config, "eval")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.scene, a.scene);
            set(&mut c.out, a.out);
            RunConfig::Eval(c)
        }
        Command::Pipeline(a) => {
            let mut c: PipelineStage = base(&a.config, "pipeline")?;
            set(&mut c.dataset, a.dataset);
            set(&mut c.out, a.out);
            set_opt(&mut c.init, &a.init);
            set(&mut c.gaussians, a.gaussians);
            set(&mut c.seed, a.seed);
            set(&mut c.opening_radius, a.opening_radius);
            set_opt(&mut c.depth_dir, &a.depth_dir);
            set_opt(&mut c.label, &a.label);
            set_opt(&mut c.eval_dataset, &a.eval_dataset);
            a.fit.apply(&mut c.fit);
            a.inpainter.apply(&mut c.inpainter);
            a.refine.apply(&mut c.refine);
            RunConfig::Pipeline(c)
        }
    })
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV}={v} is not a thread count")),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err("thread count must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let config = build(cli.command)?;
    config.run().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("GSINPAINT_LOG")
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
