//! File-based stages. Each stage reads its inputs from disk and writes its
//! outputs, together with the `run_config.json` that produced them, into its
//! output directory. [`run_pipeline`] chains the stages through the same
//! files, so it produces exactly what running the stages one by one does.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inpaint::{Backend, InpaintResult};
use crate::masks::{refine_all, DEFAULT_OPENING_RADIUS};
use crate::render::{render_with, RenderOptions};
use crate::scene::io::{
    load_gaussians, quantize_rgb, read_pfm_depth, read_png_mask, save_gaussians, write_pfm_depth, write_ply,
    write_png_mask, write_png_rgb,
};
use crate::scene::{per_view_path, BinaryMask, Dataset, DepthMap, Gaussian};
use crate::stages::{
    fit, infer_object_label, random_init, refine, split_by_label, FitConfig, RefineConfig, RefineEvent,
    RemovalResult, METRICS_HEADER,
};
use crate::synth::{eval_metrics, generate, psnr_where, SceneSpec};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

pub const SPEC_FILE: &str = "spec.json";
pub const SCENE_GT_FILE: &str = "scene_gt.gsip";
pub const SCENE_REMOVED_GT_FILE: &str = "scene_removed_gt.gsip";
pub const HELDOUT_DIR: &str = "heldout";

pub const FITTED_FILE: &str = "fitted.gsip";
pub const FIT_LOSSES_FILE: &str = "fit_losses.csv";
pub const FIT_LOSSES_HEADER: &str = "iteration,l1,ssim,depth,cross,id,total";

pub const REFINED_MASKS_DIR: &str = "masks_refined";
pub const UNOPENED_MASKS_DIR: &str = "masks_unopened";
pub const BACKGROUNDS_DIR: &str = "bg";
pub const DEPTH_DIR: &str = "depth";
pub const MASKS_REPORT_FILE: &str = "masks.json";

pub const REMOVED_FILE: &str = "removed.gsip";
pub const INITIALIZED_FILE: &str = "initialized.gsip";
pub const P1_FILE: &str = "p1.ply";
pub const SUPERVISION_DIR: &str = "supervision";
pub const INPAINTED_RGB_FILE: &str = "inpainted_rgb.png";
pub const INPAINTED_DEPTH_FILE: &str = "inpainted_depth.pfm";
pub const REMOVAL_REPORT_FILE: &str = "removal.json";

pub const METRICS_FILE: &str = "metrics.csv";
pub const REFINED_FILE: &str = "refined.gsip";

pub const RENDER_IMAGES_DIR: &str = "images";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

/// Inpainting backend selection as stored in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpainterConfig {
    /// One of `constant`, `diffuse`, `oracle`, `external`.
    pub name: String,
    /// Exchange directory of the `external` backend.
    pub exchange_dir: Option<PathBuf>,
    pub timeout_secs: f64,
}

impl Default for InpainterConfig {
    fn default() -> Self {
        InpainterConfig {
            name: "diffuse".into(),
            exchange_dir: None,
            timeout_secs: 600.0,
        }
    }
}

impl InpainterConfig {
    pub fn named(name: &str) -> Self {
        InpainterConfig {
            name: name.into(),
            ..InpainterConfig::default()
        }
    }

    pub fn backend(&self) -> Result<Backend> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Validation(format!(
                "inpainter timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Backend::from_name(
            &self.name,
            self.exchange_dir.as_deref(),
            Duration::from_secs_f64(self.timeout_secs),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStage {
    pub spec: SceneSpec,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitStage {
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Starting scene; random when absent.
    pub init: Option<PathBuf>,
    /// Size of the random starting scene.
    pub gaussians: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for FitStage {
    fn default() -> Self {
        FitStage {
            dataset: PathBuf::new(),
            out: PathBuf::new(),
            init: None,
            gaussians: 5000,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasksStage {
    pub dataset: PathBuf,
    /// Fitted scene whose depth guides the masks.
    pub scene: PathBuf,
    pub out: PathBuf,
    pub opening_radius: usize,
    /// Per-view depth maps (`view_%03d.pfm`) to use instead of rendering.
    pub depth_dir: Option<PathBuf>,
}

impl Default for MasksStage {
    fn default() -> Self {
        MasksStage {
            dataset: PathBuf::new(),
            scene: PathBuf::new(),
            out: PathBuf::new(),
            opening_radius: DEFAULT_OPENING_RADIUS,
            depth_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoveStage {
    pub dataset: PathBuf,
    pub scene: PathBuf,
    /// Output directory of the mask stage.
    pub masks: PathBuf,
    pub out: PathBuf,
    /// Object label; inferred from the masks when absent.
    pub label: Option<u8>,
    pub inpainter: InpainterConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineStage {
    pub dataset: PathBuf,
    /// Output directory of the removal stage.
    pub removal: PathBuf,
    pub out: PathBuf,
    pub inpainter: InpainterConfig,
    pub refine: RefineConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStage {
    /// Dataset whose cameras are rendered.
    pub dataset: PathBuf,
    pub scene: PathBuf,
    pub out: PathBuf,
    /// Single view to render; every view when absent.
    pub view: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    /// Dataset carrying object-removed ground truth.
    pub dataset: PathBuf,
    pub scene: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineStage {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub init: Option<PathBuf>,
    pub gaussians: usize,
    /// Seeds the random starting scene and the replacement initialization.
    pub seed: u64,
    pub fit: FitConfig,
    pub opening_radius: usize,
    pub depth_dir: Option<PathBuf>,
    pub label: Option<u8>,
    pub inpainter: InpainterConfig,
    pub refine: RefineConfig,
    /// Dataset rendered and scored at the end; defaults to the training
    /// dataset's `heldout/` views when present, else the training views.
    pub eval_dataset: Option<PathBuf>,
}

impl Default for PipelineStage {
    fn default() -> Self {
        let fit = FitStage::default();
        PipelineStage {
            dataset: PathBuf::new(),
            out: PathBuf::new(),
            init: None,
            gaussians: fit.gaussians,
            seed: 0,
            fit: fit.fit,
            opening_radius: DEFAULT_OPENING_RADIUS,
            depth_dir: None,
            label: None,
            inpainter: InpainterConfig::default(),
            refine: RefineConfig::default(),
            eval_dataset: None,
        }
    }
}

/// The configuration of one command, as written to `run_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Synth(SynthStage),
    Fit(FitStage),
    InferMasks(MasksStage),
    Remove(RemoveStage),
    Refine(RefineStage),
    Render(RenderStage),
    Eval(EvalStage),
    Pipeline(PipelineStage),
}

impl RunConfig {
    pub fn command(&self) -> &'static str {
        match self {
            RunConfig::Synth(_) => "synth",
            RunConfig::Fit(_) => "fit",
            RunConfig::InferMasks(_) => "infer-masks",
            RunConfig::Remove(_) => "remove",
            RunConfig::Refine(_) => "refine",
            RunConfig::Render(_) => "render",
            RunConfig::Eval(_) => "eval",
            RunConfig::Pipeline(_) => "pipeline",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            RunConfig::Synth(c) => &c.out,
            RunConfig::Fit(c) => &c.out,
            RunConfig::InferMasks(c) => &c.out,
            RunConfig::Remove(c) => &c.out,
            RunConfig::Refine(c) => &c.out,
            RunConfig::Render(c) => &c.out,
            RunConfig::Eval(c) => &c.out,
            RunConfig::Pipeline(c) => &c.out,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn run(&self) -> Result<()> {
        match self {
            RunConfig::Synth(c) => run_synth(c),
            RunConfig::Fit(c) => run_fit(c),
            RunConfig::InferMasks(c) => run_infer_masks(c),
            RunConfig::Remove(c) => run_remove(c),
            RunConfig::Refine(c) => run_refine(c),
            RunConfig::Render(c) => run_render(c),
            RunConfig::Eval(c) => run_eval(c).map(|_| ()),
            RunConfig::Pipeline(c) => run_pipeline(c),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::decode(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::decode(path, e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Validation(format!("{what} path is required")));
    }
    Ok(())
}

/// Creates the output directory and records the configuration in it.
fn begin(config: RunConfig) -> Result<()> {
    require(config.out(), "output")?;
    create_dir(config.out())?;
    write_json(&config.out().join(RUN_CONFIG_FILE), &config)
}

fn write_masks(dir: &Path, sub: &str, masks: &[BinaryMask]) -> Result<()> {
    for (k, m) in masks.iter().enumerate() {
        write_png_mask(&per_view_path(dir, sub, k, "png"), m)?;
    }
    Ok(())
}

fn read_masks(dir: &Path, sub: &str, count: usize) -> Result<Vec<BinaryMask>> {
    (0..count).map(|k| read_png_mask(&per_view_path(dir, sub, k, "png"))).collect()
}

/// Rounds an inpainting to what its files hold, so that the supervision
/// built in memory equals the one rebuilt from disk.
fn storable(result: InpaintResult) -> InpaintResult {
    InpaintResult {
        image: quantize_rgb(&result.image),
        depth: result.depth.map(|&d| d as f32 as f64),
    }
}

/// Synthetic dataset, its ground-truth scenes and held-out views.
pub fn run_synth(config: &SynthStage) -> Result<()> {
    config.spec.validate()?;
    begin(RunConfig::Synth(config.clone()))?;
    let scene = generate(&config.spec)?;
    let out = &config.out;
    scene.dataset.save(out)?;
    save_gaussians(&scene.gaussians, &out.join(SCENE_GT_FILE))?;
    save_gaussians(&scene.background, &out.join(SCENE_REMOVED_GT_FILE))?;
    if let Some(h) = &scene.heldout {
        h.save(&out.join(HELDOUT_DIR))?;
    }
    write_json(&out.join(SPEC_FILE), &config.spec)?;
    log::info!(
        "synth: {} views, {} gaussians -> {}",
        scene.dataset.len(),
        scene.gaussians.len(),
        out.display()
    );
    Ok(())
}

/// Fits a scene to the dataset.
pub fn run_fit(config: &FitStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    begin(RunConfig::Fit(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let init = match &config.init {
        Some(p) => load_gaussians(p)?,
        None => random_init(&dataset, config.gaussians, config.seed)?,
    };
    let outcome = fit(&dataset, init, &config.fit)?;
    save_gaussians(&outcome.gaussians, &config.out.join(FITTED_FILE))?;
    let path = config.out.join(FIT_LOSSES_FILE);
    let mut csv = String::from(FIT_LOSSES_HEADER);
    csv.push('\n');
    for (it, r) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!(
            "{it},{},{},{},{},{},{}\n",
            r.l1, r.ssim, r.depth, r.cross, r.id, r.total
        ));
    }
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    log::info!("fit: {} iterations -> {}", outcome.losses.len(), config.out.display());
    Ok(())
}

/// Mask areas per view, in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasksReport {
    pub original: Vec<usize>,
    pub unopened: Vec<usize>,
    pub refined: Vec<usize>,
}

/// Refined inpainting masks from the depth of the fitted scene.
pub fn run_infer_masks(config: &MasksStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    require(&config.scene, "scene")?;
    begin(RunConfig::InferMasks(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let depths: Vec<DepthMap> = match &config.depth_dir {
        Some(dir) => (0..dataset.len())
            .map(|k| read_pfm_depth(&dir.join(format!("view_{k:03}.pfm"))))
            .collect::<Result<_>>()?,
        None => {
            let scene = load_gaussians(&config.scene)?;
            dataset
                .views
                .par_iter()
                .map(|v| render_with(&scene, &v.pose, &RenderOptions::color_depth()).depth)
                .collect()
        }
    };
    for (k, (d, v)) in depths.iter().zip(&dataset.views).enumerate() {
        if d.dims() != v.pose.dims() {
            return Err(Error::Validation(format!(
                "depth of view {k} is {}x{}, view is {}x{}",
                d.dims().0,
                d.dims().1,
                v.pose.width,
                v.pose.height
            )));
        }
    }
    let set = refine_all(&dataset, &depths, config.opening_radius);
    let out = &config.out;
    write_masks(out, REFINED_MASKS_DIR, &set.refined)?;
    write_masks(out, UNOPENED_MASKS_DIR, &set.unopened)?;
    for k in 0..set.len() {
        write_png_rgb(&per_view_path(out, BACKGROUNDS_DIR, k, "png"), &set.backgrounds[k])?;
        write_pfm_depth(&per_view_path(out, DEPTH_DIR, k, "pfm"), &depths[k])?;
    }
    let report = MasksReport {
        original: set.original.iter().map(BinaryMask::count).collect(),
        unopened: set.unopened.iter().map(BinaryMask::count).collect(),
        refined: set.refined_areas(),
    };
    write_json(&out.join(MASKS_REPORT_FILE), &report)?;
    log::info!("infer-masks: refined areas {:?}", report.refined);
    Ok(())
}

/// Summary of the removal stage, read back by refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub label: u8,
    pub removed_count: usize,
    pub remaining_count: usize,
    /// `None` when every refined mask is empty.
    pub reference: Option<usize>,
    pub replacement_count: usize,
    pub inpainter: String,
}

/// Removes the object, inpaints the reference view and initializes the
/// replacement Gaussians.
pub fn run_remove(config: &RemoveStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    require(&config.scene, "scene")?;
    require(&config.masks, "masks")?;
    let backend = config.inpainter.backend()?;
    begin(RunConfig::Remove(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let scene = load_gaussians(&config.scene)?;
    let refined = read_masks(&config.masks, REFINED_MASKS_DIR, dataset.len())?;
    let label = match config.label {
        Some(l) => l,
        None => infer_object_label(&scene, &dataset)?,
    };
    let (remaining, removed_count) = split_by_label(&scene, label)?;
    let poses = dataset.poses();
    let mut removal = RemovalResult::new(label, remaining, removed_count, refined, &poses);
    if let Some(inpainted) = removal.inpaint_reference(&dataset, &backend)? {
        removal.attach_inpainting(storable(inpainted), &poses)?;
        removal.init_replacements(config.seed)?;
    }

    let out = &config.out;
    write_masks(out, REFINED_MASKS_DIR, &removal.refined_masks)?;
    save_gaussians(&removal.remaining, &out.join(REMOVED_FILE))?;
    save_gaussians(&removal.scene(), &out.join(INITIALIZED_FILE))?;
    if let (Some(inp), Some(sup)) = (&removal.inpainted, &removal.supervision) {
        write_png_rgb(&out.join(INPAINTED_RGB_FILE), &inp.image)?;
        write_pfm_depth(&out.join(INPAINTED_DEPTH_FILE), &inp.depth)?;
        write_ply(&out.join(P1_FILE), &sup.p1)?;
        for (k, img) in sup.images.iter().enumerate() {
            write_png_rgb(&per_view_path(out, SUPERVISION_DIR, k, "png"), img)?;
        }
    }
    let report = RemovalReport {
        label,
        removed_count,
        remaining_count: removal.remaining.len(),
        reference: removal.reference,
        replacement_count: removal.replacements.len(),
        inpainter: backend.name().into(),
    };
    write_json(&out.join(REMOVAL_REPORT_FILE), &report)?;
    log::info!(
        "remove: label {label}, {removed_count} removed, reference {:?}",
        removal.reference
    );
    Ok(())
}

/// Rebuilds the removal state written by [`run_remove`].
pub fn load_removal(dir: &Path, dataset: &Dataset) -> Result<RemovalResult> {
    let report: RemovalReport = read_json(&dir.join(REMOVAL_REPORT_FILE))?;
    let remaining = load_gaussians(&dir.join(REMOVED_FILE))?;
    let initialized = load_gaussians(&dir.join(INITIALIZED_FILE))?;
    if remaining.len() != report.remaining_count
        || initialized.len() != report.remaining_count + report.replacement_count
        || initialized[..remaining.len()] != remaining[..]
    {
        return Err(Error::Validation(format!(
            "{}: scenes do not match {REMOVAL_REPORT_FILE}",
            dir.display()
        )));
    }
    let refined = read_masks(dir, REFINED_MASKS_DIR, dataset.len())?;
    let poses = dataset.poses();
    let mut removal = RemovalResult::new(report.label, remaining, report.removed_count, refined, &poses);
    if removal.reference != report.reference {
        return Err(Error::Validation(format!(
            "{}: refined masks select reference {:?}, report says {:?}",
            dir.display(),
            removal.reference,
            report.reference
        )));
    }
    if removal.reference.is_some() {
        let inpainted = InpaintResult {
            image: crate::scene::io::read_png_rgb(&dir.join(INPAINTED_RGB_FILE))?,
            depth: read_pfm_depth(&dir.join(INPAINTED_DEPTH_FILE))?,
        };
        removal.attach_inpainting(inpainted, &poses)?;
    }
    removal.replacements = initialized[report.remaining_count..].to_vec();
    Ok(removal)
}

/// Optimizes the replacement Gaussians against the inpainted supervision.
pub fn run_refine(config: &RefineStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    require(&config.removal, "removal")?;
    config.refine.validate()?;
    let backend = config.inpainter.backend()?;
    begin(RunConfig::Refine(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let removal = load_removal(&config.removal, &dataset)?;
    let out = &config.out;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io_err = |e| Error::io(&metrics_path, e);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err)?;
    let mut observer = |event: RefineEvent<'_>| -> Result<()> {
        match event {
            RefineEvent::Metrics(row) => {
                writeln!(metrics, "{}", row.csv()).map_err(io_err)?;
                metrics.flush().map_err(io_err)?;
                log::info!("refine: {}", row.csv());
            }
            RefineEvent::Checkpoint { iteration, gaussians } => {
                save_gaussians(gaussians, &out.join(format!("ckpt_{iteration:05}.gsip")))?;
            }
        }
        Ok(())
    };
    let outcome = refine(&removal, &dataset, &backend, &config.refine, &mut observer)?;
    drop(observer);
    metrics.flush().map_err(io_err)?;
    save_gaussians(&outcome.gaussians, &out.join(REFINED_FILE))?;
    Ok(())
}

/// Renders a scene from the dataset's cameras.
pub fn run_render(config: &RenderStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    require(&config.scene, "scene")?;
    begin(RunConfig::Render(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let views: Vec<usize> = match config.view {
        Some(v) if v >= dataset.len() => {
            return Err(Error::Validation(format!(
                "view {v} out of range ({} views)",
                dataset.len()
            )))
        }
        Some(v) => vec![v],
        None => (0..dataset.len()).collect(),
    };
    let scene = load_gaussians(&config.scene)?;
    for k in views {
        let r = render_with(&scene, &dataset.views[k].pose, &RenderOptions::color_depth());
        write_png_rgb(&per_view_path(&config.out, RENDER_IMAGES_DIR, k, "png"), &r.rgb)?;
        write_pfm_depth(&per_view_path(&config.out, DEPTH_DIR, k, "pfm"), &r.depth)?;
    }
    Ok(())
}

/// Scores of one view against its object-removed ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Inside the object mask; absent when the mask is empty.
    pub masked_psnr: Option<f64>,
    pub masked_ssim: Option<f64>,
    /// Outside the object mask; absent when the mask covers the image.
    pub unmasked_psnr: Option<f64>,
}

/// Means over views; masked entries average the views that have them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: Option<f64>,
    pub masked_ssim: Option<f64>,
    pub unmasked_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScores>,
    pub mean: MeanScores,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores renders of `scene` against the object-removed ground truth.
pub fn evaluate(scene: &[Gaussian], dataset: &Dataset) -> Result<EvalReport> {
    let views: Vec<ViewScores> = dataset
        .views
        .par_iter()
        .enumerate()
        .map(|(k, v)| {
            let truth = v
                .gt_removed
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("view {k} has no object-removed ground truth")))?;
            let rendered = render_with(scene, &v.pose, &RenderOptions::color_depth()).rgb;
            let m = eval_metrics(&rendered, truth, &v.mask);
            let mask = v.mask.as_slice();
            Ok(ViewScores {
                view: k,
                psnr: m.psnr,
                ssim: m.ssim,
                masked_psnr: m.masked_psnr,
                masked_ssim: m.masked_ssim,
                unmasked_psnr: psnr_where(&rendered, truth, |i| !mask[i]),
            })
        })
        .collect::<Result<_>>()?;
    let n = views.len() as f64;
    let mean = MeanScores {
        psnr: views.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: views.iter().map(|s| s.ssim).sum::<f64>() / n,
        masked_psnr: mean_of(views.iter().map(|s| s.masked_psnr)),
        masked_ssim: mean_of(views.iter().map(|s| s.masked_ssim)),
        unmasked_psnr: mean_of(views.iter().map(|s| s.unmasked_psnr)),
    };
    Ok(EvalReport { views, mean })
}

/// Writes `eval_report.json` for a scene and returns the report.
pub fn run_eval(config: &EvalStage) -> Result<EvalReport> {
    require(&config.dataset, "dataset")?;
    require(&config.scene, "scene")?;
    begin(RunConfig::Eval(config.clone()))?;
    let dataset = Dataset::load(&config.dataset)?;
    let scene = load_gaussians(&config.scene)?;
    let report = evaluate(&scene, &dataset)?;
    write_json(&config.out.join(EVAL_REPORT_FILE), &report)?;
    log::info!(
        "eval: psnr {:.2}, masked {:?}, unmasked {:?}",
        report.mean.psnr,
        report.mean.masked_psnr,
        report.mean.unmasked_psnr
    );
    Ok(report)
}

impl PipelineStage {
    /// The per-stage configurations, writing into `out/{fit,masks,remove,
    /// refine,render,eval}`.
    pub fn stages(&self) -> Vec<RunConfig> {
        let dir = |name: &str| self.out.join(name);
        let eval_dataset = self.eval_dataset.clone().unwrap_or_else(|| {
            let heldout = self.dataset.join(HELDOUT_DIR);
            if heldout.join(crate::scene::POSES_FILE).exists() {
                heldout
            } else {
                self.dataset.clone()
            }
        });
        let fitted = dir("fit").join(FITTED_FILE);
        let refined = dir("refine").join(REFINED_FILE);
        vec![
            RunConfig::Fit(FitStage {
                dataset: self.dataset.clone(),
                out: dir("fit"),
                init: self.init.clone(),
                gaussians: self.gaussians,
                seed: self.seed,
                fit: self.fit.clone(),
            }),
            RunConfig::InferMasks(MasksStage {
                dataset: self.dataset.clone(),
                scene: fitted.clone(),
                out: dir("masks"),
                opening_radius: self.opening_radius,
                depth_dir: self.depth_dir.clone(),
            }),
            RunConfig::Remove(RemoveStage {
                dataset: self.dataset.clone(),
                scene: fitted,
                masks: dir("masks"),
                out: dir("remove"),
                label: self.label,
                inpainter: self.inpainter.clone(),
                seed: self.seed,
            }),
            RunConfig::Refine(RefineStage {
                dataset: self.dataset.clone(),
                removal: dir("remove"),
                out: dir("refine"),
                inpainter: self.inpainter.clone(),
                refine: self.refine.clone(),
            }),
            RunConfig::Render(RenderStage {
                dataset: eval_dataset.clone(),
                scene: refined.clone(),
                out: dir("render"),
                view: None,
            }),
            RunConfig::Eval(EvalStage {
                dataset: eval_dataset,
                scene: refined,
                out: dir("eval"),
            }),
        ]
    }
}

/// fit, infer-masks, remove, refine, render and eval in sequence.
pub fn run_pipeline(config: &PipelineStage) -> Result<()> {
    require(&config.dataset, "dataset")?;
    config.inpainter.backend()?;
    config.refine.validate()?;
    begin(RunConfig::Pipeline(config.clone()))?;
    for stage in config.stages() {
        log::info!("pipeline: {}", stage.command());
        stage.run()?;
    }
    Ok(())
}
