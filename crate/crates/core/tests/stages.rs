//! Fitting, object removal, supervision and refinement on the synthetic ring.

mod common;

use common::removed_depths;
use gsinpaint_core::inpaint::Backend;
use gsinpaint_core::losses::{l_depth, l_rgb, PerceptualNet};
use gsinpaint_core::masks::{refine_all, MaskSet, DEFAULT_OPENING_RADIUS};
use gsinpaint_core::render::{render_with, RenderOptions};
use gsinpaint_core::scene::{Dataset, Gaussian, Grid};
use gsinpaint_core::stages::{
    build_supervision, fit, random_init, refine, remove_object, FitConfig, RefineConfig, RemovalResult,
};
use gsinpaint_core::synth::{generate, psnr_where, SceneSpec, SynthScene};

fn ring() -> SynthScene {
    generate(&SceneSpec::default()).unwrap()
}

fn masks(scene: &SynthScene) -> MaskSet {
    refine_all(&scene.dataset, &removed_depths(&scene.dataset), DEFAULT_OPENING_RADIUS)
}

fn removal(scene: &SynthScene, backend: &Backend) -> (MaskSet, RemovalResult) {
    let m = masks(scene);
    let r = remove_object(&scene.gaussians, scene.object_label, &scene.dataset, &m, backend, 3).unwrap();
    (m, r)
}

fn mean_psnr(gaussians: &[Gaussian], ds: &Dataset) -> f64 {
    let total: f64 = ds
        .views
        .iter()
        .map(|v| {
            let out = render_with(gaussians, &v.pose, &RenderOptions::color_depth());
            psnr_where(&out.rgb, &v.image, |_| true).unwrap()
        })
        .sum();
    total / ds.len() as f64
}

#[test]
fn fit_with_no_iterations_returns_the_init() {
    let scene = ring();
    let init = random_init(&scene.dataset, 300, 4).unwrap();
    let config = FitConfig { iterations: 0, ..FitConfig::default() };
    let out = fit(&scene.dataset, init.clone(), &config).unwrap();
    assert_eq!(out.gaussians, init);
    assert!(out.losses.is_empty());
}

#[test]
fn fit_from_ground_truth_descends() {
    let scene = ring();
    let config = FitConfig { iterations: 48, ..FitConfig::default() };
    let out = fit(&scene.dataset, scene.gaussians.clone(), &config).unwrap();
    let mean = |s: &[gsinpaint_core::losses::LossReport]| s.iter().map(|l| l.total).sum::<f64>() / s.len() as f64;
    // One full pass over the eight views at each end.
    let (first, last) = (mean(&out.losses[..8]), mean(&out.losses[40..]));
    assert!(last < first, "{last} vs {first}");
}

#[test]
fn fit_from_random_init_reaches_25_db() {
    let scene = ring();
    let init = random_init(&scene.dataset, 5000, 1).unwrap();
    let out = fit(&scene.dataset, init, &FitConfig::default()).unwrap();
    let psnr = mean_psnr(&out.gaussians, &scene.dataset);
    assert!(psnr >= 25.0, "mean train PSNR {psnr}");
}

#[test]
fn removed_gaussians_cover_the_object_masks() {
    let scene = ring();
    let object: Vec<Gaussian> = scene.gaussians.iter().filter(|g| g.label() == scene.object_label).cloned().collect();
    for (i, v) in scene.dataset.views.iter().enumerate() {
        let cov = render_with(&object, &v.pose, &RenderOptions::color_depth()).coverage;
        let sil = cov.map(|&a| a > 0.5);
        let inter = sil.intersection(&v.mask).count();
        let union = sil.count() + v.mask.count() - inter;
        let iou = inter as f64 / union as f64;
        assert!(iou >= 0.9, "view {i}: IoU {iou}");
    }
}

#[test]
fn reference_is_the_largest_refined_mask() {
    let scene = ring();
    let (m, r) = removal(&scene, &Backend::Oracle);
    let areas: Vec<usize> = m.refined.iter().map(|mask| mask.as_slice().iter().filter(|&&b| b).count()).collect();
    let mut best = 0;
    for (i, &a) in areas.iter().enumerate() {
        if a > areas[best] {
            best = i;
        }
    }
    assert_eq!(r.reference, Some(best), "areas {areas:?}");
    assert_eq!(r.replacements.len(), r.removed_count);
    assert!(r.remaining.iter().all(|g| g.label() != scene.object_label));
}

/// Reprojecting one ground-truth render into another view already differs
/// from that view's render by 2-3.6/255 on average: splat blending is view
/// dependent. The bound sits just above that floor.
const SUPERVISION_MAE: f64 = 4.0 / 255.0;

#[test]
fn oracle_supervision_matches_ground_truth() {
    let scene = ring();
    let (_, r) = removal(&scene, &Backend::Oracle);
    let sup = r.supervision.as_ref().unwrap();
    for (k, v) in scene.dataset.views.iter().enumerate() {
        let gt = v.gt_removed.as_ref().unwrap();
        let covered = &sup.covered[k];
        if covered.count() == 0 {
            continue;
        }
        let mut err = 0.0;
        for p in 0..covered.len() {
            if covered.as_slice()[p] {
                let (a, b) = (sup.images[k].as_slice()[p], gt.as_slice()[p]);
                err += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
            }
        }
        let mae = err / covered.count() as f64;
        assert!(mae <= SUPERVISION_MAE, "view {k}: MAE {mae}");
    }
}

#[test]
fn reference_supervision_is_the_inpainting() {
    let scene = ring();
    let (_, r) = removal(&scene, &Backend::diffuse());
    let reference = r.reference.unwrap();
    let sup = r.supervision.as_ref().unwrap();
    let inpainted = r.inpainted.as_ref().unwrap();
    let mask = &r.refined_masks[reference];
    assert_eq!(&sup.covered[reference], mask);
    for p in 0..mask.len() {
        let want = if mask.as_slice()[p] { inpainted.image.as_slice()[p] } else { r.removal_renders[reference].as_slice()[p] };
        assert_eq!(sup.images[reference].as_slice()[p], want);
    }
}

#[test]
fn views_without_refined_mask_keep_the_removed_render() {
    let scene = ring();
    let (_, r) = removal(&scene, &Backend::diffuse());
    let reference = r.reference.unwrap();
    let empty = (reference + 1) % scene.dataset.len();
    let mut refined = r.refined_masks.clone();
    refined[empty] = Grid::filled(64, 64, false);
    let inpainted = r.inpainted.as_ref().unwrap();
    let sup = build_supervision(&refined, reference, &inpainted.image, &inpainted.depth, &scene.dataset.poses(), &r.removal_renders);
    assert_eq!(sup.images[empty], r.removal_renders[empty]);
    assert_eq!(sup.covered[empty].count(), 0);
}

fn no_events(_: gsinpaint_core::stages::RefineEvent<'_>) -> gsinpaint_core::Result<()> {
    Ok(())
}

#[test]
fn refine_with_no_iterations_returns_the_init() {
    let scene = ring();
    let (_, r) = removal(&scene, &Backend::diffuse());
    let config = RefineConfig { iterations: 0, ..RefineConfig::default() };
    let out = refine(&r, &scene.dataset, &Backend::diffuse(), &config, &mut no_events).unwrap();
    assert_eq!(out.gaussians, r.scene());
    assert_eq!(out.rows.len(), 1);
}

/// Inpainting loss of a scene against fixed targets: reference color and
/// depth plus the perceptual term of every other view.
fn inpaint_loss(gaussians: &[Gaussian], r: &RemovalResult, ds: &Dataset, net: &PerceptualNet) -> f64 {
    let reference = r.reference.unwrap();
    let inpainted = r.inpainted.as_ref().unwrap();
    let sup = r.supervision.as_ref().unwrap();
    let opts = RenderOptions::color_depth();
    let ref_out = render_with(gaussians, &ds.views[reference].pose, &opts);
    let mut total = l_rgb(&ref_out.rgb, &inpainted.image).unwrap().value
        + l_depth(&ref_out.depth, &inpainted.depth).unwrap().value;
    for (k, v) in ds.views.iter().enumerate() {
        if k != reference {
            total += net.distance(&render_with(gaussians, &v.pose, &opts).rgb, &sup.images[k]);
        }
    }
    total
}

#[test]
fn refinement_descends_on_frozen_targets_and_keeps_the_background() {
    let scene = ring();
    let (_, r) = removal(&scene, &Backend::diffuse());
    let config = RefineConfig { iterations: 120, reinpaint_period: 1000, log_every: 40, ..RefineConfig::default() };
    let out = refine(&r, &scene.dataset, &Backend::diffuse(), &config, &mut no_events).unwrap();
    assert_eq!(out.frozen, r.remaining.len());
    assert_eq!(&out.gaussians[..out.frozen], &r.remaining[..]);
    assert_ne!(&out.gaussians[out.frozen..], &r.replacements[..]);
    assert_eq!(out.rows.iter().map(|row| row.iteration).collect::<Vec<_>>(), vec![0, 40, 80, 120]);
    let net = PerceptualNet::new(config.perceptual_seed);
    let before = inpaint_loss(&r.scene(), &r, &scene.dataset, &net);
    let after = inpaint_loss(&out.gaussians, &r, &scene.dataset, &net);
    assert!(after <= before, "{after} vs {before}");
}
