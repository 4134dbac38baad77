//! Synthetic scenes with a removable object, plus ground-truth oracles.

mod generate;
mod spec;

pub use generate::{generate, rig_poses, texture, SynthScene};
pub use spec::{
    ObjectShape, ObjectSpec, Part, Primitive, RigKind, RigSpec, RoomSpec, SceneSpec, FLOOR_LABEL,
    WALL_LABEL,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{backproject_pixel, landing_pixel};
use crate::losses::{ssim, ssim_masked};
use crate::render::{render_with, RenderOptions};
use crate::scene::{BinaryMask, Dataset, DepthMap, Gaussian, Grid, ImageRgb};

/// Fraction of the scene diameter used as the oracle's depth tolerance.
pub const ORACLE_DEPTH_FRACTION: f64 = 0.01;

/// Unseen-region masks computed by casting each masked pixel's background
/// ray, using the depths of the object-removed scene.
pub fn oracle_refined_masks(dataset: &Dataset, background: &[Gaussian], eps: f64) -> Vec<BinaryMask> {
    let depths: Vec<DepthMap> = dataset
        .views
        .par_iter()
        .map(|v| render_with(background, &v.pose, &RenderOptions::color_depth()).depth)
        .collect();
    oracle_refined_masks_from_depths(dataset, &depths, eps)
}

/// [`oracle_refined_masks`] with precomputed object-removed depth maps.
pub fn oracle_refined_masks_from_depths(
    dataset: &Dataset,
    removed_depths: &[DepthMap],
    eps: f64,
) -> Vec<BinaryMask> {
    assert_eq!(removed_depths.len(), dataset.len());
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let view = &dataset.views[i];
            let (w, h) = view.mask.dims();
            Grid::from_fn(w, h, |x, y| {
                if !*view.mask.get(x, y) {
                    return false;
                }
                let d = *removed_depths[i].get(x, y);
                if !removed_depths[i].is_valid_at(x, y) {
                    return true;
                }
                let Ok(point) = backproject_pixel(x as f64, y as f64, d, &view.pose) else {
                    return true;
                };
                let covered = dataset.views.iter().enumerate().any(|(k, other)| {
                    if k == i {
                        return false;
                    }
                    let Some((u, v, z)) = landing_pixel(&other.pose, &point) else {
                        return false;
                    };
                    !*other.mask.get(u, v)
                        && removed_depths[k].is_valid_at(u, v)
                        && (z - removed_depths[k].get(u, v)).abs() <= eps
                });
                !covered
            })
        })
        .collect()
}

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub psnr: f64,
    pub ssim: f64,
    /// Absent when the mask is empty.
    pub masked_psnr: Option<f64>,
    pub masked_ssim: Option<f64>,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// PSNR over the pixels where `select` holds, or `None` if it selects
/// nothing.
pub fn psnr_where(a: &ImageRgb, b: &ImageRgb, select: impl Fn(usize) -> bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if select(i) {
            sum += (0..3).map(|c| (pa[c] - pb[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    (n > 0).then(|| psnr_from_mse(sum / n as f64))
}

pub fn eval_metrics(rendered: &ImageRgb, truth: &ImageRgb, mask: &BinaryMask) -> EvalMetrics {
    assert_eq!(rendered.dims(), truth.dims());
    assert_eq!(rendered.dims(), mask.dims());
    let m = mask.as_slice();
    EvalMetrics {
        psnr: psnr_where(rendered, truth, |_| true).unwrap_or(PSNR_CAP),
        ssim: ssim(rendered, truth),
        masked_psnr: psnr_where(rendered, truth, |i| m[i]),
        masked_ssim: ssim_masked(rendered, truth, mask),
    }
}
