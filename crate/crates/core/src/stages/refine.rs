use serde::{Deserialize, Serialize};

use super::removal::{build_supervision, view_truth, RemovalResult, Supervision};
use crate::error::{Error, Result};
use crate::inpaint::{inpaint, Backend, InpaintRequest, InpaintResult};
use crate::losses::{l_depth, l_rgb, PerceptualNet, DEFAULT_PERCEPTUAL_SEED};
use crate::optim::{Adam, LearningRates};
use crate::render::{render_with, render_with_gradients, PixelAdjoint, RenderOptions};
use crate::scene::{Dataset, Gaussian, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Re-render and re-inpaint the reference view this often.
    pub reinpaint_period: usize,
    pub lr: LearningRates,
    pub perceptual_seed: u64,
    /// Optimize every Gaussian instead of only the replacements.
    pub unfreeze_all: bool,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 5000,
            reinpaint_period: 500,
            lr: LearningRates::default(),
            perceptual_seed: DEFAULT_PERCEPTUAL_SEED,
            unfreeze_all: false,
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reinpaint_period == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Validation(
                "re-inpaint, log and checkpoint periods must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One `metrics.csv` row. Losses are evaluated before the step of
/// `iteration`; the row for the final iteration describes the result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub l1: f64,
    pub ssim: f64,
    pub depth: f64,
    /// Cross-view term of this iteration's sampled view.
    pub cross: f64,
    pub id: f64,
    pub total: f64,
    /// Cross-view term summed over every non-reference view, against the
    /// targets built at iteration 0.
    pub cross_frozen: f64,
}

pub const METRICS_HEADER: &str = "iteration,l1,ssim,depth,cross,id,total,cross_frozen";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, self.l1, self.ssim, self.depth, self.cross, self.id, self.total, self.cross_frozen
        )
    }
}

pub enum RefineEvent<'a> {
    Metrics(&'a MetricsRow),
    Checkpoint { iteration: usize, gaussians: &'a [Gaussian] },
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub gaussians: Vec<Gaussian>,
    /// Number of leading Gaussians held fixed.
    pub frozen: usize,
    pub rows: Vec<MetricsRow>,
}

struct Targets {
    inpainted: InpaintResult,
    sup: Supervision,
}

/// Copies the target into refined-mask pixels the lifted reference did not
/// reach: their target is only the hole left by the removal, so they take
/// no part in the comparison.
fn fill_uncovered(render: &mut Grid<[f64; 3]>, target: &Grid<[f64; 3]>, refined: &Grid<bool>, covered: &Grid<bool>) {
    for (((r, t), &m), &c) in render
        .as_mut_slice()
        .iter_mut()
        .zip(target.as_slice())
        .zip(refined.as_slice())
        .zip(covered.as_slice())
    {
        if m && !c {
            *r = *t;
        }
    }
}

/// Adjoint of `fill_uncovered`: those pixels no longer depend on the render.
fn mask_uncovered(grad: &mut Grid<[f64; 3]>, refined: &Grid<bool>, covered: &Grid<bool>) {
    for ((g, &m), &c) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(refined.as_slice())
        .zip(covered.as_slice())
    {
        if m && !c {
            *g = [0.0; 3];
        }
    }
}

/// Optimizes the replacement Gaussians: every iteration the reference view
/// is pulled toward its inpainting (color and depth) and one other view,
/// taken round-robin, toward its lifted supervision through the perceptual
/// distance.
pub fn refine(
    removal: &RemovalResult,
    dataset: &Dataset,
    backend: &Backend,
    config: &RefineConfig,
    observer: &mut dyn FnMut(RefineEvent<'_>) -> Result<()>,
) -> Result<RefineOutcome> {
    config.validate()?;
    let mut gaussians = removal.scene();
    let frozen = if config.unfreeze_all { 0 } else { removal.remaining.len() };
    let (Some(reference), Some(inpainted), Some(sup)) =
        (removal.reference, &removal.inpainted, &removal.supervision)
    else {
        return Ok(RefineOutcome {
            gaussians,
            frozen,
            rows: Vec::new(),
        });
    };
    let poses = dataset.poses();
    let others: Vec<usize> = (0..poses.len()).filter(|&k| k != reference).collect();
    let net = PerceptualNet::new(config.perceptual_seed);
    let trainable: Vec<bool> = (0..gaussians.len()).map(|i| i >= frozen).collect();
    let mut lr = config.lr;
    lr.identity = 0.0;
    let mut adam = Adam::new(gaussians.len(), lr);
    let frozen_targets = sup.clone();
    let mut targets = Targets {
        inpainted: inpainted.clone(),
        sup: sup.clone(),
    };
    let color_depth = RenderOptions::color_depth();
    let mut rows = Vec::new();

    for it in 0..=config.iterations {
        if it > 0 && it < config.iterations && it % config.reinpaint_period == 0 {
            let current = render_with(&gaussians, &poses[reference], &color_depth);
            let inpainted = inpaint(
                &InpaintRequest {
                    image: &current.rgb,
                    depth: &current.depth,
                    mask: &removal.refined_masks[reference],
                },
                backend,
                view_truth(dataset, reference),
            )?;
            let sup = build_supervision(
                &removal.refined_masks,
                reference,
                &inpainted.image,
                &inpainted.depth,
                &poses,
                &removal.removal_renders,
            );
            targets = Targets { inpainted, sup };
        }

        let ref_out = render_with(&gaussians, &poses[reference], &color_depth);
        let rgb = l_rgb(&ref_out.rgb, &targets.inpainted.image)?;
        let (depth_value, depth_grad) = match l_depth(&ref_out.depth, &targets.inpainted.depth) {
            Ok(l) => (l.value, Some(l.grad)),
            Err(Error::NoDepthOverlap) => (0.0, None),
            Err(e) => return Err(e),
        };
        let sampled = (!others.is_empty()).then(|| others[it % others.len()]);
        let cross = sampled.map(|k| {
            let mut rgb = render_with(&gaussians, &poses[k], &color_depth).rgb;
            fill_uncovered(&mut rgb, &targets.sup.images[k], &removal.refined_masks[k], &targets.sup.covered[k]);
            let (d, mut g) = net.distance_with_grad(&rgb, &targets.sup.images[k]);
            mask_uncovered(&mut g, &removal.refined_masks[k], &targets.sup.covered[k]);
            (k, d, g)
        });
        let cross_value = cross.as_ref().map_or(0.0, |c| c.1);
        let mut row = MetricsRow {
            iteration: it,
            l1: rgb.l1,
            ssim: 1.0 - rgb.ssim_loss,
            depth: depth_value,
            cross: cross_value,
            id: 0.0,
            total: rgb.value + depth_value + cross_value,
            cross_frozen: f64::NAN,
        };
        let finite = [row.l1, row.ssim, row.depth, row.cross, row.total]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!(
                    "l1={} ssim={} depth={} cross={} total={}",
                    row.l1, row.ssim, row.depth, row.cross, row.total
                ),
            });
        }
        if it % config.log_every == 0 || it == config.iterations {
            row.cross_frozen = others
                .iter()
                .map(|&k| {
                    let mut rgb = render_with(&gaussians, &poses[k], &color_depth).rgb;
                    fill_uncovered(&mut rgb, &frozen_targets.images[k], &removal.refined_masks[k], &frozen_targets.covered[k]);
                    net.distance(&rgb, &frozen_targets.images[k])
                })
                .sum();
            observer(RefineEvent::Metrics(&row))?;
            rows.push(row);
        }
        if it > 0 && it % config.checkpoint_every == 0 {
            observer(RefineEvent::Checkpoint {
                iteration: it,
                gaussians: &gaussians,
            })?;
        }
        if it == config.iterations {
            break;
        }

        let mut grads = render_with_gradients(
            &gaussians,
            &poses[reference],
            &PixelAdjoint {
                rgb: rgb.grad,
                depth: depth_grad,
                identity: None,
            },
        )?;
        if let Some((k, _, g)) = cross {
            grads.accumulate(&render_with_gradients(
                &gaussians,
                &poses[k],
                &PixelAdjoint {
                    rgb: g,
                    depth: None,
                    identity: None,
                },
            )?);
        }
        if !grads.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("non-finite gradient; losses {}", row.csv()),
            });
        }
        adam.step(&mut gaussians, &grads, &trainable);
    }
    Ok(RefineOutcome {
        gaussians,
        frozen,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_adjoint_is_the_gradient_of_the_filled_distance() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (12, 10);
        let render: Grid<[f64; 3]> = Grid::from_fn(w, h, |_, _| std::array::from_fn(|_| r.random_range(0.0..1.0)));
        let target: Grid<[f64; 3]> = Grid::from_fn(w, h, |_, _| std::array::from_fn(|_| r.random_range(0.0..1.0)));
        let refined = Grid::from_fn(w, h, |x, y| (2..9).contains(&x) && (3..8).contains(&y));
        let covered = Grid::from_fn(w, h, |x, _| x < 6);
        let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED);
        let value = |img: &Grid<[f64; 3]>| {
            let mut filled = img.clone();
            fill_uncovered(&mut filled, &target, &refined, &covered);
            net.distance(&filled, &target)
        };
        let mut filled = render.clone();
        fill_uncovered(&mut filled, &target, &refined, &covered);
        let (_, mut grad) = net.distance_with_grad(&filled, &target);
        mask_uncovered(&mut grad, &refined, &covered);
        let step = 1e-6;
        for p in 0..w * h {
            for c in 0..3 {
                let mut plus = render.clone();
                plus.as_mut_slice()[p][c] += step;
                let mut minus = render.clone();
                minus.as_mut_slice()[p][c] -= step;
                let numeric = (value(&plus) - value(&minus)) / (2.0 * step);
                let analytic = grad.as_slice()[p][c];
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!((analytic - numeric).abs() / scale < 1e-4, "pixel {p} channel {c}");
            }
        }
    }
}
