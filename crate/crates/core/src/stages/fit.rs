use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{identity_ce, l_image, ImageLossVariant, LossReport, DEFAULT_LAMBDA};
use crate::optim::{Adam, LearningRates};
use crate::render::{render_with, render_with_gradients, PixelAdjoint, RenderOptions};
use crate::scene::{Dataset, Gaussian};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub variant: ImageLossVariant,
    /// Weight of the identity cross-entropy term.
    pub identity_weight: f64,
    pub lr: LearningRates,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            lambda: DEFAULT_LAMBDA,
            variant: ImageLossVariant::Literal,
            identity_weight: 1.0,
            lr: LearningRates::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub gaussians: Vec<Gaussian>,
    /// Losses before each step, one entry per iteration.
    pub losses: Vec<LossReport>,
}

/// Gaussians scattered along random pixel rays of the dataset's views,
/// colored by the pixel they were lifted from.
pub fn random_init(dataset: &Dataset, count: usize, seed: u64) -> Result<Vec<Gaussian>> {
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no views".into()));
    }
    let centers: Vec<Vector3<f64>> = dataset.views.iter().map(|v| v.pose.center()).collect();
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let spread = centers.iter().map(|c| (c - centroid).norm()).sum::<f64>() / centers.len() as f64;
    let reach = if spread > 1e-6 { spread } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let view = &dataset.views[i % dataset.len()];
        let (w, h) = view.image.dims();
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let depth = rng.random_range(0.3 * reach..1.5 * reach);
        let mut g = Gaussian::isotropic(
            view.pose.backproject(x as f64, y as f64, depth)?,
            0.01 * reach,
            0.5,
            *view.image.get(x, y),
        );
        g.round_to_f32();
        out.push(g);
    }
    Ok(out)
}

/// Fits `init` to the dataset by round-robin gradient descent on the image
/// loss plus, where label maps exist, the identity cross-entropy.
pub fn fit(dataset: &Dataset, init: Vec<Gaussian>, config: &FitConfig) -> Result<FitOutcome> {
    dataset.validate()?;
    let mut gaussians = init;
    let mut adam = Adam::new(gaussians.len(), config.lr);
    let trainable = vec![true; gaussians.len()];
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let view = &dataset.views[it % dataset.len()];
        let opts = RenderOptions {
            identity: view.labels.is_some(),
            ..RenderOptions::default()
        };
        let out = render_with(&gaussians, &view.pose, &opts);
        let img = l_image(&out.rgb, &view.image, config.lambda, config.variant)?;
        let mut adjoint = PixelAdjoint {
            rgb: img.grad,
            depth: None,
            identity: None,
        };
        let mut report = LossReport {
            l1: img.l1,
            ssim: 1.0 - img.ssim_loss,
            total: img.value,
            ..LossReport::default()
        };
        if let (Some(labels), Some(logits)) = (&view.labels, &out.identity) {
            let ce = identity_ce(logits, labels)?;
            report.id = ce.value;
            report.total += config.identity_weight * ce.value;
            adjoint.identity = Some(ce.grad.map(|g| g.map(|v| v * config.identity_weight)));
        }
        if !report.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("{report:?}"),
            });
        }
        let grads = render_with_gradients(&gaussians, &view.pose, &adjoint)?;
        if !grads.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: "non-finite gradient".into(),
            });
        }
        adam.step(&mut gaussians, &grads, &trainable);
        losses.push(report);
    }
    Ok(FitOutcome { gaussians, losses })
}
