//! Scalar objectives and their per-pixel adjoints.

mod perceptual;
mod ssim;

pub use perceptual::{PerceptualNet, DEFAULT_PERCEPTUAL_SEED};
pub use ssim::{ssim, ssim_masked, ssim_with_grad, C1, C2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::IdentityImage;
use crate::scene::{DepthMap, Grid, ImageRgb, LabelMap, IDENTITY_DIM};

/// Default weight of the L1 term in the image loss.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Pairwise (tree) summation; the result depends only on the input order.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

/// Named loss components of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    /// SSIM itself; the loss term is `1 - ssim`.
    pub ssim: f64,
    pub depth: f64,
    pub cross: f64,
    pub id: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.ssim, self.depth, self.cross, self.id, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A scalar loss and its gradient with respect to the rendered input.
#[derive(Clone, Debug)]
pub struct Loss<G> {
    pub value: f64,
    pub grad: G,
}

/// How the L1 and SSIM terms of the image loss are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageLossVariant {
    /// `λ·L1 + (1 - SSIM)`.
    #[default]
    Literal,
    /// `(1 - λ)·L1 + λ·(1 - SSIM)`.
    Weighted,
}

/// Mean absolute error over pixels and channels, with its subgradient.
pub fn l1(rendered: &ImageRgb, target: &ImageRgb) -> Result<Loss<ImageRgb>> {
    rendered.check_same_dims(target)?;
    let n = (3 * rendered.len()) as f64;
    let diffs: Vec<f64> = rendered
        .channel_values()
        .zip(target.channel_values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let grad = Grid::from_vec(
        rendered.width(),
        rendered.height(),
        rendered
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| std::array::from_fn(|c| sign(a[c] - b[c]) / n))
            .collect(),
    )?;
    Ok(Loss {
        value: tree_sum(&diffs) / n,
        grad,
    })
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Image loss with its components.
#[derive(Clone, Debug)]
pub struct ImageLoss {
    pub l1: f64,
    /// `1 - SSIM`.
    pub ssim_loss: f64,
    pub value: f64,
    pub grad: ImageRgb,
}

/// Rendering loss `λ·L1 + (1 - SSIM)` (or the weighted variant).
pub fn l_image(
    rendered: &ImageRgb,
    target: &ImageRgb,
    lambda: f64,
    variant: ImageLossVariant,
) -> Result<ImageLoss> {
    let l = l1(rendered, target)?;
    let (s, sg) = ssim_with_grad(rendered, target);
    let (wl1, wssim) = match variant {
        ImageLossVariant::Literal => (lambda, 1.0),
        ImageLossVariant::Weighted => (1.0 - lambda, lambda),
    };
    let grad = Grid::from_vec(
        rendered.width(),
        rendered.height(),
        l.grad
            .as_slice()
            .iter()
            .zip(sg.as_slice())
            .map(|(a, b)| std::array::from_fn(|c| wl1 * a[c] - wssim * b[c]))
            .collect(),
    )?;
    Ok(ImageLoss {
        l1: l.value,
        ssim_loss: 1.0 - s,
        value: wl1 * l.value + wssim * (1.0 - s),
        grad,
    })
}

/// Reference-view RGB loss `L1 + (1 - SSIM)`.
pub fn l_rgb(rendered: &ImageRgb, target: &ImageRgb) -> Result<ImageLoss> {
    l_image(rendered, target, 1.0, ImageLossVariant::Literal)
}

/// Mean absolute depth error over pixels valid in both maps.
pub fn l_depth(rendered: &DepthMap, target: &DepthMap) -> Result<Loss<DepthMap>> {
    rendered.check_same_dims(target)?;
    let pairs: Vec<(usize, f64)> = rendered
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .enumerate()
        .filter(|(_, (&a, &b))| a > 0.0 && b > 0.0)
        .map(|(p, (&a, &b))| (p, a - b))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoDepthOverlap);
    }
    let n = pairs.len() as f64;
    let abs: Vec<f64> = pairs.iter().map(|(_, d)| d.abs()).collect();
    let mut grad = Grid::filled(rendered.width(), rendered.height(), 0.0);
    for &(p, d) in &pairs {
        grad.as_mut_slice()[p] = sign(d) / n;
    }
    Ok(Loss {
        value: tree_sum(&abs) / n,
        grad,
    })
}

/// Mean per-pixel softmax cross-entropy of composited identity logits.
pub fn identity_ce(logits: &IdentityImage, labels: &LabelMap) -> Result<Loss<IdentityImage>> {
    logits.check_same_dims(labels)?;
    let n = logits.len() as f64;
    let mut per_pixel = Vec::with_capacity(logits.len());
    let mut grad = Grid::filled(logits.width(), logits.height(), [0.0; IDENTITY_DIM]);
    for (p, (z, &label)) in logits.as_slice().iter().zip(labels.as_slice()).enumerate() {
        let label = label as usize;
        if label >= IDENTITY_DIM {
            return Err(Error::Validation(format!("label {label} outside [0, {IDENTITY_DIM})")));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: [f64; IDENTITY_DIM] = std::array::from_fn(|c| (z[c] - max).exp());
        let sum: f64 = exps.iter().sum();
        per_pixel.push(max + sum.ln() - z[label]);
        let g = &mut grad.as_mut_slice()[p];
        for c in 0..IDENTITY_DIM {
            g[c] = (exps[c] / sum - if c == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok(Loss {
        value: tree_sum(&per_pixel) / n,
        grad,
    })
}

/// Perceptual distance between two images under `net`.
pub fn perceptual_distance(net: &PerceptualNet, a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(net.distance(a, b))
}

/// Cross-view consistency loss: the sum of perceptual distances between each
/// render and its projected supervision. Gradients are with respect to the
/// renders, supervision held fixed.
pub fn l_cross(net: &PerceptualNet, renders: &[ImageRgb], supervision: &[ImageRgb]) -> Result<Loss<Vec<ImageRgb>>> {
    if renders.len() != supervision.len() {
        return Err(Error::Validation(format!(
            "{} renders but {} supervision images",
            renders.len(),
            supervision.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(renders.len());
    for (r, s) in renders.iter().zip(supervision) {
        r.check_same_dims(s)?;
        let (d, g) = net.distance_with_grad(r, s);
        value += d;
        grads.push(g);
    }
    Ok(Loss { value, grad: grads })
}
