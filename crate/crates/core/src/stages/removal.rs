use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{proj2d, proj3d};
use crate::inpaint::{inpaint, Backend, GroundTruth, InpaintRequest, InpaintResult};
use crate::masks::MaskSet;
use crate::render::{render_labels, render_with, RenderOptions};
use crate::scene::{
    normalize_quat, BinaryMask, CameraPose, ColoredPointCloud, Dataset, DepthMap, Gaussian, ImageRgb,
    BACKGROUND_LABEL, IDENTITY_DIM,
};

/// Neighbors averaged when initializing a replacement Gaussian.
pub const NEIGHBORS: usize = 5;

/// Splits off the Gaussians whose identity argmax is `label`. Returns the
/// remaining set and the number removed.
pub fn split_by_label(gaussians: &[Gaussian], label: u8) -> Result<(Vec<Gaussian>, usize)> {
    let remaining: Vec<Gaussian> = gaussians.iter().filter(|g| g.label() != label).cloned().collect();
    let removed = gaussians.len() - remaining.len();
    if removed == 0 {
        return Err(Error::LabelAbsent(label));
    }
    Ok((remaining, removed))
}

/// Most frequent rendered label inside the object masks, ignoring the
/// background label. Ties go to the lower label.
pub fn infer_object_label(gaussians: &[Gaussian], dataset: &Dataset) -> Result<u8> {
    let counts = dataset
        .views
        .par_iter()
        .map(|v| {
            let labels = render_labels(gaussians, &v.pose);
            let mut c = [0usize; IDENTITY_DIM];
            for (l, m) in labels.as_slice().iter().zip(v.mask.as_slice()) {
                if *m && *l != BACKGROUND_LABEL {
                    c[*l as usize] += 1;
                }
            }
            c
        })
        .reduce(
            || [0usize; IDENTITY_DIM],
            |a, b| std::array::from_fn(|i| a[i] + b[i]),
        );
    let (label, &n) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    if n == 0 {
        return Err(Error::Validation("object masks cover no labeled pixels".into()));
    }
    Ok(label as u8)
}

/// Index of the largest mask, lowest index on ties; `None` when every mask
/// is empty.
pub fn select_reference_view(refined: &[BinaryMask]) -> Option<usize> {
    let areas: Vec<usize> = refined.iter().map(BinaryMask::count).collect();
    let best = *areas.iter().max()?;
    if best == 0 {
        return None;
    }
    areas.iter().position(|&a| a == best)
}

fn nearest(remaining: &[Gaussian], p: &nalgebra::Vector3<f64>) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = remaining
        .iter()
        .enumerate()
        .map(|(i, g)| ((g.position - p).norm_squared(), i))
        .collect();
    let k = NEIGHBORS.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// Replacement Gaussians at points of `p1`. Position and color come from the
/// sampled point; scale, rotation, opacity and identity are averaged over the
/// nearest remaining Gaussians.
pub fn init_new_gaussians(
    p1: &ColoredPointCloud,
    count: usize,
    remaining: &[Gaussian],
    seed: u64,
) -> Result<Vec<Gaussian>> {
    if p1.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    if remaining.is_empty() {
        return Err(Error::Validation("no remaining Gaussians to initialize from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if p1.len() >= count {
        sample(&mut rng, p1.len(), count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..p1.len())).collect()
    };
    Ok(picks
        .par_iter()
        .map(|&i| {
            let point = &p1.points[i];
            let nn = nearest(remaining, &point.position);
            let n = nn.len() as f64;
            let mut g = Gaussian {
                position: point.position,
                color: point.color,
                scale: nalgebra::Vector3::zeros(),
                rotation: [0.0; 4],
                opacity: 0.0,
                identity: [0.0; IDENTITY_DIM],
            };
            // q and -q are the same rotation; align to the first neighbor.
            let q0 = remaining[nn[0]].rotation;
            for &j in &nn {
                let r = &remaining[j];
                g.scale += r.scale / n;
                g.opacity += r.opacity / n;
                let dot: f64 = (0..4).map(|c| q0[c] * r.rotation[c]).sum();
                let s = if dot < 0.0 { -1.0 } else { 1.0 };
                for c in 0..4 {
                    g.rotation[c] += s * r.rotation[c] / n;
                }
                for c in 0..IDENTITY_DIM {
                    g.identity[c] += r.identity[c] / n;
                }
            }
            g.rotation = normalize_quat(g.rotation);
            g.round_to_f32();
            g
        })
        .collect())
}

/// The lifted inpainted reference view and the per-view targets built from
/// it.
#[derive(Clone, Debug)]
pub struct Supervision {
    /// `P_1`: inpainted reference pixels inside its refined mask, in 3D.
    pub p1: ColoredPointCloud,
    /// `I^P_k`.
    pub images: Vec<ImageRgb>,
    /// Refined-mask pixels of each view that `P_1` lands on.
    pub covered: Vec<BinaryMask>,
}

/// Lifts the inpainted reference inside its refined mask and splats it into
/// every view's refined mask over the object-removed renders. Masked pixels
/// no point lands on keep the removed render.
pub fn build_supervision(
    refined: &[BinaryMask],
    reference: usize,
    inpainted: &ImageRgb,
    inpainted_depth: &DepthMap,
    poses: &[CameraPose],
    removal_renders: &[ImageRgb],
) -> Supervision {
    let (p1, _) = proj3d(inpainted, &refined[reference], inpainted_depth, &poses[reference]);
    let (images, covered) = (0..poses.len())
        .into_par_iter()
        .map(|k| {
            let proj = proj2d(&p1, &poses[k]).restrict_to(&refined[k]);
            let mut image = removal_renders[k].clone();
            for p in &proj.pixels {
                image.set(p.x, p.y, p.color);
            }
            (image, proj.coverage_mask())
        })
        .unzip();
    Supervision { p1, images, covered }
}

/// State handed from object removal to refinement.
#[derive(Clone, Debug)]
pub struct RemovalResult {
    pub label: u8,
    /// `G'` before replacements are added.
    pub remaining: Vec<Gaussian>,
    pub removed_count: usize,
    /// `None` when every refined mask is empty and nothing needs inpainting.
    pub reference: Option<usize>,
    pub refined_masks: Vec<BinaryMask>,
    /// `I'_k`: renders of the remaining Gaussians.
    pub removal_renders: Vec<ImageRgb>,
    /// `I^In`, `D^In` of the reference view.
    pub inpainted: Option<InpaintResult>,
    pub supervision: Option<Supervision>,
    pub replacements: Vec<Gaussian>,
}

/// Ground truth of a view, when the dataset carries it.
pub(crate) fn view_truth(dataset: &Dataset, k: usize) -> Option<GroundTruth<'_>> {
    let v = &dataset.views[k];
    Some(GroundTruth {
        image: v.gt_removed.as_ref()?,
        depth: v.gt_removed_depth.as_ref()?,
    })
}

impl RemovalResult {
    /// Removal state before inpainting: renders the remaining Gaussians in
    /// every view and picks the reference view.
    pub fn new(
        label: u8,
        remaining: Vec<Gaussian>,
        removed_count: usize,
        refined_masks: Vec<BinaryMask>,
        poses: &[CameraPose],
    ) -> Self {
        let removal_renders = poses
            .par_iter()
            .map(|p| render_with(&remaining, p, &RenderOptions::color_depth()).rgb)
            .collect();
        RemovalResult {
            label,
            remaining,
            removed_count,
            reference: select_reference_view(&refined_masks),
            refined_masks,
            removal_renders,
            inpainted: None,
            supervision: None,
            replacements: Vec::new(),
        }
    }

    /// Remaining Gaussians followed by the replacements.
    pub fn scene(&self) -> Vec<Gaussian> {
        self.remaining.iter().chain(&self.replacements).cloned().collect()
    }

    /// Inpaints the object-removed render of the reference view. `None` when
    /// there is no reference view.
    pub fn inpaint_reference(&self, dataset: &Dataset, backend: &Backend) -> Result<Option<InpaintResult>> {
        let Some(reference) = self.reference else {
            return Ok(None);
        };
        let pose = &dataset.views[reference].pose;
        let render = render_with(&self.remaining, pose, &RenderOptions::color_depth());
        inpaint(
            &InpaintRequest {
                image: &render.rgb,
                depth: &render.depth,
                mask: &self.refined_masks[reference],
            },
            backend,
            view_truth(dataset, reference),
        )
        .map(Some)
    }

    /// Stores the reference inpainting and the supervision lifted from it.
    pub fn attach_inpainting(&mut self, inpainted: InpaintResult, poses: &[CameraPose]) -> Result<()> {
        let reference = self
            .reference
            .ok_or_else(|| Error::Validation("no reference view to attach an inpainting to".into()))?;
        let sup = build_supervision(
            &self.refined_masks,
            reference,
            &inpainted.image,
            &inpainted.depth,
            poses,
            &self.removal_renders,
        );
        self.inpainted = Some(inpainted);
        self.supervision = Some(sup);
        Ok(())
    }

    /// Initializes one replacement per removed Gaussian from the lifted
    /// inpainting.
    pub fn init_replacements(&mut self, seed: u64) -> Result<()> {
        let sup = self
            .supervision
            .as_ref()
            .ok_or_else(|| Error::Validation("replacements need the lifted inpainting".into()))?;
        self.replacements = init_new_gaussians(&sup.p1, self.removed_count, &self.remaining, seed)?;
        Ok(())
    }
}

/// Removes the object, inpaints the reference view and initializes one
/// replacement per removed Gaussian from the lifted inpainting.
pub fn remove_object(
    gaussians: &[Gaussian],
    label: u8,
    dataset: &Dataset,
    masks: &MaskSet,
    backend: &Backend,
    seed: u64,
) -> Result<RemovalResult> {
    let (remaining, removed_count) = split_by_label(gaussians, label)?;
    let poses = dataset.poses();
    let mut result = RemovalResult::new(label, remaining, removed_count, masks.refined.clone(), &poses);
    if let Some(inpainted) = result.inpaint_reference(dataset, backend)? {
        result.attach_inpainting(inpainted, &poses)?;
        result.init_replacements(seed)?;
    }
    Ok(result)
}
