//! Forward rendering of RGB, expected depth, identity and coverage maps, plus
//! analytic parameter gradients.
//!
//! Every pixel is the front-to-back alpha composite of the depth-sorted
//! projected footprints. Colors are premultiplied over a black background, so
//! the coverage map is the accumulated alpha. Depth is the compositing-weighted
//! mean of Gaussian-center camera depths; below the coverage floor it is the
//! [`NO_DEPTH`] sentinel.

mod project;
mod raster;

use rayon::prelude::*;

pub use project::{project, Splat, CUTOFF_MAHALANOBIS_SQ, GUARD_BAND, LOWPASS_VARIANCE, NEAR_PLANE};
use project::{backward_projection, SplatGrad};
pub use raster::MIN_TRANSMITTANCE;
use raster::{backward_tile, forward_tile, prepare, PixelAdjointRef};

use crate::error::{Error, Result};
use crate::scene::{
    argmax, CameraPose, DepthMap, Gaussian, Grid, ImageRgb, LabelMap, ScalarImage,
    BACKGROUND_LABEL, IDENTITY_DIM, NO_DEPTH, PARAMS_PER_GAUSSIAN,
};

/// Coverage below which a pixel has no defined depth or label.
pub const COVERAGE_FLOOR: f64 = 1e-3;

pub type IdentityImage = Grid<[f64; IDENTITY_DIM]>;

#[derive(Clone, Debug)]
pub struct RenderedView {
    pub rgb: ImageRgb,
    pub depth: DepthMap,
    pub coverage: ScalarImage,
    /// Composited identity logits, when requested.
    pub identity: Option<IdentityImage>,
    /// Argmax labels, when identity was composited.
    pub labels: Option<LabelMap>,
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub identity: bool,
    pub coverage_floor: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            identity: true,
            coverage_floor: COVERAGE_FLOOR,
        }
    }
}

impl RenderOptions {
    pub fn color_depth() -> Self {
        RenderOptions {
            identity: false,
            ..Default::default()
        }
    }
}

/// Renders every output channel, including identity labels.
pub fn render(gaussians: &[Gaussian], pose: &CameraPose) -> RenderedView {
    render_with(gaussians, pose, &RenderOptions::default())
}

pub fn render_with(gaussians: &[Gaussian], pose: &CameraPose, opts: &RenderOptions) -> RenderedView {
    let prep = prepare(gaussians, pose);
    let tiles: Vec<_> = (0..prep.bins.len())
        .into_par_iter()
        .map(|t| forward_tile(&prep, gaussians, pose, t, opts.identity))
        .collect();

    let (w, h) = pose.dims();
    let mut rgb = Grid::filled(w, h, [0.0; 3]);
    let mut depth = Grid::filled(w, h, NO_DEPTH);
    let mut coverage = Grid::filled(w, h, 0.0);
    let mut identity = opts.identity.then(|| Grid::filled(w, h, [0.0; IDENTITY_DIM]));
    for tile in tiles {
        for (n, &(pix, out)) in tile.pixels.iter().enumerate() {
            rgb.as_mut_slice()[pix] = out.rgb;
            coverage.as_mut_slice()[pix] = out.coverage;
            if out.coverage >= opts.coverage_floor {
                depth.as_mut_slice()[pix] = out.depth_sum / out.coverage;
            }
            if let Some(id) = identity.as_mut() {
                id.as_mut_slice()[pix] = tile.identity[n];
            }
        }
    }
    let labels = identity.as_ref().map(|id| {
        Grid::from_vec(
            w,
            h,
            id.as_slice()
                .iter()
                .zip(coverage.as_slice())
                .map(|(e, &a)| {
                    if a >= opts.coverage_floor {
                        argmax(e) as u8
                    } else {
                        BACKGROUND_LABEL
                    }
                })
                .collect(),
        )
        .expect("label map dims")
    });
    RenderedView {
        rgb,
        depth,
        coverage,
        identity,
        labels,
    }
}

/// Per-pixel argmax of the composited identity logits.
pub fn render_labels(gaussians: &[Gaussian], pose: &CameraPose) -> LabelMap {
    render(gaussians, pose)
        .labels
        .expect("identity requested")
}

/// Per-pixel gradient of a scalar loss with respect to the rendered outputs.
#[derive(Clone, Debug)]
pub struct PixelAdjoint {
    pub rgb: ImageRgb,
    pub depth: Option<DepthMap>,
    pub identity: Option<IdentityImage>,
}

impl PixelAdjoint {
    pub fn zeros(width: usize, height: usize) -> Self {
        PixelAdjoint {
            rgb: Grid::filled(width, height, [0.0; 3]),
            depth: None,
            identity: None,
        }
    }

    fn validate(&self, pose: &CameraPose) -> Result<()> {
        let dims = pose.dims();
        let check = |d: (usize, usize)| {
            if d != dims {
                Err(Error::Resolution {
                    expected: dims,
                    actual: d,
                })
            } else {
                Ok(())
            }
        };
        check(self.rgb.dims())?;
        let mut finite = self.rgb.channel_values().all(f64::is_finite);
        if let Some(d) = &self.depth {
            check(d.dims())?;
            finite &= d.as_slice().iter().all(|v| v.is_finite());
        }
        if let Some(e) = &self.identity {
            check(e.dims())?;
            finite &= e.as_slice().iter().flatten().all(|v| v.is_finite());
        }
        if !finite {
            return Err(Error::Validation("non-finite pixel adjoint".into()));
        }
        Ok(())
    }
}

/// Loss gradients for every Gaussian, in [`Gaussian::to_params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients {
    pub params: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
}

impl SplatGradients {
    pub fn zeros(n: usize) -> Self {
        SplatGradients {
            params: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn accumulate(&mut self, other: &SplatGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
    }
}

/// Backpropagates a per-pixel adjoint through the renderer.
pub fn render_with_gradients(
    gaussians: &[Gaussian],
    pose: &CameraPose,
    adjoint: &PixelAdjoint,
) -> Result<SplatGradients> {
    adjoint.validate(pose)?;
    let prep = prepare(gaussians, pose);
    let adj = PixelAdjointRef {
        rgb: adjoint.rgb.as_slice(),
        depth: adjoint.depth.as_ref().map(|d| d.as_slice()),
        identity: adjoint.identity.as_ref().map(|d| d.as_slice()),
    };
    let tiles: Vec<_> = (0..prep.bins.len())
        .into_par_iter()
        .map(|t| backward_tile(&prep, gaussians, pose, t, &adj, COVERAGE_FLOOR))
        .collect();

    // Tile-ordered reduction keeps the sums bit-stable across thread counts.
    let n_splats = prep.splats.len();
    let mut splat_grads = vec![SplatGrad::default(); n_splats];
    let mut id_grads = vec![[0.0; IDENTITY_DIM]; if adj.identity.is_some() { n_splats } else { 0 }];
    for tile in &tiles {
        for (n, &k) in tile.splat.iter().enumerate() {
            splat_grads[k as usize].add(&tile.grad[n]);
            if let Some(ig) = tile.identity.get(n) {
                for (a, b) in id_grads[k as usize].iter_mut().zip(ig) {
                    *a += b;
                }
            }
        }
    }

    let per_splat: Vec<(usize, [f64; PARAMS_PER_GAUSSIAN])> = (0..n_splats)
        .into_par_iter()
        .map(|k| {
            let s = &prep.splats[k];
            let g = &gaussians[s.index];
            let sg = &splat_grads[k];
            let (d_pos, d_scale, d_rot) = backward_projection(g, pose, &prep.caches[k], sg);
            let mut p = [0.0; PARAMS_PER_GAUSSIAN];
            p[0..3].copy_from_slice(d_pos.as_slice());
            p[3..6].copy_from_slice(d_scale.as_slice());
            p[6..10].copy_from_slice(&d_rot);
            p[10] = sg.opacity;
            p[11..14].copy_from_slice(&sg.color);
            if let Some(ig) = id_grads.get(k) {
                p[14..30].copy_from_slice(ig);
            }
            (s.index, p)
        })
        .collect();

    let mut out = SplatGradients::zeros(gaussians.len());
    for (i, p) in per_splat {
        out.params[i] = p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn pose() -> CameraPose {
        CameraPose::new(
            Matrix3::identity(),
            Vector3::zeros(),
            [40.0, 40.0, 15.5, 15.5],
            32,
            32,
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_renders_nothing() {
        let v = render(&[], &pose());
        assert!(v.coverage.as_slice().iter().all(|&a| a == 0.0));
        assert!(v.depth.as_slice().iter().all(|&d| d == NO_DEPTH));
        assert!(v.labels.unwrap().as_slice().iter().all(|&l| l == BACKGROUND_LABEL));
    }

    #[test]
    fn opaque_gaussian_on_axis() {
        let mut pose = pose();
        pose.cx = 16.0;
        pose.cy = 16.0;
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 1.0, [0.2, 0.6, 0.9]);
        let v = render(&[g], &pose);
        let c = *v.rgb.get(16, 16);
        assert_eq!(c, [0.2, 0.6, 0.9]);
        assert!((v.depth.get(16, 16) - 2.0).abs() < 1e-3);
        // brightest pixel sits at the principal point
        let peak = (0..v.rgb.len())
            .max_by(|&a, &b| v.coverage.as_slice()[a].total_cmp(&v.coverage.as_slice()[b]))
            .unwrap();
        assert_eq!(peak, 16 * 32 + 16);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let g = Gaussian::isotropic(Vector3::new(0.1, 0.0, 2.0), 0.2, 0.7, [0.5; 3]);
        let grads = render_with_gradients(&[g], &pose(), &PixelAdjoint::zeros(32, 32)).unwrap();
        assert!(grads.params[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transparent_gaussian_gets_no_color_gradient() {
        let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.2, 0.0, [0.5; 3]);
        let mut adj = PixelAdjoint::zeros(32, 32);
        adj.rgb = Grid::filled(32, 32, [1.0, -0.5, 0.25]);
        let grads = render_with_gradients(&[g], &pose(), &adj).unwrap();
        assert_eq!(&grads.params[0][11..14], &[0.0; 3]);
    }

    #[test]
    fn non_finite_adjoint_is_rejected() {
        let mut adj = PixelAdjoint::zeros(32, 32);
        adj.rgb.set(3, 3, [f64::NAN, 0.0, 0.0]);
        assert!(render_with_gradients(&[], &pose(), &adj).is_err());
        let bad_dims = PixelAdjoint::zeros(8, 8);
        assert!(render_with_gradients(&[], &pose(), &bad_dims).is_err());
    }

    #[test]
    fn one_hot_identity_labels_every_covered_pixel() {
        let gs: Vec<_> = (0..6)
            .map(|i| Gaussian {
                identity: Gaussian::one_hot_identity(3, 1.0),
                ..Gaussian::isotropic(
                    Vector3::new(-0.3 + 0.12 * i as f64, 0.05 * i as f64, 2.0 + 0.1 * i as f64),
                    0.15,
                    0.8,
                    [0.4; 3],
                )
            })
            .collect();
        let v = render(&gs, &pose());
        let labels = v.labels.unwrap();
        let mut covered = 0;
        for (l, &a) in labels.as_slice().iter().zip(v.coverage.as_slice()) {
            if a >= COVERAGE_FLOOR {
                assert_eq!(*l, 3);
                covered += 1;
            } else {
                assert_eq!(*l, BACKGROUND_LABEL);
            }
        }
        assert!(covered > 0);
    }
}
