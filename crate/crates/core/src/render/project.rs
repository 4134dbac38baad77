//! Perspective projection of 3D Gaussians to 2D footprints, and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::scene::{normalize_quat, quat_to_matrix, CameraPose, Gaussian};

/// Gaussians whose camera-space depth is at or below this are skipped.
pub const NEAR_PLANE: f64 = 0.01;

/// Isotropic variance (in px²) added to every projected footprint.
pub const LOWPASS_VARIANCE: f64 = 0.3;

/// Gaussians whose center projects further outside the image than this
/// fraction of the image size are skipped. Near the camera plane the
/// projected footprint of such a Gaussian blows up and would smear across
/// the whole view.
pub const GUARD_BAND: f64 = 0.3;

/// Squared Mahalanobis radius of the footprint cutoff (3σ).
pub const CUTOFF_MAHALANOBIS_SQ: f64 = 9.0;

/// A Gaussian projected into one view.
#[derive(Clone, Debug)]
pub struct Splat {
    /// Index into the input Gaussian slice.
    pub index: usize,
    pub mean: [f64; 2],
    /// Inverse 2D covariance as `[xx, xy, yy]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` of the 3σ ellipse.
    pub bounds: [usize; 4],
}

/// Intermediate values of the projection reused by the backward pass.
pub(crate) struct ProjectionCache {
    cam: Vector3<f64>,
    rot: Matrix3<f64>,
    /// Rotation times diagonal scale.
    m: Matrix3<f64>,
    cov3: Matrix3<f64>,
    t: Matrix2x3<f64>,
    conic: Matrix2<f64>,
}

fn jacobian(pose: &CameraPose, cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / cam.z;
    Matrix2x3::new(
        pose.fx * iz,
        0.0,
        -pose.fx * cam.x * iz * iz,
        0.0,
        pose.fy * iz,
        -pose.fy * cam.y * iz * iz,
    )
}

pub(crate) fn project_with_cache(
    g: &Gaussian,
    index: usize,
    pose: &CameraPose,
) -> Option<(Splat, ProjectionCache)> {
    let cam = pose.world_to_camera(&g.position);
    if cam.z <= NEAR_PLANE {
        return None;
    }
    let mean = [
        pose.fx * cam.x / cam.z + pose.cx,
        pose.fy * cam.y / cam.z + pose.cy,
    ];
    let (w, h) = (pose.width as f64, pose.height as f64);
    let outside = |v: f64, size: f64| v < -GUARD_BAND * size || v > (1.0 + GUARD_BAND) * size - 1.0;
    if outside(mean[0], w) || outside(mean[1], h) {
        return None;
    }
    let rot = quat_to_matrix(normalize_quat(g.rotation));
    let m = rot * Matrix3::from_diagonal(&g.scale);
    let cov3 = m * m.transpose();
    let t = jacobian(pose, &cam) * pose.rotation;
    let cov2 = t * cov3 * t.transpose() + Matrix2::identity() * LOWPASS_VARIANCE;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det;
    let r = CUTOFF_MAHALANOBIS_SQ.sqrt();
    let rx = r * cov2[(0, 0)].sqrt();
    let ry = r * cov2[(1, 1)].sqrt();
    let x0 = (mean[0] - rx).ceil().max(0.0);
    let x1 = (mean[0] + rx).floor().min(pose.width as f64 - 1.0);
    let y0 = (mean[1] - ry).ceil().max(0.0);
    let y1 = (mean[1] + ry).floor().min(pose.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let splat = Splat {
        index,
        mean,
        conic: [conic[(0, 0)], conic[(0, 1)], conic[(1, 1)]],
        depth: cam.z,
        opacity: g.opacity,
        color: g.color,
        bounds: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
    };
    Some((
        splat,
        ProjectionCache {
            cam,
            rot,
            m,
            cov3,
            t,
            conic,
        },
    ))
}

/// Projects a Gaussian; `None` when it is behind the near plane, its center
/// lies outside the guard band or its footprint misses the image.
pub fn project(g: &Gaussian, index: usize, pose: &CameraPose) -> Option<Splat> {
    project_with_cache(g, index, pose).map(|(s, _)| s)
}

/// Gradient of the loss with respect to one splat's 2D parameters.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean: [f64; 2],
    /// With respect to the unique conic entries `[xx, xy, yy]`; `xy` counts
    /// both off-diagonal slots.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl SplatGrad {
    #[inline]
    pub fn add(&mut self, o: &SplatGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
    }
}

/// Chains 2D splat gradients back to the Gaussian's position, scale and
/// quaternion. Returns `(d_position, d_scale, d_rotation)`.
pub(crate) fn backward_projection(
    g: &Gaussian,
    pose: &CameraPose,
    cache: &ProjectionCache,
    grad: &SplatGrad,
) -> (Vector3<f64>, Vector3<f64>, [f64; 4]) {
    let ProjectionCache {
        cam,
        rot,
        m,
        cov3,
        t,
        conic,
    } = cache;

    // conic = cov2^-1
    let g_conic = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let g_cov2 = -(conic * g_conic * conic);

    // cov2 = T cov3 T^T (+ const), T = J W
    let g_t = 2.0 * g_cov2 * t * cov3;
    let g_cov3 = t.transpose() * g_cov2 * t;
    let g_j = g_t * pose.rotation.transpose();

    let (x, y, z) = (cam.x, cam.y, cam.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (pose.fx, pose.fy);

    let mut g_cam = Vector3::zeros();
    // mean
    g_cam.x += grad.mean[0] * fx * iz;
    g_cam.z -= grad.mean[0] * fx * x * iz2;
    g_cam.y += grad.mean[1] * fy * iz;
    g_cam.z -= grad.mean[1] * fy * y * iz2;
    // depth
    g_cam.z += grad.depth;
    // Jacobian entries
    g_cam.z += g_j[(0, 0)] * (-fx * iz2);
    g_cam.x += g_j[(0, 2)] * (-fx * iz2);
    g_cam.z += g_j[(0, 2)] * (2.0 * fx * x * iz3);
    g_cam.z += g_j[(1, 1)] * (-fy * iz2);
    g_cam.y += g_j[(1, 2)] * (-fy * iz2);
    g_cam.z += g_j[(1, 2)] * (2.0 * fy * y * iz3);

    let d_position = pose.rotation.transpose() * g_cam;

    // cov3 = M M^T, M = R S
    let g_m = 2.0 * g_cov3 * m;
    let mut d_scale = Vector3::zeros();
    let mut g_rot = Matrix3::zeros();
    for c in 0..3 {
        for r in 0..3 {
            d_scale[c] += g_m[(r, c)] * rot[(r, c)];
            g_rot[(r, c)] = g_m[(r, c)] * g.scale[c];
        }
    }
    let d_rotation = quat_backward(g.rotation, &g_rot);
    (d_position, d_scale, d_rotation)
}

/// Gradient with respect to the raw (unnormalized) quaternion given the
/// gradient with respect to the rotation matrix of its normalization.
pub(crate) fn quat_backward(raw: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let q = normalize_quat(raw);
    let [w, x, y, z] = q;
    let gq = [
        2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]),
        2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)]
            - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]),
        2.0 * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)]
            + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]),
        2.0 * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]),
    ];
    let norm = (raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm == 0.0 {
        return [0.0; 4];
    }
    let dot: f64 = gq.iter().zip(&q).map(|(a, b)| a * b).sum();
    [
        (gq[0] - q[0] * dot) / norm,
        (gq[1] - q[1] * dot) / norm,
        (gq[2] - q[2] * dot) / norm,
        (gq[3] - q[3] * dot) / norm,
    ]
}
