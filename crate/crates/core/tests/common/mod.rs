//! Helpers shared by the integration test targets: random scenes and
//! cameras, an independent brute-force compositor, and finite differences.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gsinpaint_core::render::{PixelAdjoint, SplatGradients};
use gsinpaint_core::scene::{CameraPose, Gaussian, IDENTITY_DIM, PARAMS_PER_GAUSSIAN};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Arbitrary camera: random orientation, position and intrinsics.
pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let width = rng.random_range(16..640);
    let height = rng.random_range(16..480);
    let fx = rng.random_range(20.0..800.0);
    let fy = fx * rng.random_range(0.8..1.25);
    let cx = rng.random_range(0.0..width as f64 - 1.0);
    let cy = rng.random_range(0.0..height as f64 - 1.0);
    let t = Vector3::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
    );
    CameraPose::new(random_rotation(rng), t, [fx, fy, cx, cy], width, height).unwrap()
}

/// Camera on a sphere around the origin, looking at it.
pub fn orbit_pose(rng: &mut ChaCha8Rng, width: usize, height: usize) -> CameraPose {
    let dir = loop {
        let v: Vector3<f64> = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.2 && n < 1.0 && (v.z / n).abs() < 0.9 {
            break v / n;
        }
    };
    let eye = dir * rng.random_range(2.5..4.0);
    CameraPose::look_at(eye, Vector3::zeros(), Vector3::z(), 60.0, width, height).unwrap()
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if q.iter().map(|v| v * v).sum::<f64>() > 0.05 {
            return q;
        }
    }
}

/// Up to `n` anisotropic Gaussians scattered around the origin.
pub fn random_gaussians(rng: &mut ChaCha8Rng, n: usize, extent: f64, scale: (f64, f64)) -> Vec<Gaussian> {
    (0..n)
        .map(|_| {
            let mut identity = [0.0; IDENTITY_DIM];
            for v in &mut identity {
                *v = rng.random_range(-2.0..2.0);
            }
            Gaussian {
                position: Vector3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                ),
                scale: Vector3::new(
                    rng.random_range(scale.0..scale.1),
                    rng.random_range(scale.0..scale.1),
                    rng.random_range(scale.0..scale.1),
                ),
                rotation: random_quat(rng),
                opacity: rng.random_range(0.05..0.95),
                color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                identity,
            }
        })
        .collect()
}

/// Brute-force render: every Gaussian is tested at every pixel.
pub struct Reference {
    pub rgb: Vec<[f64; 3]>,
    pub coverage: Vec<f64>,
    /// `Σ w z / Σ w`, or -1 below the coverage floor.
    pub depth: Vec<f64>,
    pub identity: Vec<[f64; IDENTITY_DIM]>,
}

struct Footprint {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    conic: Matrix2<f64>,
}

/// Screen-space footprint from first principles: `Σ2 = J W Σ3 Wᵀ Jᵀ + 0.3 I`.
fn footprint(g: &Gaussian, index: usize, pose: &CameraPose) -> Option<Footprint> {
    let c = pose.rotation * g.position + pose.translation;
    if c.z <= 0.01 {
        return None;
    }
    let u = pose.fx * c.x / c.z + pose.cx;
    let v = pose.fy * c.y / c.z + pose.cy;
    let (w, h) = (pose.width as f64, pose.height as f64);
    if u < -0.3 * w || u > 1.3 * w - 1.0 || v < -0.3 * h || v > 1.3 * h - 1.0 {
        return None;
    }
    let [qw, qx, qy, qz] = g.rotation;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz))
        .to_rotation_matrix()
        .into_inner();
    let s = Matrix3::from_diagonal(&g.scale);
    let sigma3 = r * s * s * r.transpose();
    let j = Matrix2x3::new(
        pose.fx / c.z,
        0.0,
        -pose.fx * c.x / (c.z * c.z),
        0.0,
        pose.fy / c.z,
        -pose.fy * c.y / (c.z * c.z),
    );
    let t = j * pose.rotation;
    let sigma2 = t * sigma3 * t.transpose() + Matrix2::identity() * 0.3;
    Some(Footprint {
        index,
        depth: c.z,
        mean: [u, v],
        conic: sigma2.try_inverse()?,
    })
}

pub fn brute_force_render(gaussians: &[Gaussian], pose: &CameraPose) -> Reference {
    let mut fps: Vec<Footprint> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| footprint(g, i, pose))
        .collect();
    fps.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let n = pose.width * pose.height;
    let mut out = Reference {
        rgb: vec![[0.0; 3]; n],
        coverage: vec![0.0; n],
        depth: vec![-1.0; n],
        identity: vec![[0.0; IDENTITY_DIM]; n],
    };
    for y in 0..pose.height {
        for x in 0..pose.width {
            let p = y * pose.width + x;
            let mut t = 1.0;
            let mut depth_sum = 0.0;
            for f in &fps {
                let d = nalgebra::Vector2::new(x as f64 - f.mean[0], y as f64 - f.mean[1]);
                let m = (d.transpose() * f.conic * d)[(0, 0)];
                if m > 9.0 {
                    continue;
                }
                let g = &gaussians[f.index];
                let alpha = g.opacity * (-0.5 * m).exp();
                let w = alpha * t;
                for c in 0..3 {
                    out.rgb[p][c] += w * g.color[c];
                }
                for c in 0..IDENTITY_DIM {
                    out.identity[p][c] += w * g.identity[c];
                }
                out.coverage[p] += w;
                depth_sum += w * f.depth;
                t *= 1.0 - alpha;
                if t < 1e-7 {
                    break;
                }
            }
            if out.coverage[p] >= 1e-3 {
                out.depth[p] = depth_sum / out.coverage[p];
            }
        }
    }
    out
}

/// Central-difference gradient of `loss` with respect to every parameter.
pub fn finite_difference(
    gaussians: &[Gaussian],
    h: f64,
    loss: impl Fn(&[Gaussian]) -> f64,
) -> Vec<[f64; PARAMS_PER_GAUSSIAN]> {
    let mut out = vec![[0.0; PARAMS_PER_GAUSSIAN]; gaussians.len()];
    let mut work = gaussians.to_vec();
    for i in 0..gaussians.len() {
        let base = gaussians[i].to_params();
        for k in 0..PARAMS_PER_GAUSSIAN {
            let mut p = base;
            p[k] = base[k] + h;
            work[i] = Gaussian::from_params(&p);
            let plus = loss(&work);
            p[k] = base[k] - h;
            work[i] = Gaussian::from_params(&p);
            let minus = loss(&work);
            out[i][k] = (plus - minus) / (2.0 * h);
        }
        work[i] = gaussians[i].clone();
    }
    out
}

/// Largest relative error between analytic and numeric gradients. Entries
/// whose magnitude is below `floor` are compared against `floor`.
pub fn max_relative_error(
    analytic: &SplatGradients,
    numeric: &[[f64; PARAMS_PER_GAUSSIAN]],
    floor: f64,
) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for (i, (a, n)) in analytic.params.iter().zip(numeric).enumerate() {
        for k in 0..PARAMS_PER_GAUSSIAN {
            let scale = a[k].abs().max(n[k].abs()).max(floor);
            let e = (a[k] - n[k]).abs() / scale;
            if e > worst.0 {
                worst = (e, i, k);
            }
        }
    }
    worst
}

pub fn rgb_adjoint(rgb: gsinpaint_core::ImageRgb) -> PixelAdjoint {
    PixelAdjoint {
        rgb,
        depth: None,
        identity: None,
    }
}

/// Scene spec from the repository's `fixtures/` directory.
pub fn fixture_spec(name: &str) -> gsinpaint_core::synth::SceneSpec {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Object-removed depth maps of every view.
pub fn removed_depths(dataset: &gsinpaint_core::Dataset) -> Vec<gsinpaint_core::DepthMap> {
    dataset.views.iter().map(|v| v.gt_removed_depth.clone().expect("synthetic view")).collect()
}
