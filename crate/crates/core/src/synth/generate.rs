use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::spec::{Primitive, RigKind, SceneSpec, FLOOR_LABEL, WALL_LABEL};
use crate::error::Result;
use crate::render::{render, render_with, RenderOptions};
use crate::scene::{
    io::quantize_rgb, matrix_to_quat, CameraPose, Dataset, Gaussian, View, IDENTITY_DIM,
};

const SURFACE_OPACITY: f64 = 0.95;
const IDENTITY_LOGIT: f64 = 10.0;
/// In-plane standard deviation relative to the sampling spacing.
const SPREAD: f64 = 0.6;
/// Normal standard deviation relative to the smaller spacing.
const THICKNESS: f64 = 0.05;

/// A generated scene with its renders.
#[derive(Clone, Debug)]
pub struct SynthScene {
    /// Visible scene: background Gaussians that can be seen plus the object.
    pub gaussians: Vec<Gaussian>,
    /// The full background, including floor Gaussians hidden under the
    /// object. Renders of this set are the object-removed ground truth.
    pub background: Vec<Gaussian>,
    pub object_label: u8,
    pub dataset: Dataset,
    /// Views between the training views, for evaluation only.
    pub heldout: Option<Dataset>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Two-octave value noise in `[0, 1]`.
pub fn texture(seed: u64, x: f64, y: f64) -> f64 {
    0.65 * value_noise(seed, 2.5 * x, 2.5 * y) + 0.35 * value_noise(seed ^ 0x51, 7.0 * x, 7.0 * y)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// A planar rectangle `origin + s·u + t·v`, `s ∈ [0, lu]`, `t ∈ [0, lv]`.
struct Rect {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    lu: f64,
    lv: f64,
}

struct Sample {
    position: Vector3<f64>,
    /// In-plane standard deviations.
    sigma_u: f64,
    sigma_v: f64,
    gaussian: Gaussian,
}

fn sample_rect(rect: &Rect, count: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let count = count.max(1);
    let rows = ((count as f64 * rect.lv / rect.lu).sqrt().round() as usize).max(1);
    let cols = ((count as f64 / rows as f64).round() as usize).max(1);
    let (su, sv) = (rect.lu / cols as f64, rect.lv / rows as f64);
    let n = rect.u.cross(&rect.v).normalize();
    let rot = Matrix3::from_columns(&[rect.u, rect.v, n]);
    let rotation = matrix_to_quat(&rot);
    let (sigma_u, sigma_v) = (SPREAD * su, SPREAD * sv);
    let thickness = THICKNESS * su.min(sv);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let s = (c as f64 + 0.5 + rng.random_range(-0.25..0.25)) * su;
            let t = (r as f64 + 0.5 + rng.random_range(-0.25..0.25)) * sv;
            let position = rect.origin + rect.u * s + rect.v * t;
            let gaussian = Gaussian {
                position,
                scale: Vector3::new(sigma_u, sigma_v, thickness),
                rotation,
                opacity: SURFACE_OPACITY,
                ..Gaussian::default()
            };
            out.push(Sample {
                position,
                sigma_u,
                sigma_v,
                gaussian,
            });
        }
    }
    out
}

fn sample_sphere(center: Vector3<f64>, radius: f64, count: usize) -> Vec<Gaussian> {
    let count = count.max(1);
    let spacing = (4.0 * std::f64::consts::PI * radius * radius / count as f64).sqrt();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let helper = if n.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            let u = helper.cross(&n).normalize();
            let v = n.cross(&u);
            Gaussian {
                position: center + n * radius,
                scale: Vector3::new(SPREAD * spacing, SPREAD * spacing, THICKNESS * spacing),
                rotation: matrix_to_quat(&Matrix3::from_columns(&[u, v, n])),
                opacity: SURFACE_OPACITY,
                ..Gaussian::default()
            }
        })
        .collect()
}

/// Object-local frame: base center on the floor, rotated by the yaw.
struct ObjectFrame {
    center: Vector3<f64>,
    ex: Vector3<f64>,
    ey: Vector3<f64>,
}

impl ObjectFrame {
    fn to_world(&self, offset: [f64; 3]) -> Vector3<f64> {
        self.center + self.ex * offset[0] + self.ey * offset[1] + Vector3::z() * offset[2]
    }
}

/// Floor footprints (as convex quads) of box parts standing on the floor.
fn footprints(spec: &SceneSpec, frame: &ObjectFrame) -> Vec<[Vector3<f64>; 4]> {
    spec.object
        .shape
        .parts()
        .iter()
        .filter_map(|part| match part.primitive {
            Primitive::Box { size } if part.offset[2] == 0.0 => {
                let c = frame.to_world(part.offset);
                let (hx, hy) = (frame.ex * 0.5 * size[0], frame.ey * 0.5 * size[1]);
                Some([c - hx - hy, c + hx - hy, c + hx + hy, c - hx + hy])
            }
            _ => None,
        })
        .collect()
}

fn inside_quad(quad: &[Vector3<f64>; 4], p: &Vector3<f64>) -> bool {
    (0..4).all(|i| {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

fn box_faces(frame: &ObjectFrame, offset: [f64; 3], size: [f64; 3]) -> Vec<Rect> {
    let base = frame.to_world(offset);
    let (ex, ey, ez) = (frame.ex, frame.ey, Vector3::z());
    let [sx, sy, sz] = size;
    let corner = base - ex * (0.5 * sx) - ey * (0.5 * sy);
    vec![
        // top, normal +z
        Rect { origin: corner + ez * sz, u: ex, v: ey, lu: sx, lv: sy },
        // -y side, normal -y
        Rect { origin: corner, u: ex, v: ez, lu: sx, lv: sz },
        // +y side, normal +y
        Rect { origin: corner + ey * sy, u: ez, v: ex, lu: sz, lv: sx },
        // -x side, normal -x
        Rect { origin: corner, u: ez, v: ey, lu: sz, lv: sy },
        // +x side, normal +x
        Rect { origin: corner + ex * sx, u: ey, v: ez, lu: sy, lv: sz },
    ]
}

fn object_gaussians(spec: &SceneSpec, frame: &ObjectFrame, rng: &mut ChaCha8Rng) -> Vec<Gaussian> {
    let obj = &spec.object;
    if obj.gaussians == 0 {
        return Vec::new();
    }
    let parts = obj.shape.parts();
    let areas: Vec<f64> = parts
        .iter()
        .map(|p| match p.primitive {
            Primitive::Box { size } => {
                size[0] * size[1] + 2.0 * size[2] * (size[0] + size[1])
            }
            Primitive::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
        })
        .collect();
    let total: f64 = areas.iter().sum();
    let seed = spec.seed ^ 0x0b1e_c7;
    let mut out = Vec::new();
    for (part, area) in parts.iter().zip(&areas) {
        let count = obj.gaussians as f64 * area / total;
        match part.primitive {
            Primitive::Box { size } => {
                for face in box_faces(frame, part.offset, size) {
                    let n = (count * face.lu * face.lv / area).round() as usize;
                    out.extend(sample_rect(&face, n, rng).into_iter().map(|s| s.gaussian));
                }
            }
            Primitive::Sphere { radius } => {
                let center = frame.to_world(part.offset) + Vector3::z() * radius;
                out.extend(sample_sphere(center, radius, count.round() as usize));
            }
        }
    }
    for g in &mut out {
        let p = g.position;
        let t = texture(seed, p.x + 0.37 * p.z, p.y + 0.61 * p.z);
        g.color = obj.color.map(|c| (c * (0.6 + 0.6 * t)).clamp(0.0, 1.0));
        g.identity = Gaussian::one_hot_identity(obj.label, IDENTITY_LOGIT);
    }
    out
}

/// Background Gaussians and, per Gaussian, whether it lies entirely under
/// the object.
fn background_gaussians(
    spec: &SceneSpec,
    frame: &ObjectFrame,
    rng: &mut ChaCha8Rng,
) -> (Vec<Gaussian>, Vec<bool>) {
    let e = spec.room.half_extent;
    let h = spec.room.height;
    let quads = if spec.object.gaussians > 0 {
        footprints(spec, frame)
    } else {
        Vec::new()
    };
    let floor = Rect {
        origin: Vector3::new(-e, -e, 0.0),
        u: Vector3::x(),
        v: Vector3::y(),
        lu: 2.0 * e,
        lv: 2.0 * e,
    };
    let mut gaussians = Vec::new();
    let mut hidden = Vec::new();
    for s in sample_rect(&floor, spec.floor_gaussians, rng) {
        let p = s.position;
        let (ru, rv) = (3.0 * s.sigma_u, 3.0 * s.sigma_v);
        let corners = [(-ru, -rv), (ru, -rv), (ru, rv), (-ru, rv)]
            .map(|(du, dv)| p + Vector3::new(du, dv, 0.0));
        hidden.push(
            quads
                .iter()
                .any(|q| corners.iter().all(|c| inside_quad(q, c))),
        );
        let t = texture(spec.floor_texture_seed, p.x, p.y);
        let mut g = s.gaussian;
        g.color = lerp3([0.45, 0.3, 0.18], [0.9, 0.8, 0.6], t);
        g.identity = Gaussian::one_hot_identity(FLOOR_LABEL, IDENTITY_LOGIT);
        gaussians.push(g);
    }
    // walls, normals facing into the room
    let walls = [
        (Vector3::new(-e, e, 0.0), Vector3::x()),
        (Vector3::new(e, e, 0.0), -Vector3::y()),
        (Vector3::new(e, -e, 0.0), -Vector3::x()),
        (Vector3::new(-e, -e, 0.0), Vector3::y()),
    ];
    for (w, (origin, u)) in walls.into_iter().enumerate() {
        let rect = Rect {
            origin,
            u,
            v: Vector3::z(),
            lu: 2.0 * e,
            lv: h,
        };
        for s in sample_rect(&rect, spec.wall_gaussians, rng) {
            let along = (s.position - origin).dot(&u) + 2.0 * e * w as f64;
            let t = texture(spec.wall_texture_seed, along, s.position.z);
            let mut g = s.gaussian;
            g.color = lerp3([0.25, 0.4, 0.55], [0.8, 0.85, 0.9], t);
            g.identity = Gaussian::one_hot_identity(WALL_LABEL, IDENTITY_LOGIT);
            gaussians.push(g);
            hidden.push(false);
        }
    }
    (gaussians, hidden)
}

/// Training poses followed by the held-out poses.
pub fn rig_poses(spec: &SceneSpec) -> Result<(Vec<CameraPose>, Vec<CameraPose>)> {
    let rig = &spec.rig;
    let target = Vector3::from(rig.target);
    let lift = rig.radius * rig.elevation_degrees.to_radians().tan();
    let pose = |deg: f64| {
        let a = deg.to_radians();
        let eye = target + Vector3::new(rig.radius * a.cos(), rig.radius * a.sin(), lift);
        CameraPose::look_at(eye, target, Vector3::z(), rig.fov_degrees, spec.width, spec.height)
    };
    let (train, held): (Vec<f64>, Vec<f64>) = match rig.kind {
        RigKind::Ring => (
            (0..rig.views)
                .map(|i| rig.start_degrees + 360.0 * i as f64 / rig.views as f64)
                .collect(),
            (0..rig.heldout)
                .map(|j| rig.start_degrees + 360.0 * (j as f64 + 0.5) / rig.heldout as f64)
                .collect(),
        ),
        RigKind::Arc => {
            let first = rig.start_degrees - 0.5 * rig.arc_degrees;
            let step = rig.arc_degrees / (rig.views.max(2) - 1) as f64;
            (
                (0..rig.views)
                    .map(|i| if rig.views == 1 { rig.start_degrees } else { first + step * i as f64 })
                    .collect(),
                (0..rig.heldout)
                    .map(|j| first + rig.arc_degrees * (j as f64 + 0.5) / rig.heldout as f64)
                    .collect(),
            )
        }
    };
    let train = train.into_iter().map(pose).collect::<Result<Vec<_>>>()?;
    let held = held.into_iter().map(pose).collect::<Result<Vec<_>>>()?;
    Ok((train, held))
}

fn render_views(
    poses: &[CameraPose],
    gaussians: &[Gaussian],
    background: &[Gaussian],
    label: u8,
) -> Result<Dataset> {
    let views = poses
        .par_iter()
        .map(|pose| {
            let with = render(gaussians, pose);
            let without = render_with(background, pose, &RenderOptions::color_depth());
            let labels = with.labels.expect("identity rendered");
            View {
                image: quantize_rgb(&with.rgb),
                pose: pose.clone(),
                mask: labels.map(|&l| l == label),
                labels: Some(labels),
                gt_removed: Some(quantize_rgb(&without.rgb)),
                gt_removed_depth: Some(without.depth.map(|&d| d as f32 as f64)),
            }
        })
        .collect();
    Dataset::new(views)
}

/// Builds the scene described by `spec` and renders its views. A pure
/// function of the spec.
pub fn generate(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    debug_assert!((spec.object.label as usize) < IDENTITY_DIM);
    let yaw = spec.object.yaw_degrees.to_radians();
    let frame = ObjectFrame {
        center: Vector3::new(spec.object.center[0], spec.object.center[1], 0.0),
        ex: Vector3::new(yaw.cos(), yaw.sin(), 0.0),
        ey: Vector3::new(-yaw.sin(), yaw.cos(), 0.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut background, hidden) = background_gaussians(spec, &frame, &mut rng);
    let mut object = object_gaussians(spec, &frame, &mut rng);
    for g in background.iter_mut().chain(object.iter_mut()) {
        g.round_to_f32();
    }
    let gaussians: Vec<Gaussian> = background
        .iter()
        .zip(&hidden)
        .filter(|(_, &h)| !h)
        .map(|(g, _)| g.clone())
        .chain(object)
        .collect();

    let (train, held) = rig_poses(spec)?;
    let dataset = render_views(&train, &gaussians, &background, spec.object.label)?;
    let heldout = if held.is_empty() {
        None
    } else {
        Some(render_views(&held, &gaussians, &background, spec.object.label)?)
    };
    Ok(SynthScene {
        gaussians,
        background,
        object_label: spec.object.label,
        dataset,
        heldout,
    })
}
