use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::IDENTITY_DIM;

pub const FLOOR_LABEL: u8 = 1;
pub const WALL_LABEL: u8 = 2;

/// Room centered on the origin: floor at `z = 0`, four walls at `±half_extent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub half_extent: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned (before yaw) box resting on `base_z`.
    Box { size: [f64; 3] },
    /// Sphere resting on `base_z`.
    Sphere { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    #[serde(flatten)]
    pub primitive: Primitive,
    /// Offset of the part's base center from the object's base center.
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectShape {
    Box { size: [f64; 3] },
    Sphere { radius: f64 },
    Composite { parts: Vec<Part> },
}

impl ObjectShape {
    pub fn parts(&self) -> Vec<Part> {
        match self {
            ObjectShape::Box { size } => vec![Part {
                primitive: Primitive::Box { size: *size },
                offset: [0.0; 3],
            }],
            ObjectShape::Sphere { radius } => vec![Part {
                primitive: Primitive::Sphere { radius: *radius },
                offset: [0.0; 3],
            }],
            ObjectShape::Composite { parts } => parts.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    /// Floor position `(x, y)` of the object's base center.
    pub center: [f64; 2],
    #[serde(default)]
    pub yaw_degrees: f64,
    pub label: u8,
    pub gaussians: usize,
    pub color: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigKind {
    Ring,
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    pub kind: RigKind,
    pub views: usize,
    /// Horizontal distance from the look-at target.
    pub radius: f64,
    /// Angle of the line of sight below the horizon.
    pub elevation_degrees: f64,
    pub target: [f64; 3],
    pub fov_degrees: f64,
    /// Angular span of an arc rig.
    #[serde(default = "default_arc")]
    pub arc_degrees: f64,
    /// Azimuth of the first view.
    #[serde(default)]
    pub start_degrees: f64,
    /// Extra views placed between the training views for evaluation.
    #[serde(default)]
    pub heldout: usize,
}

fn default_arc() -> f64 {
    90.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub room: RoomSpec,
    pub floor_texture_seed: u64,
    pub wall_texture_seed: u64,
    /// Approximate counts; each surface is sampled on a jittered grid.
    pub floor_gaussians: usize,
    pub wall_gaussians: usize,
    pub object: ObjectSpec,
    pub rig: RigSpec,
    pub width: usize,
    pub height: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            room: RoomSpec {
                half_extent: 2.0,
                height: 2.0,
            },
            floor_texture_seed: 11,
            wall_texture_seed: 13,
            floor_gaussians: 3600,
            wall_gaussians: 900,
            object: ObjectSpec {
                shape: ObjectShape::Box {
                    size: [0.7, 0.7, 0.5],
                },
                center: [0.0, 0.0],
                yaw_degrees: 20.0,
                label: 5,
                gaussians: 900,
                color: [0.85, 0.35, 0.15],
            },
            rig: RigSpec {
                kind: RigKind::Ring,
                views: 8,
                radius: 1.6,
                elevation_degrees: 40.0,
                target: [0.0, 0.0, 0.2],
                fov_degrees: 60.0,
                arc_degrees: default_arc(),
                start_degrees: 0.0,
                heldout: 0,
            },
            width: 64,
            height: 64,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.rig.views == 0 {
            return fail("rig needs at least one view".into());
        }
        if self.width == 0 || self.height == 0 {
            return fail("image resolution must be nonzero".into());
        }
        let label = self.object.label as usize;
        if label >= IDENTITY_DIM {
            return fail(format!("object label {label} outside [0, {IDENTITY_DIM})"));
        }
        if [0, FLOOR_LABEL, WALL_LABEL].contains(&self.object.label) {
            return fail(format!(
                "object label {label} collides with the background or room labels"
            ));
        }
        let r = &self.room;
        if !(r.half_extent > 0.0 && r.height > 0.0) {
            return fail("room dimensions must be positive".into());
        }
        if !(self.rig.fov_degrees > 0.0 && self.rig.fov_degrees < 180.0) {
            return fail("field of view must lie in (0, 180) degrees".into());
        }
        let cam_height = self.rig.target[2]
            + self.rig.radius * self.rig.elevation_degrees.to_radians().tan();
        let reach = self.rig.target[0].hypot(self.rig.target[1]) + self.rig.radius;
        if reach >= r.half_extent || !(0.0..r.height).contains(&cam_height) {
            return fail("cameras must sit inside the room".into());
        }
        for part in self.object.shape.parts() {
            let (hx, hy, top) = match part.primitive {
                Primitive::Box { size } => {
                    if size.iter().any(|s| !(*s > 0.0)) {
                        return fail("box sizes must be positive".into());
                    }
                    let half = 0.5 * size[0].hypot(size[1]);
                    (half, half, size[2])
                }
                Primitive::Sphere { radius } => {
                    if !(radius > 0.0) {
                        return fail("sphere radius must be positive".into());
                    }
                    (radius, radius, 2.0 * radius)
                }
            };
            let cx = self.object.center[0] + part.offset[0];
            let cy = self.object.center[1] + part.offset[1];
            let inside = cx.abs() + hx < r.half_extent
                && cy.abs() + hy < r.half_extent
                && part.offset[2] >= 0.0
                && part.offset[2] + top < r.height;
            if !inside {
                return fail("object must lie inside the room".into());
            }
        }
        Ok(())
    }

    /// Diagonal of the room's bounding box.
    pub fn scene_diameter(&self) -> f64 {
        let e = 2.0 * self.room.half_extent;
        (e * e + e * e + self.room.height * self.room.height).sqrt()
    }
}
