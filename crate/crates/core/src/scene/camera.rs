use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera frame: `+x` right, `+y` down, `+z` forward. Pixel `(u, v)` has its
/// center at continuous image coordinates `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let pose = CameraPose {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x_degrees: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Validation("look_at: forward parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_degrees.to_radians()).tan();
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        CameraPose::new(rotation, translation, [fx, fx, cx, cy], width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let orth = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(orth <= 1e-8) {
            return Err(Error::Validation(format!(
                "camera rotation is not orthonormal (deviation {orth:e})"
            )));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::Validation("camera rotation is a reflection".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("non-finite camera translation".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a world point to continuous pixel coordinates and camera depth.
    /// Returns `None` for points at or behind the camera plane.
    #[inline]
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(world);
        if c.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
            c.z,
        ))
    }

    /// Lifts pixel coordinates with camera depth to a world point.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::Validation(format!(
                "back-projection needs positive depth, got {depth}"
            )));
        }
        let cam = Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        );
        Ok(self.camera_to_world(&cam))
    }
}

/// On-disk form of one view's camera (row-major rotation).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let r = &p.rotation;
        PoseRecord {
            width: p.width,
            height: p.height,
            fx: p.fx,
            fy: p.fy,
            cx: p.cx,
            cy: p.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<&PoseRecord> for CameraPose {
    type Error = Error;

    fn try_from(r: &PoseRecord) -> Result<Self> {
        CameraPose::new(
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_row_slice(&r.translation),
            [r.fx, r.fy, r.cx, r.cy],
            r.width,
            r.height,
        )
    }
}
