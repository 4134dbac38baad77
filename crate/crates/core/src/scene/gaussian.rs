use nalgebra::{Matrix3, Vector3};

/// Length of the per-Gaussian identity encoding.
pub const IDENTITY_DIM: usize = 16;

/// Number of scalar parameters per Gaussian, in storage order:
/// position (3), scale (3), rotation (4, `w x y z`), opacity (1), color (3),
/// identity (16).
pub const PARAMS_PER_GAUSSIAN: usize = 30;

/// One splatting primitive.
///
/// Color is a plain RGB base color (degree-0 spherical harmonics). The
/// identity encoding holds raw logits; a pixel's label is the argmax of the
/// composited vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vector3<f64>,
    /// Quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
    pub identity: [f64; IDENTITY_DIM],
}

impl Default for Gaussian {
    fn default() -> Self {
        Gaussian {
            position: Vector3::zeros(),
            scale: Vector3::repeat(0.015625),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 1.0,
            color: [0.5; 3],
            identity: [0.0; IDENTITY_DIM],
        }
    }
}

impl Gaussian {
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian {
            position,
            scale: Vector3::repeat(sigma),
            opacity,
            color,
            ..Default::default()
        }
    }

    /// Identity logits that are `scale` on `label` and zero elsewhere.
    pub fn one_hot_identity(label: u8, scale: f64) -> [f64; IDENTITY_DIM] {
        let mut id = [0.0; IDENTITY_DIM];
        id[label as usize % IDENTITY_DIM] = scale;
        id
    }

    /// Argmax of the identity logits (lowest channel wins ties).
    pub fn label(&self) -> u8 {
        argmax(&self.identity) as u8
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(normalize_quat(self.rotation))
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&self.scale);
        let m = r * s;
        m * m.transpose()
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.position.as_slice());
        p[3..6].copy_from_slice(self.scale.as_slice());
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity;
        p[11..14].copy_from_slice(&self.color);
        p[14..30].copy_from_slice(&self.identity);
        p
    }

    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        let mut identity = [0.0; IDENTITY_DIM];
        identity.copy_from_slice(&p[14..30]);
        Gaussian {
            position: Vector3::new(p[0], p[1], p[2]),
            scale: Vector3::new(p[3], p[4], p[5]),
            rotation: [p[6], p[7], p[8], p[9]],
            opacity: p[10],
            color: [p[11], p[12], p[13]],
            identity,
        }
    }

    /// Rounds every field to the nearest single-precision value, which is the
    /// precision scenes are persisted at.
    pub fn round_to_f32(&mut self) {
        let mut p = self.to_params();
        for v in &mut p {
            *v = *v as f32 as f64;
        }
        *self = Gaussian::from_params(&p);
    }

    /// Checks the value-level invariants of a primitive.
    pub fn validate(&self) -> Result<(), String> {
        let p = self.to_params();
        if p.iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(format!("non-positive scale {:?}", self.scale.as_slice()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0,1]", self.opacity));
        }
        if self.rotation.iter().all(|&q| q == 0.0) {
            return Err("zero quaternion".into());
        }
        Ok(())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion of a rotation matrix (Shepperd's method).
pub fn matrix_to_quat(m: &Matrix3<f64>) -> [f64; 4] {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    normalize_quat(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let mut g = Gaussian::default();
        g.identity[3] = 2.5;
        g.position = Vector3::new(1.0, -2.0, 3.0);
        assert_eq!(Gaussian::from_params(&g.to_params()), g);
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let q = normalize_quat([0.3, -0.5, 0.2, 0.7]);
        let m = quat_to_matrix(q);
        assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
        let back = matrix_to_quat(&m);
        let same = q.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12);
        let flipped = q.iter().zip(&back).all(|(a, b)| (a + b).abs() < 1e-12);
        assert!(same || flipped);
    }

    #[test]
    fn label_is_argmax() {
        let g = Gaussian {
            identity: Gaussian::one_hot_identity(7, 10.0),
            ..Default::default()
        };
        assert_eq!(g.label(), 7);
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut g = Gaussian::default();
        assert!(g.validate().is_ok());
        g.scale.x = 0.0;
        assert!(g.validate().is_err());
        let g = Gaussian {
            opacity: 1.5,
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }
}
