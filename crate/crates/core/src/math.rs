//! Rigid-body pose type and rotation helpers shared across the simulator.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Pose {
            position,
            orientation: Quat::identity(),
        }
    }

    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Pose {
            position,
            orientation: Quat::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(&other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.orientation.inverse();
        Pose {
            position: -(inv_rot * self.position),
            orientation: inv_rot,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// Quaternion norm drift from unit length; serde round trips can denormalize.
    pub fn quat_norm_error(&self) -> f64 {
        (self.orientation.coords.norm() - 1.0).abs()
    }
}

/// Build a unit quaternion from (w, x, y, z) components, normalizing.
pub fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Quat {
    Quat::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
}

/// Compose a rotation from intrinsic Z-Y-X angles: R = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn quat_from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Quat {
    let rz = Quat::from_axis_angle(&Vector3::z_axis(), yaw);
    let ry = Quat::from_axis_angle(&Vector3::y_axis(), pitch);
    let rx = Quat::from_axis_angle(&Vector3::x_axis(), roll);
    rz * ry * rx
}

/// Decompose into (roll, pitch, yaw) under R = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn euler_zyx(q: &Quat) -> (f64, f64, f64) {
    let m = q.to_rotation_matrix();
    let m = m.matrix();
    // m31 = -sin(pitch); m32 = sin(roll) cos(pitch); m11 = cos(yaw) cos(pitch)
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    (roll, pitch, yaw)
}

/// Yaw component of a rotation under the Z-Y-X convention.
pub fn yaw_of(q: &Quat) -> f64 {
    euler_zyx(q).2
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    } else if x < -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn euler_round_trip_against_composition() {
        // Decomposition oracle: rebuild the rotation from the recovered angles.
        let cases = [
            (0.0, 0.0, 0.0),
            (0.3, 0.0, 0.0),
            (0.0, 0.4, 0.0),
            (0.0, 0.0, 1.2),
            (0.2, -0.5, 0.9),
            (-1.1, 0.7, -2.3),
        ];
        for (r, p, y) in cases {
            let q = quat_from_euler_zyx(r, p, y);
            let (rr, pp, yy) = euler_zyx(&q);
            let q2 = quat_from_euler_zyx(rr, pp, yy);
            assert!(q.angle_to(&q2) < 1e-9, "case ({r},{p},{y})");
        }
    }

    #[test]
    fn pure_rotations_decompose_exactly() {
        let (r, p, _) = euler_zyx(&quat_from_euler_zyx(0.3, 0.0, 0.0));
        assert!((r - 0.3).abs() < 1e-12 && p.abs() < 1e-12);
        let (r, p, y) = euler_zyx(&quat_from_euler_zyx(0.0, 0.0, 0.7));
        assert!(r.abs() < 1e-12 && p.abs() < 1e-12 && (y - 0.7).abs() < 1e-12);
    }

    #[test]
    fn pose_compose_inverse() {
        let a = Pose::new(Vec3::new(0.1, -0.2, 0.3), quat_from_euler_zyx(0.2, 0.1, -0.4));
        let b = a.compose(&a.inverse());
        assert!(b.position.norm() < 1e-12);
        assert!(b.orientation.angle() < 1e-12);
    }

    proptest! {
        #[test]
        fn euler_zyx_recomposes(r in -1.4f64..1.4, p in -1.4f64..1.4, y in -3.0f64..3.0) {
            let q = quat_from_euler_zyx(r, p, y);
            let (rr, pp, yy) = euler_zyx(&q);
            let q2 = quat_from_euler_zyx(rr, pp, yy);
            prop_assert!(q.angle_to(&q2) < 1e-8);
        }
    }
}
