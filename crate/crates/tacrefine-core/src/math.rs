//! Minimal 3D math: vectors, unit quaternions, rigid transforms and the
//! R6 pose parameterization shared by dataset labels and the controller.
//!
//! The euler convention is fixed once here: `(roll, pitch, yaw)` compose as
//! `Rz(yaw) * Ry(pitch) * Rx(roll)` (rotations about the fixed world axes,
//! roll first). Everything that produces or consumes pose increments goes
//! through this module so labels and applied increments cannot drift apart.

use std::ops::{Add, Mul, Neg, Sub};

pub const TAU: f64 = std::f64::consts::TAU;

/// 3-vector in meters (or any consistent unit).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion `(w, x, y, z)` representing a rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let half = 0.5 * angle;
        let s = half.sin();
        Quat::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotate a vector by this quaternion.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2 q_v x (q_v x v + w v)
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = qv.cross(v).scale(2.0);
        v + t.scale(self.w) + qv.cross(t)
    }

    /// World-axis euler composition: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Quat {
        let qx = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), roll);
        let qy = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), pitch);
        let qz = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), yaw);
        (qz * qy * qx).normalized()
    }

    /// Inverse of [`Quat::from_euler`]. Pitch is clamped at the gimbal
    /// singularity (|pitch| = pi/2), far outside the sampled pose range.
    pub fn to_euler(self) -> (f64, f64, f64) {
        let q = self;
        // Rotation matrix entries needed for ZYX extraction.
        let r20 = 2.0 * (q.x * q.z - q.w * q.y);
        let r21 = 2.0 * (q.y * q.z + q.w * q.x);
        let r22 = 1.0 - 2.0 * (q.x * q.x + q.y * q.y);
        let r00 = 1.0 - 2.0 * (q.y * q.y + q.z * q.z);
        let r10 = 2.0 * (q.x * q.y + q.w * q.z);
        let pitch = (-r20).clamp(-1.0, 1.0).asin();
        let roll = r21.atan2(r22);
        let yaw = r10.atan2(r00);
        (roll, pitch, yaw)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rot: Quat,
    pub trans: Vec3,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { rot: Quat::IDENTITY, trans: Vec3::ZERO };

    pub fn new(rot: Quat, trans: Vec3) -> Self {
        Transform { rot, trans }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rot.rotate(p) + self.trans
    }

    /// Rotate a direction (no translation).
    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        self.rot.rotate(d)
    }

    pub fn inverse(&self) -> Transform {
        let inv_rot = self.rot.conjugate();
        Transform::new(inv_rot, -inv_rot.rotate(self.trans))
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform::new(
            (self.rot * other.rot).normalized(),
            self.rot.rotate(other.trans) + self.trans,
        )
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % TAU;
    if r <= -std::f64::consts::PI {
        r += TAU;
    } else if r > std::f64::consts::PI {
        r -= TAU;
    }
    r
}

/// Pose in the R6 parameterization `(x, y, z, roll, pitch, yaw)` used for
/// dataset labels and controller increments.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose6(pub [f64; 6]);

impl Pose6 {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn orientation(&self) -> Quat {
        Quat::from_euler(self.0[3], self.0[4], self.0[5])
    }

    /// Componentwise difference `target - current`, angles wrapped.
    pub fn delta_from(target: &Pose6, current: &Pose6) -> [f64; 6] {
        let mut d = [0.0; 6];
        for i in 0..3 {
            d[i] = target.0[i] - current.0[i];
        }
        for i in 3..6 {
            d[i] = wrap_angle(target.0[i] - current.0[i]);
        }
        d
    }

    /// Apply a (clamped) increment: translation added in the world frame,
    /// rotation as euler offsets in the same parameterization as the labels.
    pub fn apply_increment(&self, delta: &[f64; 6]) -> Pose6 {
        let mut p = self.0;
        for i in 0..3 {
            p[i] += delta[i];
        }
        for i in 3..6 {
            p[i] = wrap_angle(p[i] + delta[i]);
        }
        Pose6(p)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    fn assert_vec_close(a: Vec3, b: Vec3, tol: f64) {
        assert!((a - b).norm() < tol, "{a:?} != {b:?}");
    }

    #[test]
    fn quat_rotation_basis() {
        // 90 deg about z maps x -> y.
        let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        assert_vec_close(q.rotate(Vec3::new(1.0, 0.0, 0.0)), Vec3::new(0.0, 1.0, 0.0), 1e-12);
        // 90 deg about x maps y -> z.
        let q = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), std::f64::consts::FRAC_PI_2);
        assert_vec_close(q.rotate(Vec3::new(0.0, 1.0, 0.0)), Vec3::new(0.0, 0.0, 1.0), 1e-12);
    }

    #[test]
    fn euler_composition_order() {
        // Pure yaw then checking a roll+yaw compose in the fixed-axes order:
        // from_euler(r,p,y) must equal qz*qy*qx applied right-to-left.
        let (r, p, y) = (0.3, -0.2, 0.7);
        let q = Quat::from_euler(r, p, y);
        let v = Vec3::new(0.2, -0.5, 0.9);
        let step = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), y)
            .rotate(Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), p).rotate(
                Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), r).rotate(v),
            ));
        assert_vec_close(q.rotate(v), step, 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        for &(r, p, y) in &[
            (0.0, 0.0, 0.0),
            (0.15, -0.15, 0.0),
            (-0.1, 0.05, 0.3),
            (1.0, 0.7, -2.0),
        ] {
            let (r2, p2, y2) = Quat::from_euler(r, p, y).to_euler();
            assert!((r - r2).abs() < 1e-12 && (p - p2).abs() < 1e-12 && (y - y2).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_inverse_round_trip() {
        let t = Transform::new(Quat::from_euler(0.4, -0.2, 1.1), Vec3::new(0.1, -0.3, 0.2));
        let p = Vec3::new(0.7, 0.2, -0.4);
        assert_vec_close(t.inverse().apply(t.apply(p)), p, 1e-12);
        let u = Transform::new(Quat::from_euler(-0.7, 0.1, 0.2), Vec3::new(-0.2, 0.0, 0.5));
        assert_vec_close(t.compose(&u).apply(p), t.apply(u.apply(p)), 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < EPS);
        assert!((wrap_angle(-3.5) - (-3.5 + TAU)).abs() < EPS);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn pose6_delta_and_increment_agree() {
        let a = Pose6([0.0, 0.01, -0.02, 0.1, -0.05, 0.0]);
        let b = Pose6([0.0, -0.01, 0.02, -0.1, 0.15, 0.0]);
        let d = Pose6::delta_from(&b, &a);
        let c = a.apply_increment(&d);
        for i in 0..6 {
            assert!((c.0[i] - b.0[i]).abs() < EPS);
        }
        // Antisymmetry.
        let d_rev = Pose6::delta_from(&a, &b);
        for i in 0..6 {
            assert!((d[i] + d_rev[i]).abs() < EPS);
        }
    }
}
