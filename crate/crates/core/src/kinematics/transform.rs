use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use std::ops::Mul;

/// 4x4 homogeneous rigid transform.
///
/// The rotation block is expected to stay orthonormal; every constructor in
/// this module produces one, and [`Transform::is_rigid`] checks it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform(Matrix4<f64>);

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    /// Wraps a raw matrix without checking rigidity.
    pub fn from_matrix_unchecked(m: Matrix4<f64>) -> Self {
        Self(m)
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        Self(m)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(&Matrix3::identity(), &t)
    }

    /// Pose from translation plus roll/pitch/yaw, applied as Rz(yaw)·Ry(pitch)·Rx(roll).
    pub fn from_xyz_rpy(xyz: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        let r = Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z);
        Self::from_parts(r.matrix(), &xyz)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, c, -s, 0.0, //
            0.0, s, c, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix4::new(
            c, 0.0, s, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            -s, 0.0, c, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix4::new(
            c, -s, 0.0, 0.0, //
            s, c, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ))
    }

    pub fn trans_x(a: f64) -> Self {
        Self::from_translation(Vector3::new(a, 0.0, 0.0))
    }

    pub fn trans_z(d: f64) -> Self {
        Self::from_translation(Vector3::new(0.0, 0.0, d))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn set_translation(&mut self, t: Vector3<f64>) {
        self.0.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    }

    /// Rigid inverse: (R, t)⁻¹ = (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Self::from_parts(&rt, &t)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// Roll, pitch, yaw of the rotation block (inverse of [`Transform::from_xyz_rpy`]).
    pub fn rpy(&self) -> Vector3<f64> {
        let r = Rotation3::from_matrix_unchecked(self.rotation());
        let (roll, pitch, yaw) = r.euler_angles();
        Vector3::new(roll, pitch, yaw)
    }

    /// Checks RᵀR = I, det R = +1 and the homogeneous bottom row.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.rotation();
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = (r.determinant() - 1.0).abs();
        let row = self.0.row(3);
        orth <= tol
            && det <= tol
            && row[0] == 0.0
            && row[1] == 0.0
            && row[2] == 0.0
            && row[3] == 1.0
            && self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Transform) -> f64 {
        (self.0 - other.0).abs().max()
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        Transform(self.0 * rhs.0)
    }
}

impl Mul<&Transform> for &Transform {
    type Output = Transform;

    fn mul(self, rhs: &Transform) -> Transform {
        Transform(self.0 * rhs.0)
    }
}
