//! Camera model, rigid poses, rays and 3D boxes.

mod boxes;
mod camera;

pub use boxes::{aabb, box_from_pose, giou3d, iou3d, Aabb, Box3D, LabeledBox, CORNER_SIGNS};
pub use camera::{camera_ray, coarse_intrinsics, ray_direction, Intrinsics, Pose, Ray};

pub(crate) use camera::{cross, dot, sub};

use crate::scalar::Scalar;

pub type Vec3<T> = [T; 3];

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Scalar> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { rows: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_rows(rows: [[T; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn from_columns(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self { rows: [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]] }
    }

    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = (T::of(angle.sin()), T::of(angle.cos()));
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, c, -s], [z, s, c]])
    }

    pub fn rotation_y(angle: f64) -> Self {
        let (s, c) = (T::of(angle.sin()), T::of(angle.cos()));
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[c, z, s], [z, o, z], [-s, z, c]])
    }

    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = (T::of(angle.sin()), T::of(angle.cos()));
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[c, -s, z], [s, c, z], [z, z, o]])
    }

    /// Rodrigues rotation about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3<f64>, angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let rows = [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ];
        Self::from_rows(rows.map(|r| r.map(T::of)))
    }

    pub fn column(&self, j: usize) -> Vec3<T> {
        [self.rows[0][j], self.rows[1][j], self.rows[2][j]]
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        self.rows.map(|r| r[0] * v[0] + r[1] * v[1] + r[2] * v[2])
    }

    pub fn mul_mat(&self, other: &Mat3<T>) -> Mat3<T> {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * other.rows[k][j]).sum();
            }
        }
        Mat3 { rows: out }
    }

    pub fn transpose(&self) -> Mat3<T> {
        Mat3::from_columns(self.rows[0], self.rows[1], self.rows[2])
    }

    pub fn det(&self) -> T {
        dot(self.rows[0], cross(self.rows[1], self.rows[2]))
    }

    /// `RᵀR = I` and `det R = 1`, both within `tol`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        let rtr = self.transpose().mul_mat(self);
        let id = Mat3::<T>::identity();
        let ortho = (0..3).all(|i| (0..3).all(|j| (rtr.rows[i][j] - id.rows[i][j]).abs().as_f64() <= tol));
        ortho && (self.det().as_f64() - 1.0).abs() <= tol
    }

    pub fn cast<U: Scalar>(&self) -> Mat3<U> {
        Mat3 { rows: self.rows.map(|r| r.map(|v| U::of(v.as_f64()))) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_angle_is_a_rotation() {
        let r = Mat3::<f64>::from_axis_angle([0.3, -1.2, 0.7], 2.1);
        assert!(r.is_rotation(1e-12));
        let z = Mat3::<f64>::from_axis_angle([0.0, 0.0, 1.0], 0.4);
        let zz = Mat3::<f64>::rotation_z(0.4);
        for i in 0..3 {
            for j in 0..3 {
                assert!((z.rows[i][j] - zz.rows[i][j]).abs() < 1e-15);
            }
        }
    }
}
