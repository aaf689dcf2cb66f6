//! Pinhole camera: poses, intrinsics and ray generation.
//!
//! Camera frame convention: +z forward, +x right, +y down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::scalar::Scalar;

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: [T::zero(); 3] }
    }

    /// Validates `RᵀR = I` and `det R = 1` within `1e-9` (scaled for fp32).
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let tol = if T::epsilon() > T::of(1e-10) { 1e-5 } else { 1e-9 };
        if !rotation.is_rotation(tol) {
            return Err(Error::Invalid("pose rotation is not in SO(3)".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Camera at `eye` looking at `target`, with `up` the world up direction.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let forward =
            Vec3Ext::normalized(sub(target, eye)).ok_or_else(|| Error::Invalid("eye coincides with target".into()))?;
        let right = Vec3Ext::normalized(cross(forward, up))
            .ok_or_else(|| Error::Invalid("view direction parallel to up".into()))?;
        let down = cross(forward, right);
        Ok(Self { rotation: Mat3::from_columns(right, down, forward), translation: eye })
    }

    /// Applies the pose to a world point: `R·p + t`.
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        add(self.rotation.mul_vec(p), self.translation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        Pose { rotation: self.rotation.mul_mat(&other.rotation), translation: self.transform_point(other.translation) }
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        Pose { rotation: self.rotation.cast(), translation: cast3(self.translation) }
    }
}

/// Pinhole intrinsics over a `width × height` ray grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal: (f64, f64),
    /// `(W, H)`.
    pub grid: (usize, usize),
}

impl Intrinsics {
    pub fn new(focal: f64, principal: (f64, f64), grid: (usize, usize)) -> Result<Self> {
        let intr = Self { focal, principal, grid };
        intr.validate()?;
        Ok(intr)
    }

    /// Principal point at the grid centre.
    pub fn centered(focal: f64, grid: (usize, usize)) -> Result<Self> {
        Self::new(focal, (grid.0 as f64 / 2.0, grid.1 as f64 / 2.0), grid)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.grid.0 as f64, self.grid.1 as f64);
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::Invalid(format!("focal length {} must be > 0", self.focal)));
        }
        let (px, py) = self.principal;
        if !(px > 0.0 && px < w && py > 0.0 && py < h) {
            return Err(Error::Invalid(format!(
                "principal point ({px}, {py}) outside {}x{} grid",
                self.grid.0, self.grid.1
            )));
        }
        Ok(())
    }

    /// Same principal point and grid, focal length scaled by `factor`.
    pub fn with_focal_scale(&self, factor: f64) -> Result<Self> {
        Self::new(self.focal * factor, self.principal, self.grid)
    }

    /// Pixel-centre coordinates of grid cell `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// Wide-view intrinsics for the coarse stream: focal length `f / delta`.
pub fn coarse_intrinsics(fine: &Intrinsics, delta: f64) -> Result<Intrinsics> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(Error::Invalid(format!("coarse focal divisor {delta} must exceed 1")));
    }
    fine.with_focal_scale(1.0 / delta)
}

/// Unit ray direction through image point `(x, y)` in the camera frame.
pub fn ray_direction<T: Scalar>(x: f64, y: f64, intr: &Intrinsics) -> Vec3<T> {
    let dx = x - intr.principal.0;
    let dy = y - intr.principal.1;
    let f = intr.focal;
    let n = (dx * dx + dy * dy + f * f).sqrt();
    [T::of(dx / n), T::of(dy / n), T::of(f / n)]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Scalar> Ray<T> {
    pub fn at(&self, t: T) -> Vec3<T> {
        add(self.origin, scale(self.direction, t))
    }
}

/// Lifts a camera-frame direction into a world ray from the pose's centre.
pub fn camera_ray<T: Scalar>(pose: &Pose<T>, dir_cam: Vec3<T>, t_near: T, t_far: T) -> Ray<T> {
    Ray { origin: pose.translation, direction: pose.rotation.mul_vec(dir_cam), t_near, t_far }
}

// small vector helpers

pub(crate) fn add<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm<T: Scalar>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn cast3<T: Scalar, U: Scalar>(a: Vec3<T>) -> Vec3<U> {
    [U::of(a[0].as_f64()), U::of(a[1].as_f64()), U::of(a[2].as_f64())]
}

pub(crate) trait Vec3Ext: Sized {
    fn normalized(self) -> Option<Self>;
}

impl<T: Scalar> Vec3Ext for Vec3<T> {
    fn normalized(self) -> Option<Self> {
        let n = norm(self);
        if n > T::zero() && n.is_finite() {
            Some(scale(self, T::one() / n))
        } else {
            None
        }
    }
}
