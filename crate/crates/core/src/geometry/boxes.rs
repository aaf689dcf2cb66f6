//! Eight-corner boxes and their axis-aligned overlap measures.
//!
//! IoU and GIoU are computed on the axis-aligned hull of each corner set, so
//! the same measure serves both the training loss and evaluation.

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::scalar::Scalar;

/// Canonical corner signs: lexicographic over (x, y, z) with − before +.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D<T> {
    pub corners: [Vec3<T>; 8],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledBox<T> {
    pub bbox: Box3D<T>,
    pub class_id: usize,
}

/// Rigid box: `rot · (±size/2) + center` in canonical corner order.
pub fn box_from_pose<T: Scalar>(center: Vec3<T>, size: Vec3<T>, rot: &Mat3<T>) -> Result<Box3D<T>> {
    if size.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Invalid(format!("box size {:?} must be positive", size)));
    }
    let half = size.map(|s| s * T::of(0.5));
    let corners = CORNER_SIGNS.map(|sg| {
        let local = [T::of(sg[0]) * half[0], T::of(sg[1]) * half[1], T::of(sg[2]) * half[2]];
        let w = rot.mul_vec(local);
        [w[0] + center[0], w[1] + center[1], w[2] + center[2]]
    });
    Ok(Box3D { corners })
}

pub fn aabb<T: Scalar>(b: &Box3D<T>) -> Aabb<T> {
    let mut min = b.corners[0];
    let mut max = b.corners[0];
    for c in &b.corners[1..] {
        for k in 0..3 {
            min[k] = min[k].min(c[k]);
            max[k] = max[k].max(c[k]);
        }
    }
    Aabb { min, max }
}

impl<T: Scalar> Box3D<T> {
    pub fn from_f64(corners: [[f64; 3]; 8]) -> Self {
        Self { corners: corners.map(|c| c.map(T::of)) }
    }

    pub fn center(&self) -> Vec3<T> {
        let mut c = [T::zero(); 3];
        for p in &self.corners {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / T::of(8.0))
    }

    /// Whether opposite-corner sums agree, i.e. the corners form a parallelepiped.
    pub fn is_parallelepiped(&self, tol: f64) -> bool {
        let c = &self.corners;
        let s0 = sum3(c[0], c[7]);
        [(1, 6), (2, 5), (3, 4)].iter().all(|&(i, j)| {
            let s = sum3(c[i], c[j]);
            (0..3).all(|k| (s[k] - s0[k]).abs().as_f64() <= tol)
        })
    }

    pub fn flat(&self) -> [T; 24] {
        let mut out = [T::zero(); 24];
        for (i, c) in self.corners.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(c);
        }
        out
    }

    pub fn from_flat(v: &[T]) -> Result<Self> {
        if v.len() != 24 {
            return Err(Error::shape("box", format!("expected 24 values, got {}", v.len())));
        }
        let mut corners = [[T::zero(); 3]; 8];
        for (i, c) in corners.iter_mut().enumerate() {
            c.copy_from_slice(&v[i * 3..i * 3 + 3]);
        }
        Ok(Self { corners })
    }

    pub fn cast<U: Scalar>(&self) -> Box3D<U> {
        Box3D { corners: self.corners.map(|c| c.map(|v| U::of(v.as_f64()))) }
    }
}

fn sum3<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

impl<T: Scalar> Aabb<T> {
    pub fn volume(&self) -> T {
        (0..3).map(|k| (self.max[k] - self.min[k]).max(T::zero())).fold(T::one(), |a, b| a * b)
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn intersection_volume(&self, other: &Aabb<T>) -> T {
        (0..3)
            .map(|k| (self.max[k].min(other.max[k]) - self.min[k].max(other.min[k])).max(T::zero()))
            .fold(T::one(), |a, b| a * b)
    }

    pub fn hull(&self, other: &Aabb<T>) -> Aabb<T> {
        let mut min = self.min;
        let mut max = self.max;
        for k in 0..3 {
            min[k] = min[k].min(other.min[k]);
            max[k] = max[k].max(other.max[k]);
        }
        Aabb { min, max }
    }
}

/// Intersection over union of the two corner sets' axis-aligned hulls.
/// Zero when the union has no volume.
pub fn iou3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (ha, hb) = (aabb(a), aabb(b));
    let inter = ha.intersection_volume(&hb);
    let union = ha.volume() + hb.volume() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Generalised IoU: `IoU − |C \ (A ∪ B)| / |C|` with `C` the enclosing hull.
pub fn giou3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (ha, hb) = (aabb(a), aabb(b));
    let inter = ha.intersection_volume(&hb);
    let union = ha.volume() + hb.volume() - inter;
    let enclosing = ha.hull(&hb).volume();
    let iou = if union > T::zero() { inter / union } else { T::zero() };
    if enclosing > T::zero() {
        iou - (enclosing - union) / enclosing
    } else {
        iou
    }
}
