use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aabb, box_from_pose, dot, sub, Aabb, LabeledBox, Mat3, Pose, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Sphere,
    /// Axis along the local z direction.
    Cylinder,
}

/// Hard-boundary solid with constant color and density.
///
/// `size` holds half-extents: box half-widths, sphere `(r, r, r)`,
/// cylinder `(r, r, half_height)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub pose: Pose<f64>,
    pub size: Vec3<f64>,
    pub color: Vec3<f64>,
    pub density_amp: f64,
    pub class_id: usize,
}

impl Primitive {
    pub fn center(&self) -> Vec3<f64> {
        self.pose.translation
    }

    pub fn contains(&self, x: Vec3<f64>) -> bool {
        // world -> local through Rᵀ
        let d = sub(x, self.pose.translation);
        let r = &self.pose.rotation;
        let local = [dot(r.column(0), d), dot(r.column(1), d), dot(r.column(2), d)];
        let s = self.size;
        match self.kind {
            PrimitiveKind::Box => (0..3).all(|k| local[k].abs() <= s[k]),
            PrimitiveKind::Sphere => dot(local, local) <= s[0] * s[0],
            PrimitiveKind::Cylinder => {
                local[0] * local[0] + local[1] * local[1] <= s[0] * s[0] && local[2].abs() <= s[2]
            }
        }
    }

    /// Tight oriented box around the primitive.
    pub fn bounding_box(&self) -> Result<LabeledBox<f64>> {
        let full = match self.kind {
            PrimitiveKind::Box => self.size.map(|h| 2.0 * h),
            PrimitiveKind::Sphere => [2.0 * self.size[0]; 3],
            PrimitiveKind::Cylinder => [2.0 * self.size[0], 2.0 * self.size[0], 2.0 * self.size[2]],
        };
        Ok(LabeledBox {
            bbox: box_from_pose(self.pose.translation, full, &self.pose.rotation)?,
            class_id: self.class_id,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density_amp >= 0.0 && self.density_amp.is_finite()) {
            return Err(Error::Invalid(format!("density {} must be >= 0", self.density_amp)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Invalid(format!("color {:?} outside [0,1]", self.color)));
        }
        if self.size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("size {:?} must be positive", self.size)));
        }
        if !self.pose.rotation.is_rotation(1e-9) {
            return Err(Error::Invalid("primitive rotation is not in SO(3)".into()));
        }
        Ok(())
    }
}

/// Analytic radiance field with its labeled ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub gt: Vec<LabeledBox<f64>>,
    pub bounds: Aabb<f64>,
    pub class_table: Vec<String>,
}

pub fn default_class_table() -> Vec<String> {
    ["cube", "slab", "tall_box", "sphere"].iter().map(|s| s.to_string()).collect()
}

pub fn default_bounds() -> Aabb<f64> {
    Aabb { min: [-2.0; 3], max: [2.0; 3] }
}

impl SyntheticScene {
    /// Builds the scene and derives one ground-truth box per primitive.
    pub fn new(primitives: Vec<Primitive>, bounds: Aabb<f64>, class_table: Vec<String>) -> Result<Self> {
        let mut gt = Vec::with_capacity(primitives.len());
        for p in &primitives {
            p.validate()?;
            if p.class_id >= class_table.len() {
                return Err(Error::Invalid(format!(
                    "class id {} outside class table of {}",
                    p.class_id,
                    class_table.len()
                )));
            }
            let b = p.bounding_box()?;
            let hull = aabb(&b.bbox);
            let eps = 1e-9;
            if (0..3).any(|k| hull.min[k] < bounds.min[k] - eps || hull.max[k] > bounds.max[k] + eps) {
                return Err(Error::Invalid("primitive extends outside scene bounds".into()));
            }
            gt.push(b);
        }
        Ok(Self { primitives, gt, bounds, class_table })
    }

    pub fn empty() -> Self {
        Self { primitives: vec![], gt: vec![], bounds: default_bounds(), class_table: default_class_table() }
    }

    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    /// Rigidly moves every primitive (and the bounds' hull) by `xf`.
    pub fn transformed(&self, xf: &Pose<f64>) -> Result<Self> {
        let primitives =
            self.primitives.iter().map(|p| Primitive { pose: xf.compose(&p.pose), ..p.clone() }).collect::<Vec<_>>();
        let corners = crate::geometry::CORNER_SIGNS.map(|s| {
            let c = [0, 1, 2].map(|k| if s[k] < 0.0 { self.bounds.min[k] } else { self.bounds.max[k] });
            xf.transform_point(c)
        });
        let bounds = aabb(&crate::geometry::Box3D { corners });
        Self::new(primitives, bounds, self.class_table.clone())
    }
}

/// Field value at `x`: the color and density of the containing primitive
/// whose centre is nearest, or empty space. View independent.
pub fn eval_field(scene: &SyntheticScene, x: Vec3<f64>, _d: Vec3<f64>) -> (Vec3<f64>, f64) {
    let mut best: Option<(f64, &Primitive)> = None;
    for p in &scene.primitives {
        if p.contains(x) {
            let off = sub(x, p.center());
            let dist = dot(off, off);
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, p));
            }
        }
    }
    match best {
        Some((_, p)) => (p.color, p.density_amp),
        None => ([0.0; 3], 0.0),
    }
}

pub(crate) fn yaw(angle: f64) -> Mat3<f64> {
    Mat3::rotation_z(angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prim(kind: PrimitiveKind, center: Vec3<f64>, size: Vec3<f64>, color: Vec3<f64>) -> Primitive {
        Primitive {
            kind,
            pose: Pose::new(Mat3::identity(), center).unwrap(),
            size,
            color,
            density_amp: 20.0,
            class_id: 0,
        }
    }

    #[test]
    fn inside_and_outside() {
        let scene = SyntheticScene::new(
            vec![prim(PrimitiveKind::Box, [0.0; 3], [0.5; 3], [1.0, 0.0, 0.0])],
            default_bounds(),
            default_class_table(),
        )
        .unwrap();
        assert_eq!(eval_field(&scene, [0.1, 0.2, -0.3], [0.0, 0.0, 1.0]), ([1.0, 0.0, 0.0], 20.0));
        assert_eq!(eval_field(&scene, [0.6, 0.0, 0.0], [0.0, 0.0, 1.0]), ([0.0; 3], 0.0));
    }

    #[test]
    fn overlap_prefers_nearest_center() {
        let a = prim(PrimitiveKind::Sphere, [0.0; 3], [1.0; 3], [1.0, 0.0, 0.0]);
        let b = prim(PrimitiveKind::Box, [0.8, 0.0, 0.0], [0.5; 3], [0.0, 1.0, 0.0]);
        let scene = SyntheticScene::new(vec![a.clone(), b.clone()], default_bounds(), default_class_table()).unwrap();
        // brute-force membership oracle over a line of points
        for i in 0..=40 {
            let x = [-1.0 + i as f64 * 0.05, 0.1, 0.0];
            let members: Vec<&Primitive> = [&a, &b].into_iter().filter(|p| p.contains(x)).collect();
            let want = members
                .iter()
                .min_by(|p, q| {
                    let dp = sub(x, p.center());
                    let dq = sub(x, q.center());
                    dot(dp, dp).total_cmp(&dot(dq, dq))
                })
                .map_or(([0.0; 3], 0.0), |p| (p.color, p.density_amp));
            assert_eq!(eval_field(&scene, x, [1.0, 0.0, 0.0]), want, "at {:?}", x);
        }
    }

    #[test]
    fn cylinder_membership() {
        let c = prim(PrimitiveKind::Cylinder, [0.0; 3], [0.5, 0.5, 1.0], [0.0, 0.0, 1.0]);
        assert!(c.contains([0.3, 0.3, 0.9]));
        assert!(!c.contains([0.4, 0.4, 0.0]));
        assert!(!c.contains([0.0, 0.0, 1.1]));
    }

    #[test]
    fn rejects_invalid_primitives() {
        let mut p = prim(PrimitiveKind::Box, [0.0; 3], [0.5; 3], [1.2, 0.0, 0.0]);
        assert!(SyntheticScene::new(vec![p.clone()], default_bounds(), default_class_table()).is_err());
        p.color = [1.0, 0.0, 0.0];
        p.density_amp = -1.0;
        assert!(SyntheticScene::new(vec![p.clone()], default_bounds(), default_class_table()).is_err());
        p.density_amp = 1.0;
        p.pose.translation = [1.8, 0.0, 0.0];
        assert!(SyntheticScene::new(vec![p], default_bounds(), default_class_table()).is_err());
    }

    #[test]
    fn gt_box_tightly_encloses_rotated_box() {
        let mut p = prim(PrimitiveKind::Box, [0.2, 0.1, 0.0], [0.3, 0.2, 0.4], [1.0; 3]);
        p.pose.rotation = yaw(0.7);
        let b = p.bounding_box().unwrap().bbox;
        for c in b.corners {
            // corners lie on the primitive's surface
            let o = p.center();
            let inner = [0, 1, 2].map(|k| o[k] + (c[k] - o[k]) * 0.999);
            assert!(p.contains(inner));
        }
        assert!(b.is_parallelepiped(1e-12));
    }
}
