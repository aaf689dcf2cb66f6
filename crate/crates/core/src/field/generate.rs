//! Procedural scenes and camera orbits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::scene::{default_bounds, default_class_table, yaw, Primitive, PrimitiveKind, SyntheticScene};
use crate::geometry::{aabb, Aabb, Pose};
use crate::seed::rng_for;

/// Object-count range and placement limits for generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub density_amp: f64,
    /// Horizontal placement radius for object centres.
    pub spread: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { min_objects: 1, max_objects: 3, density_amp: 20.0, spread: 1.2 }
    }
}

const MAX_ATTEMPTS: usize = 2000;
const GAP: f64 = 0.1;

/// Generates `count` scenes. Classes are dealt round-robin over the whole
/// corpus, so per-class object counts differ by at most one.
pub fn generate_scenes(seed: u64, count: usize, cfg: &GeneratorConfig) -> Result<Vec<SyntheticScene>> {
    if count == 0 {
        return Err(Error::Invalid("scene count must be >= 1".into()));
    }
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::Invalid(format!("object range {}..={} is empty", cfg.min_objects, cfg.max_objects)));
    }
    let classes = default_class_table();
    let mut next_class = 0usize;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, &format!("scene/{i}"));
        let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let mut prims: Vec<Primitive> = Vec::with_capacity(n);
        let mut hulls: Vec<Aabb<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let class_id = next_class % classes.len();
            next_class += 1;
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                let p = random_primitive(&mut rng, class_id, cfg);
                let hull = aabb(&p.bounding_box()?.bbox);
                let bounds = default_bounds();
                let inside = (0..3).all(|k| hull.min[k] >= bounds.min[k] + GAP && hull.max[k] <= bounds.max[k] - GAP);
                let clear = hulls.iter().all(|h| separated(h, &hull));
                if inside && clear {
                    hulls.push(hull);
                    prims.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Invalid(format!("could not place object {} in scene {i}", prims.len())));
            }
        }
        scenes.push(SyntheticScene::new(prims, default_bounds(), classes.clone())?);
    }
    Ok(scenes)
}

fn separated(a: &Aabb<f64>, b: &Aabb<f64>) -> bool {
    (0..3).any(|k| a.max[k] + GAP <= b.min[k] || b.max[k] + GAP <= a.min[k])
}

fn random_primitive(rng: &mut impl Rng, class_id: usize, cfg: &GeneratorConfig) -> Primitive {
    let (kind, size) = match class_id {
        0 => {
            let s = rng.gen_range(0.3..0.5);
            (PrimitiveKind::Box, [s, s * rng.gen_range(0.9..1.1), s * rng.gen_range(0.9..1.1)])
        }
        1 => (PrimitiveKind::Box, [rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6), rng.gen_range(0.1..0.18)]),
        2 => (PrimitiveKind::Box, [rng.gen_range(0.2..0.3), rng.gen_range(0.2..0.3), rng.gen_range(0.5..0.7)]),
        _ => {
            let r = rng.gen_range(0.3..0.5);
            (PrimitiveKind::Sphere, [r; 3])
        }
    };
    let center =
        [rng.gen_range(-cfg.spread..cfg.spread), rng.gen_range(-cfg.spread..cfg.spread), rng.gen_range(-0.5..0.5)];
    let rotation =
        if kind == PrimitiveKind::Sphere { yaw(0.0) } else { yaw(rng.gen_range(0.0..std::f64::consts::FRAC_PI_2)) };
    let color = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
    Primitive {
        kind,
        pose: Pose { rotation, translation: center },
        size,
        color,
        density_amp: cfg.density_amp,
        class_id,
    }
}

/// Camera poses evenly spaced in azimuth on a circle of `radius` at
/// `elevation_deg`, all looking at `target` with world +z up.
pub fn orbit_poses(
    target: [f64; 3],
    radius: f64,
    elevation_deg: f64,
    count: usize,
    phase_deg: f64,
) -> Result<Vec<Pose<f64>>> {
    let el = elevation_deg.to_radians();
    (0..count)
        .map(|i| {
            let az = phase_deg.to_radians() + std::f64::consts::TAU * i as f64 / count as f64;
            let eye = [
                target[0] + radius * el.cos() * az.cos(),
                target[1] + radius * el.cos() * az.sin(),
                target[2] + radius * el.sin(),
            ];
            Pose::look_at(eye, target, [0.0, 0.0, 1.0])
        })
        .collect()
}
