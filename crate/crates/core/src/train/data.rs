use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{orbit_poses, SamplingConfig, SyntheticScene};
use crate::geometry::{Intrinsics, LabeledBox, Pose};
use crate::model::{Detector, StreamInputs};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Camera placement for the views of every scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    pub poses_per_scene: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    /// Azimuth of the first pose.
    pub phase_deg: f64,
    /// Fine-stream focal length in grid pixels.
    pub focal: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { poses_per_scene: 4, radius: 4.0, elevation_deg: 30.0, phase_deg: 20.0, focal: 20.0 }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.poses_per_scene == 0 || !(self.radius > 0.0) || !(self.focal > 0.0) {
            return Err(Error::Config("views need poses_per_scene >= 1, radius > 0, focal > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct View {
    pub scene: usize,
    pub pose: Pose<f64>,
}

/// Scenes with a fixed list of camera views.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SyntheticScene>,
    pub views: Vec<View>,
    pub intrinsics: Intrinsics,
    pub sampling: SamplingConfig,
}

impl Dataset {
    /// Orbits every scene with `views.poses_per_scene` poses aimed at its
    /// bounds' centre.
    pub fn new(scenes: Vec<SyntheticScene>, views: &ViewConfig, sampling: SamplingConfig) -> Result<Self> {
        views.validate()?;
        sampling.validate()?;
        let mut list = Vec::with_capacity(scenes.len() * views.poses_per_scene);
        for (i, s) in scenes.iter().enumerate() {
            let c = [0, 1, 2].map(|k| 0.5 * (s.bounds.min[k] + s.bounds.max[k]));
            for pose in orbit_poses(c, views.radius, views.elevation_deg, views.poses_per_scene, views.phase_deg)? {
                list.push(View { scene: i, pose });
            }
        }
        Ok(Self { scenes, views: list, intrinsics: Intrinsics::centered(views.focal, sampling.grid)?, sampling })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn ground_truth(&self, view: usize) -> &[LabeledBox<f64>] {
        &self.scenes[self.views[view].scene].gt
    }

    /// Network inputs for every view, in view order.
    pub fn inputs<T: Scalar>(&self, detector: &Detector<T>) -> Result<Vec<StreamInputs<T>>> {
        self.views
            .par_iter()
            .map(|v| detector.inputs(&self.scenes[v.scene], &v.pose, &self.intrinsics, &self.sampling))
            .collect()
    }
}

/// Partitions scene indices 80/20 into (train, val) by a seeded hash of the index.
pub fn split_indices(seed: u64, count: usize) -> (Vec<usize>, Vec<usize>) {
    (0..count).partition(|&i| !derive_seed(seed, &format!("split/{i}")).is_multiple_of(5))
}
