use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::render::{render_color, render_depth};
use crate::field::scene::{eval_field, SyntheticScene};
use crate::geometry::{camera_ray, ray_direction, Intrinsics, Pose};
use crate::scalar::Scalar;

/// Values stored per sample: position, color, density.
pub const SAMPLE_CHANNELS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Coarse focal divisor, `> 1`.
    pub delta: f64,
    pub samples_per_ray: usize,
    /// `(W, H)`.
    pub grid: (usize, usize),
    pub t_near: f64,
    pub t_far: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { delta: 1.5, samples_per_ray: 16, grid: (24, 18), t_near: 0.1, t_far: 6.0 }
    }
}

impl SamplingConfig {
    /// Full-resolution preset: 240×180 rays with 64 samples each.
    pub fn full_scale() -> Self {
        Self { grid: (240, 180), samples_per_ray: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 1.0) {
            return Err(Error::Config(format!("sampling.delta = {} must exceed 1", self.delta)));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::Config("sampling.samples_per_ray must be >= 2".into()));
        }
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return Err(Error::Config("sampling.grid dimensions must be >= 2".into()));
        }
        if !(self.t_near > 0.0 && self.t_near < self.t_far) {
            return Err(Error::Config("sampling requires 0 < t_near < t_far".into()));
        }
        Ok(())
    }

    /// Equally spaced sample distances `t_near + k·Δ`.
    pub fn depths(&self) -> Vec<f64> {
        let n = self.samples_per_ray;
        let step = (self.t_far - self.t_near) / (n - 1) as f64;
        (0..n).map(|k| self.t_near + k as f64 * step).collect()
    }
}

/// Field values on an `H × W` ray grid with `N` samples per ray.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid<T> {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    /// `H × W × N × 7`, rows outermost.
    values: Vec<T>,
    depths: Vec<T>,
}

impl<T: Scalar> SampleGrid<T> {
    pub fn num_rays(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn depths(&self) -> &[T] {
        &self.depths
    }

    /// All samples of ray `index` (row-major over the grid), `N × 7` values.
    pub fn ray(&self, index: usize) -> &[T] {
        let w = self.samples * SAMPLE_CHANNELS;
        &self.values[index * w..(index + 1) * w]
    }

    pub fn sample(&self, row: usize, col: usize, k: usize) -> &[T] {
        let base = ((row * self.width + col) * self.samples + k) * SAMPLE_CHANNELS;
        &self.values[base..base + SAMPLE_CHANNELS]
    }

    pub fn ray_sigmas(&self, index: usize) -> Vec<T> {
        self.ray(index).chunks(SAMPLE_CHANNELS).map(|s| s[6]).collect()
    }

    pub fn ray_colors(&self, index: usize) -> Vec<[T; 3]> {
        self.ray(index).chunks(SAMPLE_CHANNELS).map(|s| [s[3], s[4], s[5]]).collect()
    }
}

/// Evaluates the field at `N` equally spaced points on every grid ray.
pub fn sample_grid<T: Scalar>(
    scene: &SyntheticScene,
    pose: &Pose<f64>,
    intr: &Intrinsics,
    cfg: &SamplingConfig,
) -> Result<SampleGrid<T>> {
    cfg.validate()?;
    intr.validate()?;
    if cfg.grid != intr.grid {
        return Err(Error::Invalid(format!(
            "sampling grid {:?} does not match intrinsics grid {:?}",
            cfg.grid, intr.grid
        )));
    }
    let (w, h) = cfg.grid;
    let ts = cfg.depths();
    let mut values = Vec::with_capacity(w * h * ts.len() * SAMPLE_CHANNELS);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = intr.pixel_center(col, row);
            let ray = camera_ray(pose, ray_direction::<f64>(x, y, intr), cfg.t_near, cfg.t_far);
            for &t in &ts {
                let p = ray.at(t);
                let (c, sigma) = eval_field(scene, p, ray.direction);
                values.extend([p[0], p[1], p[2], c[0], c[1], c[2], sigma].map(T::of));
            }
        }
    }
    Ok(SampleGrid { width: w, height: h, samples: ts.len(), values, depths: ts.into_iter().map(T::of).collect() })
}

/// Which inputs a stream sees: raw samples, rendered color, rendered depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalitySet {
    pub raw: bool,
    pub color: bool,
    pub depth: bool,
}

impl ModalitySet {
    pub const RAW: Self = Self { raw: true, color: false, depth: false };

    pub fn is_empty(&self) -> bool {
        !(self.raw || self.color || self.depth)
    }

    /// The seven non-empty combinations in table order.
    pub fn all_combinations() -> Vec<Self> {
        [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ]
        .into_iter()
        .map(|(raw, color, depth)| Self { raw, color, depth })
        .collect()
    }

    /// Parses `raw+color+depth` style labels.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Self { raw: false, color: false, depth: false };
        for part in s.split('+').map(str::trim) {
            match part {
                "raw" => m.raw = true,
                "color" => m.color = true,
                "depth" => m.depth = true,
                other => return Err(Error::Config(format!("unknown modality {other:?}"))),
            }
        }
        Ok(m)
    }

    pub fn label(&self) -> String {
        let mut parts = vec![];
        if self.raw {
            parts.push("raw");
        }
        if self.color {
            parts.push("color");
        }
        if self.depth {
            parts.push("depth");
        }
        parts.join("+")
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ModalitySet::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-pixel rendered maps, row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViews<T> {
    pub width: usize,
    pub height: usize,
    pub color: Option<Vec<[T; 3]>>,
    pub depth: Option<Vec<T>>,
}

/// Renders color and/or depth for every ray of an existing sample grid.
pub fn render_grid<T: Scalar>(grid: &SampleGrid<T>, color: bool, depth: bool) -> RenderedViews<T> {
    let n = grid.num_rays();
    let ts = grid.depths();
    let mut colors = color.then(|| Vec::with_capacity(n));
    let mut depths = depth.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let sig = grid.ray_sigmas(i);
        if let Some(c) = colors.as_mut() {
            c.push(render_color(&grid.ray_colors(i), &sig, ts));
        }
        if let Some(d) = depths.as_mut() {
            d.push(render_depth(&sig, ts));
        }
    }
    RenderedViews { width: grid.width, height: grid.height, color: colors, depth: depths }
}

/// Samples the field from `pose` and renders the requested maps.
pub fn render_views<T: Scalar>(
    scene: &SyntheticScene,
    pose: &Pose<f64>,
    intr: &Intrinsics,
    cfg: &SamplingConfig,
    modalities: ModalitySet,
) -> Result<RenderedViews<T>> {
    if !(modalities.color || modalities.depth) {
        return Err(Error::Invalid("render needs at least one of color, depth".into()));
    }
    let grid = sample_grid::<T>(scene, pose, intr, cfg)?;
    Ok(render_grid(&grid, modalities.color, modalities.depth))
}
