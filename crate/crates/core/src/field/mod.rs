//! Analytic radiance fields, ray-grid sampling and volume rendering.

mod generate;
mod render;
mod sampling;
mod scene;

pub use generate::{generate_scenes, orbit_poses, GeneratorConfig};
pub use render::{deltas, render_color, render_depth, transmittance, weights};
pub use sampling::{
    render_grid, render_views, sample_grid, ModalitySet, RenderedViews, SampleGrid, SamplingConfig, SAMPLE_CHANNELS,
};
pub use scene::{default_bounds, default_class_table, eval_field, Primitive, PrimitiveKind, SyntheticScene};
