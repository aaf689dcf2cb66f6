//! Transformer-based 3D object localization inside analytic radiance fields.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use. Training runs in `f32`, gradient
//! checks in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod matching;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array32 = autodiff::Array<f32>;
pub type Array64 = autodiff::Array<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamStore32 = autodiff::ParamStore<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type Detector32 = model::Detector<f32>;
pub type Detector64 = model::Detector<f64>;
pub type DetectionSet32 = model::DetectionSet<f32>;
pub type DetectionSet64 = model::DetectionSet<f64>;
