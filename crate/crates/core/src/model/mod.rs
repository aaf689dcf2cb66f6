//! Two-stream transformer detector.

mod config;
mod detector;
mod layers;
mod tokenize;

pub use config::{FusionKind, ModelConfig, StreamMode};
pub use detector::{inflated_range, DetectionSet, DetectionVars, Detector, Fusion, Stream, StreamInputs};
pub use layers::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Mlp};
pub use tokenize::{tokenize, TokenBatch};
