use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ModalitySet, SAMPLE_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Attention,
    Mlp,
}

/// Which encoder streams feed the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamMode {
    Fused,
    FineOnly,
    CoarseOnly,
}

impl StreamMode {
    pub fn uses_fine(self) -> bool {
        self != StreamMode::CoarseOnly
    }

    pub fn uses_coarse(self) -> bool {
        self != StreamMode::FineOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            StreamMode::Fused => "fused",
            StreamMode::FineOnly => "fine-only",
            StreamMode::CoarseOnly => "coarse-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers_fine: usize,
    pub enc_layers_coarse: usize,
    pub dec_layers: usize,
    /// Number of learned queries, i.e. detections per forward pass.
    pub queries: usize,
    /// Corners per box; always 8.
    pub corners: usize,
    /// Real classes, excluding the no-object class.
    pub num_classes: usize,
    pub ffn_mult: usize,
    pub modality: ModalitySet,
    pub fusion: FusionKind,
    pub streams: StreamMode,
    pub ln_eps: f64,
    /// Scene bounds are inflated by this factor for the box head's range.
    pub bounds_inflation: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            enc_layers_fine: 4,
            enc_layers_coarse: 4,
            dec_layers: 4,
            queries: 8,
            corners: 8,
            num_classes: 4,
            ffn_mult: 4,
            modality: ModalitySet::RAW,
            fusion: FusionKind::Attention,
            streams: StreamMode::Fused,
            ln_eps: 1e-5,
            bounds_inflation: 1.25,
        }
    }
}

impl ModelConfig {
    /// Full-size preset: width 256 and 100 queries.
    pub fn full_scale() -> Self {
        Self { d_model: 256, heads: 8, queries: 100, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d_model = {} must be a positive multiple of model.heads = {}",
                self.d_model, self.heads
            )));
        }
        if self.corners != 8 {
            return Err(Error::Config("model.corners must be 8".into()));
        }
        if self.queries == 0 || self.num_classes == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("model.queries, num_classes and ffn_mult must be >= 1".into()));
        }
        if self.modality.is_empty() {
            return Err(Error::Config("model.modality must be non-empty".into()));
        }
        if !(self.bounds_inflation >= 1.0) || !(self.ln_eps >= 0.0) {
            return Err(Error::Config("model.bounds_inflation >= 1 and model.ln_eps >= 0 required".into()));
        }
        Ok(())
    }

    /// Feature width of one ray token for `samples` points per ray.
    pub fn token_width(&self, samples: usize) -> usize {
        let m = self.modality;
        usize::from(m.raw) * samples * SAMPLE_CHANNELS + usize::from(m.color) * 3 + usize::from(m.depth)
    }

    /// Closed-form parameter count for this configuration.
    pub fn parameter_count(&self, samples: usize) -> usize {
        let d = self.d_model;
        let f = self.ffn_mult * d;
        let linear = |i: usize, o: usize| i * o + o;
        let ln = 2 * d;
        let mha = 4 * linear(d, d);
        let ffn = linear(d, f) + linear(f, d);
        let enc_layer = 2 * ln + mha + ffn;
        let dec_layer = 3 * ln + 2 * mha + ffn;
        let proj = linear(self.token_width(samples), d) + 2 * linear(d, d);
        let stream = |layers: usize| proj + layers * enc_layer + ln;

        let mut n = 0;
        if self.streams.uses_fine() {
            n += stream(self.enc_layers_fine);
        }
        if self.streams.uses_coarse() {
            n += stream(self.enc_layers_coarse);
        }
        if self.streams == StreamMode::Fused {
            n += match self.fusion {
                FusionKind::Attention => mha,
                FusionKind::Mlp => linear(2 * d, d) + linear(d, d),
            };
        }
        n += self.queries * d + self.dec_layers * dec_layer + ln;
        n += 2 * linear(d, d) + linear(d, 3 * self.corners);
        n += linear(d, self.num_classes + 1);
        n
    }
}
