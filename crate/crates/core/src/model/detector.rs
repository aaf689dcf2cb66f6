use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::field::{sample_grid, SamplingConfig, SyntheticScene};
use crate::geometry::{coarse_intrinsics, Aabb, Box3D, Intrinsics, Pose};
use crate::model::config::{FusionKind, ModelConfig, StreamMode};
use crate::model::layers::{Attention, DecoderLayer, EncoderLayer, Init, LayerNorm, Linear, Mlp};
use crate::model::tokenize::{tokenize, TokenBatch};
use crate::scalar::Scalar;

/// Projection, encoder stack and closing norm for one focal scale.
#[derive(Clone, Debug)]
pub struct Stream {
    pub project: Mlp,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl Stream {
    fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        cfg: &ModelConfig,
        d_in: usize,
        layers: usize,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let hidden = cfg.ffn_mult * d;
        Ok(Self {
            project: Mlp::new(init, &format!("{name}.proj"), &[d_in, d, d, d])?,
            layers: (0..layers)
                .map(|i| EncoderLayer::new(init, &format!("{name}.enc.{i}"), d, cfg.heads, hidden, cfg.ln_eps))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(init, &format!("{name}.enc_norm"), d, cfg.ln_eps)?,
        })
    }

    /// Projection layer `l(·)` alone.
    pub fn project<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, tokens: Var) -> Result<Var> {
        self.project.forward(t, ps, tokens)
    }

    /// Encoder `E(·)` over projected tokens.
    pub fn encode<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(t, ps, x)?;
        }
        self.norm.forward(t, ps, x)
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, tokens: Var) -> Result<Var> {
        let x = self.project(t, ps, tokens)?;
        self.encode(t, ps, x)
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    /// Fine tokens attend to coarse tokens; output projection zero-initialised.
    Attention(Attention),
    /// Fine tokens concatenated with the mean coarse token, then two layers;
    /// the last one zero-initialised.
    Mlp(Mlp),
}

impl Fusion {
    /// `Ī = I^F + g(I^F, I^C)`.
    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, fine: Var, coarse: Var) -> Result<Var> {
        let (df, dc) = (t.shape(fine)[1], t.shape(coarse)[1]);
        if df != dc {
            return Err(Error::shape("fuse", format!("embedding widths {df} vs {dc}")));
        }
        let g = match self {
            Fusion::Attention(attn) => attn.forward(t, ps, fine, coarse)?,
            Fusion::Mlp(mlp) => {
                let pooled = t.mean_axes(coarse, &[0])?;
                let rows = t.shape(fine)[0];
                let pooled = t.reshape(pooled, &[1, dc])?;
                let pooled = t.broadcast(pooled, &[rows, dc])?;
                let joint = t.concat(&[fine, pooled], 1)?;
                mlp.forward(t, ps, joint)?
            }
        };
        t.add(fine, g)
    }
}

/// Tokens for whichever streams a configuration uses.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamInputs<T> {
    pub fine: Option<TokenBatch<T>>,
    pub coarse: Option<TokenBatch<T>>,
    pub bounds: Aabb<f64>,
}

/// Handles to the prediction tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DetectionVars {
    /// `[J, 24]` corner coordinates.
    pub boxes: Var,
    /// `[J, C + 1]`; the last column is the no-object class.
    pub logits: Var,
}

/// `J` predicted corner sets with class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSet<T> {
    pub boxes: Vec<Box3D<T>>,
    pub logits: Array<T>,
}

impl<T: Scalar> DetectionSet<T> {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.shape()[1] - 1
    }

    /// Softmax class probabilities of detection `j` (no-object last).
    pub fn probabilities(&self, j: usize) -> Vec<T> {
        let c = self.logits.shape()[1];
        let row = &self.logits.data()[j * c..(j + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn from_vars(t: &Tape<T>, vars: DetectionVars) -> Result<Self> {
        let flat = t.value(vars.boxes);
        let boxes = flat.data().chunks(24).map(Box3D::from_flat).collect::<Result<_>>()?;
        Ok(Self { boxes, logits: t.value(vars.logits).clone() })
    }
}

/// The two-stream set-prediction detector.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    pub cfg: ModelConfig,
    pub samples_per_ray: usize,
    pub params: ParamStore<T>,
    pub fine: Option<Stream>,
    pub coarse: Option<Stream>,
    pub fusion: Option<Fusion>,
    pub queries: ParamId,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    pub box_head: Mlp,
    pub class_head: Linear,
}

impl<T: Scalar> Detector<T> {
    /// Registers parameters for the configured streams only. Initial values
    /// depend on `(seed, parameter name)`, so configurations that share a
    /// sub-network start from identical weights for it.
    pub fn new(cfg: ModelConfig, samples_per_ray: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, seed };
        let d = cfg.d_model;
        let d_in = cfg.token_width(samples_per_ray);
        let fine = if cfg.streams.uses_fine() {
            Some(Stream::new(&mut init, "fine", &cfg, d_in, cfg.enc_layers_fine)?)
        } else {
            None
        };
        let coarse = if cfg.streams.uses_coarse() {
            Some(Stream::new(&mut init, "coarse", &cfg, d_in, cfg.enc_layers_coarse)?)
        } else {
            None
        };
        let fusion = if cfg.streams == StreamMode::Fused {
            Some(match cfg.fusion {
                FusionKind::Attention => {
                    Fusion::Attention(Attention::new(&mut init, "fusion.attn", d, cfg.heads, true)?)
                }
                FusionKind::Mlp => Fusion::Mlp(Mlp::zero_output(&mut init, "fusion.mlp", &[2 * d, d, d])?),
            })
        } else {
            None
        };
        let queries = init.embedding("decoder.queries", cfg.queries, d)?;
        let hidden = cfg.ffn_mult * d;
        let decoder = (0..cfg.dec_layers)
            .map(|i| DecoderLayer::new(&mut init, &format!("decoder.{i}"), d, cfg.heads, hidden, cfg.ln_eps))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(&mut init, "decoder.norm", d, cfg.ln_eps)?;
        let box_head = Mlp::new(&mut init, "head.box", &[d, d, d, 3 * cfg.corners])?;
        let class_head = Linear::new(&mut init, "head.class", d, cfg.num_classes + 1)?;
        Ok(Self {
            cfg,
            samples_per_ray,
            params,
            fine,
            coarse,
            fusion,
            queries,
            decoder,
            decoder_norm,
            box_head,
            class_head,
        })
    }

    /// Samples and tokenizes only the grids the configured streams consume.
    pub fn inputs(
        &self,
        scene: &SyntheticScene,
        pose: &Pose<f64>,
        fine_intr: &Intrinsics,
        sampling: &SamplingConfig,
    ) -> Result<StreamInputs<T>> {
        if sampling.samples_per_ray != self.samples_per_ray {
            return Err(Error::Config(format!(
                "model built for {} samples per ray, sampling uses {}",
                self.samples_per_ray, sampling.samples_per_ray
            )));
        }
        let modality = self.cfg.modality;
        let fine = if self.fine.is_some() {
            let grid = sample_grid::<T>(scene, pose, fine_intr, sampling)?;
            Some(tokenize(&grid, modality, &scene.bounds)?)
        } else {
            None
        };
        let coarse = if self.coarse.is_some() {
            let k = coarse_intrinsics(fine_intr, sampling.delta)?;
            let grid = sample_grid::<T>(scene, pose, &k, sampling)?;
            Some(tokenize(&grid, modality, &scene.bounds)?)
        } else {
            None
        };
        Ok(StreamInputs { fine, coarse, bounds: scene.bounds })
    }

    /// Runs the configured stream composition.
    pub fn forward_tokens(&self, t: &mut Tape<T>, inputs: &StreamInputs<T>) -> Result<DetectionVars> {
        self.forward_with(t, &self.params, inputs, self.cfg.streams)
    }

    /// Runs with explicit parameter values and stream mode. `ps` must have
    /// the layout of `self.params`, and `mode` may only use streams this
    /// detector holds.
    pub fn forward_with(
        &self,
        t: &mut Tape<T>,
        ps: &ParamStore<T>,
        inputs: &StreamInputs<T>,
        mode: StreamMode,
    ) -> Result<DetectionVars> {
        let encode = |t: &mut Tape<T>, stream: &Option<Stream>, tokens: &Option<TokenBatch<T>>, label: &str| {
            let stream = stream.as_ref().ok_or_else(|| Error::Config(format!("detector has no {label} stream")))?;
            let tokens = tokens.as_ref().ok_or_else(|| Error::Invalid(format!("missing {label} tokens")))?;
            let x = t.constant(tokens.tokens.clone())?;
            stream.forward(t, ps, x)
        };
        let memory = match mode {
            StreamMode::FineOnly => encode(t, &self.fine, &inputs.fine, "fine")?,
            StreamMode::CoarseOnly => encode(t, &self.coarse, &inputs.coarse, "coarse")?,
            StreamMode::Fused => {
                let fine = encode(t, &self.fine, &inputs.fine, "fine")?;
                let coarse = encode(t, &self.coarse, &inputs.coarse, "coarse")?;
                let fusion =
                    self.fusion.as_ref().ok_or_else(|| Error::Config("detector has no fusion module".into()))?;
                fusion.forward(t, ps, fine, coarse)?
            }
        };
        let decoded = self.decode(t, ps, memory)?;
        self.predict_heads(t, ps, decoded, &inputs.bounds)
    }

    /// `J` query embeddings refined against `memory`.
    pub fn decode(&self, t: &mut Tape<T>, ps: &ParamStore<T>, memory: Var) -> Result<Var> {
        let mut x = t.param(ps, self.queries)?;
        for layer in &self.decoder {
            x = layer.forward(t, ps, x, memory)?;
        }
        self.decoder_norm.forward(t, ps, x)
    }

    /// Box corners squashed into the inflated scene bounds, plus class logits.
    pub fn predict_heads(
        &self,
        t: &mut Tape<T>,
        ps: &ParamStore<T>,
        decoded: Var,
        bounds: &Aabb<f64>,
    ) -> Result<DetectionVars> {
        let raw = self.box_head.forward(t, ps, decoded)?;
        let unit = t.sigmoid(raw)?;
        let (lo, span) = inflated_range(bounds, self.cfg.bounds_inflation, self.cfg.corners);
        let span = t.constant(Array::new(vec![span.len()], span)?)?;
        let lo = t.constant(Array::new(vec![lo.len()], lo)?)?;
        let scaled = t.mul(unit, span)?;
        let boxes = t.add(scaled, lo)?;
        let logits = self.class_head.forward(t, ps, decoded)?;
        Ok(DetectionVars { boxes, logits })
    }

    /// Full forward pass without gradients.
    pub fn detect(
        &self,
        scene: &SyntheticScene,
        pose: &Pose<f64>,
        fine_intr: &Intrinsics,
        sampling: &SamplingConfig,
    ) -> Result<DetectionSet<T>> {
        let inputs = self.inputs(scene, pose, fine_intr, sampling)?;
        self.detect_tokens(&inputs)
    }

    pub fn detect_tokens(&self, inputs: &StreamInputs<T>) -> Result<DetectionSet<T>> {
        let mut t = Tape::new();
        let vars = self.forward_tokens(&mut t, inputs)?;
        DetectionSet::from_vars(&t, vars)
    }
}

/// Per-coordinate `(low, span)` of the inflated bounds, repeated per corner.
pub fn inflated_range<T: Scalar>(bounds: &Aabb<f64>, inflation: f64, corners: usize) -> (Vec<T>, Vec<T>) {
    let mut lo = Vec::with_capacity(3 * corners);
    let mut span = Vec::with_capacity(3 * corners);
    for _ in 0..corners {
        for k in 0..3 {
            let c = 0.5 * (bounds.min[k] + bounds.max[k]);
            let h = 0.5 * (bounds.max[k] - bounds.min[k]) * inflation;
            lo.push(T::of(c - h));
            span.push(T::of(2.0 * h));
        }
    }
    (lo, span)
}
