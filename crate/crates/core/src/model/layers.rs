//! Parameterised building blocks. Each block only holds parameter ids; the
//! values live in a [`ParamStore`].

use rand::Rng;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::seed::rng_for;

/// Registers parameters with a per-name random stream, so a parameter's
/// initial value depends only on the root seed and its name.
pub(crate) struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub seed: u64,
}

impl<T: Scalar> Init<'_, T> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let mut rng = rng_for(self.seed, name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        self.store.register(name, Array::new(shape.to_vec(), data)?)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.register(name, Array::full(shape.to_vec(), T::of(value)))
    }

    /// Xavier-uniform weight.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, &[fan_in, fan_out], bound)
    }

    /// Unit-variance uniform entries.
    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.uniform(name, &[rows, cols], 3f64.sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.constant(name, shape, 0.0)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.constant(name, shape, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: init.weight(&format!("{name}.w"), fan_in, fan_out)?,
            b: init.zeros(&format!("{name}.b"), &[fan_out])?,
        })
    }

    pub(crate) fn zeroed<T: Scalar>(init: &mut Init<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: init.zeros(&format!("{name}.w"), &[fan_in, fan_out])?,
            b: init.zeros(&format!("{name}.b"), &[fan_out])?,
        })
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = t.param(ps, self.w)?;
        let b = t.param(ps, self.b)?;
        let y = t.matmul(x, w)?;
        t.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub(crate) fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gain: init.ones(&format!("{name}.gain"), &[d])?,
            bias: init.zeros(&format!("{name}.bias"), &[d])?,
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let axis = t.shape(x).len() - 1;
        let n = t.layer_norm(x, axis, self.eps)?;
        let g = t.param(ps, self.gain)?;
        let b = t.param(ps, self.bias)?;
        let y = t.mul(n, g)?;
        t.add(y, b)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        d: usize,
        heads: usize,
        zero_output: bool,
    ) -> Result<Self> {
        let out = if zero_output {
            Linear::zeroed(init, &format!("{name}.out"), d, d)?
        } else {
            Linear::new(init, &format!("{name}.out"), d, d)?
        };
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), d, d)?,
            k: Linear::new(init, &format!("{name}.k"), d, d)?,
            v: Linear::new(init, &format!("{name}.v"), d, d)?,
            out,
            heads,
        })
    }

    /// `queries: [Tq, d]`, `context: [Tk, d]` → `[Tq, d]`.
    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, queries: Var, context: Var) -> Result<Var> {
        let d = t.shape(queries)[1];
        let dh = d / self.heads;
        let q = self.q.forward(t, ps, queries)?;
        let q = t.scale(q, 1.0 / (dh as f64).sqrt())?;
        let k = self.k.forward(t, ps, context)?;
        let v = self.v.forward(t, ps, context)?;
        let kt = t.transpose(k)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = t.slice(q, 1, lo, hi)?;
            let kh = t.slice(kt, 0, lo, hi)?;
            let vh = t.slice(v, 1, lo, hi)?;
            let scores = t.matmul(qh, kh)?;
            let attn = t.softmax(scores, 1)?;
            heads.push(t.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { t.concat(&heads, 1)? };
        self.out.forward(t, ps, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub(crate) fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(init, &format!("{name}.up"), d, hidden)?,
            down: Linear::new(init, &format!("{name}.down"), hidden, d)?,
        })
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(t, ps, x)?;
        let h = t.gelu(h)?;
        self.down.forward(t, ps, h)
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub(crate) fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, widths: &[usize]) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Like [`Mlp::new`] but with the last layer zero-initialised, so the
    /// block starts out as the zero map.
    pub(crate) fn zero_output<T: Scalar>(init: &mut Init<'_, T>, name: &str, widths: &[usize]) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut mlp = Self::new(init, name, &widths[..n])?;
        if n > 0 {
            let (a, b) = (widths[n - 1], widths[n]);
            mlp.layers.push(Linear::zeroed(init, &format!("{name}.{}", n - 1), a, b)?);
        }
        Ok(mlp)
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(t, ps, x)?;
            if i + 1 < self.layers.len() {
                x = t.gelu(x)?;
            }
        }
        Ok(x)
    }
}

/// Pre-norm self-attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: Attention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        d: usize,
        heads: usize,
        hidden: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(init, &format!("{name}.norm_attn"), d, eps)?,
            attn: Attention::new(init, &format!("{name}.attn"), d, heads, false)?,
            norm_ffn: LayerNorm::new(init, &format!("{name}.norm_ffn"), d, eps)?,
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, hidden)?,
        })
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(t, ps, x)?;
        let a = self.attn.forward(t, ps, h, h)?;
        let x = t.add(x, a)?;
        let h = self.norm_ffn.forward(t, ps, x)?;
        let f = self.ffn.forward(t, ps, h)?;
        t.add(x, f)
    }
}

/// Pre-norm query self-attention, cross-attention onto memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub(crate) fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        d: usize,
        heads: usize,
        hidden: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm_self: LayerNorm::new(init, &format!("{name}.norm_self"), d, eps)?,
            self_attn: Attention::new(init, &format!("{name}.self_attn"), d, heads, false)?,
            norm_cross: LayerNorm::new(init, &format!("{name}.norm_cross"), d, eps)?,
            cross_attn: Attention::new(init, &format!("{name}.cross_attn"), d, heads, false)?,
            norm_ffn: LayerNorm::new(init, &format!("{name}.norm_ffn"), d, eps)?,
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, hidden)?,
        })
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<T>, ps: &ParamStore<T>, x: Var, memory: Var) -> Result<Var> {
        let h = self.norm_self.forward(t, ps, x)?;
        let a = self.self_attn.forward(t, ps, h, h)?;
        let x = t.add(x, a)?;
        let h = self.norm_cross.forward(t, ps, x)?;
        let c = self.cross_attn.forward(t, ps, h, memory)?;
        let x = t.add(x, c)?;
        let h = self.norm_ffn.forward(t, ps, x)?;
        let f = self.ffn.forward(t, ps, h)?;
        t.add(x, f)
    }
}
