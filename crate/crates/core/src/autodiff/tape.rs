//! Dynamic reverse-mode tape.
//!
//! Every op appends one node holding its forward value. Node ids are handed
//! out in creation order, so the node list is already topologically sorted
//! and `backward` is a single reverse sweep.

use crate::autodiff::array::{broadcast_index_map, broadcast_shapes, tile_len};
use crate::autodiff::params::{Gradients, ParamId, ParamStore};
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Maximum(usize, usize),
    Minimum(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Relu(usize),
    Gelu(usize),
    Matmul(usize, usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    LayerNorm { x: usize, axis: usize, rstd: Vec<f64> },
    Sum(usize),
    SumAxes(usize, Vec<usize>),
    MeanAxes(usize, Vec<usize>, usize),
    MaxAxis { x: usize, picks: Vec<usize> },
    Reshape(usize),
    Transpose(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Broadcast(usize),
    Gather { x: usize, rows: Vec<usize> },
}

struct Node<T> {
    value: Array<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    touched: Vec<ParamId>,
    fault: Option<(String, f64)>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Grads<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn wrt(&self, v: Var) -> Option<&Array<T>> {
        self.grads[v.0].as_ref()
    }
}

/// `[outer, len, inner]` decomposition around `axis`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), touched: Vec::new(), fault: None }
    }

    /// Test fixture: multiplies the backward rule of every `op` node
    /// (`"gelu"`, `"softmax"`, `"matmul"`, `"layer_norm"`, ...) by `factor`.
    /// Forward values are unaffected.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, op: &str, factor: f64) {
        self.fault = Some((op.to_string(), factor));
    }

    fn op_name(op: &Op) -> &'static str {
        match op {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Maximum(..) => "maximum",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(..) => "abs",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::Matmul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum(..) => "sum",
            Op::SumAxes(..) => "sum_axes",
            Op::MeanAxes(..) => "mean_axes",
            Op::MaxAxis { .. } => "max_axis",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Broadcast(..) => "broadcast",
            Op::Gather { .. } => "gather_rows",
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameters read by this tape, in first-use order.
    pub fn touched_params(&self) -> &[ParamId] {
        &self.touched
    }

    fn push(&mut self, value: Array<T>, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Param(_) => true,
            _ => self.inputs_of(&op).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Maximum(a, b)
            | Op::Minimum(a, b)
            | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Abs(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Softmax(x, _)
            | Op::LogSoftmax(x, _)
            | Op::Sum(x)
            | Op::SumAxes(x, _)
            | Op::MeanAxes(x, _, _)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::Broadcast(x) => vec![*x],
            Op::LayerNorm { x, .. } | Op::MaxAxis { x, .. } | Op::Slice { x, .. } | Op::Gather { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }

    // ---- leaves ----

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// A constant; no gradient is propagated into it.
    pub fn constant(&mut self, value: Array<T>) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "constant")?;
        self.nodes[v.0].requires_grad = false;
        Ok(v)
    }

    pub fn scalar_constant(&mut self, value: T) -> Result<Var> {
        self.constant(Array::scalar(value))
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if !self.touched.contains(&id) {
            self.touched.push(id);
        }
        let value = store.get(id).value.clone();
        self.push(value, Op::Param(id), "param")
    }

    // ---- elementwise binary with broadcasting ----

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Array::new(va.shape().to_vec(), data)?
        } else if let Some(n) = tile_len(vb.shape(), va.shape()).filter(|&n| n > 0) {
            let mut data = Vec::with_capacity(va.len());
            for chunk in va.data().chunks(n) {
                data.extend(chunk.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)));
            }
            Array::new(va.shape().to_vec(), data)?
        } else if let Some(n) = tile_len(va.shape(), vb.shape()).filter(|&n| n > 0) {
            let mut data = Vec::with_capacity(vb.len());
            for chunk in vb.data().chunks(n) {
                data.extend(va.data().iter().zip(chunk).map(|(&x, &y)| f(x, y)));
            }
            Array::new(vb.shape().to_vec(), data)?
        } else {
            let out = broadcast_shapes(va.shape(), vb.shape())
                .ok_or_else(|| Error::shape(name, format!("{:?} vs {:?}", va.shape(), vb.shape())))?;
            let ma = broadcast_index_map(va.shape(), &out);
            let mb = broadcast_index_map(vb.shape(), &out);
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(va.data()[i], vb.data()[j])).collect();
            Array::new(out, data)?
        };
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a.0, b.0))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", |x, y| if x >= y { x } else { y }, Op::Maximum(a.0, b.0))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", |x, y| if x <= y { x } else { y }, Op::Minimum(a.0, b.0))
    }

    // ---- elementwise unary ----

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: Op) -> Result<Var> {
        let value = self.nodes[x.0].value.map(f);
        self.push(value, op, name)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = T::of(c);
        self.unary(x, "scale", |v| v * k, Op::Scale(x.0, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = T::of(c);
        self.unary(x, "add_scalar", |v| v + k, Op::AddScalar(x.0))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "abs", |v| v.abs(), Op::Abs(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "exp", |v| v.exp(), Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "log", |v| v.ln(), Op::Log(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", gelu, Op::Gelu(x.0))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, va.data(), vb.data(), &mut out);
        let value = Array::new(vec![m, n], out)?;
        self.push(value, Op::Matmul(a.0, b.0), "matmul")
    }

    /// Swaps the two axes of a 2-d array.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.ndim() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-d, got {:?}", v.shape())));
        }
        let value = transpose2(v);
        self.push(value, Op::Transpose(x.0), "transpose")
    }

    // ---- normalisations ----

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        check_axis("softmax", v, axis)?;
        let value = softmax_along(v, axis, false);
        self.push(value, Op::Softmax(x.0, axis), "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        check_axis("log_softmax", v, axis)?;
        let value = softmax_along(v, axis, true);
        self.push(value, Op::LogSoftmax(x.0, axis), "log_softmax")
    }

    /// Normalises each lane along `axis` to zero mean and unit (biased) variance.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        check_axis("layer_norm", v, axis)?;
        let (outer, len, inner) = lanes(v.shape(), axis);
        let mut out = vec![T::zero(); v.len()];
        let mut rstds = Vec::with_capacity(outer * inner);
        let d = v.data();
        let n = T::of(len as f64);
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| o * len * inner + l * inner + i;
                let mean = (0..len).map(|l| d[at(l)]).sum::<T>() / n;
                let var = (0..len).map(|l| (d[at(l)] - mean) * (d[at(l)] - mean)).sum::<T>() / n;
                let rstd = T::one() / (var + T::of(eps)).sqrt();
                rstds.push(rstd.as_f64());
                for l in 0..len {
                    out[at(l)] = (d[at(l)] - mean) * rstd;
                }
            }
        }
        let value = Array::new(v.shape().to_vec(), out)?;
        self.push(value, Op::LayerNorm { x: x.0, axis, rstd: rstds }, "layer_norm")
    }

    // ---- reductions ----

    /// Sum of every element, returned as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().copied().sum::<T>();
        self.push(Array::scalar(s), Op::Sum(x.0), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums over `axes`, dropping them from the shape.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let (keep, out_shape) = reduced_shapes("sum_axes", v.shape(), axes)?;
        let value = Array::new(out_shape, reduce_sum(v, &keep))?;
        self.push(value, Op::SumAxes(x.0, keep), "sum_axes")
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let (keep, out_shape) = reduced_shapes("mean_axes", v.shape(), axes)?;
        let count = v.len() / keep.iter().product::<usize>().max(1);
        let inv = T::one() / T::of(count as f64);
        let data = reduce_sum(v, &keep).into_iter().map(|s| s * inv).collect();
        let value = Array::new(out_shape, data)?;
        self.push(value, Op::MeanAxes(x.0, keep, count), "mean_axes")
    }

    /// Maximum along `axis` (dropped); the gradient goes to the first maximiser.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.extremum_axis(x, axis, true)
    }

    /// Minimum along `axis` (dropped); the gradient goes to the first minimiser.
    pub fn min_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.extremum_axis(x, axis, false)
    }

    fn extremum_axis(&mut self, x: Var, axis: usize, is_max: bool) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        check_axis("max_axis", v, axis)?;
        let (outer, len, inner) = lanes(v.shape(), axis);
        if len == 0 {
            return Err(Error::shape("max_axis", "empty reduction"));
        }
        let d = v.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut picks = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let at = o * len * inner + l * inner + i;
                    let better = if is_max { d[at] > d[best] } else { d[at] < d[best] };
                    if better {
                        best = at;
                    }
                }
                out.push(d[best]);
                picks.push(best);
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let value = Array::new(shape, out)?;
        self.push(value, Op::MaxAxis { x: x.0, picks }, "max_axis")
    }

    // ---- shape manipulation ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.reshaped(shape.to_vec())?;
        self.push(value, Op::Reshape(x.0), "reshape")
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        match broadcast_shapes(v.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::shape("broadcast", format!("{:?} to {:?}", v.shape(), shape))),
        }
        let map = broadcast_index_map(v.shape(), shape);
        let data = map.iter().map(|&i| v.data()[i]).collect();
        let value = Array::new(shape.to_vec(), data)?;
        self.push(value, Op::Broadcast(x.0), "broadcast")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        check_axis("concat", &self.nodes[first.0].value, axis)?;
        let mut total = 0;
        for x in xs {
            let s = self.nodes[x.0].value.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = lanes(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for x in xs {
                let v = &self.nodes[x.0].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Array::new(shape, data)?;
        let inputs = xs.iter().map(|v| v.0).collect();
        self.push(value, Op::Concat { inputs, axis }, "concat")
    }

    /// `x[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        check_axis("slice", v, axis)?;
        if start > end || end > v.shape()[axis] {
            return Err(Error::shape("slice", format!("{}..{} on axis {} of {:?}", start, end, axis, v.shape())));
        }
        let (outer, len, inner) = lanes(v.shape(), axis);
        let mut shape = v.shape().to_vec();
        shape[axis] = end - start;
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&v.data()[base + start * inner..base + end * inner]);
        }
        let value = Array::new(shape, data)?;
        self.push(value, Op::Slice { x: x.0, axis, start }, "slice")
    }

    /// Selects rows (axis 0) by index; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.ndim() == 0 {
            return Err(Error::shape("gather_rows", "scalar input"));
        }
        let n = v.shape()[0];
        let width = v.len().checked_div(n).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(Error::shape("gather_rows", format!("row {r} of {n}")));
            }
            data.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = rows.len();
        let value = Array::new(shape, data)?;
        self.push(value, Op::Gather { x: x.0, rows: rows.to_vec() }, "gather_rows")
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`, returning gradients for every node.
    pub fn grads(&self, loss: Var) -> Result<Grads<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::full(self.shape(loss).to_vec(), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            match &self.fault {
                Some((op, f)) if op == Self::op_name(&self.nodes[id].op) => {
                    let scaled = g.map(|v| v * T::of(*f));
                    self.vjp(id, &scaled, &mut grads)?;
                }
                _ => self.vjp(id, &g, &mut grads)?,
            }
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Gradients of `loss` with respect to every parameter read by this tape.
    pub fn param_gradients(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        let node_grads = self.grads(loss)?;
        let mut out: Vec<Option<Array<T>>> = vec![None; store.len()];
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &node_grads.grads[id] {
                    match out[pid.0].as_mut() {
                        Some(acc) => acc.add_assign(g),
                        None => out[pid.0] = Some(g.clone()),
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    /// Accumulates `∂loss/∂param` into every parameter's gradient buffer.
    /// Parameters the loss does not depend on keep a zero contribution and
    /// are reported with a warning.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let g = self.param_gradients(loss, store)?;
        for id in store.ids() {
            if g.get(id).is_none() {
                log::warn!("parameter {} is disconnected from the loss", store.get(id).name);
            }
        }
        g.accumulate_into(store);
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Array<T>>], target: usize, g: Array<T>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match grads[target].as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads[target] = Some(g),
        }
    }

    /// Sums a broadcast gradient back down to `shape`.
    fn unbroadcast(g: &Array<T>, shape: &[usize]) -> Array<T> {
        if g.shape() == shape {
            return g.clone();
        }
        let mut out = Array::zeros(shape.to_vec());
        if let Some(n) = tile_len(shape, g.shape()).filter(|&n| n > 0) {
            let od = out.data_mut();
            for chunk in g.data().chunks(n) {
                for (o, v) in od.iter_mut().zip(chunk) {
                    *o += *v;
                }
            }
            return out;
        }
        let map = broadcast_index_map(shape, g.shape());
        let od = out.data_mut();
        for (k, &i) in map.iter().enumerate() {
            od[i] += g.data()[k];
        }
        out
    }

    fn binary_vjp(
        &self,
        g: &Array<T>,
        a: usize,
        b: usize,
        grads: &mut [Option<Array<T>>],
        da: impl Fn(T, T, T) -> T,
        db: impl Fn(T, T, T) -> T,
    ) {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let out_shape = g.shape();
        if va.shape() == out_shape {
            if let Some(n) = tile_len(vb.shape(), out_shape).filter(|&n| n > 0) {
                let (ad, bd) = (va.data(), vb.data());
                if self.nodes[a].requires_grad {
                    let data = g.data().iter().enumerate().map(|(k, &gk)| da(gk, ad[k], bd[k % n])).collect();
                    self.accum(grads, a, Array::new(va.shape().to_vec(), data).expect("same shape"));
                }
                if self.nodes[b].requires_grad {
                    let mut gb = Array::zeros(vb.shape().to_vec());
                    let gd = gb.data_mut();
                    for (gc, ac) in g.data().chunks(n).zip(ad.chunks(n)) {
                        for i in 0..n {
                            gd[i] += db(gc[i], ac[i], bd[i]);
                        }
                    }
                    self.accum(grads, b, gb);
                }
                return;
            }
        }
        let ma = broadcast_index_map(va.shape(), out_shape);
        let mb = broadcast_index_map(vb.shape(), out_shape);
        if self.nodes[a].requires_grad {
            let mut ga = Array::zeros(va.shape().to_vec());
            let gd = ga.data_mut();
            for k in 0..g.len() {
                gd[ma[k]] += da(g.data()[k], va.data()[ma[k]], vb.data()[mb[k]]);
            }
            self.accum(grads, a, ga);
        }
        if self.nodes[b].requires_grad {
            let mut gb = Array::zeros(vb.shape().to_vec());
            let gd = gb.data_mut();
            for k in 0..g.len() {
                gd[mb[k]] += db(g.data()[k], va.data()[ma[k]], vb.data()[mb[k]]);
            }
            self.accum(grads, b, gb);
        }
    }

    fn vjp(&self, id: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        let zero = T::zero();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Add(a, b) => {
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                self.accum(grads, a, Self::unbroadcast(g, &sa));
                self.accum(grads, b, Self::unbroadcast(g, &sb));
            }
            &Op::Sub(a, b) => {
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                self.accum(grads, a, Self::unbroadcast(g, &sa));
                self.accum(grads, b, Self::unbroadcast(&g.map(|v| -v), &sb));
            }
            &Op::Mul(a, b) => {
                self.binary_vjp(g, a, b, grads, |g, _, y| g * y, |g, x, _| g * x);
            }
            &Op::Div(a, b) => {
                self.binary_vjp(g, a, b, grads, |g, _, y| g / y, |g, x, y| -g * x / (y * y));
            }
            &Op::Maximum(a, b) => {
                self.binary_vjp(
                    g,
                    a,
                    b,
                    grads,
                    |g, x, y| if x >= y { g } else { zero },
                    |g, x, y| if x >= y { zero } else { g },
                );
            }
            &Op::Minimum(a, b) => {
                self.binary_vjp(
                    g,
                    a,
                    b,
                    grads,
                    |g, x, y| if x <= y { g } else { zero },
                    |g, x, y| if x <= y { zero } else { g },
                );
            }
            &Op::Scale(x, c) => {
                let k = T::of(c);
                self.accum(grads, x, g.map(|v| v * k));
            }
            &Op::AddScalar(x) => self.accum(grads, x, g.clone()),
            &Op::Abs(x) => {
                let xv = &self.nodes[x].value;
                self.accum(grads, x, zip_map(g, xv, |g, x| g * x.signum_or_zero()));
            }
            &Op::Exp(x) => self.accum(grads, x, zip_map(g, y, |g, y| g * y)),
            &Op::Log(x) => {
                let xv = &self.nodes[x].value;
                self.accum(grads, x, zip_map(g, xv, |g, x| g / x));
            }
            &Op::Sigmoid(x) => {
                self.accum(grads, x, zip_map(g, y, |g, s| g * s * (T::one() - s)));
            }
            &Op::Relu(x) => {
                let xv = &self.nodes[x].value;
                self.accum(grads, x, zip_map(g, xv, |g, x| if x > zero { g } else { zero }));
            }
            &Op::Gelu(x) => {
                let xv = &self.nodes[x].value;
                self.accum(grads, x, zip_map(g, xv, |g, x| g * gelu_grad(x)));
            }
            &Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a].requires_grad {
                    let mut ga = vec![zero; m * k];
                    T::gemm_nt(m, n, k, g.data(), vb.data(), &mut ga);
                    self.accum(grads, a, Array::new(vec![m, k], ga)?);
                }
                if self.nodes[b].requires_grad {
                    let mut gb = vec![zero; k * n];
                    T::gemm_tn(k, m, n, va.data(), g.data(), &mut gb);
                    self.accum(grads, b, Array::new(vec![k, n], gb)?);
                }
            }
            &Op::Transpose(x) => self.accum(grads, x, transpose2(g)),
            &Op::Softmax(x, axis) => {
                let (outer, len, inner) = lanes(y.shape(), axis);
                let mut gx = vec![zero; y.len()];
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let dot: T = (0..len).map(|l| gd[at(l)] * yd[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = yd[at(l)] * (gd[at(l)] - dot);
                        }
                    }
                }
                self.accum(grads, x, Array::new(y.shape().to_vec(), gx)?);
            }
            &Op::LogSoftmax(x, axis) => {
                let (outer, len, inner) = lanes(y.shape(), axis);
                let mut gx = vec![zero; y.len()];
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let total: T = (0..len).map(|l| gd[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = gd[at(l)] - yd[at(l)].exp() * total;
                        }
                    }
                }
                self.accum(grads, x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::LayerNorm { x, axis, rstd } => {
                let (outer, len, inner) = lanes(y.shape(), *axis);
                let mut gx = vec![zero; y.len()];
                let (yd, gd) = (y.data(), g.data());
                let n = T::of(len as f64);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let r = T::of(rstd[o * inner + i]);
                        let mg = (0..len).map(|l| gd[at(l)]).sum::<T>() / n;
                        let mgy = (0..len).map(|l| gd[at(l)] * yd[at(l)]).sum::<T>() / n;
                        for l in 0..len {
                            gx[at(l)] = r * (gd[at(l)] - mg - yd[at(l)] * mgy);
                        }
                    }
                }
                self.accum(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            &Op::Sum(x) => {
                let s = self.nodes[x].value.shape().to_vec();
                self.accum(grads, x, Array::full(s, g.item()));
            }
            Op::SumAxes(x, keep) => {
                let s = self.nodes[*x].value.shape().to_vec();
                let gk = g.reshaped(keep.clone())?;
                let map = broadcast_index_map(keep, &s);
                let data = map.iter().map(|&i| gk.data()[i]).collect();
                self.accum(grads, *x, Array::new(s, data)?);
            }
            Op::MeanAxes(x, keep, count) => {
                let s = self.nodes[*x].value.shape().to_vec();
                let inv = T::one() / T::of(*count as f64);
                let gk = g.reshaped(keep.clone())?;
                let map = broadcast_index_map(keep, &s);
                let data = map.iter().map(|&i| gk.data()[i] * inv).collect();
                self.accum(grads, *x, Array::new(s, data)?);
            }
            Op::MaxAxis { x, picks } => {
                let s = self.nodes[*x].value.shape().to_vec();
                let mut gx = Array::zeros(s);
                for (k, &p) in picks.iter().enumerate() {
                    gx.data_mut()[p] += g.data()[k];
                }
                self.accum(grads, *x, gx);
            }
            &Op::Reshape(x) => {
                let s = self.nodes[x].value.shape().to_vec();
                self.accum(grads, x, g.reshaped(s)?);
            }
            &Op::Broadcast(x) => {
                let s = self.nodes[x].value.shape().to_vec();
                self.accum(grads, x, Self::unbroadcast(g, &s));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = lanes(g.shape(), *axis);
                let mut offset = 0;
                let total = g.shape()[*axis];
                for &inp in inputs {
                    let s = self.nodes[inp].value.shape().to_vec();
                    let len = s[*axis];
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    offset += len;
                    self.accum(grads, inp, Array::new(s, data)?);
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.nodes[*x].value.shape().to_vec();
                let (outer, len, inner) = lanes(&s, *axis);
                let width = g.shape()[*axis];
                let mut gx = Array::zeros(s);
                let gd = gx.data_mut();
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * width * inner;
                    gd[dst..dst + width * inner].copy_from_slice(&g.data()[src..src + width * inner]);
                }
                self.accum(grads, *x, gx);
            }
            Op::Gather { x, rows } => {
                let s = self.nodes[*x].value.shape().to_vec();
                let width = self.nodes[*x].value.len().checked_div(s[0]).unwrap_or(0);
                let mut gx = Array::zeros(s);
                let gd = gx.data_mut();
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        gd[r * width + c] += g.data()[k * width + c];
                    }
                }
                self.accum(grads, *x, gx);
            }
        }
        Ok(())
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Scalar> SignumOrZero for T {
    fn signum_or_zero(self) -> T {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `tanh` through one exponential; saturates cleanly for large `|u|`.
fn tanh_via_exp<T: Scalar>(u: T) -> T {
    let e = (T::of(-2.0) * u.abs()).fast_exp();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + tanh_via_exp(inner))
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = tanh_via_exp(c * (x + a * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

fn zip_map<T: Scalar>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

fn transpose2<T: Scalar>(v: &Array<T>) -> Array<T> {
    let (r, c) = (v.shape()[0], v.shape()[1]);
    let mut out = vec![T::zero(); r * c];
    let d = v.data();
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Array::new(vec![c, r], out).expect("transpose preserves element count")
}

fn check_axis<T: Scalar>(op: &'static str, v: &Array<T>, axis: usize) -> Result<()> {
    if axis >= v.ndim() {
        return Err(Error::shape(op, format!("axis {} out of range for {:?}", axis, v.shape())));
    }
    Ok(())
}

fn softmax_along<T: Scalar>(v: &Array<T>, axis: usize, log: bool) -> Array<T> {
    let (outer, len, inner) = lanes(v.shape(), axis);
    let d = v.data();
    let mut out = vec![T::zero(); v.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| o * len * inner + l * inner + i;
            let max = (0..len).map(|l| d[at(l)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for l in 0..len {
                let e = (d[at(l)] - max).fast_exp();
                out[at(l)] = e;
                z += e;
            }
            if log {
                let lz = z.ln();
                for l in 0..len {
                    out[at(l)] = d[at(l)] - max - lz;
                }
            } else {
                let inv = T::one() / z;
                for l in 0..len {
                    out[at(l)] *= inv;
                }
            }
        }
    }
    Array::new(v.shape().to_vec(), out).expect("softmax preserves shape")
}

/// Returns (`keepdims` shape, dropped shape).
fn reduced_shapes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut keep = shape.to_vec();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape(op, format!("axis {} out of range for {:?}", a, shape)));
        }
        keep[a] = 1;
    }
    let out = shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &s)| s).collect();
    Ok((keep, out))
}

fn reduce_sum<T: Scalar>(v: &Array<T>, keep: &[usize]) -> Vec<T> {
    let map = broadcast_index_map(keep, v.shape());
    let mut out = vec![T::zero(); keep.iter().product()];
    for (k, &i) in map.iter().enumerate() {
        out[i] += v.data()[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], v: &[f64]) -> Array<f64> {
        Array::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let i = t.constant(arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let y = t.matmul(a, i).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[0.0; 3])).unwrap();
        let y = t.softmax(x, 0).unwrap();
        for &v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_matches_scalar_formula() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let y = t.layer_norm(x, 0, 0.0).unwrap();
        // oracle: mean 2, biased variance 2/3
        let sd = (2.0f64 / 3.0).sqrt();
        let want = [-1.0 / sd, 0.0, 1.0 / sd];
        let got = t.value(y).data();
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12);
        }
        let mean: f64 = got.iter().sum::<f64>() / 3.0;
        let var: f64 = got.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_row_layer_norm_without_eps_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0; 3])).unwrap();
        assert!(matches!(t.layer_norm(x, 0, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0, -2.0, 3.0])).unwrap();
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.grads(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let w = t.leaf(Array::scalar(0.0)).unwrap();
        let s = t.sigmoid(w).unwrap();
        let g = t.grads(s).unwrap();
        assert_eq!(g.wrt(w).unwrap().item(), 0.25);
    }

    #[test]
    fn errors_surface() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(arr(&[2, 3], &[0.0; 6])).unwrap();
        let b = t.leaf(arr(&[2, 3], &[0.0; 6])).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        let c = t.leaf(arr(&[4], &[0.0; 4])).unwrap();
        assert!(t.add(a, c).is_err());
        assert!(matches!(t.log(a), Err(Error::NonFinite(_))));
        let big = t.leaf(arr(&[1], &[1000.0])).unwrap();
        assert!(matches!(t.exp(big), Err(Error::NonFinite(_))));
        assert!(t.grads(a).is_err());
    }

    #[test]
    fn gradients_accumulate_over_repeated_use() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", arr(&[2], &[1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let w1 = t.param(&store, id).unwrap();
        let w2 = t.param(&store, id).unwrap();
        let s = t.add(w1, w2).unwrap();
        let l = t.sum(s).unwrap();
        t.backward(l, &mut store).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[4.0, 4.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
        assert_eq!(t.touched_params(), &[id]);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let used = store.register("used", arr(&[1], &[3.0])).unwrap();
        let unused = store.register("unused", arr(&[1], &[5.0])).unwrap();
        let mut t = Tape::new();
        let u = t.param(&store, used).unwrap();
        let l = t.sum(u).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.get(unused).grad.data(), &[0.0]);
        assert_eq!(store.get(used).grad.data(), &[1.0]);
    }
}
