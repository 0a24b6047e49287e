use std::collections::HashMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, conv_out_len, split_axis};
use crate::error::{Error, Result};
use crate::tensor::{gemm, numel, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Shift(usize, T),
    Matmul(usize, usize),
    Transpose(usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose1d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        g: usize,
        stride: usize,
        pad: usize,
    },
    /// Adds a per-channel vector along `axis`.
    BiasAdd {
        x: usize,
        b: usize,
        axis: usize,
    },
    /// Multiplies by a per-channel vector along `axis`.
    ChannelMul {
        x: usize,
        s: usize,
        axis: usize,
    },
    /// Reduces everything except `axis`.
    ChannelSum {
        x: usize,
        axis: usize,
    },
    ChannelBroadcast {
        x: usize,
        axis: usize,
    },
    Gather {
        x: usize,
        idx: Rc<[usize]>,
    },
    ScatterAdd {
        x: usize,
        idx: Rc<[usize]>,
    },
    Reshape(usize),
    Concat {
        a: usize,
        b: usize,
        axis: usize,
    },
    Sigmoid(usize),
    Square(usize),
    SumAll(usize),
    BroadcastScalar(usize),
    /// Sums each leading-axis slice: `[n, ...] → [n]`.
    SumRows(usize),
    BroadcastRows(usize),
    // The remaining ops only support first-order gradients.
    Sqrt(usize),
    Log(usize),
    LogSoftmax(usize),
    BatchNorm {
        x: usize,
        inv_std: Rc<[T]>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Matmul(a, b) => vec![a, b],
            Conv1d { x, w, .. } | ConvTranspose1d { x, w, .. } => vec![x, w],
            ConvWeightGrad { x, g, .. } => vec![x, g],
            BiasAdd { x, b, .. } => vec![x, b],
            ChannelMul { x, s, .. } => vec![x, s],
            Concat { a, b, .. } => vec![a, b],
            Scale(a, _) | Shift(a, _) | Transpose(a) | Reshape(a) | Sigmoid(a) | Square(a)
            | SumAll(a) | BroadcastScalar(a) | SumRows(a) | BroadcastRows(a) | Sqrt(a)
            | Log(a) | LogSoftmax(a) => vec![a],
            ChannelSum { x, .. }
            | ChannelBroadcast { x, .. }
            | Gather { x, .. }
            | ScatterAdd { x, .. }
            | BatchNorm { x, .. } => vec![x],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Shift(..) => "shift",
            Matmul(..) => "matmul",
            Transpose(..) => "transpose",
            Conv1d { .. } => "conv1d",
            ConvTranspose1d { .. } => "conv_transpose1d",
            ConvWeightGrad { .. } => "conv_weight_grad",
            BiasAdd { .. } => "bias_add",
            ChannelMul { .. } => "channel_mul",
            ChannelSum { .. } => "channel_sum",
            ChannelBroadcast { .. } => "channel_broadcast",
            Gather { .. } => "gather",
            ScatterAdd { .. } => "scatter_add",
            Reshape(..) => "reshape",
            Concat { .. } => "concat",
            Sigmoid(..) => "sigmoid",
            Square(..) => "square",
            SumAll(..) => "sum",
            BroadcastScalar(..) => "broadcast_scalar",
            SumRows(..) => "sum_rows",
            BroadcastRows(..) => "broadcast_rows",
            Sqrt(..) => "sqrt",
            Log(..) => "log",
            LogSoftmax(..) => "log_softmax",
            BatchNorm { .. } => "batchnorm",
        }
    }

    /// Whether the backward rule is itself built from recorded operations.
    fn twice_differentiable(&self) -> bool {
        !matches!(
            self,
            Op::Sqrt(_) | Op::Log(_) | Op::LogSoftmax(_) | Op::BatchNorm { .. }
        )
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by leaf.
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// A recorded computation: an append-only list of nodes in topological order.
///
/// Each graph owns a seeded RNG used by stochastic operations (dropout,
/// interpolation coefficients), so rebuilding a graph with the same seed and
/// the same calls reproduces every value bit for bit.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    rng: ChaCha8Rng,
    bindings: HashMap<(u64, usize), Var>,
}

impl<T: Real> Graph<T> {
    pub fn new(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            bindings: HashMap::new(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked (parameter or differentiated input).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant by every backward pass.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn binding(&self, key: (u64, usize)) -> Option<Var> {
        self.bindings.get(&key).copied()
    }

    pub(crate) fn set_binding(&mut self, key: (u64, usize), v: Var) {
        self.bindings.insert(key, v);
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.bindings.retain(|_, v| v.0 < len);
    }

    fn data(&self, v: usize) -> &[T] {
        self.nodes[v].value.data()
    }

    fn shp(&self, v: usize) -> Vec<usize> {
        self.nodes[v].value.shape().to_vec()
    }

    // ---------------------------------------------------------------- elementwise

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        let data = self
            .data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        self.push(op, value)
    }

    /// Broadcasts `b` to `a`'s shape when `b` holds a single value.
    fn align(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) && self.value(b).numel() == 1 {
            let shape = self.shp(a.0);
            return self.broadcast_scalar(b, shape);
        }
        Ok(b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let b = self.align(a, b)?;
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let b = self.align(a, b)?;
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let b = self.align(a, b)?;
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a.0, c), value)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::Shift(a.0, c), value)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.push(Op::Square(a.0), value)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.data(a.0).iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument("sqrt of negative value".into()));
        }
        let value = self.value(a).map(|x| x.sqrt());
        self.push(Op::Sqrt(a.0), value)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.data(a.0).iter().any(|&v| v <= T::zero()) {
            return Err(Error::InvalidArgument("log of non-positive value".into()));
        }
        let value = self.value(a).map(|x| x.ln());
        self.push(Op::Log(a.0), value)
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.data(a.0).iter().copied().sum();
        self.push(Op::SumAll(a.0), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if self.value(a).numel() != 1 {
            return Err(Error::Shape(format!(
                "broadcast_scalar expects one value, got {:?}",
                self.shape(a)
            )));
        }
        let value = Tensor::full(shape, self.data(a.0)[0]);
        self.push(Op::BroadcastScalar(a.0), value)
    }

    /// `[n, ...] → [n]`, summing each leading slice.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shp(a.0);
        let n = shape[0];
        let inner = numel(&shape[1..]);
        let data = self
            .data(a.0)
            .chunks(inner)
            .map(|c| c.iter().copied().sum())
            .collect();
        let value = Tensor::new(vec![n], data)?;
        self.push(Op::SumRows(a.0), value)
    }

    /// `[n] → shape` where `shape[0] == n`.
    pub fn broadcast_rows(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(a).numel();
        if shape[0] != n {
            return Err(Error::Shape(format!(
                "broadcast_rows: {n} rows into {shape:?}"
            )));
        }
        let inner = numel(&shape[1..]);
        let mut data = Vec::with_capacity(n * inner);
        for &v in self.data(a.0) {
            data.extend(std::iter::repeat(v).take(inner));
        }
        let value = Tensor::new(shape, data)?;
        self.push(Op::BroadcastRows(a.0), value)
    }

    // ---------------------------------------------------------------- linear algebra

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shp(a.0);
        let sb = self.shp(b.0);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!(
                "matmul: {sa:?} x {sb:?} has mismatched inner dimensions"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(a.0), false, self.data(b.0), false, T::zero(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(Op::Matmul(a.0, b.0), value)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shp(a.0);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose expects 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(a.0);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        self.push(Op::Transpose(a.0), value)
    }

    // ---------------------------------------------------------------- convolutions

    fn as_batched(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            [c, t] => Ok((1, *c, *t)),
            [b, c, t] => Ok((*b, *c, *t)),
            s => Err(Error::Shape(format!("{what}: expected [C,T] or [B,C,T], got {s:?}"))),
        }
    }

    /// Cross-correlation over time. `x` is `[Cin, T]` or `[B, Cin, T]`,
    /// `w` is `[Cout, Cin, K]`; the output keeps the rank of `x`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (b, cin, t) = self.as_batched(x, "conv1d")?;
        let ws = self.shp(w.0);
        if ws.len() != 3 || ws[1] != cin {
            return Err(Error::Shape(format!(
                "conv1d: weight {ws:?} incompatible with input channels {cin}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d: stride must be positive".into()));
        }
        let (cout, k) = (ws[0], ws[2]);
        let t_out = conv_out_len(t, k, stride, pad).ok_or_else(|| {
            Error::Shape(format!(
                "conv1d: input length {t} with padding {pad} is shorter than kernel {k}"
            ))
        })?;
        let out = kernels::conv1d(
            self.data(x.0),
            self.data(w.0),
            b,
            cin,
            t,
            cout,
            k,
            stride,
            pad,
            t_out,
        );
        let shape = if self.value(x).rank() == 2 {
            vec![cout, t_out]
        } else {
            vec![b, cout, t_out]
        };
        let value = Tensor::new(shape, out)?;
        self.push(Op::Conv1d { x: x.0, w: w.0, stride, pad }, value)
    }

    /// Transposed convolution. `w` is `[Cin, Cout, K]`. With `out_len = None`
    /// the output length is `(T − 1)·stride + K − 2·pad`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        out_len: Option<usize>,
    ) -> Result<Var> {
        let (b, cin, t) = self.as_batched(x, "conv_transpose1d")?;
        let ws = self.shp(w.0);
        if ws.len() != 3 || ws[0] != cin {
            return Err(Error::Shape(format!(
                "conv_transpose1d: weight {ws:?} incompatible with input channels {cin}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv_transpose1d: stride must be positive".into(),
            ));
        }
        let (cout, k) = (ws[1], ws[2]);
        let natural = ((t - 1) * stride + k).checked_sub(2 * pad).filter(|&n| n > 0);
        let t_out = match (out_len, natural) {
            (Some(n), _) if n > 0 => n,
            (None, Some(n)) => n,
            _ => {
                return Err(Error::Shape(
                    "conv_transpose1d: empty output length".into(),
                ))
            }
        };
        if conv_out_len(t_out, k, stride, pad) != Some(t) {
            return Err(Error::Shape(format!(
                "conv_transpose1d: output length {t_out} is not an adjoint shape for input length {t}"
            )));
        }
        let out = kernels::conv_transpose1d(
            self.data(x.0),
            self.data(w.0),
            b,
            cin,
            t,
            cout,
            k,
            stride,
            pad,
            t_out,
        );
        let shape = if self.value(x).rank() == 2 {
            vec![cout, t_out]
        } else {
            vec![b, cout, t_out]
        };
        let value = Tensor::new(shape, out)?;
        self.push(
            Op::ConvTranspose1d { x: x.0, w: w.0, stride, pad },
            value,
        )
    }

    fn conv_weight_grad(
        &mut self,
        x: Var,
        g: Var,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (b, cin, t) = self.as_batched(x, "conv_weight_grad")?;
        let (gb, cout, t_out) = self.as_batched(g, "conv_weight_grad")?;
        debug_assert_eq!(b, gb);
        let dw = kernels::conv_weight_grad(
            self.data(x.0),
            self.data(g.0),
            b,
            cin,
            t,
            cout,
            t_out,
            k,
            stride,
            pad,
        );
        let value = Tensor::new(vec![cout, cin, k], dw)?;
        self.push(
            Op::ConvWeightGrad { x: x.0, g: g.0, stride, pad },
            value,
        )
    }

    // ---------------------------------------------------------------- channel ops

    fn channel_view(&self, x: Var, c: Var, axis: usize, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::Shape(format!("{what}: axis {axis} out of range for {s:?}")));
        }
        let (o, n, i) = split_axis(s, axis);
        if self.value(c).numel() != n {
            return Err(Error::Shape(format!(
                "{what}: vector of {} values for axis extent {n}",
                self.value(c).numel()
            )));
        }
        Ok((o, n, i))
    }

    /// Adds `b[c]` to every element whose index along `axis` is `c`.
    pub fn bias_add(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (o, n, inner) = self.channel_view(x, b, axis, "bias_add")?;
        let mut out = self.data(x.0).to_vec();
        let bias = self.data(b.0);
        for oi in 0..o {
            for c in 0..n {
                let base = (oi * n + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bias[c];
                }
            }
        }
        let value = Tensor::new(self.shp(x.0), out)?;
        self.push(Op::BiasAdd { x: x.0, b: b.0, axis }, value)
    }

    pub fn channel_mul(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        let (o, n, inner) = self.channel_view(x, s, axis, "channel_mul")?;
        let mut out = self.data(x.0).to_vec();
        let scale = self.data(s.0);
        for oi in 0..o {
            for c in 0..n {
                let base = (oi * n + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v *= scale[c];
                }
            }
        }
        let value = Tensor::new(self.shp(x.0), out)?;
        self.push(Op::ChannelMul { x: x.0, s: s.0, axis }, value)
    }

    fn channel_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (o, n, inner) = split_axis(self.shape(x), axis);
        let src = self.data(x.0);
        let mut out = vec![T::zero(); n];
        for oi in 0..o {
            for (c, acc) in out.iter_mut().enumerate() {
                let base = (oi * n + c) * inner;
                *acc += src[base..base + inner].iter().copied().sum::<T>();
            }
        }
        let value = Tensor::new(vec![n], out)?;
        self.push(Op::ChannelSum { x: x.0, axis }, value)
    }

    fn channel_broadcast(&mut self, x: Var, shape: Vec<usize>, axis: usize) -> Result<Var> {
        let (o, n, inner) = split_axis(&shape, axis);
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(o * n * inner);
        for _ in 0..o {
            for &v in src.iter().take(n) {
                out.extend(std::iter::repeat(v).take(inner));
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(Op::ChannelBroadcast { x: x.0, axis }, value)
    }

    // ---------------------------------------------------------------- indexing

    /// `out[i] = x[idx[i]]` over flattened storage, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        if numel(&shape) != idx.len() {
            return Err(Error::Shape(format!(
                "gather: {} indices for shape {shape:?}",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather: index {bad} out of {n}")));
        }
        let src = self.data(x.0);
        let out = idx.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, out)?;
        self.push(Op::Gather { x: x.0, idx }, value)
    }

    /// Adjoint of [`Graph::gather`]: `out[idx[i]] += x[i]`.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<[usize]>, shape: Vec<usize>) -> Result<Var> {
        let n = numel(&shape);
        if self.value(x).numel() != idx.len() {
            return Err(Error::Shape("scatter_add: index count mismatch".into()));
        }
        let mut out = vec![T::zero(); n];
        for (&i, &v) in idx.iter().zip(self.data(x.0)) {
            out[i] += v;
        }
        let value = Tensor::new(shape, out)?;
        self.push(Op::ScatterAdd { x: x.0, idx }, value)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(Op::Reshape(x.0), value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shp(a.0);
        let sb = self.shp(b.0);
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::Shape(format!(
                "concat along {axis}: {sa:?} and {sb:?}"
            )));
        }
        let (o, na, inner) = split_axis(&sa, axis);
        let nb = sb[axis];
        let (da, db) = (self.data(a.0), self.data(b.0));
        let mut out = Vec::with_capacity(da.len() + db.len());
        for oi in 0..o {
            out.extend_from_slice(&da[oi * na * inner..(oi + 1) * na * inner]);
            out.extend_from_slice(&db[oi * nb * inner..(oi + 1) * nb * inner]);
        }
        let mut shape = sa.clone();
        shape[axis] = na + nb;
        let value = Tensor::new(shape, out)?;
        self.push(Op::Concat { a: a.0, b: b.0, axis }, value)
    }

    /// Index map selecting `[start, start+len)` along `axis` of `shape`.
    pub fn slice_indices(shape: &[usize], axis: usize, start: usize, len: usize) -> Rc<[usize]> {
        let (o, n, inner) = split_axis(shape, axis);
        let mut idx = Vec::with_capacity(o * len * inner);
        for oi in 0..o {
            for c in start..start + len {
                let base = (oi * n + c) * inner;
                idx.extend(base..base + inner);
            }
        }
        idx.into()
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shp(x.0);
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) along {axis} of {shape:?}",
                start + len
            )));
        }
        let idx = Self::slice_indices(&shape, axis, start, len);
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, idx, out_shape)
    }

    // ---------------------------------------------------------------- nonlinearities

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(Op::Sigmoid(x.0), value)
    }

    /// Multiplies by a constant 0/1/`slope` mask chosen from the sign of `x`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let mask = self
            .value(x)
            .map(|v| if v > T::zero() { T::one() } else { slope });
        let m = self.constant(mask)?;
        self.mul(x, m)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, T::zero())
    }

    /// Log-softmax over the last axis, computed with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shp(x.0);
        let c = *shape.last().expect("non-empty shape");
        let mut out = self.data(x.0).to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(Op::LogSoftmax(x.0), value)
    }

    /// Per-feature normalization of `[N, F]` by batch statistics.
    /// Returns the normalized output plus the batch mean and biased variance.
    pub fn batch_norm_train(&mut self, x: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let shape = self.shp(x.0);
        if shape.len() != 2 {
            return Err(Error::Shape(format!("batchnorm expects [N, F], got {shape:?}")));
        }
        let (n, f) = (shape[0], shape[1]);
        if n < 2 {
            return Err(Error::InvalidArgument(
                "batchnorm in training mode needs at least 2 rows".into(),
            ));
        }
        let src = self.data(x.0);
        let nt = T::lit(n as f64);
        let mut mean = vec![T::zero(); f];
        for row in src.chunks(f) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nt;
        }
        let mut var = vec![T::zero(); f];
        for row in src.chunks(f) {
            for j in 0..f {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= nt;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = src.to_vec();
        for row in out.chunks_mut(f) {
            for j in 0..f {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        let y = self.push(
            Op::BatchNorm {
                x: x.0,
                inv_std: inv_std.into(),
            },
            value,
        )?;
        Ok((y, mean, var))
    }

    // ---------------------------------------------------------------- backward

    fn ones_like_scalar(&mut self) -> Result<Var> {
        self.constant(Tensor::scalar(T::one()))
    }

    /// Reverse-mode sweep. `targets[i]` marks the leaves whose gradients are
    /// wanted; only nodes on a path from a target to `output` are visited.
    fn sweep(
        &mut self,
        output: Var,
        targets: &dyn Fn(usize, &Node<T>) -> bool,
        create_graph: bool,
    ) -> Result<Vec<Option<Var>>> {
        if self.value(output).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut reach = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            reach[i] = match node.op {
                Op::Leaf => targets(i, node),
                ref op => op.inputs().iter().any(|&j| reach[j]),
            };
        }
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if !reach[output.0] {
            return Ok(grads);
        }
        grads[output.0] = Some(self.ones_like_scalar()?);
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if create_graph && !op.twice_differentiable() {
                return Err(Error::Unsupported(format!(
                    "differentiable input-gradient through `{}`",
                    op.name()
                )));
            }
            for (j, gj) in self.vjp(i, &op, g, &reach)? {
                grads[j] = Some(match grads[j] {
                    None => gj,
                    Some(prev) => self.add(prev, gj)?,
                });
            }
        }
        Ok(grads)
    }

    /// Gradients of scalar `loss` for every leaf created with `requires_grad`.
    ///
    /// The backward computation is discarded afterwards; the graph can be
    /// reused for further forward work. Repeated calls return fresh gradients,
    /// accumulation across calls is the caller's job (see
    /// [`crate::nn::ParamSet::accumulate`]).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let len = self.nodes.len();
        let result = self.sweep(loss, &|_, node| node.requires_grad, false);
        let grads = result.map(|grads| {
            grads
                .iter()
                .enumerate()
                .filter_map(|(i, g)| {
                    let g = (*g)?;
                    (matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
                        .then(|| (Var(i), self.nodes[g.0].value.clone()))
                })
                .collect()
        });
        self.truncate(len);
        Ok(Gradients { grads: grads? })
    }

    /// Gradient of scalar `output` with respect to each of `wrt`, returned as
    /// graph nodes. With `create_graph` the gradient computation itself is
    /// recorded, so functions of the returned gradients can be differentiated
    /// again (used by the gradient penalty).
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let wanted: Vec<usize> = wrt.iter().map(|v| v.0).collect();
        let grads = self.sweep(output, &|i, _| wanted.contains(&i), create_graph)?;
        let mut out = Vec::with_capacity(wrt.len());
        for v in wrt {
            match grads.get(v.0).copied().flatten() {
                Some(g) => out.push(g),
                None => {
                    let zeros = Tensor::zeros(self.shp(v.0));
                    out.push(self.constant(zeros)?)
                }
            }
        }
        if !create_graph {
            // Detach: materialize values as constants so no gradient flows back.
            let vals: Vec<Tensor<T>> = out.iter().map(|&g| self.value(g).clone()).collect();
            out = vals
                .into_iter()
                .map(|v| self.constant(v))
                .collect::<Result<_>>()?;
        }
        Ok(out)
    }

    /// Vector-Jacobian products for node `i` given its upstream gradient `g`.
    fn vjp(&mut self, i: usize, op: &Op<T>, g: Var, reach: &[bool]) -> Result<Vec<(usize, Var)>> {
        let want = |j: usize| reach[j];
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((a, self.mul(g, Var(b))?));
                }
                if want(b) {
                    out.push((b, self.mul(g, Var(a))?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c)?)),
            Op::Shift(a, _) => out.push((a, g)),
            Op::Square(a) => {
                let two_x = self.scale(Var(a), T::lit(2.0))?;
                out.push((a, self.mul(g, two_x)?));
            }
            Op::Matmul(a, b) => {
                if want(a) {
                    let bt = self.transpose(Var(b))?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if want(b) {
                    let at = self.transpose(Var(a))?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::Conv1d { x, w, stride, pad } => {
                if want(x) {
                    let t = *self.shape(Var(x)).last().unwrap();
                    let gx = self.conv_transpose1d(g, Var(w), stride, pad, Some(t))?;
                    out.push((x, gx));
                }
                if want(w) {
                    let k = self.shape(Var(w))[2];
                    let (xb, gb) = self.batched_pair(Var(x), g)?;
                    out.push((w, self.conv_weight_grad(xb, gb, k, stride, pad)?));
                }
            }
            Op::ConvTranspose1d { x, w, stride, pad } => {
                if want(x) {
                    out.push((x, self.conv1d(g, Var(w), stride, pad)?));
                }
                if want(w) {
                    let k = self.shape(Var(w))[2];
                    let (gb, xb) = self.batched_pair(g, Var(x))?;
                    out.push((w, self.conv_weight_grad(gb, xb, k, stride, pad)?));
                }
            }
            Op::ConvWeightGrad {
                x,
                g: gout,
                stride,
                pad,
            } => {
                // out = Σ gout ⊗ unfold(x); `g` has the weight's shape.
                if want(x) {
                    let t = *self.shape(Var(x)).last().unwrap();
                    out.push((
                        x,
                        self.conv_transpose1d(Var(gout), g, stride, pad, Some(t))?,
                    ));
                }
                if want(gout) {
                    out.push((gout, self.conv1d(Var(x), g, stride, pad)?));
                }
            }
            Op::BiasAdd { x, b, axis } => {
                if want(x) {
                    out.push((x, g));
                }
                if want(b) {
                    let s = self.channel_sum(g, axis)?;
                    let shape = self.shp(b);
                    out.push((b, self.reshape(s, shape)?));
                }
            }
            Op::ChannelMul { x, s, axis } => {
                if want(x) {
                    out.push((x, self.channel_mul(g, Var(s), axis)?));
                }
                if want(s) {
                    let gx = self.mul(g, Var(x))?;
                    let r = self.channel_sum(gx, axis)?;
                    let shape = self.shp(s);
                    out.push((s, self.reshape(r, shape)?));
                }
            }
            Op::ChannelSum { x, axis } => {
                let shape = self.shp(x);
                out.push((x, self.channel_broadcast(g, shape, axis)?));
            }
            Op::ChannelBroadcast { x, axis } => {
                let s = self.channel_sum(g, axis)?;
                let shape = self.shp(x);
                out.push((x, self.reshape(s, shape)?));
            }
            Op::Gather { x, ref idx } => {
                let shape = self.shp(x);
                out.push((x, self.scatter_add(g, idx.clone(), shape)?));
            }
            Op::ScatterAdd { x, ref idx } => {
                let shape = self.shp(x);
                out.push((x, self.gather(g, idx.clone(), shape)?));
            }
            Op::Reshape(x) => {
                let shape = self.shp(x);
                out.push((x, self.reshape(g, shape)?));
            }
            Op::Concat { a, b, axis } => {
                let na = self.shape(Var(a))[axis];
                let nb = self.shape(Var(b))[axis];
                if want(a) {
                    out.push((a, self.slice(g, axis, 0, na)?));
                }
                if want(b) {
                    out.push((b, self.slice(g, axis, na, nb)?));
                }
            }
            Op::Sigmoid(x) => {
                let y = Var(i);
                let one_minus = self.neg(y)?;
                let one_minus = self.shift(one_minus, T::one())?;
                let dy = self.mul(y, one_minus)?;
                out.push((x, self.mul(g, dy)?));
            }
            Op::SumAll(x) => {
                let shape = self.shp(x);
                out.push((x, self.broadcast_scalar(g, shape)?));
            }
            Op::BroadcastScalar(x) => {
                let s = self.sum(g)?;
                let shape = self.shp(x);
                out.push((x, self.reshape(s, shape)?));
            }
            Op::SumRows(x) => {
                let shape = self.shp(x);
                out.push((x, self.broadcast_rows(g, shape)?));
            }
            Op::BroadcastRows(x) => {
                let s = self.sum_rows(g)?;
                let shape = self.shp(x);
                out.push((x, self.reshape(s, shape)?));
            }
            // First-order only: the gradient is materialized as a constant.
            Op::Sqrt(x) => {
                let gv = self.data(g.0);
                let y = self.data(i);
                let d = gv
                    .iter()
                    .zip(y)
                    .map(|(&gg, &yy)| gg * T::lit(0.5) / yy.max(T::min_positive_value()))
                    .collect();
                let t = Tensor::new(self.shp(x), d)?;
                out.push((x, self.constant(t)?));
            }
            Op::Log(x) => {
                let d = self
                    .data(g.0)
                    .iter()
                    .zip(self.data(x))
                    .map(|(&gg, &xx)| gg / xx)
                    .collect();
                let t = Tensor::new(self.shp(x), d)?;
                out.push((x, self.constant(t)?));
            }
            Op::LogSoftmax(x) => {
                let shape = self.shp(x);
                let c = *shape.last().unwrap();
                let y = self.data(i);
                let gv = self.data(g.0);
                let mut d = vec![T::zero(); y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(y.chunks(c)).zip(gv.chunks(c)) {
                    let gs: T = grow.iter().copied().sum();
                    for j in 0..c {
                        drow[j] = grow[j] - yrow[j].exp() * gs;
                    }
                }
                let t = Tensor::new(shape, d)?;
                out.push((x, self.constant(t)?));
            }
            Op::BatchNorm { x, ref inv_std } => {
                let shape = self.shp(x);
                let (n, f) = (shape[0], shape[1]);
                let y = self.data(i);
                let gv = self.data(g.0);
                let nt = T::lit(n as f64);
                let mut sum_g = vec![T::zero(); f];
                let mut sum_gy = vec![T::zero(); f];
                for (yrow, grow) in y.chunks(f).zip(gv.chunks(f)) {
                    for j in 0..f {
                        sum_g[j] += grow[j];
                        sum_gy[j] += grow[j] * yrow[j];
                    }
                }
                let mut d = vec![T::zero(); y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(f).zip(y.chunks(f)).zip(gv.chunks(f)) {
                    for j in 0..f {
                        drow[j] = inv_std[j] / nt
                            * (nt * grow[j] - sum_g[j] - yrow[j] * sum_gy[j]);
                    }
                }
                let t = Tensor::new(shape, d)?;
                out.push((x, self.constant(t)?));
            }
        }
        Ok(out)
    }

    /// Views two conv operands as rank-3 so weight gradients see the batch.
    fn batched_pair(&mut self, a: Var, b: Var) -> Result<(Var, Var)> {
        let lift = |g: &mut Self, v: Var| -> Result<Var> {
            let s = g.shp(v.0);
            if s.len() == 2 {
                g.reshape(v, vec![1, s[0], s[1]])
            } else {
                Ok(v)
            }
        };
        Ok((lift(self, a)?, lift(self, b)?))
    }
}
