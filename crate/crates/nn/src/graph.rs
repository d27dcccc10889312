//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value and, when any input needs a gradient, enough
//! information to run its backward rule. [`Graph::backward`] walks the tape
//! in reverse insertion order, which is a valid reverse topological order.

use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::scalar::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

enum Op<T> {
    Leaf,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Matmul(Var, Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    LayerNorm { x: Var, xhat: Vec<T>, rstd: Vec<T> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Clamp { x: Var, lo: T, hi: T },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    SpatialMean(Var),
    Pick { x: Var, idx: Vec<usize> },
    Cosine { a: Var, b: Var, na: Vec<T>, nb: Vec<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

const KINK_SEED: u64 = 0xcbf2_9ce4_8422_2325;

/// Epsilon used to guard norms in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Epsilon added to the variance in layer normalization.
pub const NORM_EPS: f64 = 1e-5;

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    eps_guards: usize,
    kinks: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch { op, left: a.to_vec(), right: b.to_vec() }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> NnError {
    NnError::InvalidArgument { op, msg: msg.into() }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true, eps_guards: 0, kinks: KINK_SEED }
    }

    /// A graph that never records backward information.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false, eps_guards: 0, kinks: KINK_SEED }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of times a cosine norm fell below [`COSINE_EPS`].
    pub fn eps_guard_count(&self) -> usize {
        self.eps_guards
    }

    /// Digest of which branch every piecewise op (relu, clamp, minimum) took.
    /// Two forward passes with equal digests lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn record_kinks(&mut self, branches: impl Iterator<Item = bool>) {
        for b in branches {
            self.kinks = (self.kinks ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
        }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Arc::new(t), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf; its gradient can be read back from [`Grads`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node { value: Arc::new(t), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Bind a named parameter. Frozen parameters behave as constants.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var> {
        let value = params.shared_value(name)?;
        let requires_grad = self.grad_enabled && !params.is_frozen(name);
        self.nodes.push(Node { value, op: Op::Param(name.to_string()), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (Var, &str)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Param(name) if n.requires_grad => Some((Var(i), name.as_str())),
            _ => None,
        })
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Element-wise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("minimum", a, b)?;
        let out = self.zip_map(a, b, |x, y| if x <= y { x } else { y });
        let branches: Vec<bool> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x <= y).collect();
        self.record_kinks(branches.into_iter());
        Ok(self.push(out, Op::Minimum(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.map(a, |x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.map(a, |x| x + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(false, false, m, n, k, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::Matmul(a, b), &[a, b]))
    }

    /// `x[N, D] + b[D]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(mismatch("add_row_bias", &sx, &sb));
        }
        let d = sx[1];
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        let out = Tensor::new(&sx, out)?;
        Ok(self.push(out, Op::AddRowBias(x, b), &[x, b]))
    }

    /// `x[N, D] * s[N]` broadcast over columns.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(s).to_vec());
        if sx.len() != 2 || ss.len() != 1 || sx[0] != ss[0] {
            return Err(mismatch("scale_rows", &sx, &ss));
        }
        let d = sx[1];
        let scales = self.value(s).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (row, &sc) in out.chunks_mut(d).zip(&scales) {
            row.iter_mut().for_each(|o| *o *= sc);
        }
        let out = Tensor::new(&sx, out)?;
        Ok(self.push(out, Op::ScaleRows(x, s), &[x, s]))
    }

    /// 2-D convolution. `x: [N, C, H, W]`, `w: [O, C, KH, KW]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if spec.stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [sw[0]] {
                return Err(mismatch("conv2d bias", &sw, sb));
            }
        }
        let geo = ConvGeometry::new(&sx, &sw, spec)
            .ok_or_else(|| invalid("conv2d", format!("kernel {sw:?} larger than padded input {sx:?}")))?;
        let col = im2col(self.value(x).data(), &geo);
        let np = geo.n * geo.p();
        let mut out_mat = vec![T::zero(); geo.o * np];
        T::gemm(false, false, geo.o, np, geo.ckk(), T::one(), self.value(w).data(), &col, T::zero(), &mut out_mat);
        let bias = b.map(|b| self.value(b).data().to_vec());
        let p = geo.p();
        let mut out = vec![T::zero(); geo.n * geo.o * p];
        for o in 0..geo.o {
            let bo = bias.as_ref().map_or(T::zero(), |bb| bb[o]);
            for n in 0..geo.n {
                let src = &out_mat[o * np + n * p..o * np + (n + 1) * p];
                let dst = &mut out[(n * geo.o + o) * p..(n * geo.o + o + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bo;
                }
            }
        }
        let out = Tensor::new(&[geo.n, geo.o, geo.oh, geo.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, &inputs))
    }

    /// `x[N, C, ...] * gamma[C] + beta[C]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(mismatch("channel_affine", &sx, self.shape(gamma)));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner = numel(&sx[2..]);
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let s = (ni * c + ci) * inner;
                for v in &mut out[s..s + inner] {
                    *v = *v * g[ci] + bt[ci];
                }
            }
        }
        let out = Tensor::new(&sx, out)?;
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, &[x, gamma, beta]))
    }

    /// Normalizes every sample (all dims but the first) to zero mean and
    /// unit variance using its own statistics.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(invalid("layer_norm", format!("expects a batch dimension, got {sx:?}")));
        }
        let n = sx[0];
        let d = numel(&sx[1..]);
        let eps = T::lit(NORM_EPS);
        let dt = T::lit(d as f64);
        let data = self.value(x).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        for i in 0..n {
            let row = &data[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for (o, &v) in xhat[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * r;
            }
        }
        let out = Tensor::new(&sx, xhat.clone())?;
        Ok(self.push(out, Op::LayerNorm { x, xhat, rstd }, &[x]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x > T::zero() { x } else { T::zero() });
        let branches: Vec<bool> = self.value(a).data().iter().map(|&x| x > T::zero()).collect();
        self.record_kinks(branches.into_iter());
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.map(a, |x| x.max(lo).min(hi));
        let branches: Vec<bool> = self.value(a).data().iter().flat_map(|&x| [x >= lo, x <= hi]).collect();
        self.record_kinks(branches.into_iter());
        self.push(out, Op::Clamp { x: a, lo, hi }, &[a])
    }

    fn rows_of(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        match self.shape(a) {
            [n, k] => Ok((*n, *k)),
            s => Err(invalid(op, format!("expects a 2-D input, got {s:?}"))),
        }
    }

    /// Softmax over the last axis of a `[N, K]` input.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.rows_of("softmax", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(k) {
            softmax_in_place(row);
        }
        let out = Tensor::new(&[n, k], out)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.rows_of("log_softmax", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(&[n, k], out)?;
        Ok(self.push(out, Op::LogSoftmax(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.numel().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum over the last axis of a `[N, K]` input.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.rows_of("row_sum", a)?;
        let out: Vec<T> = self.value(a).data().chunks(k).map(|r| r.iter().copied().sum()).collect();
        let out = Tensor::new(&[n], out)?;
        Ok(self.push(out, Op::RowSum(a), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(invalid("slice", format!("[{start}, {}) on axis {axis} of {sx:?}", start + len)));
        }
        let outer = numel(&sx[..axis]);
        let inner = numel(&sx[axis + 1..]);
        let span = sx[axis] * inner;
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&data[o * span + start * inner..o * span + (start + len) * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = (*self.nodes[x.0].value).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Global average pool: `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(invalid("spatial_mean", format!("expects NCHW, got {sx:?}")));
        }
        let p = sx[2] * sx[3];
        let pt = T::lit(p as f64);
        let out: Vec<T> = self.value(x).data().chunks(p).map(|c| c.iter().copied().sum::<T>() / pt).collect();
        let out = Tensor::new(&sx[..2], out)?;
        Ok(self.push(out, Op::SpatialMean(x), &[x]))
    }

    /// `out[i] = x[i, idx[i]]` for a `[N, K]` input.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, k) = self.rows_of("pick", x)?;
        if idx.len() != n || idx.iter().any(|&j| j >= k) {
            return Err(invalid("pick", format!("{} indices for [{n}, {k}]", idx.len())));
        }
        let data = self.value(x).data();
        let out: Vec<T> = idx.iter().enumerate().map(|(i, &j)| data[i * k + j]).collect();
        let out = Tensor::new(&[n], out)?;
        Ok(self.push(out, Op::Pick { x, idx: idx.to_vec() }, &[x]))
    }

    /// Row-wise cosine similarity of two `[N, D]` inputs, norms guarded by
    /// [`COSINE_EPS`].
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("cosine_similarity", a, b)?;
        let (n, d) = self.rows_of("cosine_similarity", a)?;
        let eps = T::lit(COSINE_EPS);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut na = Vec::with_capacity(n);
        let mut nb = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        let mut guards = 0;
        for i in 0..n {
            let ra = &da[i * d..(i + 1) * d];
            let rb = &db[i * d..(i + 1) * d];
            let dot: T = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
            let mut la = ra.iter().map(|&x| x * x).sum::<T>().sqrt();
            let mut lb = rb.iter().map(|&x| x * x).sum::<T>().sqrt();
            if la < eps {
                la = eps;
                guards += 1;
            }
            if lb < eps {
                lb = eps;
                guards += 1;
            }
            na.push(la);
            nb.push(lb);
            out.push(dot / (la * lb));
        }
        self.eps_guards += guards;
        let out = Tensor::new(&[n], out)?;
        Ok(self.push(out, Op::Cosine { a, b, na, nb }, &[a, b]))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(NnError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
        f(slot);
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gy * y;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((x, &gy), &y) in gb.iter_mut().zip(g).zip(va) {
                        *x += gy * y;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if va[i] <= vb[i] {
                            ga[i] += g[i];
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        if va[i] > vb[i] {
                            gb[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s)),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| T::gemm(false, true, m, k, n, T::one(), g, vb, T::one(), ga));
                self.acc(grads, *b, |gb| T::gemm(true, false, k, n, m, T::one(), va, g, T::one(), gb));
            }
            Op::AddRowBias(x, b) => {
                let d = self.shape(*b)[0];
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *b, |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let d = self.shape(*x)[1];
                let (vx, vs) = (self.value(*x).data(), self.value(*s).data());
                self.acc(grads, *x, |gx| {
                    for ((gr, grow), &sc) in gx.chunks_mut(d).zip(g.chunks(d)).zip(vs) {
                        gr.iter_mut().zip(grow).for_each(|(a, &b)| *a += b * sc);
                    }
                });
                self.acc(grads, *s, |gs| {
                    for (i, gsi) in gs.iter_mut().enumerate() {
                        *gsi += g[i * d..(i + 1) * d].iter().zip(&vx[i * d..(i + 1) * d]).map(|(&a, &b)| a * b).sum::<T>();
                    }
                });
            }
            Op::Conv2d { x, w, b, spec } => self.conv2d_backward(*x, *w, *b, *spec, g, grads),
            Op::ChannelAffine { x, gamma, beta } => {
                let sx = self.shape(*x);
                let (n, c) = (sx[0], sx[1]);
                let inner = numel(&sx[2..]);
                let vx = self.value(*x).data();
                let vg = self.value(*gamma).data();
                self.acc(grads, *x, |gx| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let s = (ni * c + ci) * inner;
                            for j in s..s + inner {
                                gx[j] += g[j] * vg[ci];
                            }
                        }
                    }
                });
                self.acc(grads, *gamma, |gg| {
                    for ni in 0..n {
                        for (ci, ggc) in gg.iter_mut().enumerate() {
                            let s = (ni * c + ci) * inner;
                            *ggc += (s..s + inner).map(|j| g[j] * vx[j]).sum::<T>();
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for ni in 0..n {
                        for (ci, gbc) in gb.iter_mut().enumerate() {
                            let s = (ni * c + ci) * inner;
                            *gbc += g[s..s + inner].iter().copied().sum::<T>();
                        }
                    }
                });
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let n = rstd.len();
                let d = xhat.len() / n.max(1);
                let dt = T::lit(d as f64);
                self.acc(grads, *x, |gx| {
                    for i in 0..n {
                        let gr = &g[i * d..(i + 1) * d];
                        let xr = &xhat[i * d..(i + 1) * d];
                        let sg: T = gr.iter().copied().sum();
                        let sgx: T = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                        let scale = rstd[i] / dt;
                        for j in 0..d {
                            gx[i * d + j] += scale * (dt * gr[j] - sg - xr[j] * sgx);
                        }
                    }
                });
            }
            Op::Relu(a) => self.acc(grads, *a, |ga| {
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *x += gy;
                    }
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gy * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gy * y * (T::one() - y);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gy * y;
                }
            }),
            Op::Square(a) => {
                let va = self.value(*a).data();
                let two = T::lit(2.0);
                self.acc(grads, *a, |ga| {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(va) {
                        *x += two * gy * v;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for ((a, &gy), &v) in gx.iter_mut().zip(g).zip(vx) {
                        if v >= *lo && v <= *hi {
                            *a += gy;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let k = self.shape(*a)[1];
                self.acc(grads, *a, |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let dot: T = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                        for j in 0..k {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let k = self.shape(*a)[1];
                self.acc(grads, *a, |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let sg: T = gr.iter().copied().sum();
                        for j in 0..k {
                            gar[j] += gr[j] - yr[j].exp() * sg;
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).numel().max(1) as f64);
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::RowSum(a) => {
                let k = self.shape(*a)[1];
                self.acc(grads, *a, |ga| {
                    for (row, &gy) in ga.chunks_mut(k).zip(g) {
                        row.iter_mut().for_each(|x| *x += gy);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[*axis] * inner;
                    self.acc(grads, p, |gp| {
                        for o in 0..outer {
                            add_into(&mut gp[o * w..(o + 1) * w], &g[o * total + offset..o * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let outer = numel(&sx[..*axis]);
                let inner = numel(&sx[axis + 1..]);
                let span = sx[*axis] * inner;
                let len = node.value.shape()[*axis] * inner;
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        let base = o * span + start * inner;
                        add_into(&mut gx[base..base + len], &g[o * len..(o + 1) * len]);
                    }
                });
            }
            Op::SpatialMean(x) => {
                let sx = self.shape(*x);
                let p = sx[2] * sx[3];
                let pt = T::lit(p as f64);
                self.acc(grads, *x, |gx| {
                    for (chunk, &gy) in gx.chunks_mut(p).zip(g) {
                        chunk.iter_mut().for_each(|v| *v += gy / pt);
                    }
                });
            }
            Op::Pick { x, idx } => {
                let k = self.shape(*x)[1];
                self.acc(grads, *x, |gx| {
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * k + j] += g[i];
                    }
                });
            }
            Op::Cosine { a, b, na, nb } => {
                let d = self.shape(*a)[1];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // d cos / d a = b / (|a||b|) - cos * a / |a|^2
                self.acc(grads, *a, |ga| {
                    for i in 0..na.len() {
                        let inv = T::one() / (na[i] * nb[i]);
                        let c = out[i] / (na[i] * na[i]);
                        for j in i * d..(i + 1) * d {
                            ga[j] += g[i] * (vb[j] * inv - c * va[j]);
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..nb.len() {
                        let inv = T::one() / (na[i] * nb[i]);
                        let c = out[i] / (nb[i] * nb[i]);
                        for j in i * d..(i + 1) * d {
                            gb[j] += g[i] * (va[j] * inv - c * vb[j]);
                        }
                    }
                });
            }
        }
    }

    fn conv2d_backward(&self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), spec).expect("validated in forward");
        let p = geo.p();
        let np = geo.n * p;
        // Reorder the output gradient from NCHW into [O, N*P].
        let mut gmat = vec![T::zero(); geo.o * np];
        for n in 0..geo.n {
            for o in 0..geo.o {
                gmat[o * np + n * p..o * np + (n + 1) * p].copy_from_slice(&g[(n * geo.o + o) * p..(n * geo.o + o + 1) * p]);
            }
        }
        if let Some(b) = b {
            self.acc(grads, b, |gb| {
                for (o, gbo) in gb.iter_mut().enumerate() {
                    *gbo += gmat[o * np..(o + 1) * np].iter().copied().sum::<T>();
                }
            });
        }
        let ckk = geo.ckk();
        if self.nodes[w.0].requires_grad {
            let col = im2col(self.value(x).data(), &geo);
            self.acc(grads, w, |gw| T::gemm(false, true, geo.o, ckk, np, T::one(), &gmat, &col, T::one(), gw));
        }
        if self.nodes[x.0].requires_grad {
            let mut dcol = vec![T::zero(); ckk * np];
            T::gemm(true, false, ckk, np, geo.o, T::one(), self.value(w).data(), &gmat, T::zero(), &mut dcol);
            self.acc(grads, x, |gx| col2im_add(&dcol, &geo, gx));
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sw: &[usize], spec: Conv2dSpec) -> Option<Self> {
        let (h, w) = (sx[2] + 2 * spec.pad, sx[3] + 2 * spec.pad);
        if sw[2] > h || sw[3] > w {
            return None;
        }
        Some(Self {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kh: sw[2],
            kw: sw[3],
            oh: (h - sw[2]) / spec.stride + 1,
            ow: (w - sw[3]) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.pad,
        })
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Input offset (within one channel plane) read by output pixel
    /// `(oy, ox)` at kernel tap `(ky, kx)`, or `None` inside the padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }
}

/// Unfold `[N, C, H, W]` into `[C*KH*KW, N*OH*OW]`.
fn im2col<T: Real>(x: &[T], geo: &ConvGeometry) -> Vec<T> {
    let p = geo.p();
    let np = geo.n * p;
    let plane = geo.h * geo.w;
    let mut col = vec![T::zero(); geo.ckk() * np];
    for c in 0..geo.c {
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let dst = &mut col[row * np..(row + 1) * np];
                for n in 0..geo.n {
                    let src = &x[(n * geo.c + c) * plane..(n * geo.c + c + 1) * plane];
                    for oy in 0..geo.oh {
                        for ox in 0..geo.ow {
                            if let Some(s) = geo.source(oy, ox, ky, kx) {
                                dst[n * p + oy * geo.ow + ox] = src[s];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<T: Real>(col: &[T], geo: &ConvGeometry, gx: &mut [T]) {
    let p = geo.p();
    let np = geo.n * p;
    let plane = geo.h * geo.w;
    for c in 0..geo.c {
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let src = &col[row * np..(row + 1) * np];
                for n in 0..geo.n {
                    let dst = &mut gx[(n * geo.c + c) * plane..(n * geo.c + c + 1) * plane];
                    for oy in 0..geo.oh {
                        for ox in 0..geo.ow {
                            if let Some(s) = geo.source(oy, ox, ky, kx) {
                                dst[s] += src[n * p + oy * geo.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
