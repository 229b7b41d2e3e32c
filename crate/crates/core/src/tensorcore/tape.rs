//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the data its
//! backward rule needs. Nodes only reference earlier nodes, so replaying the
//! rules from the loss towards index zero visits them in topological order.

use crate::error::{shape_err, Error, Result};

use super::conv::{self, ConvGeom, Padding};
use super::{Scalar, Tensor};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Infer,
}

/// Per-channel batch mean and biased variance produced by a training-mode
/// batchnorm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Exponential moving averages of batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of batches absorbed; zero means uninitialized.
    pub batches: u64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], batches: 0 }
    }

    pub fn is_initialized(&self) -> bool {
        self.batches > 0
    }

    /// The first batch initializes the averages; later ones blend in with
    /// weight `1 - momentum`.
    pub fn absorb(&mut self, stats: &BatchStats<T>) {
        if self.batches == 0 {
            self.mean.clone_from(&stats.mean);
            self.var.clone_from(&stats.var);
        } else {
            let m = T::from_f64_lossy(BATCHNORM_MOMENTUM);
            let w = T::one() - m;
            for (r, &b) in self.mean.iter_mut().zip(&stats.mean) {
                *r = m * *r + w * b;
            }
            for (r, &b) in self.var.iter_mut().zip(&stats.var) {
                *r = m * *r + w * b;
            }
        }
        self.batches += 1;
    }
}

enum Op<T> {
    Leaf,
    Conv { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    PRelu { input: Var, alpha: Var },
    LeakyRelu { input: Var, slope: T },
    Sigmoid { input: Var },
    Tanh { input: Var },
    Dense { input: Var, weights: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat { a: Var, b: Var },
    Scale { input: Var, factor: T },
    AddScalar { input: Var },
    Square { input: Var },
    Log { input: Var },
    Clamp { input: Var, lo: T, hi: T },
    Sum { input: Var },
    Mean { input: Var },
    GlobalAvgPool { input: Var },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// One forward pass worth of recorded operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `[N, C, rest]` view of a tensor with at least two axes.
fn ncs(shape: &[usize]) -> (usize, usize, usize) {
    let s = shape[2..].iter().product::<usize>();
    (shape[0], shape[1], s)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, true)
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

    /// Gradient of the last backward pass, if `v` was reachable and differentiable.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let x = self.value(input);
        let out = Tensor::from_fn(x.shape(), |i| f(x.data()[i]));
        self.push(out, op, &[input])
    }

    pub fn conv(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(shape_err(format!(
                    "conv bias {:?} for {} output channels",
                    self.shape(b),
                    geom.out_channels
                )));
            }
        }
        let out = conv::forward(&geom, self.data(input), self.data(kernel), bias.map(|b| self.data(b)));
        let value = Tensor::new(geom.output_shape(), out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv { input, kernel, bias, geom }, &inputs))
    }

    /// Per-channel normalization over batch and spatial axes. Training mode
    /// also returns the batch statistics so callers can fold them into
    /// `running` themselves.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running: &RunningStats<T>,
        name: &str,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(shape_err(format!("batchnorm input {shape:?} lacks a channel axis")));
        }
        let (n, c, s) = ncs(&shape);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(format!(
                "batchnorm `{name}` parameters {:?}/{:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let eps = T::from_f64_lossy(BATCHNORM_EPS);
        let x = self.data(input);
        let count = (n * s) as f64;
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for b in 0..n {
                        let base = (b * c + ch) * s;
                        acc += x[base..base + s].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = acc / count;
                    let mut sq = 0.0f64;
                    for b in 0..n {
                        let base = (b * c + ch) * s;
                        sq += x[base..base + s].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
                    }
                    mean[ch] = T::from_f64_lossy(mu);
                    var[ch] = T::from_f64_lossy(sq / count);
                }
                let stats = BatchStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
            NormMode::Infer => {
                if !running.is_initialized() {
                    return Err(Error::UninitializedStats(name.to_string()));
                }
                if running.mean.len() != c {
                    return Err(shape_err(format!(
                        "running statistics of `{name}` have {} channels, input has {c}",
                        running.mean.len()
                    )));
                }
                (running.mean.clone(), running.var.clone(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let train = mode == NormMode::Train;
        let op = Op::BatchNorm { input, gamma, beta, xhat, inv_std, train };
        Ok((self.push(value, op, &[input, gamma, beta]), stats))
    }

    /// Parametric ReLU with one learnable slope per channel.
    pub fn prelu(&mut self, input: Var, alpha: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, c, s) = ncs(&shape);
        if self.shape(alpha) != [c] {
            return Err(shape_err(format!("prelu alpha {:?} for {c} channels", self.shape(alpha))));
        }
        let x = self.data(input);
        let a = self.data(alpha);
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    out[i] = if x[i] > T::zero() { x[i] } else { a[ch] * x[i] };
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::PRelu { input, alpha }, &[input, alpha]))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let slope = T::from_f64_lossy(slope);
        self.unary(input, Op::LeakyRelu { input, slope }, |v| if v > T::zero() { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid { input }, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Op::Tanh { input }, |v| v.tanh())
    }

    /// `[N, F] x [F, O] + [O]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weights).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.shape(bias) != [ws[1]] {
            return Err(shape_err(format!(
                "dense input {xs:?}, weights {ws:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        let (n, f, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * o];
        T::gemm(false, false, n, o, f, self.data(input), self.data(weights), T::zero(), &mut out);
        let b = self.data(bias);
        for row in out.chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(value, Op::Dense { input, weights, bias }, &[input, weights, bias]))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.data(a), self.data(b));
        let out = Tensor::from_fn(self.shape(a), |i| f(x[i], y[i]));
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err(format!("concat-channels: {sa:?} vs {sb:?}")));
        }
        let (n, ca, s) = ncs(&sa);
        let cb = sb[1];
        let (x, y) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * (ca + cb) * s);
        for i in 0..n {
            out.extend_from_slice(&x[i * ca * s..(i + 1) * ca * s]);
            out.extend_from_slice(&y[i * cb * s..(i + 1) * cb * s]);
        }
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let factor = T::from_f64_lossy(factor);
        self.unary(input, Op::Scale { input, factor }, |v| v * factor)
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(input, Op::AddScalar { input }, |v| v + c)
    }

    pub fn square(&mut self, input: Var) -> Var {
        self.unary(input, Op::Square { input }, |v| v * v)
    }

    pub fn ln(&mut self, input: Var) -> Var {
        self.unary(input, Op::Log { input }, |v| v.ln())
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(input, Op::Clamp { input, lo, hi }, |v| if v.is_nan() { v } else { v.max(lo).min(hi) })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.data(input).iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.data(input);
        let acc: f64 = x.iter().map(|v| v.as_f64()).sum();
        let m = T::from_f64_lossy(acc / x.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean { input }, &[input])
    }

    /// `[N, C, spatial..] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 3 {
            return Err(shape_err(format!("global pool needs spatial axes, got {shape:?}")));
        }
        let (n, c, s) = ncs(&shape);
        let x = self.data(input);
        let inv = T::from_f64_lossy(1.0 / s as f64);
        let out = (0..n * c).map(|i| x[i * s..(i + 1) * s].iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }, &[input]))
    }

    /// Propagates d(loss)/d(node) to every differentiable node reachable from
    /// `loss`. A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let updates = self.apply_rule(i, &g);
            self.grads[i] = Some(g);
            for (v, d) in updates {
                self.accumulate_vec(v, d);
            }
        }
        Ok(())
    }

    fn accumulate_vec(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            slot @ None => *slot = Some(delta),
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
        }
    }

    /// Gradient contributions of node `i` to its inputs, given its own gradient.
    fn apply_rule(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => return Vec::new(),
            Op::Conv { input, kernel, bias, geom } => {
                let grads = conv::backward(
                    geom,
                    val(*input),
                    val(*kernel),
                    g,
                    nodes[input.0].requires_grad,
                    nodes[kernel.0].requires_grad,
                );
                let mut ups = Vec::new();
                if let Some(dx) = grads.input {
                    ups.push((*input, dx));
                }
                if let Some(dk) = grads.kernel {
                    ups.push((*kernel, dk));
                }
                if let Some(b) = bias {
                    ups.push((*b, grads.bias));
                }
                return ups;
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                let (n, c, s) = ncs(node.value.shape());
                let gm = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); g.len()];
                let m = T::from_usize(n * s).unwrap();
                for ch in 0..c {
                    let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
                    for b in 0..n {
                        let base = (b * c + ch) * s;
                        for k in base..base + s {
                            sum_g += g[k];
                            sum_gx += g[k] * xhat[k];
                        }
                    }
                    dgamma[ch] = sum_gx;
                    dbeta[ch] = sum_g;
                    for b in 0..n {
                        let base = (b * c + ch) * s;
                        for k in base..base + s {
                            dx[k] = if *train {
                                gm[ch] * inv_std[ch] / m * (m * g[k] - sum_g - xhat[k] * sum_gx)
                            } else {
                                gm[ch] * inv_std[ch] * g[k]
                            };
                        }
                    }
                }
                return vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)];
            }
            Op::PRelu { input, alpha } => {
                let (n, c, s) = ncs(node.value.shape());
                let x = val(*input);
                let a = val(*alpha);
                let mut dx = vec![T::zero(); g.len()];
                let mut da = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        for k in base..base + s {
                            if x[k] > T::zero() {
                                dx[k] = g[k];
                            } else {
                                dx[k] = a[ch] * g[k];
                                da[ch] += x[k] * g[k];
                            }
                        }
                    }
                }
                return vec![(*input, dx), (*alpha, da)];
            }
            Op::Dense { input, weights, bias } => {
                let xs = nodes[input.0].value.shape();
                let (n, f) = (xs[0], xs[1]);
                let o = g.len() / n;
                let mut dx = vec![T::zero(); n * f];
                let mut dw = vec![T::zero(); f * o];
                T::gemm(false, true, n, f, o, g, val(*weights), T::zero(), &mut dx);
                T::gemm(true, false, f, o, n, val(*input), g, T::zero(), &mut dw);
                let mut db = vec![T::zero(); o];
                for row in g.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                return vec![(*input, dx), (*weights, dw), (*bias, db)];
            }
            Op::Concat { a, b } => {
                let (n, ca, s) = ncs(nodes[a.0].value.shape());
                let cb = nodes[b.0].value.shape()[1];
                let mut da = Vec::with_capacity(n * ca * s);
                let mut db = Vec::with_capacity(n * cb * s);
                for chunk in g.chunks((ca + cb) * s) {
                    da.extend_from_slice(&chunk[..ca * s]);
                    db.extend_from_slice(&chunk[ca * s..]);
                }
                return vec![(*a, da), (*b, db)];
            }
            _ => {}
        }
        // Elementwise and reduction rules.
        let out = node.value.data();
        let mut updates: Vec<(Var, Vec<T>)> = Vec::with_capacity(2);
        let map = |x: &[T], f: &dyn Fn(usize, T) -> T| -> Vec<T> { x.iter().enumerate().map(|(k, &v)| f(k, v)).collect() };
        match &node.op {
            Op::LeakyRelu { input, slope } => {
                updates.push((*input, map(val(*input), &|k, v| if v > T::zero() { g[k] } else { *slope * g[k] })));
            }
            Op::Sigmoid { input } => {
                updates.push((*input, map(out, &|k, y| g[k] * y * (T::one() - y))));
            }
            Op::Tanh { input } => {
                updates.push((*input, map(out, &|k, y| g[k] * (T::one() - y * y))));
            }
            Op::Add(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if nodes[a.0].requires_grad {
                    updates.push((*a, map(y, &|k, v| g[k] * v)));
                }
                if nodes[b.0].requires_grad {
                    updates.push((*b, map(x, &|k, v| g[k] * v)));
                }
            }
            Op::Scale { input, factor } => {
                updates.push((*input, g.iter().map(|&v| v * *factor).collect()));
            }
            Op::AddScalar { input } => updates.push((*input, g.to_vec())),
            Op::Square { input } => {
                let two = T::from_f64_lossy(2.0);
                updates.push((*input, map(val(*input), &|k, v| two * v * g[k])));
            }
            Op::Log { input } => {
                updates.push((*input, map(val(*input), &|k, v| g[k] / v)));
            }
            Op::Clamp { input, lo, hi } => {
                updates.push((*input, map(val(*input), &|k, v| if v < *lo || v > *hi { T::zero() } else { g[k] })));
            }
            Op::Sum { input } => {
                updates.push((*input, vec![g[0]; nodes[input.0].value.numel()]));
            }
            Op::Mean { input } => {
                let n = nodes[input.0].value.numel();
                let v = g[0] / T::from_usize(n).unwrap();
                updates.push((*input, vec![v; n]));
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, s) = ncs(nodes[input.0].value.shape());
                let inv = T::one() / T::from_usize(s).unwrap();
                let mut dx = Vec::with_capacity(g.len() * s);
                for &v in g {
                    dx.extend(std::iter::repeat(v * inv).take(s));
                }
                updates.push((*input, dx));
            }
            _ => unreachable!("structured rules return early"),
        }
        updates
    }
}
