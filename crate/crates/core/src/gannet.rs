//! Generator and discriminator networks with optional conditional fusion.
//!
//! The generator keeps the input resolution: a 9-wide head, a stack of
//! residual blocks, a post-residual conv with a global skip, and a 9-wide
//! tanh tail. The discriminator is a 3-wide head followed by strided conv
//! blocks, global average pooling and a two-layer dense classifier.
//!
//! Conditioning joins at one of three positions. Concatenation widens the
//! input channels of the first conv after the fusion point; dot fusion
//! multiplies the feature map by a learned 1×1 projection of the condition.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::synthdata::seeded_rng;
use crate::tensorcore::{BatchStats, NormMode, Padding, Param, RunningStats, Scalar, Tape, Tensor, Var};
use crate::volume::{ConditionField, Volume};

pub const GENERATOR_HEAD_KERNEL: usize = 9;
pub const KERNEL: usize = 3;
pub const DENSE_UNITS: usize = 1024;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const PRELU_INIT: f64 = 0.25;
/// Strided blocks keep every spatial extent at or above this.
pub const MIN_STRIDED_EXTENT: usize = 4;
pub const MAX_CHANNEL_MULTIPLIER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionType {
    Concat,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionPosition {
    Early,
    Mid,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    #[serde(rename = "type")]
    pub kind: FusionType,
    pub position: FusionPosition,
}

impl FusionSpec {
    pub const ALL: [FusionSpec; 6] = [
        FusionSpec { kind: FusionType::Concat, position: FusionPosition::Early },
        FusionSpec { kind: FusionType::Concat, position: FusionPosition::Mid },
        FusionSpec { kind: FusionType::Concat, position: FusionPosition::Late },
        FusionSpec { kind: FusionType::Dot, position: FusionPosition::Early },
        FusionSpec { kind: FusionType::Dot, position: FusionPosition::Mid },
        FusionSpec { kind: FusionType::Dot, position: FusionPosition::Late },
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub role: Role,
    pub rank: usize,
    pub residual_depth: usize,
    pub base_channels: usize,
    #[serde(default)]
    pub condition_channels: usize,
    #[serde(default)]
    pub fusion: Option<FusionSpec>,
}

impl NetworkSpec {
    pub fn generator(rank: usize, residual_depth: usize, base_channels: usize) -> Self {
        Self { role: Role::Generator, rank, residual_depth, base_channels, condition_channels: 0, fusion: None }
    }

    pub fn discriminator(rank: usize, residual_depth: usize, base_channels: usize) -> Self {
        Self { role: Role::Discriminator, ..Self::generator(rank, residual_depth, base_channels) }
    }

    pub fn with_fusion(mut self, fusion: FusionSpec, condition_channels: usize) -> Self {
        self.fusion = Some(fusion);
        self.condition_channels = condition_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Spec(format!("rank must be 2 or 3, got {}", self.rank)));
        }
        if self.residual_depth == 0 || self.base_channels == 0 {
            return Err(Error::Spec(format!(
                "depth {} and base channels {} must be positive",
                self.residual_depth, self.base_channels
            )));
        }
        match (self.fusion, self.condition_channels) {
            (Some(_), 0) => Err(Error::Spec("fusion requires at least one condition channel".into())),
            (None, k) if k > 0 => Err(Error::Spec(format!("{k} condition channels given without a fusion spec"))),
            _ => Ok(()),
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.fusion.is_some()
    }

    fn concat_at(&self, position: FusionPosition) -> usize {
        match self.fusion {
            Some(FusionSpec { kind: FusionType::Concat, position: p }) if p == position => self.condition_channels,
            _ => 0,
        }
    }

    fn dot_at(&self, position: FusionPosition) -> bool {
        matches!(self.fusion, Some(FusionSpec { kind: FusionType::Dot, position: p }) if p == position)
    }

    /// Channels of the discriminator's strided block `i`.
    pub fn block_channels(&self, i: usize) -> usize {
        self.base_channels * (1usize << (i + 1).min(3)).min(MAX_CHANNEL_MULTIPLIER)
    }
}

/// Stride of each discriminator block for a given input, together with the
/// resulting spatial extents.
pub fn discriminator_strides(spatial: &[usize], depth: usize) -> Vec<(usize, Vec<usize>)> {
    let mut dims = spatial.to_vec();
    (0..depth)
        .map(|_| {
            let halved: Vec<usize> = dims.iter().map(|d| d.div_ceil(2)).collect();
            if halved.iter().all(|&d| d >= MIN_STRIDED_EXTENT) {
                dims = halved;
                (2, dims.clone())
            } else {
                (1, dims.clone())
            }
        })
        .collect()
}

/// Batchnorm behaviour for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    /// Batch statistics; they are returned for the caller to absorb.
    Train,
    /// Running statistics.
    Infer,
}

/// Output of a forward pass plus the batch statistics of every batchnorm
/// layer, indexed like [`Network::running`].
pub struct Forward<T> {
    pub output: Var,
    pub stats: Vec<(usize, BatchStats<T>)>,
}

/// Parameters, batchnorm statistics and the spec that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub params: Vec<Param<T>>,
    pub running: Vec<(String, RunningStats<T>)>,
    index: HashMap<String, usize>,
    bn_index: HashMap<String, usize>,
}

struct Init<'r, T> {
    params: Vec<Param<T>>,
    running: Vec<(String, RunningStats<T>)>,
    rank: usize,
    rng: &'r mut rand_chacha::ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let t = Tensor::from_fn(&shape, |_| T::from_f64_lossy(normal.sample(self.rng)));
        self.params.push(Param::new(name, t));
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) {
        self.params.push(Param::new(name, Tensor::full(shape, T::from_f64_lossy(v))));
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(k, self.rank));
        let fan_in = cin * k.pow(self.rank as u32);
        self.he(format!("{name}.w"), shape, fan_in);
        if bias {
            self.fill(format!("{name}.b"), &[cout], 0.0);
        }
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.fill(format!("{name}.gamma"), &[c], 1.0);
        self.fill(format!("{name}.beta"), &[c], 0.0);
        self.running.push((name.to_string(), RunningStats::new(c)));
    }

    fn prelu(&mut self, name: &str, c: usize) {
        self.fill(format!("{name}.alpha"), &[c], PRELU_INIT);
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize) {
        self.he(format!("{name}.w"), vec![fin, fout], fin);
        self.fill(format!("{name}.b"), &[fout], 0.0);
    }
}

impl<T: Scalar> Network<T> {
    /// He-normal weights, zero biases, unit batchnorm scales and PReLU
    /// slopes of 0.25, drawn deterministically from `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(seed, 3);
        let mut init = Init { params: Vec::new(), running: Vec::new(), rank: spec.rank, rng: &mut rng };
        let b = spec.base_channels;
        let k = spec.condition_channels;
        match spec.role {
            Role::Generator => {
                if spec.dot_at(FusionPosition::Early) {
                    init.conv("g.fuse.proj", 1, k, 1, true);
                }
                init.conv("g.head.conv", b, 1 + spec.concat_at(FusionPosition::Early), GENERATOR_HEAD_KERNEL, true);
                init.prelu("g.head.act", b);
                if spec.dot_at(FusionPosition::Mid) || spec.dot_at(FusionPosition::Late) {
                    init.conv("g.fuse.proj", b, k, 1, true);
                }
                for i in 0..spec.residual_depth {
                    let cin = b + if i == 0 { spec.concat_at(FusionPosition::Mid) } else { 0 };
                    init.conv(&format!("g.res{i}.conv1"), b, cin, KERNEL, false);
                    init.bn(&format!("g.res{i}.bn1"), b);
                    init.prelu(&format!("g.res{i}.act"), b);
                    init.conv(&format!("g.res{i}.conv2"), b, b, KERNEL, false);
                    init.bn(&format!("g.res{i}.bn2"), b);
                }
                init.conv("g.post.conv", b, b + spec.concat_at(FusionPosition::Late), KERNEL, false);
                init.bn("g.post.bn", b);
                init.conv("g.tail.conv", 1, b, GENERATOR_HEAD_KERNEL, true);
            }
            Role::Discriminator => {
                if spec.dot_at(FusionPosition::Early) {
                    init.conv("d.fuse.proj", 1, k, 1, true);
                }
                init.conv("d.head.conv", b, 1 + spec.concat_at(FusionPosition::Early), KERNEL, true);
                let late_or_mid = spec.concat_at(FusionPosition::Mid) + spec.concat_at(FusionPosition::Late);
                if spec.dot_at(FusionPosition::Mid) || spec.dot_at(FusionPosition::Late) {
                    init.conv("d.fuse.proj", b, k, 1, true);
                }
                let mut cin = b + late_or_mid;
                for i in 0..spec.residual_depth {
                    let cout = spec.block_channels(i);
                    init.conv(&format!("d.block{i}.conv"), cout, cin, KERNEL, false);
                    init.bn(&format!("d.block{i}.bn"), cout);
                    cin = cout;
                }
                init.dense("d.fc1", cin, DENSE_UNITS);
                init.dense("d.fc2", DENSE_UNITS, 1);
            }
        }
        let Init { params, running, .. } = init;
        Self::from_parts(spec.clone(), params, running)
    }

    /// Reassembles a network, checking names and shapes against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Param<T>>, running: Vec<(String, RunningStats<T>)>) -> Result<Self> {
        let index: HashMap<String, usize> = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        if index.len() != params.len() {
            return Err(Error::Corruption("duplicate parameter names".into()));
        }
        let bn_index = running.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Ok(Self { spec, params, running, index, bn_index })
    }

    /// Checks that every tensor matches a freshly built network of the same
    /// spec, naming the first offender.
    pub fn check_against_spec(&self) -> Result<()> {
        let fresh = Network::<T>::build(&self.spec, 0)?;
        if fresh.params.len() != self.params.len() {
            return Err(Error::Corruption(format!(
                "spec needs {} tensors, found {}",
                fresh.params.len(),
                self.params.len()
            )));
        }
        for (a, b) in fresh.params.iter().zip(&self.params) {
            if a.name != b.name {
                return Err(Error::Corruption(format!("expected tensor `{}`, found `{}`", a.name, b.name)));
            }
            if a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Corruption(format!(
                    "tensor `{}` has shape {:?}, spec needs {:?}",
                    b.name,
                    b.tensor.shape(),
                    a.tensor.shape()
                )));
            }
        }
        for ((na, ra), (nb, rb)) in fresh.running.iter().zip(&self.running) {
            if na != nb || ra.mean.len() != rb.mean.len() || rb.var.len() != rb.mean.len() {
                return Err(Error::Corruption(format!("batchnorm statistics `{nb}` do not match `{na}`")));
            }
        }
        if fresh.running.len() != self.running.len() {
            return Err(Error::Corruption("batchnorm statistics count differs from spec".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Records every parameter on the tape, as variables when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.variable(p.tensor.clone()) } else { tape.constant(p.tensor.clone()) })
            .collect()
    }

    /// Moves the tape's parameter gradients into the parameters; parameters
    /// the loss does not reach get zero gradients.
    pub fn collect_grads(&mut self, tape: &mut Tape<T>, vars: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let g = tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); p.tensor.numel()]);
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    pub fn absorb(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (i, s) in stats {
            self.running[*i].1.absorb(s);
        }
    }

    /// FNV-1a over parameter bits and running statistics.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            p.tensor.data().iter().for_each(|v| eat(v.as_f64()));
        }
        for (_, r) in &self.running {
            r.mean.iter().chain(&r.var).for_each(|v| eat(v.as_f64()));
            eat(r.batches as f64);
        }
        h
    }

    /// Records the network on `tape`. `params` are the tape handles of
    /// [`Network::params`] in order (see [`Network::bind`]).
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: Var, condition: Option<Var>, norm: Norm) -> Result<Forward<T>> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!("{} parameter handles for {} parameters", params.len(), self.params.len())));
        }
        self.check_inputs(tape, input, condition)?;
        let mut ctx = Ctx { net: self, tape, params, norm, stats: Vec::new() };
        let output = match self.spec.role {
            Role::Generator => ctx.generator(input, condition)?,
            Role::Discriminator => ctx.discriminator(input, condition)?,
        };
        Ok(Forward { output, stats: ctx.stats })
    }

    fn check_inputs(&self, tape: &Tape<T>, input: Var, condition: Option<Var>) -> Result<()> {
        let shape = tape.shape(input);
        if shape.len() != self.spec.rank + 2 || shape[1] != 1 {
            return Err(shape_err(format!(
                "rank-{} network expects input [N, 1, {} spatial], got {shape:?}",
                self.spec.rank, self.spec.rank
            )));
        }
        match (condition, self.spec.is_conditional()) {
            (None, false) => Ok(()),
            (Some(c), true) => {
                let cs = tape.shape(c);
                if cs.len() != shape.len() || cs[0] != shape[0] || cs[1] != self.spec.condition_channels || cs[2..] != shape[2..] {
                    return Err(shape_err(format!(
                        "condition {cs:?} does not match input {shape:?} with {} channels",
                        self.spec.condition_channels
                    )));
                }
                Ok(())
            }
            (None, true) => Err(Error::Contract("conditional network called without a condition".into())),
            (Some(_), false) => Err(Error::Contract("unconditional network called with a condition".into())),
        }
    }

    /// One training-mode forward on `z` whose batch statistics are absorbed
    /// into the running averages.
    pub fn update_running_stats(&mut self, z: &Volume<T>, c: Option<&ConditionField<T>>) -> Result<()> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (zi, ci) = volume_inputs(&mut tape, z, c);
        let f = self.forward(&mut tape, &vars, zi, ci, Norm::Train)?;
        self.absorb(&f.stats);
        Ok(())
    }
}

fn volume_inputs<T: Scalar>(tape: &mut Tape<T>, z: &Volume<T>, c: Option<&ConditionField<T>>) -> (Var, Option<Var>) {
    let mut shape = vec![1, 1];
    shape.extend_from_slice(z.dims());
    let zi = tape.constant(Tensor::new(shape, z.samples().to_vec()).expect("volume shape"));
    let ci = c.map(|c| {
        let mut shape = vec![1, c.channels()];
        shape.extend_from_slice(c.dims());
        tape.constant(Tensor::new(shape, c.data().to_vec()).expect("condition shape"))
    });
    (zi, ci)
}

struct Ctx<'a, T: Scalar> {
    net: &'a Network<T>,
    tape: &'a mut Tape<T>,
    params: &'a [Var],
    norm: Norm,
    stats: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn p(&self, name: &str) -> Var {
        self.params[self.net.index[name]]
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize, bias: bool) -> Result<Var> {
        let w = self.p(&format!("{name}.w"));
        let b = bias.then(|| self.p(&format!("{name}.b")));
        self.tape.conv(x, w, b, stride, Padding::Same)
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.p(&format!("{name}.gamma"));
        let beta = self.p(&format!("{name}.beta"));
        let i = self.net.bn_index[name];
        let mode = match self.norm {
            Norm::Train => NormMode::Train,
            Norm::Infer => NormMode::Infer,
        };
        let (y, stats) = self.tape.batchnorm(x, gamma, beta, mode, &self.net.running[i].1, name)?;
        if let Some(s) = stats {
            self.stats.push((i, s));
        }
        Ok(y)
    }

    fn prelu(&mut self, x: Var, name: &str) -> Result<Var> {
        let a = self.p(&format!("{name}.alpha"));
        self.tape.prelu(x, a)
    }

    /// Dot fusion: features times the 1×1 projection of the condition.
    fn dot(&mut self, x: Var, c: Var, name: &str) -> Result<Var> {
        let proj = self.conv(c, name, 1, true)?;
        self.tape.mul(x, proj)
    }

    fn fuse(&mut self, x: Var, c: Option<Var>, position: FusionPosition, prefix: &str) -> Result<Var> {
        let spec = &self.net.spec;
        match (spec.fusion, c) {
            (Some(f), Some(c)) if f.position == position || (prefix == "d" && position == FusionPosition::Mid && f.position == FusionPosition::Late) => {
                match f.kind {
                    FusionType::Concat => self.tape.concat_channels(x, c),
                    FusionType::Dot => self.dot(x, c, &format!("{prefix}.fuse.proj")),
                }
            }
            _ => Ok(x),
        }
    }

    fn generator(&mut self, z: Var, c: Option<Var>) -> Result<Var> {
        let x0 = self.fuse(z, c, FusionPosition::Early, "g")?;
        let h = self.conv(x0, "g.head.conv", 1, true)?;
        let h = self.prelu(h, "g.head.act")?;
        let mut r = h;
        for i in 0..self.net.spec.residual_depth {
            let input = if i == 0 { self.fuse(r, c, FusionPosition::Mid, "g")? } else { r };
            // concatenated channels only feed the conv; the skip carries the
            // block's own width
            let skip = if self.tape.shape(input)[1] == self.net.spec.base_channels { input } else { r };
            let y = self.conv(input, &format!("g.res{i}.conv1"), 1, false)?;
            let y = self.bn(y, &format!("g.res{i}.bn1"))?;
            let y = self.prelu(y, &format!("g.res{i}.act"))?;
            let y = self.conv(y, &format!("g.res{i}.conv2"), 1, false)?;
            let y = self.bn(y, &format!("g.res{i}.bn2"))?;
            r = self.tape.add(skip, y)?;
        }
        let r = self.fuse(r, c, FusionPosition::Late, "g")?;
        let p = self.conv(r, "g.post.conv", 1, false)?;
        let p = self.bn(p, "g.post.bn")?;
        let s = self.tape.add(p, h)?;
        let out = self.conv(s, "g.tail.conv", 1, true)?;
        Ok(self.tape.tanh(out))
    }

    fn discriminator(&mut self, x: Var, c: Option<Var>) -> Result<Var> {
        let x0 = self.fuse(x, c, FusionPosition::Early, "d")?;
        let h = self.conv(x0, "d.head.conv", 1, true)?;
        let mut h = self.tape.leaky_relu(h, LEAKY_SLOPE);
        h = self.fuse(h, c, FusionPosition::Mid, "d")?;
        let spatial = self.tape.shape(x)[2..].to_vec();
        let strides = discriminator_strides(&spatial, self.net.spec.residual_depth);
        for (i, (stride, _)) in strides.into_iter().enumerate() {
            let y = self.conv(h, &format!("d.block{i}.conv"), stride, false)?;
            let y = self.bn(y, &format!("d.block{i}.bn"))?;
            h = self.tape.leaky_relu(y, LEAKY_SLOPE);
        }
        let pooled = self.tape.global_avg_pool(h)?;
        let (w1, b1, w2, b2) = (self.p("d.fc1.w"), self.p("d.fc1.b"), self.p("d.fc2.w"), self.p("d.fc2.b"));
        let f = self.tape.dense(pooled, w1, b1)?;
        let f = self.tape.leaky_relu(f, LEAKY_SLOPE);
        let f = self.tape.dense(f, w2, b2)?;
        Ok(self.tape.sigmoid(f))
    }
}

/// `G(z|c)` in inference mode.
pub fn enhance<T: Scalar>(net: &Network<T>, z: &Volume<T>, c: Option<&ConditionField<T>>) -> Result<Volume<T>> {
    if net.spec.role != Role::Generator {
        return Err(Error::Contract("enhance needs a generator".into()));
    }
    if z.rank() != net.spec.rank {
        return Err(Error::Contract(format!("rank-{} input for a rank-{} generator", z.rank(), net.spec.rank)));
    }
    match (c, net.spec.is_conditional()) {
        (None, true) => return Err(Error::Contract("generator is conditional; a condition is required".into())),
        (Some(_), false) => return Err(Error::Contract("generator is unconditional; no condition expected".into())),
        (Some(c), true) if c.dims() != z.dims() => {
            return Err(shape_err(format!("condition dims {:?} vs input dims {:?}", c.dims(), z.dims())))
        }
        _ => {}
    }
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let (zi, ci) = volume_inputs(&mut tape, z, c);
    let f = net.forward(&mut tape, &vars, zi, ci, Norm::Infer)?;
    let out = tape.value(f.output).data().to_vec();
    Volume::new(z.dims().to_vec(), out, z.dt_ms)
}

#[cfg(test)]
mod tests;
