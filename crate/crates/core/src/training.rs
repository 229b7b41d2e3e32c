//! Adversarial training loop, resumable state and random hyperparameter
//! search.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gannet::{enhance, FusionPosition, FusionSpec, FusionType, Network, NetworkSpec, Norm, Role};
use crate::losses::{discriminator_loss, perceptual_loss, LossWeights};
use crate::metrics::{self, Window};
use crate::synthdata::{seeded_rng, PatchPair};
use crate::tensorcore::{AdamConfig, AdamState, Scalar, Tape, Tensor};
use crate::volume::Volume;

/// Share of the patch sequence (taken from its end) held out for evaluation.
pub const HELDOUT_FRACTION: f64 = 0.1;

const GENERATOR_SEED_OFFSET: u64 = 0;
const DISCRIMINATOR_SEED_OFFSET: u64 = 1;
const SAMPLER_STREAM: u64 = 4;
const SEARCH_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub dims: Vec<usize>,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_every: u64,
    /// How on-disk volumes are cut into training patches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchConfig>,
}

impl TrainConfig {
    /// Unconditional desk-scale preset.
    pub fn baseline(rank: usize, generator_depth: usize, discriminator_depth: usize, base_channels: usize) -> Self {
        Self {
            generator: NetworkSpec::generator(rank, generator_depth, base_channels),
            discriminator: NetworkSpec::discriminator(rank, discriminator_depth, base_channels),
            generator_lr: 1e-3,
            discriminator_lr: 1e-4,
            loss_weights: LossWeights::default(),
            batch_size: 8,
            total_steps: 500,
            seed: 0,
            eval_every: 50,
            patch: None,
        }
    }

    pub fn with_fusion(mut self, fusion: FusionSpec, condition_channels: usize) -> Self {
        self.generator = self.generator.with_fusion(fusion, condition_channels);
        self.discriminator = self.discriminator.with_fusion(fusion, condition_channels);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.role != Role::Generator || self.discriminator.role != Role::Discriminator {
            return Err(Error::Spec("generator/discriminator roles are swapped".into()));
        }
        if self.generator.rank != self.discriminator.rank {
            return Err(Error::Spec(format!(
                "generator rank {} differs from discriminator rank {}",
                self.generator.rank, self.discriminator.rank
            )));
        }
        if self.generator.fusion != self.discriminator.fusion
            || self.generator.condition_channels != self.discriminator.condition_channels
        {
            return Err(Error::Spec("generator and discriminator must share fusion and condition channels".into()));
        }
        for (name, lr) in [("generator_lr", self.generator_lr), ("discriminator_lr", self.discriminator_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Parameter(format!("{name} {lr} must be positive")));
            }
        }
        self.loss_weights.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Parameter("batch_size and eval_every must be positive".into()));
        }
        if let Some(p) = &self.patch {
            if p.dims.len() != self.generator.rank || p.dims.contains(&0) || p.stride == 0 {
                return Err(Error::Parameter(format!("patch {:?} stride {} for rank {}", p.dims, p.stride, self.generator.rank)));
            }
        }
        Ok(())
    }

    pub fn is_conditional(&self) -> bool {
        self.generator.is_conditional()
    }
}

/// Training and held-out patches.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub train: Vec<PatchPair<T>>,
    pub heldout: Vec<PatchPair<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Holds out the last tenth of the sequence, in order.
    pub fn split(mut patches: Vec<PatchPair<T>>) -> Self {
        let held = (patches.len() as f64 * HELDOUT_FRACTION).floor() as usize;
        let heldout = patches.split_off(patches.len() - held);
        Self { train: patches, heldout }
    }
}

/// Epoch-shuffling batch sampler. The whole state, generator position
/// included, round-trips through [`SamplerState::to_bytes`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub rng: ChaCha8Rng,
    pub order: Vec<u32>,
    pub cursor: usize,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeded_rng(seed, SAMPLER_STREAM), order: Vec::new(), cursor: 0 }
    }

    /// Next batch of indices; a new permutation starts whenever the current
    /// one cannot fill a batch.
    pub fn next_batch(&mut self, len: usize, batch: usize) -> Vec<usize> {
        if self.order.len() != len || self.cursor + batch > self.order.len() {
            self.order = (0..len as u32).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + batch].iter().map(|&i| i as usize).collect();
        self.cursor += batch;
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 4 * self.order.len());
        b.extend_from_slice(&self.rng.get_seed());
        b.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        b.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        b.extend_from_slice(&(self.cursor as u64).to_le_bytes());
        b.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for i in &self.order {
            b.extend_from_slice(&i.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Corruption(format!("sampler state: {m}"));
        if b.len() < 68 {
            return Err(bad("truncated header"));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&b[..32]);
        let stream = u64::from_le_bytes(b[32..40].try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(b[40..56].try_into().expect("16 bytes"));
        let cursor = u64::from_le_bytes(b[56..64].try_into().expect("8 bytes")) as usize;
        let n = u32::from_le_bytes(b[64..68].try_into().expect("4 bytes")) as usize;
        if b.len() != 68 + 4 * n {
            return Err(bad(&format!("expected {} bytes for {n} indices, got {}", 68 + 4 * n, b.len())));
        }
        let order: Vec<u32> = b[68..].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if cursor > order.len() {
            return Err(bad(&format!("cursor {cursor} beyond {} indices", order.len())));
        }
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { rng, order, cursor })
    }
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub step: u64,
    pub generator: Network<T>,
    pub discriminator: Network<T>,
    pub generator_opt: AdamState<T>,
    pub discriminator_opt: AdamState<T>,
    pub sampler: SamplerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_content: f64,
    pub g_adversarial: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_ssim: Option<f64>,
}

/// Held-out scores of `G(z)` and of the degraded input `z`, both against `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScores {
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub input_psnr_db: f64,
    pub input_ssim: Option<f64>,
}

struct Batch<T> {
    x: Tensor<T>,
    z: Tensor<T>,
    c: Option<Tensor<T>>,
}

fn stack<T: Scalar>(vols: &[&Volume<T>]) -> Tensor<T> {
    let mut shape = vec![vols.len(), 1];
    shape.extend_from_slice(vols[0].dims());
    let data = vols.iter().flat_map(|v| v.samples().iter().copied()).collect();
    Tensor::new(shape, data).expect("patches share dims")
}

impl<T: Scalar> Checkpoint<T> {
    /// Freshly initialized state for `config`.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Network::build(&config.generator, config.seed.wrapping_add(GENERATOR_SEED_OFFSET))?;
        let discriminator = Network::build(&config.discriminator, config.seed.wrapping_add(DISCRIMINATOR_SEED_OFFSET))?;
        let generator_opt = AdamState::new(AdamConfig::with_lr(config.generator_lr), &generator.params);
        let discriminator_opt = AdamState::new(AdamConfig::with_lr(config.discriminator_lr), &discriminator.params);
        Ok(Self {
            config: config.clone(),
            step: 0,
            generator,
            discriminator,
            generator_opt,
            discriminator_opt,
            sampler: SamplerState::new(config.seed),
        })
    }

    /// Checks the dataset against the config before any step runs.
    pub fn check_dataset(&self, data: &Dataset<T>) -> Result<()> {
        if data.train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if self.config.batch_size > data.train.len() {
            return Err(Error::Parameter(format!(
                "batch size {} exceeds the {} training patches",
                self.config.batch_size,
                data.train.len()
            )));
        }
        let dims = data.train[0].truth.dims().to_vec();
        if dims.len() != self.config.generator.rank {
            return Err(Error::Data(format!("rank-{} patches for a rank-{} model", dims.len(), self.config.generator.rank)));
        }
        let k = self.config.generator.condition_channels;
        for (i, p) in data.train.iter().chain(&data.heldout).enumerate() {
            if p.truth.dims() != dims.as_slice() || p.degraded.dims() != dims.as_slice() {
                return Err(Error::Data(format!("patch {i} has dims {:?}, expected {dims:?}", p.truth.dims())));
            }
            if self.config.is_conditional() {
                match &p.condition {
                    Some(c) if c.channels() == k && c.dims() == dims.as_slice() => {}
                    Some(c) => {
                        return Err(Error::Data(format!(
                            "patch {i} condition has {} channels over {:?}, expected {k} over {dims:?}",
                            c.channels(),
                            c.dims()
                        )))
                    }
                    None => return Err(Error::Data(format!("patch {i} lacks a condition"))),
                }
            }
        }
        Ok(())
    }

    fn batch(&self, patches: &[PatchPair<T>], idx: &[usize]) -> Batch<T> {
        let x = stack(&idx.iter().map(|&i| &patches[i].truth).collect::<Vec<_>>());
        let z = stack(&idx.iter().map(|&i| &patches[i].degraded).collect::<Vec<_>>());
        let c = self.config.is_conditional().then(|| {
            let first = patches[idx[0]].condition.as_ref().expect("checked");
            let mut shape = vec![idx.len(), first.channels()];
            shape.extend_from_slice(first.dims());
            let data = idx.iter().flat_map(|&i| patches[i].condition.as_ref().expect("checked").data().iter().copied()).collect();
            Tensor::new(shape, data).expect("conditions share dims")
        });
        Batch { x, z, c }
    }

    /// One discriminator update with the generator frozen. Returns the loss.
    pub fn step_discriminator(&mut self, data: &Dataset<T>) -> Result<f64> {
        let idx = self.sampler.next_batch(data.train.len(), self.config.batch_size);
        let b = self.batch(&data.train, &idx);
        self.discriminator_update(&b)
    }

    fn discriminator_update(&mut self, b: &Batch<T>) -> Result<f64> {
        let mut t = Tape::new();
        let gv = self.generator.bind(&mut t, false);
        let dv = self.discriminator.bind(&mut t, true);
        let x = t.constant(b.x.clone());
        let z = t.constant(b.z.clone());
        let c = b.c.as_ref().map(|c| t.constant(c.clone()));
        let fake = self.generator.forward(&mut t, &gv, z, c, Norm::Train)?.output;
        let real = self.discriminator.forward(&mut t, &dv, x, c, Norm::Train)?;
        let d_fake = self.discriminator.forward(&mut t, &dv, fake, c, Norm::Train)?;
        let loss = discriminator_loss(&mut t, real.output, d_fake.output)?;
        let value = t.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite { step: self.step, component: "discriminator" });
        }
        t.backward(loss)?;
        self.discriminator.collect_grads(&mut t, &dv)?;
        self.discriminator_opt.step(&mut self.discriminator.params)?;
        self.discriminator.absorb(&real.stats);
        Ok(value)
    }

    /// One generator update with the discriminator frozen. Returns the
    /// total, content and adversarial losses.
    pub fn step_generator(&mut self, data: &Dataset<T>) -> Result<(f64, f64, f64)> {
        let idx = self.sampler.next_batch(data.train.len(), self.config.batch_size);
        let b = self.batch(&data.train, &idx);
        self.generator_update(&b)
    }

    fn generator_update(&mut self, b: &Batch<T>) -> Result<(f64, f64, f64)> {
        let mut t = Tape::new();
        let gv = self.generator.bind(&mut t, true);
        let dv = self.discriminator.bind(&mut t, false);
        let x = t.constant(b.x.clone());
        let z = t.constant(b.z.clone());
        let c = b.c.as_ref().map(|c| t.constant(c.clone()));
        let fake = self.generator.forward(&mut t, &gv, z, c, Norm::Train)?;
        let d_fake = self.discriminator.forward(&mut t, &dv, fake.output, c, Norm::Train)?.output;
        let terms = perceptual_loss(&mut t, x, fake.output, d_fake, self.config.loss_weights)?;
        let value = |v| t.value(v).data()[0].as_f64();
        let (total, content, adv) = (value(terms.total), value(terms.content), value(terms.adversarial));
        if !content.is_finite() {
            return Err(Error::NonFinite { step: self.step, component: "content" });
        }
        if !adv.is_finite() || !total.is_finite() {
            return Err(Error::NonFinite { step: self.step, component: "adversarial" });
        }
        t.backward(terms.total)?;
        self.generator.collect_grads(&mut t, &gv)?;
        self.generator_opt.step(&mut self.generator.params)?;
        self.generator.absorb(&fake.stats);
        Ok((total, content, adv))
    }

    /// One alternation: a discriminator update then a generator update on
    /// the same batch.
    pub fn train_step(&mut self, data: &Dataset<T>) -> Result<HistoryEntry> {
        self.train_step_observed(data, |_| {})
    }

    /// [`Checkpoint::train_step`] with `between` called on the state after
    /// the discriminator half and before the generator half.
    pub fn train_step_observed(&mut self, data: &Dataset<T>, mut between: impl FnMut(&Self)) -> Result<HistoryEntry> {
        let idx = self.sampler.next_batch(data.train.len(), self.config.batch_size);
        let b = self.batch(&data.train, &idx);
        let d_loss = self.discriminator_update(&b)?;
        between(self);
        let (g_loss, g_content, g_adversarial) = self.generator_update(&b)?;
        self.step += 1;
        let mut entry = HistoryEntry { step: self.step, d_loss, g_loss, g_content, g_adversarial, eval_psnr: None, eval_ssim: None };
        if self.step % self.config.eval_every == 0 && !data.heldout.is_empty() {
            let s = self.evaluate(&data.heldout)?;
            entry.eval_psnr = Some(s.psnr_db);
            entry.eval_ssim = s.ssim;
        }
        Ok(entry)
    }

    /// Pooled-MSE PSNR and mean SSIM (when patches hold a full window) of
    /// the generator and of the raw input, over `patches`.
    pub fn evaluate(&self, patches: &[PatchPair<T>]) -> Result<HeldoutScores> {
        evaluate_generator(&self.generator, patches)
    }

    /// Runs `steps` alternations, returning their history.
    pub fn run(&mut self, steps: u64, data: &Dataset<T>) -> Result<Vec<HistoryEntry>> {
        if steps > 0 {
            self.check_dataset(data)?;
        }
        (0..steps).map(|_| self.train_step(data)).collect()
    }
}

pub fn evaluate_generator<T: Scalar>(generator: &Network<T>, patches: &[PatchPair<T>]) -> Result<HeldoutScores> {
    if patches.is_empty() {
        return Err(Error::Data("no patches to evaluate".into()));
    }
    let (mut mse_g, mut mse_z, mut ssim_g, mut ssim_z) = (0.0, 0.0, 0.0, 0.0);
    let dims = patches[0].truth.dims();
    let has_ssim = dims.iter().all(|&d| d >= Window::for_rank(dims.len()).size);
    for p in patches {
        let c = if generator.spec.is_conditional() { p.condition.as_ref() } else { None };
        let g = enhance(generator, &p.degraded, c)?;
        mse_g += metrics::mse(&p.truth, &g)?;
        mse_z += metrics::mse(&p.truth, &p.degraded)?;
        if has_ssim {
            ssim_g += metrics::ssim(&p.truth, &g, metrics::DEFAULT_DATA_RANGE)?;
            ssim_z += metrics::ssim(&p.truth, &p.degraded, metrics::DEFAULT_DATA_RANGE)?;
        }
    }
    let n = patches.len() as f64;
    let r2 = metrics::DEFAULT_DATA_RANGE.powi(2);
    let psnr = |m: f64| if m == 0.0 { f64::INFINITY } else { 10.0 * (r2 / (m / n)).log10() };
    Ok(HeldoutScores {
        psnr_db: psnr(mse_g),
        ssim: has_ssim.then_some(ssim_g / n),
        input_psnr_db: psnr(mse_z),
        input_ssim: has_ssim.then_some(ssim_z / n),
    })
}

/// Trains from initialization for `config.total_steps` alternations.
pub fn train<T: Scalar>(config: &TrainConfig, data: &Dataset<T>) -> Result<(Checkpoint<T>, Vec<HistoryEntry>)> {
    let mut ck = Checkpoint::init(config)?;
    let history = ck.run(config.total_steps, data)?;
    Ok((ck, history))
}

/// Continues a checkpoint for `extra_steps`; the stored total is advanced so
/// the result matches an uninterrupted run.
pub fn resume<T: Scalar>(mut ck: Checkpoint<T>, extra_steps: u64, data: &Dataset<T>) -> Result<(Checkpoint<T>, Vec<HistoryEntry>)> {
    ck.generator.check_against_spec()?;
    ck.discriminator.check_against_spec()?;
    if extra_steps == 0 {
        return Ok((ck, Vec::new()));
    }
    let history = ck.run(extra_steps, data)?;
    ck.config.total_steps = ck.step;
    Ok((ck, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
    Integer,
}

/// Closed interval sampled on the given scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

impl Range {
    pub fn fixed(v: f64, scale: Scale) -> Self {
        Self { min: v, max: v, scale }
    }

    fn validate(&self, name: &str, integer: bool) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Space(format!("{name}: empty range [{}, {}]", self.min, self.max)));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(Error::Space(format!("{name}: log scale needs a positive minimum, got {}", self.min)));
        }
        if integer && (self.min < 1.0 || self.min.fract() != 0.0 || self.max.fract() != 0.0) {
            return Err(Error::Space(format!("{name}: needs whole numbers >= 1, got [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        match self.scale {
            Scale::Linear => self.min + u * (self.max - self.min),
            Scale::Log => (self.min.ln() + u * (self.max.ln() - self.min.ln())).exp(),
            Scale::Integer => (self.min + (u * (self.max - self.min + 1.0)).floor()).min(self.max),
        }
    }

    /// Whole-number draw; linear and integer scales are uniform over the
    /// integers in the range.
    pub fn sample_int(&self, rng: &mut impl Rng) -> usize {
        match self.scale {
            Scale::Log => self.sample(rng).round().clamp(self.min, self.max) as usize,
            _ => Range { scale: Scale::Integer, ..*self }.sample(rng) as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choices<V> {
    pub choices: Vec<V>,
}

/// Ranges searched by [`hpsearch`], plus the fixed settings every trial
/// shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub rank: usize,
    pub base_channels: usize,
    #[serde(default)]
    pub condition_channels: usize,
    pub generator_depth: Range,
    pub discriminator_depth: Range,
    pub batch_size: Range,
    pub generator_lr: Range,
    pub discriminator_lr: Range,
    pub adversarial_weight: Range,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_type: Option<Choices<FusionType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_position: Option<Choices<FusionPosition>>,
}

impl SearchSpace {
    /// The published tuning ranges for `rank` (2 or 3), with every fusion
    /// type and position when `condition_channels > 0`.
    pub fn appendix(rank: usize, base_channels: usize, condition_channels: usize) -> Self {
        let lin = |min: f64, max: f64| Range { min, max, scale: Scale::Linear };
        let (g, d, b) = if rank == 3 { ((1.0, 7.0), (1.0, 6.0), (1.0, 4.0)) } else { ((16.0, 40.0), (6.0, 18.0), (6.0, 12.0)) };
        let conditional = condition_channels > 0;
        SearchSpace {
            rank,
            base_channels,
            condition_channels,
            generator_depth: lin(g.0, g.1),
            discriminator_depth: lin(d.0, d.1),
            batch_size: Range { min: b.0, max: b.1, scale: Scale::Integer },
            generator_lr: Range { min: 5e-7, max: 1e-3, scale: Scale::Log },
            discriminator_lr: Range { min: 5e-5, max: 5e-2, scale: Scale::Log },
            adversarial_weight: Range { min: 1e-5, max: 0.1, scale: Scale::Log },
            fusion_type: conditional.then(|| Choices { choices: vec![FusionType::Concat, FusionType::Dot] }),
            fusion_position: conditional
                .then(|| Choices { choices: vec![FusionPosition::Early, FusionPosition::Mid, FusionPosition::Late] }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Space(format!("rank must be 2 or 3, got {}", self.rank)));
        }
        if self.base_channels == 0 {
            return Err(Error::Space("base_channels must be positive".into()));
        }
        self.generator_depth.validate("generator_depth", true)?;
        self.discriminator_depth.validate("discriminator_depth", true)?;
        self.batch_size.validate("batch_size", true)?;
        self.generator_lr.validate("generator_lr", false)?;
        self.discriminator_lr.validate("discriminator_lr", false)?;
        self.adversarial_weight.validate("adversarial_weight", false)?;
        if self.generator_lr.min <= 0.0 || self.discriminator_lr.min <= 0.0 {
            return Err(Error::Space("learning rates must be positive".into()));
        }
        if self.adversarial_weight.min < 0.0 {
            return Err(Error::Space("adversarial_weight must be non-negative".into()));
        }
        match (&self.fusion_type, &self.fusion_position) {
            (None, None) => {
                if self.condition_channels != 0 {
                    return Err(Error::Space("condition_channels given without fusion choices".into()));
                }
            }
            (Some(t), Some(p)) => {
                if t.choices.is_empty() || p.choices.is_empty() {
                    return Err(Error::Space("fusion choices must be non-empty".into()));
                }
                if self.condition_channels == 0 {
                    return Err(Error::Space("fusion choices need condition_channels > 0".into()));
                }
            }
            _ => return Err(Error::Space("fusion_type and fusion_position must be given together".into())),
        }
        Ok(())
    }

    /// Draws one configuration.
    pub fn sample(&self, rng: &mut impl Rng, budget_steps: u64, seed: u64) -> TrainConfig {
        let gd = self.generator_depth.sample_int(rng);
        let dd = self.discriminator_depth.sample_int(rng);
        let batch = self.batch_size.sample_int(rng);
        let glr = self.generator_lr.sample(rng);
        let dlr = self.discriminator_lr.sample(rng);
        let w = self.adversarial_weight.sample(rng);
        let fusion = match (&self.fusion_type, &self.fusion_position) {
            (Some(t), Some(p)) => {
                let kind = t.choices[rng.random_range(0..t.choices.len())];
                let position = p.choices[rng.random_range(0..p.choices.len())];
                Some(FusionSpec { kind, position })
            }
            _ => None,
        };
        let mut cfg = TrainConfig::baseline(self.rank, gd, dd, self.base_channels);
        cfg.generator_lr = glr;
        cfg.discriminator_lr = dlr;
        cfg.loss_weights = LossWeights { adversarial_weight: w };
        cfg.batch_size = batch;
        cfg.total_steps = budget_steps;
        cfg.seed = seed;
        cfg.eval_every = budget_steps.max(1);
        if let Some(f) = fusion {
            cfg = cfg.with_fusion(f, self.condition_channels);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub config: TrainConfig,
    /// Held-out SSIM; negative infinity when the trial failed.
    pub score: f64,
    pub psnr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Sorted by score descending, ties by trial index.
pub fn rank_trials(results: &mut [TrialResult]) {
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.trial.cmp(&b.trial)));
}

/// Random search: `trials` i.i.d. configurations, each trained for
/// `budget_steps` from the same seed and scored by held-out SSIM.
pub fn hpsearch<T: Scalar>(
    space: &SearchSpace,
    trials: usize,
    budget_steps: u64,
    data: &Dataset<T>,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::Space("at least one trial is required".into()));
    }
    if data.heldout.is_empty() {
        return Err(Error::Data("hpsearch needs a non-empty held-out split".into()));
    }
    let dims = data.heldout[0].truth.dims();
    let window = Window::for_rank(dims.len()).size;
    if dims.iter().any(|&d| d < window) {
        return Err(Error::Parameter(format!("held-out patches {dims:?} are smaller than the {window}-wide SSIM window")));
    }
    let mut rng = seeded_rng(seed, SEARCH_STREAM);
    let configs: Vec<TrainConfig> = (0..trials).map(|_| space.sample(&mut rng, budget_steps, seed)).collect();
    let mut results = Vec::with_capacity(trials);
    for (trial, config) in configs.into_iter().enumerate() {
        let outcome = train(&config, data).and_then(|(ck, _)| ck.evaluate(&data.heldout));
        results.push(match outcome {
            Ok(s) => TrialResult { trial, config, score: s.ssim.unwrap_or(f64::NEG_INFINITY), psnr_db: Some(s.psnr_db), failure: None },
            Err(e @ (Error::NonFinite { .. } | Error::Parameter(_))) => {
                TrialResult { trial, config, score: f64::NEG_INFINITY, psnr_db: None, failure: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        });
    }
    rank_trials(&mut results);
    Ok(results)
}
