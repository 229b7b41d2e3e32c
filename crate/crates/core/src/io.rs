//! On-disk formats: SVOL volumes, SCND condition fields, SGCK checkpoints,
//! the dataset manifest and PGM slice export.
//!
//! All binary formats are little-endian with a four-byte magic and a u32
//! version. Writers go through a temporary file in the target directory
//! followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gannet::Network;
use crate::synthdata::SynthConfig;
use crate::tensorcore::{AdamConfig, AdamState, Param, RunningStats, Scalar, Tensor};
use crate::training::{Checkpoint, SamplerState, TrainConfig};
use crate::volume::{ConditionField, ConditionMode, Volume};

pub const FORMAT_VERSION: u32 = 1;
pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SCND_MAGIC: &[u8; 4] = b"SCND";
pub const SGCK_MAGIC: &[u8; 4] = b"SGCK";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(self.fail(format!("truncated {what}: need {n} bytes, {remaining} remain")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.fail(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            self.pos -= 4;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format { offset: at, message: format!("unsupported version {version}") });
        }
        Ok(())
    }

    fn dims(&mut self, allowed: &[u8]) -> Result<Vec<usize>> {
        let at = self.pos;
        let rank = self.u8("rank")?;
        if !allowed.contains(&rank) {
            return Err(Error::Format { offset: at, message: format!("rank {rank} not in {allowed:?}") });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32("dimension")? as usize;
            if d == 0 {
                return Err(Error::Format { offset: at, message: "zero-length dimension".into() });
            }
            dims.push(d);
        }
        Ok(dims)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    out.push(dims.len() as u8);
    for &d in dims {
        put_u32(out, d as u32);
    }
}

fn put_floats<T: Scalar>(out: &mut Vec<u8>, data: &[T]) {
    out.reserve(4 * data.len());
    for v in data {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Parameter(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// SVOL bytes; samples are stored as f32.
pub fn encode_volume<T: Scalar>(v: &Volume<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * v.len());
    out.extend_from_slice(SVOL_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_dims(&mut out, v.dims());
    out.extend_from_slice(&v.dt_ms.to_le_bytes());
    put_floats(&mut out, v.samples());
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume<f32>> {
    let mut r = Reader::new(bytes);
    r.header(SVOL_MAGIC)?;
    let dims = r.dims(&[2, 3])?;
    let dt = r.f32("dt")?;
    let data = r.floats(product(&dims), "payload")?;
    r.finish()?;
    Volume::new(dims, data, dt)
}

/// SCND bytes: mode byte, channel count, then the SVOL-style geometry.
pub fn encode_condition<T: Scalar>(c: &ConditionField<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * c.data().len());
    out.extend_from_slice(SCND_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.push(match c.mode {
        ConditionMode::Deterministic => 0,
        ConditionMode::Probabilistic => 1,
    });
    put_u32(&mut out, c.channels() as u32);
    put_dims(&mut out, c.dims());
    put_floats(&mut out, c.data());
    out
}

/// Decodes and validates an SCND payload (one-hot sums or unit-interval
/// probabilities).
pub fn decode_condition(bytes: &[u8]) -> Result<ConditionField<f32>> {
    let mut r = Reader::new(bytes);
    r.header(SCND_MAGIC)?;
    let at = r.pos;
    let mode = match r.u8("mode")? {
        0 => ConditionMode::Deterministic,
        1 => ConditionMode::Probabilistic,
        m => return Err(Error::Format { offset: at, message: format!("unknown mode byte {m}") }),
    };
    let at = r.pos;
    let channels = r.u32("channel count")? as usize;
    if channels == 0 {
        return Err(Error::Format { offset: at, message: "zero channels".into() });
    }
    let dims = r.dims(&[2, 3])?;
    let payload_at = r.pos;
    let data = r.floats(channels * product(&dims), "payload")?;
    r.finish()?;
    ConditionField::new(mode, channels, dims, data).map_err(|e| match e {
        Error::Data(m) => Error::Format { offset: payload_at, message: m },
        other => other,
    })
}

pub fn write_volume<T: Scalar>(path: &Path, v: &Volume<T>) -> Result<()> {
    write_atomic(path, &encode_volume(v))
}

pub fn read_volume(path: &Path) -> Result<Volume<f32>> {
    decode_volume(&fs::read(path)?)
}

pub fn write_condition<T: Scalar>(path: &Path, c: &ConditionField<T>) -> Result<()> {
    write_atomic(path, &encode_condition(c))
}

pub fn read_condition(path: &Path) -> Result<ConditionField<f32>> {
    decode_condition(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: TrainConfig,
    step: u64,
    generator_optimizer: OptimizerMeta,
    discriminator_optimizer: OptimizerMeta,
    /// Batches absorbed by each batchnorm layer, generator first.
    batchnorm_batches: Vec<(String, u64)>,
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[T]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_dims(out, dims);
    put_floats(out, data);
}

/// Parameters, then batchnorm statistics, then Adam moments.
fn network_tensors<'n, T: Scalar>(net: &'n Network<T>, opt: &'n AdamState<T>) -> Vec<(String, Vec<usize>, &'n [T])> {
    let mut v = Vec::new();
    for p in &net.params {
        v.push((p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data()));
    }
    for (name, rs) in &net.running {
        v.push((format!("{name}.running_mean"), vec![rs.mean.len()], &rs.mean[..]));
        v.push((format!("{name}.running_var"), vec![rs.var.len()], &rs.var[..]));
    }
    for (i, p) in net.params.iter().enumerate() {
        v.push((format!("adam.m.{}", p.name), p.tensor.shape().to_vec(), &opt.first[i][..]));
        v.push((format!("adam.v.{}", p.name), p.tensor.shape().to_vec(), &opt.second[i][..]));
    }
    v
}

/// SGCK bytes for a training state.
pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: ck.config.clone(),
        step: ck.step,
        generator_optimizer: OptimizerMeta { config: ck.generator_opt.config, step: ck.generator_opt.step },
        discriminator_optimizer: OptimizerMeta { config: ck.discriminator_opt.config, step: ck.discriminator_opt.step },
        batchnorm_batches: ck
            .generator
            .running
            .iter()
            .chain(&ck.discriminator.running)
            .map(|(n, r)| (n.clone(), r.batches))
            .collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(SGCK_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    let mut tensors = network_tensors(&ck.generator, &ck.generator_opt);
    tensors.extend(network_tensors(&ck.discriminator, &ck.discriminator_opt));
    put_u32(&mut out, tensors.len() as u32);
    for (name, dims, data) in tensors {
        if product(&dims) != data.len() {
            return Err(Error::Contract(format!("tensor `{name}` holds {} values for shape {dims:?}", data.len())));
        }
        put_tensor(&mut out, &name, &dims, data);
    }
    let rng = ck.sampler.to_bytes();
    put_u32(&mut out, rng.len() as u32);
    out.extend_from_slice(&rng);
    Ok(out)
}

struct NamedTensor {
    offset: usize,
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

struct TensorQueue {
    items: std::vec::IntoIter<NamedTensor>,
}

impl TensorQueue {
    fn next<T: Scalar>(&mut self, name: &str, dims: &[usize]) -> Result<Vec<T>> {
        let t = self.items.next().ok_or_else(|| Error::Corruption(format!("missing tensor `{name}`")))?;
        if t.name != name {
            return Err(Error::Corruption(format!("expected tensor `{name}`, found `{}` at byte {}", t.name, t.offset)));
        }
        if t.dims != dims {
            return Err(Error::Corruption(format!("tensor `{name}` has shape {:?}, spec needs {dims:?}", t.dims)));
        }
        Ok(t.data.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect())
    }
}

fn restore_network<T: Scalar>(
    template: Network<T>,
    optimizer: &OptimizerMeta,
    batches: &mut impl Iterator<Item = (String, u64)>,
    q: &mut TensorQueue,
) -> Result<(Network<T>, AdamState<T>)> {
    let mut params = Vec::with_capacity(template.params.len());
    for p in &template.params {
        let mut t = Tensor::new(p.tensor.shape().to_vec(), q.next(&p.name, p.tensor.shape())?)?;
        if optimizer.step > 0 {
            t.set_grad(vec![T::zero(); t.numel()])?;
        }
        params.push(Param::new(p.name.clone(), t));
    }
    let mut running = Vec::with_capacity(template.running.len());
    for (name, rs) in &template.running {
        let c = [rs.mean.len()];
        let mean = q.next(&format!("{name}.running_mean"), &c)?;
        let var = q.next(&format!("{name}.running_var"), &c)?;
        let (bn, count) = batches.next().ok_or_else(|| Error::Corruption(format!("no batch count for `{name}`")))?;
        if &bn != name {
            return Err(Error::Corruption(format!("batch count for `{bn}` where `{name}` was expected")));
        }
        running.push((name.clone(), RunningStats { mean, var, batches: count }));
    }
    let mut opt = AdamState::new(optimizer.config, &params);
    opt.step = optimizer.step;
    for (i, p) in template.params.iter().enumerate() {
        opt.first[i] = q.next(&format!("adam.m.{}", p.name), p.tensor.shape())?;
        opt.second[i] = q.next(&format!("adam.v.{}", p.name), p.tensor.shape())?;
    }
    let net = Network::from_parts(template.spec.clone(), params, running)?;
    net.check_against_spec()?;
    Ok((net, opt))
}

/// Parses SGCK bytes. Layout problems are format errors with the byte
/// offset; tensors that disagree with the stored spec are corruption errors
/// naming the tensor.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader::new(bytes);
    r.header(SGCK_MAGIC)?;
    let n = r.u32("config length")? as usize;
    let at = r.pos;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(n, "config")?)
        .map_err(|e| Error::Format { offset: at, message: format!("config: {e}") })?;
    meta.config.validate().map_err(|e| Error::Corruption(format!("stored config: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let offset = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format { offset: offset + 4, message: "tensor name is not UTF-8".into() })?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format { offset, message: format!("duplicate tensor `{name}`") });
        }
        let dims = r.dims(&[1, 2, 3, 4, 5])?;
        let data = r.floats(product(&dims), "tensor payload")?;
        tensors.push(NamedTensor { offset, name, dims, data });
    }
    let len = r.u32("rng length")? as usize;
    let rng_at = r.pos;
    let rng = r.take(len, "rng state")?;
    r.finish()?;
    let sampler = SamplerState::from_bytes(rng).map_err(|e| Error::Format { offset: rng_at, message: e.to_string() })?;

    let mut q = TensorQueue { items: tensors.into_iter() };
    let mut batches = meta.batchnorm_batches.iter().cloned();
    let g = Network::<T>::build(&meta.config.generator, 0)?;
    let d = Network::<T>::build(&meta.config.discriminator, 0)?;
    let (generator, generator_opt) = restore_network(g, &meta.generator_optimizer, &mut batches, &mut q)?;
    let (discriminator, discriminator_opt) = restore_network(d, &meta.discriminator_optimizer, &mut batches, &mut q)?;
    if let Some(extra) = q.items.next() {
        return Err(Error::Corruption(format!("unexpected tensor `{}`", extra.name)));
    }
    if batches.next().is_some() {
        return Err(Error::Corruption("more batch counts than batchnorm layers".into()));
    }
    Ok(Checkpoint { config: meta.config, step: meta.step, generator, discriminator, generator_opt, discriminator_opt, sampler })
}

pub fn write_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// One synthesized sample: file names are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub seed: u64,
    pub truth: String,
    pub degraded: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub synth: SynthConfig,
    pub base_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &json)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Loaded sample files from a dataset directory.
pub struct DatasetFiles {
    pub truth: Volume<f32>,
    pub degraded: Volume<f32>,
    pub condition: Option<ConditionField<f32>>,
}

/// Reads every manifest entry. With `need_condition`, a missing SCND file
/// is a data error naming the file.
pub fn load_dataset(dir: &Path, need_condition: bool) -> Result<Vec<DatasetFiles>> {
    let manifest = Manifest::read(dir)?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let truth = read_volume(&dir.join(&e.truth))?;
        let degraded = read_volume(&dir.join(&e.degraded))?;
        let condition = match (&e.condition, need_condition) {
            (Some(name), true) => {
                let p = dir.join(name);
                if !p.exists() {
                    return Err(Error::Data(format!("missing condition file {}", p.display())));
                }
                Some(read_condition(&p)?)
            }
            (None, true) => return Err(Error::Data(format!("no condition file listed for {}", e.truth))),
            _ => None,
        };
        out.push(DatasetFiles { truth, degraded, condition });
    }
    Ok(out)
}

/// `[-1, 1] -> [0, 255]`, rounding half up; out-of-range values saturate.
pub fn gray_level(v: f32) -> u8 {
    let x = (v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5;
    (x + 0.5).floor().min(255.0) as u8
}

/// Binary PGM with one comment line.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8], comment: &str) -> Vec<u8> {
    let comment = comment.replace(['\n', '\r'], " ");
    let mut out = format!("P5\n# {comment}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmHeader {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub comments: Vec<String>,
    pub data_offset: usize,
}

pub fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    let mut pos = 0;
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Format { offset: pos, message: "truncated PGM header".into() });
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push((start, String::from_utf8_lossy(&bytes[start..pos]).to_string()));
    }
    if tokens[0].1 != "P5" {
        return Err(Error::Format { offset: 0, message: format!("expected P5, found {}", tokens[0].1) });
    }
    let num = |(at, s): &(usize, String)| {
        s.parse::<usize>().map_err(|_| Error::Format { offset: *at, message: format!("bad header number {s:?}") })
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format { offset: tokens[3].0, message: format!("unsupported maxval {maxval}") });
    }
    // exactly one whitespace byte separates the header from the raster
    let data_offset = pos + 1;
    if bytes.len() < data_offset + width * height {
        return Err(Error::Format { offset: bytes.len(), message: "truncated PGM raster".into() });
    }
    Ok(PgmHeader { width, height, maxval: maxval as u16, comments, data_offset })
}

/// Which slices of a volume to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSpec {
    Axis { axis: usize, index: usize },
    /// The three orthogonal planes through the centre of a cube.
    AllMid,
}

impl std::str::FromStr for SliceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all:mid" {
            return Ok(SliceSpec::AllMid);
        }
        let bad = || Error::Parameter(format!("slice spec {s:?} is not \"axis:index\" or \"all:mid\""));
        let (a, i) = s.split_once(':').ok_or_else(bad)?;
        Ok(SliceSpec::Axis { axis: a.parse().map_err(|_| bad())?, index: i.parse().map_err(|_| bad())? })
    }
}

/// A 2D grayscale image cut from a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Cuts the requested slices. Rank-2 volumes are exported whole and the
/// spec is ignored.
pub fn slices<T: Scalar>(v: &Volume<T>, spec: SliceSpec) -> Result<Vec<Slice>> {
    let dims = v.dims();
    if dims.len() == 2 {
        let pixels = v.samples().iter().map(|s| gray_level(s.as_f64() as f32)).collect();
        return Ok(vec![Slice { label: "full".into(), width: dims[1], height: dims[0], pixels }]);
    }
    let picks: Vec<(usize, usize)> = match spec {
        SliceSpec::AllMid => (0..3).map(|a| (a, dims[a] / 2)).collect(),
        SliceSpec::Axis { axis, index } => {
            if axis >= 3 || index >= dims[axis] {
                return Err(Error::Parameter(format!("slice {axis}:{index} outside dims {dims:?}")));
            }
            vec![(axis, index)]
        }
    };
    Ok(picks
        .into_iter()
        .map(|(axis, index)| {
            let (r, c): (Vec<usize>, Vec<usize>) = match axis {
                0 => (vec![1], vec![2]),
                1 => (vec![0], vec![2]),
                _ => (vec![0], vec![1]),
            };
            let (h, w) = (dims[r[0]], dims[c[0]]);
            let mut pixels = Vec::with_capacity(h * w);
            for i in 0..h {
                for j in 0..w {
                    let mut idx = [0usize; 3];
                    idx[axis] = index;
                    idx[r[0]] = i;
                    idx[c[0]] = j;
                    let flat = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
                    pixels.push(gray_level(v.samples()[flat].as_f64() as f32));
                }
            }
            Slice { label: format!("{axis}:{index}"), width: w, height: h, pixels }
        })
        .collect())
}

/// Output paths for exported slices: a single slice keeps `out`, several
/// get the label appended to the stem.
pub fn slice_paths(out: &Path, slices: &[Slice]) -> Vec<PathBuf> {
    if slices.len() == 1 {
        return vec![out.to_path_buf()];
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "slice".into());
    slices
        .iter()
        .map(|s| out.with_file_name(format!("{stem}_axis{}.pgm", s.label.replace(':', "_"))))
        .collect()
}
