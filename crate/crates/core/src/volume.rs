//! Sampled amplitude grids and their per-pixel conditioning channels.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensorcore::Scalar;

/// Rank-2 `(H, W)` or rank-3 `(D, H, W)` grid of amplitudes. Axis 0 is the
/// depth/time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Vec<usize>,
    samples: Vec<T>,
    /// Sampling interval along axis 0, in milliseconds.
    pub dt_ms: f32,
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<()> {
    if !(dims.len() == 2 || dims.len() == 3) || dims.iter().any(|&d| d == 0) {
        return Err(shape_err(format!("volume dims {dims:?} must be rank 2 or 3 with positive extents")));
    }
    Ok(())
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: Vec<usize>, samples: Vec<T>, dt_ms: f32) -> Result<Self> {
        check_dims(&dims)?;
        let n: usize = dims.iter().product();
        if n != samples.len() {
            return Err(shape_err(format!("dims {dims:?} need {n} samples, got {}", samples.len())));
        }
        Ok(Self { dims, samples, dt_ms })
    }

    pub fn zeros(dims: &[usize], dt_ms: f32) -> Result<Self> {
        Self::new(dims.to_vec(), vec![T::zero(); dims.iter().product()], dt_ms)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Rescales so the largest magnitude is 1; an all-zero volume is unchanged.
    pub fn normalize_peak(&mut self) {
        let peak = self.max_abs();
        if peak > T::zero() {
            self.samples.iter_mut().for_each(|v| *v /= peak);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            dims: self.dims.clone(),
            samples: self.samples.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            dt_ms: self.dt_ms,
        }
    }

    pub fn same_dims(&self, other: &Volume<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err(format!("volume dims {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Copies the sub-grid starting at `offset` with extents `size`.
    pub fn crop(&self, offset: &[usize], size: &[usize]) -> Result<Self> {
        let data = crop_channels(&self.samples, 1, &self.dims, offset, size)?;
        Self::new(size.to_vec(), data, self.dt_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    /// One-hot lithology channels.
    Deterministic,
    /// A single salt-probability channel.
    Probabilistic,
}

/// Per-pixel conditioning channels, stored channel-major: `[C, spatial..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionField<T> {
    pub mode: ConditionMode,
    channels: usize,
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> ConditionField<T> {
    /// Builds a field and validates the mode's invariants.
    pub fn new(mode: ConditionMode, channels: usize, dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_dims(&dims)?;
        let spatial: usize = dims.iter().product();
        if channels == 0 || data.len() != channels * spatial {
            return Err(shape_err(format!(
                "condition with {channels} channels over {dims:?} needs {} values, got {}",
                channels * spatial,
                data.len()
            )));
        }
        let field = Self { mode, channels, dims, data };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        let spatial = self.spatial_len();
        match self.mode {
            ConditionMode::Deterministic => {
                for p in 0..spatial {
                    let mut ones = 0;
                    for c in 0..self.channels {
                        let v = self.data[c * spatial + p];
                        if v == T::one() {
                            ones += 1;
                        } else if v != T::zero() {
                            return Err(Error::Data(format!("pixel {p} channel {c} holds {v}, not 0 or 1")));
                        }
                    }
                    if ones != 1 {
                        return Err(Error::Data(format!("pixel {p} is not one-hot ({ones} active channels)")));
                    }
                }
            }
            ConditionMode::Probabilistic => {
                if self.channels != 1 {
                    return Err(Error::Data(format!(
                        "probabilistic condition must have 1 channel, got {}",
                        self.channels
                    )));
                }
                if let Some(p) = self.data.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
                    return Err(Error::Data(format!("probability {} at pixel {p} outside [0, 1]", self.data[p])));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spatial_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let s = self.spatial_len();
        &self.data[c * s..(c + 1) * s]
    }

    pub fn crop(&self, offset: &[usize], size: &[usize]) -> Result<Self> {
        let data = crop_channels(&self.data, self.channels, &self.dims, offset, size)?;
        Ok(Self { mode: self.mode, channels: self.channels, dims: size.to_vec(), data })
    }

    pub fn cast<U: Scalar>(&self) -> ConditionField<U> {
        ConditionField {
            mode: self.mode,
            channels: self.channels,
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Mutable access for callers that edit labels; invariants are the
    /// caller's responsibility until the next [`ConditionField::validate`].
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

fn crop_channels<T: Scalar>(
    data: &[T],
    channels: usize,
    dims: &[usize],
    offset: &[usize],
    size: &[usize],
) -> Result<Vec<T>> {
    if offset.len() != dims.len() || size.len() != dims.len() {
        return Err(shape_err(format!("crop {offset:?}+{size:?} of rank-{} grid", dims.len())));
    }
    if (0..dims.len()).any(|a| size[a] == 0 || offset[a] + size[a] > dims[a]) {
        return Err(shape_err(format!("crop {offset:?}+{size:?} exceeds {dims:?}")));
    }
    let d3 = pad3(dims);
    let o3 = pad3_off(offset);
    let s3 = pad3(size);
    let spatial: usize = dims.iter().product();
    let mut out = Vec::with_capacity(channels * s3.iter().product::<usize>());
    for c in 0..channels {
        let base = c * spatial;
        for z in 0..s3[0] {
            for y in 0..s3[1] {
                let start = base + ((o3[0] + z) * d3[1] + o3[1] + y) * d3[2] + o3[2];
                out.extend_from_slice(&data[start..start + s3[2]]);
            }
        }
    }
    Ok(out)
}

fn pad3(d: &[usize]) -> [usize; 3] {
    if d.len() == 2 {
        [1, d[0], d[1]]
    } else {
        [d[0], d[1], d[2]]
    }
}

fn pad3_off(d: &[usize]) -> [usize; 3] {
    if d.len() == 2 {
        [0, d[0], d[1]]
    } else {
        [d[0], d[1], d[2]]
    }
}
