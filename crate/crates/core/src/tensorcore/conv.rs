//! Direct im2col convolution for rank-2 and rank-3 spatial inputs.
//!
//! Rank-2 inputs are handled as rank-3 with a unit leading spatial extent, so
//! one kernel serves both. Columns are built one output depth slice at a time,
//! which bounds scratch memory for volumetric kernels.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that stride 1 preserves spatial extents.
    Same,
    /// No padding.
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial rank of the caller's tensors (2 or 3).
    pub rank: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub pad: [usize; 3],
    pub stride: usize,
}

fn as3(dims: &[usize]) -> [usize; 3] {
    match dims.len() {
        2 => [1, dims[0], dims[1]],
        _ => [dims[0], dims[1], dims[2]],
    }
}

impl ConvGeom {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(Error::Parameter(format!("convolution stride must be >= 1, got {stride}")));
        }
        let rank = input_shape.len().saturating_sub(2);
        if !(rank == 2 || rank == 3) || kernel_shape.len() != input_shape.len() {
            return Err(shape_err(format!(
                "convolution input {input_shape:?} and kernel {kernel_shape:?} need matching spatial rank 2 or 3"
            )));
        }
        if kernel_shape[1] != input_shape[1] {
            return Err(shape_err(format!(
                "kernel {kernel_shape:?} expects {} input channels, input {input_shape:?} has {}",
                kernel_shape[1], input_shape[1]
            )));
        }
        let input = as3(&input_shape[2..]);
        let kernel = as3(&kernel_shape[2..]);
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            match padding {
                Padding::Same => {
                    pad[a] = (kernel[a] - 1) / 2;
                    output[a] = (input[a] - 1) / stride + 1;
                }
                Padding::Valid => {
                    if input[a] < kernel[a] {
                        return Err(shape_err(format!(
                            "valid convolution of input {input_shape:?} with kernel {kernel_shape:?}"
                        )));
                    }
                    output[a] = (input[a] - kernel[a]) / stride + 1;
                }
            }
        }
        // a unit leading axis is never strided
        if rank == 2 {
            output[0] = 1;
        }
        Ok(Self {
            batch: input_shape[0],
            in_channels: input_shape[1],
            out_channels: kernel_shape[0],
            rank,
            input,
            kernel,
            output,
            pad,
            stride,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.batch, self.out_channels];
        if self.rank == 3 {
            s.extend_from_slice(&self.output);
        } else {
            s.extend_from_slice(&self.output[1..]);
        }
        s
    }

    fn stride_along(&self, axis: usize) -> usize {
        if self.rank == 2 && axis == 0 {
            1
        } else {
            self.stride
        }
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn plane_out(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// Source index along `axis` for an output coordinate and kernel tap.
    #[inline]
    fn source(&self, axis: usize, out: usize, tap: usize) -> Option<usize> {
        let pos = (out * self.stride_along(axis) + tap) as isize - self.pad[axis] as isize;
        (pos >= 0 && (pos as usize) < self.input[axis]).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, x: &[T], od: usize, cols: &mut [T]) {
        let [_, kh_n, kw_n] = self.kernel;
        let [_, ih_n, iw_n] = self.input;
        let [_, oh_n, ow_n] = self.output;
        let plane = self.plane_out();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let xc = &x[ci * self.in_volume()..(ci + 1) * self.in_volume()];
            for kd in 0..self.kernel[0] {
                let id = self.source(0, od, kd);
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let dst = &mut cols[row * plane..(row + 1) * plane];
                        row += 1;
                        let Some(id) = id else {
                            dst.fill(T::zero());
                            continue;
                        };
                        let xd = &xc[id * ih_n * iw_n..(id + 1) * ih_n * iw_n];
                        for oh in 0..oh_n {
                            let seg = &mut dst[oh * ow_n..(oh + 1) * ow_n];
                            match self.source(1, oh, kh) {
                                None => seg.fill(T::zero()),
                                Some(ih) => {
                                    let xr = &xd[ih * iw_n..(ih + 1) * iw_n];
                                    for (ow, v) in seg.iter_mut().enumerate() {
                                        *v = match self.source(2, ow, kw) {
                                            Some(iw) => xr[iw],
                                            None => T::zero(),
                                        };
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], od: usize, dx: &mut [T]) {
        let [_, kh_n, kw_n] = self.kernel;
        let [_, ih_n, iw_n] = self.input;
        let [_, oh_n, ow_n] = self.output;
        let plane = self.plane_out();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let vol = self.in_volume();
            let xc = &mut dx[ci * vol..(ci + 1) * vol];
            for kd in 0..self.kernel[0] {
                let id = self.source(0, od, kd);
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let src = &cols[row * plane..(row + 1) * plane];
                        row += 1;
                        let Some(id) = id else { continue };
                        let xd = &mut xc[id * ih_n * iw_n..(id + 1) * ih_n * iw_n];
                        for oh in 0..oh_n {
                            let Some(ih) = self.source(1, oh, kh) else { continue };
                            let xr = &mut xd[ih * iw_n..(ih + 1) * iw_n];
                            for ow in 0..ow_n {
                                if let Some(iw) = self.source(2, ow, kw) {
                                    xr[iw] += src[oh * ow_n + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let rows = g.col_rows();
    let plane = g.plane_out();
    let out_vol = g.out_volume();
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_vol];
    let mut cols = vec![T::zero(); rows * plane];
    let mut tmp = vec![T::zero(); g.out_channels * plane];
    for n in 0..g.batch {
        let xn = &x[n * g.in_channels * g.in_volume()..(n + 1) * g.in_channels * g.in_volume()];
        for od in 0..g.output[0] {
            g.im2col(xn, od, &mut cols);
            T::gemm(false, false, g.out_channels, plane, rows, kernel, &cols, T::zero(), &mut tmp);
            for co in 0..g.out_channels {
                let b = bias.map_or(T::zero(), |b| b[co]);
                let base = (n * g.out_channels + co) * out_vol + od * plane;
                for (o, &t) in out[base..base + plane].iter_mut().zip(&tmp[co * plane..(co + 1) * plane]) {
                    *o = t + b;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Vec<T>,
}

pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    dout: &[T],
    need_input: bool,
    need_kernel: bool,
) -> ConvGrads<T> {
    let rows = g.col_rows();
    let plane = g.plane_out();
    let out_vol = g.out_volume();
    let in_block = g.in_channels * g.in_volume();
    let mut dx = need_input.then(|| vec![T::zero(); g.batch * in_block]);
    let mut dk = need_kernel.then(|| vec![T::zero(); kernel.len()]);
    let mut dbias = vec![T::zero(); g.out_channels];
    let mut cols = vec![T::zero(); rows * plane];
    let mut dslice = vec![T::zero(); g.out_channels * plane];

    for n in 0..g.batch {
        let xn = &x[n * in_block..(n + 1) * in_block];
        for od in 0..g.output[0] {
            for co in 0..g.out_channels {
                let base = (n * g.out_channels + co) * out_vol + od * plane;
                let src = &dout[base..base + plane];
                dslice[co * plane..(co + 1) * plane].copy_from_slice(src);
                dbias[co] += src.iter().copied().sum::<T>();
            }
            if let Some(dk) = dk.as_mut() {
                g.im2col(xn, od, &mut cols);
                T::gemm(false, true, g.out_channels, rows, plane, &dslice, &cols, T::one(), dk);
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(true, false, rows, plane, g.out_channels, kernel, &dslice, T::zero(), &mut cols);
                g.col2im(&cols, od, &mut dx[n * in_block..(n + 1) * in_block]);
            }
        }
    }
    ConvGrads { input: dx, kernel: dk, bias: dbias }
}
