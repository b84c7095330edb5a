//! Dense `C x H x W` tensors and the two convolution primitives every
//! operator in this crate is built from: a `d x d` same-padded
//! cross-correlation and a 1x1 channel mixing.
//!
//! Conventions, fixed once for the whole crate:
//! - cross-correlation (no kernel flip), stride 1, zero padding of width
//!   `(d-1)/2`, so spatial size is always preserved and `d` must be odd;
//! - no bias terms: every operator is purely linear;
//! - accumulation order inside a convolution is in-channel outer, kernel row,
//!   kernel col, so serial results are bit-reproducible.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// A `channels x height x width` tensor of `f64`, row-major in
/// (channel, row, col) order. Batches are handled as slices of tensors by the
/// callers that need them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::config(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Tensor { channels, height, width, data })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    t.set(c, y, x, f(c, y, x));
                }
            }
        }
        t
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Tensor { channels, height, width, data: vec![value; channels * height * width] }
    }

    /// [`standard_normal`](Self::standard_normal) from a bare seed.
    pub fn seeded_normal(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Self::standard_normal(channels, height, width, &mut rng)
    }

    /// Entries drawn i.i.d. from the standard normal distribution.
    pub fn standard_normal<R: Rng>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width).map(|_| rng.sample(StandardNormal)).collect();
        Tensor { channels, height, width, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// (channels, height, width)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_assign_at(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::config(format!(
                "tensor add: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { channels: self.channels, height: self.height, width: self.width, data })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::config("tensor add_assign: shape mismatch"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data.iter().map(|v| v * s).collect();
        Tensor { channels: self.channels, height: self.height, width: self.width, data }
    }

    /// Euclidean inner product of two same-shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::config("tensor dot: shape mismatch"));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

/// Weights of a `d x d` cross-correlation from `in_channels` to
/// `out_channels`, stored row-major as `[out][in][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    size: usize,
    weights: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::config(format!(
                "kernel size {size} must be odd for symmetric zero padding"
            )));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            size,
            weights: vec![0.0; out_channels * in_channels * size * size],
        })
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut k = Self::zeros(out_channels, in_channels, size)?;
        if weights.len() != k.weights.len() {
            return Err(Error::config(format!(
                "kernel data length {} does not match {}x{}x{}x{}",
                weights.len(),
                out_channels,
                in_channels,
                size,
                size
            )));
        }
        k.weights = weights;
        Ok(k)
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut k = Self::zeros(out_channels, in_channels, size)?;
        for o in 0..out_channels {
            for i in 0..in_channels {
                for u in 0..size {
                    for v in 0..size {
                        k.set(o, i, u, v, f(o, i, u, v));
                    }
                }
            }
        }
        Ok(k)
    }

    /// Identity map: a center-tap delta with identity channel mixing.
    /// Requires `out_channels == in_channels`.
    pub fn identity_delta(channels: usize, size: usize) -> Result<Self> {
        let c = size / 2;
        Self::from_fn(channels, channels, size, |o, i, u, v| {
            if o == i && u == c && v == c {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Fan-in scaled normal initialization: `N(0, 2 / (in_channels * d^2))`.
    pub fn he_normal<R: Rng>(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let std = (2.0 / (in_channels * size * size) as f64).sqrt();
        let mut k = Self::zeros(out_channels, in_channels, size)?;
        for w in k.weights.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
        Ok(k)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    fn index(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        ((o * self.in_channels + i) * self.size + u) * self.size + v
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, u: usize, v: usize) -> f64 {
        self.weights[self.index(o, i, u, v)]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, u: usize, v: usize, w: f64) {
        let idx = self.index(o, i, u, v);
        self.weights[idx] = w;
    }

    #[inline]
    pub fn add_assign_at(&mut self, o: usize, i: usize, u: usize, v: usize, w: f64) {
        let idx = self.index(o, i, u, v);
        self.weights[idx] += w;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Stack the rows of `top` above the rows of `bottom` (same in-channels
    /// and size) into one kernel.
    pub fn stack_rows(top: &ConvKernel, bottom: &ConvKernel) -> Result<ConvKernel> {
        if top.in_channels != bottom.in_channels || top.size != bottom.size {
            return Err(Error::config("stack_rows: incompatible kernels"));
        }
        let mut weights =
            Vec::with_capacity(top.weights.len() + bottom.weights.len());
        weights.extend_from_slice(&top.weights);
        weights.extend_from_slice(&bottom.weights);
        ConvKernel::from_vec(
            top.out_channels + bottom.out_channels,
            top.in_channels,
            top.size,
            weights,
        )
    }

    /// Split off the kernel rows `[0, at)` and `[at, out_channels)`.
    pub fn split_rows(&self, at: usize) -> Result<(ConvKernel, ConvKernel)> {
        if at > self.out_channels {
            return Err(Error::config("split_rows: row out of range"));
        }
        let per_row = self.in_channels * self.size * self.size;
        let top = ConvKernel::from_vec(
            at,
            self.in_channels,
            self.size,
            self.weights[..at * per_row].to_vec(),
        )?;
        let bottom = ConvKernel::from_vec(
            self.out_channels - at,
            self.in_channels,
            self.size,
            self.weights[at * per_row..].to_vec(),
        )?;
        Ok((top, bottom))
    }
}

/// Same-padded stride-1 cross-correlation.
///
/// `output[o][y][x] = sum_{i,u,v} kernel[o][i][u][v] * input[i][y+u-p][x+v-p]`
/// with `p = (d-1)/2` and out-of-range taps treated as zero.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    if kernel.in_channels() != input.channels() {
        return Err(Error::config(format!(
            "conv2d: kernel expects {} input channels, tensor has {}",
            kernel.in_channels(),
            input.channels()
        )));
    }
    let (n, h, w) = input.shape();
    let d = kernel.size();
    let p = d / 2;
    let mut out = Tensor::zeros(kernel.out_channels(), h, w);
    let in_data = input.data();
    let weights = kernel.weights();
    let hw = h * w;
    // Tap-ordered accumulation: for every output coordinate the terms still
    // arrive in (in-channel, kernel row, kernel col) order, but the inner
    // loop runs along contiguous rows.
    for o in 0..kernel.out_channels() {
        let out_chan = &mut out.data_mut()[o * hw..(o + 1) * hw];
        for i in 0..n {
            for u in 0..d {
                // valid output rows: 0 <= y + u - p < h
                let y_lo = p.saturating_sub(u);
                let y_hi = h.min(h + p - u);
                for v in 0..d {
                    let k = weights[((o * n + i) * d + u) * d + v];
                    let x_lo = p.saturating_sub(v);
                    let x_hi = w.min(w + p - v);
                    for y in y_lo..y_hi {
                        let iy = y + u - p;
                        let in_row = &in_data[(i * h + iy) * w..(i * h + iy) * w + w];
                        let out_row = &mut out_chan[y * w..y * w + w];
                        let src = &in_row[x_lo + v - p..x_hi + v - p];
                        let dst = &mut out_row[x_lo..x_hi];
                        for (acc, iv) in dst.iter_mut().zip(src) {
                            *acc += k * iv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pixelwise channel mixing: output channel `o` is
/// `sum_j weights[o][j] * input[j]`. Equivalent to `conv2d` with `d = 1`.
pub fn conv1x1(input: &Tensor, weights: &DenseMatrix) -> Result<Tensor> {
    if weights.cols() != input.channels() {
        return Err(Error::config(format!(
            "conv1x1: weight matrix has {} columns, tensor has {} channels",
            weights.cols(),
            input.channels()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let mut out = Tensor::zeros(weights.rows(), h, w);
    let hw = h * w;
    // Accumulate channel by channel; per output coordinate this is the same
    // ascending-j summation as a scalar loop.
    for o in 0..weights.rows() {
        let out_chan = &mut out.data_mut()[o * hw..(o + 1) * hw];
        for j in 0..input.channels() {
            let wij = weights.get(o, j);
            for (acc, v) in out_chan.iter_mut().zip(input.channel(j)) {
                *acc += wij * v;
            }
        }
    }
    Ok(out)
}

/// Copy out the channels in `range` (the 0/1 restriction operator).
pub fn channel_slice(input: &Tensor, range: Range<usize>) -> Result<Tensor> {
    if range.start > range.end || range.end > input.channels() {
        return Err(Error::config(format!(
            "channel_slice: range {}..{} out of bounds for {} channels",
            range.start,
            range.end,
            input.channels()
        )));
    }
    let hw = input.height() * input.width();
    let data = input.data()[range.start * hw..range.end * hw].to_vec();
    Tensor::from_vec(range.end - range.start, input.height(), input.width(), data)
}

/// Concatenate along the channel axis; all parts must share `H x W`.
pub fn channel_concat(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("channel_concat: no parts"))?;
    let (h, w) = (first.height(), first.width());
    let mut channels = 0;
    for p in parts {
        if p.height() != h || p.width() != w {
            return Err(Error::config(format!(
                "channel_concat: spatial size {}x{} does not match {}x{}",
                p.height(),
                p.width(),
                h,
                w
            )));
        }
        channels += p.channels();
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(channels, h, w, data)
}

/// Largest entrywise difference relative to the largest magnitude in `b`
/// (absolute difference when `b` is all zeros).
pub fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_rel_diff");
    let scale = b.max_abs();
    let denom = if scale > 0.0 { scale } else { 1.0 };
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs() / denom))
}

// --- binary serialization -------------------------------------------------
//
// Record layout, all little-endian: magic "T2LC", version u32, ndim u32,
// one u32 per dimension, then the payload as IEEE-754 f64 in storage order.

pub const MAGIC: &[u8; 4] = b"T2LC";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_record<W: Write>(w: &mut W, dims: &[u32], data: &[f64]) -> Result<()> {
    let expected: u64 = dims.iter().map(|&d| d as u64).product();
    if expected != data.len() as u64 {
        return Err(Error::Format(format!(
            "record dims {:?} expect {} values, got {}",
            dims,
            expected,
            data.len()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_record<R: Read>(r: &mut R) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut buf4)?;
    let ndim = u32::from_le_bytes(buf4) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut buf4)?;
        dims.push(u32::from_le_bytes(buf4));
    }
    let count: u64 = dims.iter().map(|&d| d as u64).product();
    let mut data = Vec::with_capacity(count as usize);
    let mut buf8 = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf8)?;
        data.push(f64::from_le_bytes(buf8));
    }
    Ok((dims, data))
}

impl Tensor {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dims = [self.channels as u32, self.height as u32, self.width as u32];
        write_record(w, &dims, &self.data)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        let (dims, data) = read_record(r)?;
        if dims.len() != 3 {
            return Err(Error::Format(format!("tensor record has {} dims, want 3", dims.len())));
        }
        Tensor::from_vec(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
    }
}

impl ConvKernel {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dims = [
            self.out_channels as u32,
            self.in_channels as u32,
            self.size as u32,
            self.size as u32,
        ];
        write_record(w, &dims, &self.weights)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ConvKernel> {
        let (dims, data) = read_record(r)?;
        if dims.len() != 4 || dims[2] != dims[3] {
            return Err(Error::Format(format!("bad kernel record dims {dims:?}")));
        }
        ConvKernel::from_vec(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
    }
}
