//! Hand-derived reverse-mode gradients (vector-Jacobian products) for every
//! operator in [`crate::conv`], plus an independent finite-difference
//! checker.
//!
//! Every operator is linear in its input and linear in each parameter block
//! separately, so the input VJP is the transpose operator applied to the
//! upstream tensor and the weight VJPs are input/upstream correlations.
//! Reduction orders are fixed (group index ascending) so that the simulated
//! distributed backward in [`crate::sim`] reproduces these values bit for
//! bit.

use crate::conv::{coarse_restrict, GroupSpec, ProtoCoarseParams, TwoLevelParams};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::tensor::{channel_concat, channel_slice, conv1x1, ConvKernel, Tensor};

pub mod check;

/// Gradients of one operator application: an input-shaped tensor and a
/// parameter-shaped collection (flattened for the generic checker).
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub d_input: Tensor,
    pub d_params: Vec<f64>,
}

fn check_upstream(upstream: &Tensor, channels: usize, h: usize, w: usize, what: &str) -> Result<()> {
    if upstream.shape() != (channels, h, w) {
        return Err(Error::config(format!(
            "{what}: upstream shape {:?} does not match output shape {:?}",
            upstream.shape(),
            (channels, h, w)
        )));
    }
    Ok(())
}

/// Input gradient of [`crate::tensor::conv2d`]: the transpose operator,
/// evaluated as a convolution of the upstream tensor with the
/// spatially-flipped, channel-transposed kernel.
pub fn conv2d_vjp_input(kernel: &ConvKernel, upstream: &Tensor) -> Result<Tensor> {
    if upstream.channels() != kernel.out_channels() {
        return Err(Error::config("conv2d_vjp_input: upstream channels do not match kernel"));
    }
    let d = kernel.size();
    let flipped =
        ConvKernel::from_fn(kernel.in_channels(), kernel.out_channels(), d, |i, o, u, v| {
            kernel.get(o, i, d - 1 - u, d - 1 - v)
        })?;
    crate::tensor::conv2d(upstream, &flipped)
}

/// Weight gradient of [`crate::tensor::conv2d`]: correlation of the input
/// with the upstream tensor.
pub fn conv2d_vjp_kernel(input: &Tensor, upstream: &Tensor, size: usize) -> Result<ConvKernel> {
    let (h, w) = (input.height(), input.width());
    if upstream.height() != h || upstream.width() != w {
        return Err(Error::config("conv2d_vjp_kernel: spatial shape mismatch"));
    }
    let p = size / 2;
    let mut d_kernel = ConvKernel::zeros(upstream.channels(), input.channels(), size)?;
    let up = upstream.data();
    let in_data = input.data();
    for o in 0..upstream.channels() {
        for i in 0..input.channels() {
            for u in 0..size {
                // valid output rows: 0 <= y + u - p < h
                let y_lo = p.saturating_sub(u);
                let y_hi = h.min(h + p - u);
                for v in 0..size {
                    let x_lo = p.saturating_sub(v);
                    let x_hi = w.min(w + p - v);
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let iy = y + u - p;
                        let u_row = &up[(o * h + y) * w..(o * h + y) * w + w];
                        let x_row = &in_data[(i * h + iy) * w..(i * h + iy) * w + w];
                        let ur = &u_row[x_lo..x_hi];
                        let xr = &x_row[x_lo + v - p..x_hi + v - p];
                        for (uv, xv) in ur.iter().zip(xr) {
                            acc += uv * xv;
                        }
                    }
                    d_kernel.set(o, i, u, v, acc);
                }
            }
        }
    }
    Ok(d_kernel)
}

pub fn conv2d_vjp(
    input: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
) -> Result<(Tensor, ConvKernel)> {
    check_upstream(upstream, kernel.out_channels(), input.height(), input.width(), "conv2d_vjp")?;
    Ok((
        conv2d_vjp_input(kernel, upstream)?,
        conv2d_vjp_kernel(input, upstream, kernel.size())?,
    ))
}

/// Input gradient of [`conv1x1`]: the transposed matrix applied pixelwise.
pub fn conv1x1_vjp_input(weights: &DenseMatrix, upstream: &Tensor) -> Result<Tensor> {
    if upstream.channels() != weights.rows() {
        return Err(Error::config("conv1x1_vjp_input: upstream channels do not match weights"));
    }
    let (h, w) = (upstream.height(), upstream.width());
    let mut d_input = Tensor::zeros(weights.cols(), h, w);
    let hw = h * w;
    for j in 0..weights.cols() {
        let chan = &mut d_input.data_mut()[j * hw..(j + 1) * hw];
        for o in 0..weights.rows() {
            let woj = weights.get(o, j);
            for (acc, v) in chan.iter_mut().zip(upstream.channel(o)) {
                *acc += woj * v;
            }
        }
    }
    Ok(d_input)
}

/// Weight gradient of [`conv1x1`]: pixelwise outer products summed over the
/// image.
pub fn conv1x1_vjp_weights(input: &Tensor, upstream: &Tensor) -> Result<DenseMatrix> {
    if upstream.height() != input.height() || upstream.width() != input.width() {
        return Err(Error::config("conv1x1_vjp_weights: spatial shape mismatch"));
    }
    let mut d_w = DenseMatrix::zeros(upstream.channels(), input.channels());
    for o in 0..upstream.channels() {
        for j in 0..input.channels() {
            let mut acc = 0.0;
            for (u, i) in upstream.channel(o).iter().zip(input.channel(j)) {
                acc += u * i;
            }
            d_w.set(o, j, acc);
        }
    }
    Ok(d_w)
}

pub fn conv1x1_vjp(
    input: &Tensor,
    weights: &DenseMatrix,
    upstream: &Tensor,
) -> Result<(Tensor, DenseMatrix)> {
    if weights.cols() != input.channels() {
        return Err(Error::config("conv1x1_vjp: weight columns do not match input channels"));
    }
    check_upstream(upstream, weights.rows(), input.height(), input.width(), "conv1x1_vjp")?;
    Ok((conv1x1_vjp_input(weights, upstream)?, conv1x1_vjp_weights(input, upstream)?))
}

/// Gradients of a group convolution: per-group transpose convolutions for
/// the input, per-group kernel correlations for the weights.
pub fn group_conv_vjp(
    x: &Tensor,
    spec: &GroupSpec,
    local: &[ConvKernel],
    upstream: &Tensor,
) -> Result<(Tensor, Vec<ConvKernel>)> {
    check_upstream(upstream, spec.m, x.height(), x.width(), "group_conv_vjp")?;
    let mut d_parts = Vec::with_capacity(spec.groups);
    let mut d_kernels = Vec::with_capacity(spec.groups);
    for (k, kern) in local.iter().enumerate() {
        let xk = channel_slice(x, spec.in_range(k))?;
        let uk = channel_slice(upstream, spec.out_range(k))?;
        let (d_xk, d_kern) = conv2d_vjp(&xk, kern, &uk)?;
        d_parts.push(d_xk);
        d_kernels.push(d_kern);
    }
    Ok((channel_concat(&d_parts)?, d_kernels))
}

/// Gradients of the coarse restriction; `upstream` has `N` channels.
pub fn coarse_restrict_vjp(
    x: &Tensor,
    spec: &GroupSpec,
    kernels: &[ConvKernel],
    upstream: &Tensor,
) -> Result<(Tensor, Vec<ConvKernel>)> {
    check_upstream(upstream, spec.groups, x.height(), x.width(), "coarse_restrict_vjp")?;
    let mut d_parts = Vec::with_capacity(spec.groups);
    let mut d_kernels = Vec::with_capacity(spec.groups);
    for (k, kern) in kernels.iter().enumerate() {
        let xk = channel_slice(x, spec.in_range(k))?;
        let uk = channel_slice(upstream, k..k + 1)?;
        let (d_xk, d_kern) = conv2d_vjp(&xk, kern, &uk)?;
        d_parts.push(d_xk);
        d_kernels.push(d_kern);
    }
    Ok((channel_concat(&d_parts)?, d_kernels))
}

/// Gradients of the combined coarse application. The coarse-input gradient
/// is the sum of the per-group contributions `S_k^T u_k`, accumulated as
/// whole tensors in ascending group order; the distributed reduce-scatter in
/// [`crate::sim`] sums the same terms in the same order.
pub fn coarse_combined_vjp(
    x0: &Tensor,
    spec: &GroupSpec,
    mix: &[DenseMatrix],
    upstream: &Tensor,
) -> Result<(Tensor, Vec<DenseMatrix>)> {
    check_upstream(upstream, spec.m, x0.height(), x0.width(), "coarse_combined_vjp")?;
    let mut d_x0 = Tensor::zeros(spec.groups, x0.height(), x0.width());
    let mut d_mix = Vec::with_capacity(spec.groups);
    for (k, s) in mix.iter().enumerate() {
        let uk = channel_slice(upstream, spec.out_range(k))?;
        d_x0.add_assign(&conv1x1_vjp_input(s, &uk)?)?;
        d_mix.push(conv1x1_vjp_weights(x0, &uk)?);
    }
    Ok((d_x0, d_mix))
}

/// Gradients of the prototype coarse application.
pub struct ProtoGrad {
    pub d_x0: Tensor,
    pub d_a0: DenseMatrix,
    pub d_distribute: Vec<Vec<f64>>,
}

pub fn coarse_proto_vjp(
    x0: &Tensor,
    spec: &GroupSpec,
    proto: &ProtoCoarseParams,
    upstream: &Tensor,
) -> Result<ProtoGrad> {
    check_upstream(upstream, spec.m, x0.height(), x0.width(), "coarse_proto_vjp")?;
    proto.validate(spec)?;
    let y0 = conv1x1(x0, &proto.a0)?;

    // d_distribute[k][i] = <upstream group k channel i, y0 channel k>
    // d_y0[k] = sum_i w_k[i] * upstream[group k][i], pixelwise
    let mut d_distribute = Vec::with_capacity(spec.groups);
    let mut d_y0 = Tensor::zeros(spec.groups, x0.height(), x0.width());
    for (k, weights) in proto.distribute.iter().enumerate() {
        let uk = channel_slice(upstream, spec.out_range(k))?;
        let mut d_w = Vec::with_capacity(spec.out_per_group());
        for i in 0..spec.out_per_group() {
            let mut acc = 0.0;
            for (u, yv) in uk.channel(i).iter().zip(y0.channel(k)) {
                acc += u * yv;
            }
            d_w.push(acc);
        }
        d_distribute.push(d_w);
        for pix in 0..x0.height() * x0.width() {
            let mut acc = 0.0;
            for i in 0..spec.out_per_group() {
                acc += weights[i] * uk.channel(i)[pix];
            }
            d_y0.set(k, pix / x0.width(), pix % x0.width(), acc);
        }
    }
    let d_a0 = conv1x1_vjp_weights(x0, &d_y0)?;
    let d_x0 = conv1x1_vjp_input(&proto.a0, &d_y0)?;
    Ok(ProtoGrad { d_x0, d_a0, d_distribute })
}

/// Gradients of the two-level group convolution.
pub struct TwoLevelGrad {
    pub d_input: Tensor,
    pub d_params: TwoLevelParams,
}

/// The forward is a sum of two parameter-disjoint terms, so the local-kernel
/// gradients do not depend on the coarse parameters' values and vice versa.
/// `d_input` is the group-path gradient plus the coarse-path gradient, added
/// elementwise in that fixed order.
pub fn two_level_vjp(
    x: &Tensor,
    spec: &GroupSpec,
    params: &TwoLevelParams,
    upstream: &Tensor,
) -> Result<TwoLevelGrad> {
    params.validate(spec)?;
    check_upstream(upstream, spec.m, x.height(), x.width(), "two_level_vjp")?;
    let (d_x_group, d_local) = group_conv_vjp(x, spec, &params.local, upstream)?;
    let x0 = coarse_restrict(x, spec, &params.coarse_restrict)?;
    let (d_x0, d_mix) = coarse_combined_vjp(&x0, spec, &params.coarse_mix, upstream)?;
    let (d_x_coarse, d_restrict) = coarse_restrict_vjp(x, spec, &params.coarse_restrict, &d_x0)?;
    let d_input = d_x_group.add(&d_x_coarse)?;
    Ok(TwoLevelGrad {
        d_input,
        d_params: TwoLevelParams {
            local: d_local,
            coarse_restrict: d_restrict,
            coarse_mix: d_mix,
        },
    })
}

/// Gradients of the prototype two-level convolution; the forward is a sum
/// of two parameter-disjoint terms.
pub struct TwoLevelProtoGrad {
    pub d_input: Tensor,
    pub d_local: Vec<ConvKernel>,
    pub d_restrict: Vec<ConvKernel>,
    pub d_proto: ProtoGrad,
}

pub fn two_level_proto_vjp(
    x: &Tensor,
    spec: &GroupSpec,
    local: &[ConvKernel],
    restrict_kernels: &[ConvKernel],
    proto: &ProtoCoarseParams,
    upstream: &Tensor,
) -> Result<TwoLevelProtoGrad> {
    check_upstream(upstream, spec.m, x.height(), x.width(), "two_level_proto_vjp")?;
    let (d_x_group, d_local) = group_conv_vjp(x, spec, local, upstream)?;
    let x0 = coarse_restrict(x, spec, restrict_kernels)?;
    let d_proto = coarse_proto_vjp(&x0, spec, proto, upstream)?;
    let (d_x_coarse, d_restrict) = coarse_restrict_vjp(x, spec, restrict_kernels, &d_proto.d_x0)?;
    Ok(TwoLevelProtoGrad {
        d_input: d_x_group.add(&d_x_coarse)?,
        d_local,
        d_restrict,
        d_proto,
    })
}

/// The shuffle is a permutation, so its input gradient is the inverse
/// permutation of the upstream tensor.
pub fn channel_shuffle_vjp(upstream: &Tensor, groups: usize) -> Result<Tensor> {
    crate::conv::channel_shuffle_inverse(upstream, groups)
}
