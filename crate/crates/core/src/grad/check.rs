//! Finite-difference verification of the hand-derived gradients.
//!
//! For each operator a random instance (input plus parameters) is drawn from
//! a seed, the output is contracted with a random projection tensor, and the
//! analytic gradient of that scalar is compared coordinatewise against
//! central differences. All operators are linear in each scalar coordinate,
//! so the central difference has no truncation error; the residual is pure
//! floating-point noise.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::conv::{
    self, two_level, two_level_proto, GroupSpec, ProtoCoarseParams, TwoLevelParams,
};
use crate::error::{Error, Result};
use crate::grad;
use crate::matrix::DenseMatrix;
use crate::tensor::{conv1x1, conv2d, ConvKernel, Tensor};

/// Threshold the CLI and the verification suites hold gradients to.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Operators covered by the checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOp {
    Conv2d,
    Conv1x1,
    GroupConv,
    CoarseRestrict,
    CoarseProto,
    CoarseCombined,
    TwoLevelProto,
    TwoLevel,
    ChannelShuffle,
}

impl CheckOp {
    pub const ALL: [CheckOp; 9] = [
        CheckOp::Conv2d,
        CheckOp::Conv1x1,
        CheckOp::GroupConv,
        CheckOp::CoarseRestrict,
        CheckOp::CoarseProto,
        CheckOp::CoarseCombined,
        CheckOp::TwoLevelProto,
        CheckOp::TwoLevel,
        CheckOp::ChannelShuffle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckOp::Conv2d => "conv2d",
            CheckOp::Conv1x1 => "conv1x1",
            CheckOp::GroupConv => "group_conv",
            CheckOp::CoarseRestrict => "coarse_restrict",
            CheckOp::CoarseProto => "coarse_proto",
            CheckOp::CoarseCombined => "coarse_combined",
            CheckOp::TwoLevelProto => "two_level_proto",
            CheckOp::TwoLevel => "two_level",
            CheckOp::ChannelShuffle => "channel_shuffle",
        }
    }

    pub fn parse(s: &str) -> Result<CheckOp> {
        CheckOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = CheckOp::ALL.iter().map(|o| o.name()).collect();
                Error::config(format!("unknown op {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
enum CaseKind {
    Conv2d { kernel: ConvKernel },
    Conv1x1 { weights: DenseMatrix },
    GroupConv { spec: GroupSpec, local: Vec<ConvKernel> },
    CoarseRestrict { spec: GroupSpec, kernels: Vec<ConvKernel> },
    CoarseProto { spec: GroupSpec, proto: ProtoCoarseParams },
    CoarseCombined { spec: GroupSpec, mix: Vec<DenseMatrix> },
    TwoLevelProto {
        spec: GroupSpec,
        local: Vec<ConvKernel>,
        restrict: Vec<ConvKernel>,
        proto: ProtoCoarseParams,
    },
    TwoLevel { spec: GroupSpec, params: TwoLevelParams },
    ChannelShuffle { groups: usize },
}

/// A concrete operator instance: one input tensor plus one parameter set.
#[derive(Debug, Clone)]
pub struct Case {
    input: Tensor,
    kind: CaseKind,
}

// Battery shapes: the grouped operators run at n=8, m=12, N=4, H=W=5; the
// primitives at n=3, m=4.
const HW: usize = 5;

impl Case {
    pub fn build(op: CheckOp, seed: u64) -> Result<Case> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let spec = GroupSpec::new(8, 12, 4, 3)?;
        let kind = match op {
            CheckOp::Conv2d => CaseKind::Conv2d {
                kernel: ConvKernel::he_normal(4, 3, 3, &mut rng)?,
            },
            CheckOp::Conv1x1 => CaseKind::Conv1x1 {
                weights: DenseMatrix::from_fn(4, 3, |_, _| {
                    use rand::Rng;
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                }),
            },
            CheckOp::GroupConv => CaseKind::GroupConv {
                spec,
                local: conv::group_kernels_he(&spec, &mut rng)?,
            },
            CheckOp::CoarseRestrict => CaseKind::CoarseRestrict {
                spec,
                kernels: restrict_kernels(&spec, &mut rng)?,
            },
            CheckOp::CoarseProto => CaseKind::CoarseProto {
                spec,
                proto: ProtoCoarseParams::he_init(&spec, &mut rng),
            },
            CheckOp::CoarseCombined => CaseKind::CoarseCombined {
                spec,
                mix: TwoLevelParams::he_init(&spec, &mut rng)?.coarse_mix,
            },
            CheckOp::TwoLevelProto => CaseKind::TwoLevelProto {
                spec,
                local: conv::group_kernels_he(&spec, &mut rng)?,
                restrict: restrict_kernels(&spec, &mut rng)?,
                proto: ProtoCoarseParams::he_init(&spec, &mut rng),
            },
            CheckOp::TwoLevel => CaseKind::TwoLevel {
                spec,
                params: TwoLevelParams::he_init(&spec, &mut rng)?,
            },
            CheckOp::ChannelShuffle => CaseKind::ChannelShuffle { groups: 4 },
        };
        let in_channels = match &kind {
            CaseKind::Conv2d { .. } | CaseKind::Conv1x1 { .. } => 3,
            CaseKind::GroupConv { spec, .. }
            | CaseKind::CoarseRestrict { spec, .. }
            | CaseKind::TwoLevelProto { spec, .. }
            | CaseKind::TwoLevel { spec, .. } => spec.n,
            CaseKind::CoarseProto { spec, .. } | CaseKind::CoarseCombined { spec, .. } => {
                spec.groups
            }
            CaseKind::ChannelShuffle { .. } => 8,
        };
        let input = Tensor::standard_normal(in_channels, HW, HW, &mut rng);
        Ok(Case { input, kind })
    }

    pub fn forward(&self) -> Result<Tensor> {
        match &self.kind {
            CaseKind::Conv2d { kernel } => conv2d(&self.input, kernel),
            CaseKind::Conv1x1 { weights } => conv1x1(&self.input, weights),
            CaseKind::GroupConv { spec, local } => conv::group_conv(&self.input, spec, local),
            CaseKind::CoarseRestrict { spec, kernels } => {
                conv::coarse_restrict(&self.input, spec, kernels)
            }
            CaseKind::CoarseProto { spec, proto } => {
                conv::coarse_proto_apply(&self.input, spec, proto)
            }
            CaseKind::CoarseCombined { spec, mix } => {
                conv::coarse_combined_apply(&self.input, spec, mix)
            }
            CaseKind::TwoLevelProto { spec, local, restrict, proto } => {
                two_level_proto(&self.input, spec, local, restrict, proto)
            }
            CaseKind::TwoLevel { spec, params } => two_level(&self.input, spec, params),
            CaseKind::ChannelShuffle { groups } => conv::channel_shuffle(&self.input, *groups),
        }
    }

    /// Analytic gradients, with the parameter part flattened in the same
    /// order [`params_flat`](Self::params_flat) uses.
    pub fn vjp(&self, upstream: &Tensor) -> Result<grad::GradBundle> {
        let (d_input, d_params) = match &self.kind {
            CaseKind::Conv2d { kernel } => {
                let (d_x, d_k) = grad::conv2d_vjp(&self.input, kernel, upstream)?;
                (d_x, d_k.weights().to_vec())
            }
            CaseKind::Conv1x1 { weights } => {
                let (d_x, d_w) = grad::conv1x1_vjp(&self.input, weights, upstream)?;
                (d_x, d_w.data().to_vec())
            }
            CaseKind::GroupConv { spec, local } => {
                let (d_x, d_local) = grad::group_conv_vjp(&self.input, spec, local, upstream)?;
                (d_x, flatten_kernels(&d_local))
            }
            CaseKind::CoarseRestrict { spec, kernels } => {
                let (d_x, d_k) = grad::coarse_restrict_vjp(&self.input, spec, kernels, upstream)?;
                (d_x, flatten_kernels(&d_k))
            }
            CaseKind::CoarseProto { spec, proto } => {
                let g = grad::coarse_proto_vjp(&self.input, spec, proto, upstream)?;
                let mut flat = g.d_a0.data().to_vec();
                for w in &g.d_distribute {
                    flat.extend_from_slice(w);
                }
                (g.d_x0, flat)
            }
            CaseKind::CoarseCombined { spec, mix } => {
                let (d_x0, d_mix) = grad::coarse_combined_vjp(&self.input, spec, mix, upstream)?;
                (d_x0, flatten_matrices(&d_mix))
            }
            CaseKind::TwoLevelProto { spec, local, restrict, proto } => {
                let g = grad::two_level_proto_vjp(&self.input, spec, local, restrict, proto, upstream)?;
                let mut flat = flatten_kernels(&g.d_local);
                flat.extend(flatten_kernels(&g.d_restrict));
                flat.extend(g.d_proto.d_a0.data());
                for w in &g.d_proto.d_distribute {
                    flat.extend_from_slice(w);
                }
                (g.d_input, flat)
            }
            CaseKind::TwoLevel { spec, params } => {
                let g = grad::two_level_vjp(&self.input, spec, params, upstream)?;
                let mut flat = flatten_kernels(&g.d_params.local);
                flat.extend(flatten_kernels(&g.d_params.coarse_restrict));
                flat.extend(flatten_matrices(&g.d_params.coarse_mix));
                (g.d_input, flat)
            }
            CaseKind::ChannelShuffle { groups } => {
                (grad::channel_shuffle_vjp(upstream, *groups)?, Vec::new())
            }
        };
        Ok(grad::GradBundle { d_input, d_params })
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match &self.kind {
            CaseKind::Conv2d { kernel } => kernel.weights().to_vec(),
            CaseKind::Conv1x1 { weights } => weights.data().to_vec(),
            CaseKind::GroupConv { local, .. } => flatten_kernels(local),
            CaseKind::CoarseRestrict { kernels, .. } => flatten_kernels(kernels),
            CaseKind::CoarseProto { proto, .. } => {
                let mut flat = proto.a0.data().to_vec();
                for w in &proto.distribute {
                    flat.extend_from_slice(w);
                }
                flat
            }
            CaseKind::CoarseCombined { mix, .. } => flatten_matrices(mix),
            CaseKind::TwoLevelProto { local, restrict, proto, .. } => {
                let mut flat = flatten_kernels(local);
                flat.extend(flatten_kernels(restrict));
                flat.extend(proto.a0.data());
                for w in &proto.distribute {
                    flat.extend_from_slice(w);
                }
                flat
            }
            CaseKind::TwoLevel { params, .. } => {
                let mut flat = flatten_kernels(&params.local);
                flat.extend(flatten_kernels(&params.coarse_restrict));
                flat.extend(flatten_matrices(&params.coarse_mix));
                flat
            }
            CaseKind::ChannelShuffle { .. } => Vec::new(),
        }
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        match &mut self.kind {
            CaseKind::Conv2d { kernel } => {
                copy_into(kernel.weights_mut(), flat, &mut pos);
            }
            CaseKind::Conv1x1 { weights } => {
                copy_into(weights.data_mut(), flat, &mut pos);
            }
            CaseKind::GroupConv { local, .. } => unflatten_kernels(local, flat, &mut pos),
            CaseKind::CoarseRestrict { kernels, .. } => unflatten_kernels(kernels, flat, &mut pos),
            CaseKind::CoarseProto { proto, .. } => {
                copy_into(proto.a0.data_mut(), flat, &mut pos);
                for w in &mut proto.distribute {
                    copy_into(w, flat, &mut pos);
                }
            }
            CaseKind::CoarseCombined { mix, .. } => unflatten_matrices(mix, flat, &mut pos),
            CaseKind::TwoLevelProto { local, restrict, proto, .. } => {
                unflatten_kernels(local, flat, &mut pos);
                unflatten_kernels(restrict, flat, &mut pos);
                copy_into(proto.a0.data_mut(), flat, &mut pos);
                for w in &mut proto.distribute {
                    copy_into(w, flat, &mut pos);
                }
            }
            CaseKind::TwoLevel { params, .. } => {
                unflatten_kernels(&mut params.local, flat, &mut pos);
                unflatten_kernels(&mut params.coarse_restrict, flat, &mut pos);
                unflatten_matrices(&mut params.coarse_mix, flat, &mut pos);
            }
            CaseKind::ChannelShuffle { .. } => {}
        }
        debug_assert_eq!(pos, flat.len());
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn input_mut(&mut self) -> &mut Tensor {
        &mut self.input
    }
}

fn restrict_kernels<R: rand::Rng>(spec: &GroupSpec, rng: &mut R) -> Result<Vec<ConvKernel>> {
    (0..spec.groups)
        .map(|_| ConvKernel::he_normal(1, spec.in_per_group(), spec.d0, rng))
        .collect()
}

fn flatten_kernels(kernels: &[ConvKernel]) -> Vec<f64> {
    let mut flat = Vec::new();
    for k in kernels {
        flat.extend_from_slice(k.weights());
    }
    flat
}

fn copy_into(dst: &mut [f64], flat: &[f64], pos: &mut usize) {
    dst.copy_from_slice(&flat[*pos..*pos + dst.len()]);
    *pos += dst.len();
}

fn unflatten_kernels(kernels: &mut [ConvKernel], flat: &[f64], pos: &mut usize) {
    for k in kernels {
        copy_into(k.weights_mut(), flat, pos);
    }
}

fn flatten_matrices(mats: &[DenseMatrix]) -> Vec<f64> {
    let mut flat = Vec::new();
    for m in mats {
        flat.extend_from_slice(m.data());
    }
    flat
}

fn unflatten_matrices(mats: &mut [DenseMatrix], flat: &[f64], pos: &mut usize) {
    for m in mats {
        copy_into(m.data_mut(), flat, pos);
    }
}

/// Compare the analytic gradient of a random scalar projection of the
/// operator output against central differences with step `h`, over every
/// input entry and every parameter. Returns the maximum relative error,
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_diff_check(op: CheckOp, seed: u64, h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::config("finite difference step must be positive"));
    }
    let case = Case::build(op, seed)?;
    let out = case.forward()?;
    let mut proj_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let projection =
        Tensor::standard_normal(out.channels(), out.height(), out.width(), &mut proj_rng);

    let bundle = case.vjp(&projection)?;
    let mut analytic = bundle.d_input.data().to_vec();
    analytic.extend(&bundle.d_params);

    let scalar = |c: &Case| -> Result<f64> { c.forward()?.dot(&projection) };

    let n_input = case.input().data().len();
    let params = case.params_flat();
    let mut max_rel = 0.0f64;
    for idx in 0..n_input + params.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut c = case.clone();
            if idx < n_input {
                c.input_mut().data_mut()[idx] += delta;
            } else {
                let mut p = params.clone();
                p[idx - n_input] += delta;
                c.set_params_flat(&p);
            }
            scalar(&c)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let a = analytic[idx];
        if !numeric.is_finite() || !a.is_finite() {
            let place = if idx < n_input {
                format!("input entry {idx}")
            } else {
                format!("parameter {}", idx - n_input)
            };
            return Err(Error::NonFinite(format!(
                "{} gradient at {place} (analytic {a}, numeric {numeric})",
                op.name()
            )));
        }
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_default_shapes() {
        for op in CheckOp::ALL {
            let err = finite_diff_check(op, 1, DEFAULT_STEP).unwrap();
            assert!(
                err < GRAD_TOLERANCE,
                "{} gradient check failed: max rel err {err:.3e}",
                op.name()
            );
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!(CheckOp::parse("two_level").unwrap(), CheckOp::TwoLevel);
        assert!(CheckOp::parse("no_such_op").is_err());
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(finite_diff_check(CheckOp::Conv2d, 1, 0.0).is_err());
    }
}
