//! The group convolution operator family.
//!
//! With `n` input channels, `m` output channels, and `N` groups (a common
//! divisor of both), a group convolution applies one `d x d` convolution per
//! group and nothing couples the groups. The two-level variant adds a coarse
//! path: each group is compressed to one representative channel by a
//! `d0 x d0` convolution (`coarse_restrict`), the `N` representatives are
//! mixed back to all `m` output channels by per-group 1x1 matrices
//! (`coarse_combined_apply`), and the result is added to the group
//! convolution output. A prototype form factors the coarse mixing through an
//! `N -> N` 1x1 stage followed by a per-group scalar distribution; it is
//! strictly subsumed by the combined form (see [`subsume_prototype`]).
//!
//! Channel-to-group assignment is contiguous: group `k` owns channels
//! `[k*n/N, (k+1)*n/N)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::tensor::{channel_concat, channel_slice, conv1x1, conv2d, ConvKernel, Tensor};

pub mod io;

/// Channel/group configuration: `n` input channels, `m` output channels,
/// `groups` groups, local kernel size `d`, coarse restriction kernel size
/// `d0` (defaults to `d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpec {
    pub n: usize,
    pub m: usize,
    pub groups: usize,
    pub d: usize,
    pub d0: usize,
}

impl GroupSpec {
    pub fn new(n: usize, m: usize, groups: usize, d: usize) -> Result<Self> {
        Self::with_d0(n, m, groups, d, d)
    }

    pub fn with_d0(n: usize, m: usize, groups: usize, d: usize, d0: usize) -> Result<Self> {
        if groups == 0 || n == 0 || m == 0 {
            return Err(Error::config("group spec dimensions must be positive"));
        }
        if n % groups != 0 || m % groups != 0 {
            return Err(Error::config(format!(
                "groups {groups} must divide both input channels {n} and output channels {m}"
            )));
        }
        if d % 2 == 0 || d0 % 2 == 0 {
            return Err(Error::config(format!("kernel sizes d={d}, d0={d0} must be odd")));
        }
        Ok(GroupSpec { n, m, groups, d, d0 })
    }

    pub fn in_per_group(&self) -> usize {
        self.n / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.m / self.groups
    }

    pub fn in_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.in_per_group()..(k + 1) * self.in_per_group()
    }

    pub fn out_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.out_per_group()..(k + 1) * self.out_per_group()
    }
}

/// Full parameter set of a two-level group convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelParams {
    /// Per-group local kernels, each `(m/N) x (n/N) x d x d`.
    pub local: Vec<ConvKernel>,
    /// Per-group coarse restriction kernels, each `1 x (n/N) x d0 x d0`.
    pub coarse_restrict: Vec<ConvKernel>,
    /// Per-group coarse mixing matrices `S_k`, each `(m/N) x N`.
    pub coarse_mix: Vec<DenseMatrix>,
}

impl TwoLevelParams {
    /// [`he_init`](Self::he_init) from a bare seed.
    pub fn seeded(spec: &GroupSpec, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Self::he_init(spec, &mut rng)
    }

    /// Fan-in scaled normal init for all three parts. The local kernels are
    /// drawn first, in group order, so a group convolution initialized from
    /// the same seed gets identical local kernels.
    pub fn he_init<R: Rng>(spec: &GroupSpec, rng: &mut R) -> Result<Self> {
        let mut params = Self::he_init_zero_mix(spec, rng)?;
        let std = (2.0 / spec.groups as f64).sqrt();
        for s in &mut params.coarse_mix {
            for w in s.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = std * z;
            }
        }
        Ok(params)
    }

    /// Local and restriction kernels get fan-in scaled normal init; the
    /// mixing matrices start at zero, so the operator coincides with the
    /// group convolution until the mixing weights move.
    pub fn he_init_zero_mix<R: Rng>(spec: &GroupSpec, rng: &mut R) -> Result<Self> {
        let local = group_kernels_he(spec, rng)?;
        let mut coarse_restrict = Vec::with_capacity(spec.groups);
        for _ in 0..spec.groups {
            coarse_restrict.push(ConvKernel::he_normal(1, spec.in_per_group(), spec.d0, rng)?);
        }
        let coarse_mix = vec![DenseMatrix::zeros(spec.out_per_group(), spec.groups); spec.groups];
        Ok(TwoLevelParams { local, coarse_restrict, coarse_mix })
    }

    /// Wrap plain group convolution kernels with an all-zero coarse part.
    /// [`two_level`] with these parameters is bit-identical to
    /// [`group_conv`] with `local`.
    pub fn zero_coarse(spec: &GroupSpec, local: Vec<ConvKernel>) -> Result<Self> {
        let coarse_restrict: Result<Vec<_>> = (0..spec.groups)
            .map(|_| ConvKernel::zeros(1, spec.in_per_group(), spec.d0))
            .collect();
        let params = TwoLevelParams {
            local,
            coarse_restrict: coarse_restrict?,
            coarse_mix: vec![DenseMatrix::zeros(spec.out_per_group(), spec.groups); spec.groups],
        };
        params.validate(spec)?;
        Ok(params)
    }

    pub fn validate(&self, spec: &GroupSpec) -> Result<()> {
        if self.local.len() != spec.groups
            || self.coarse_restrict.len() != spec.groups
            || self.coarse_mix.len() != spec.groups
        {
            return Err(Error::config(format!(
                "parameter set has {}/{}/{} groups, spec wants {}",
                self.local.len(),
                self.coarse_restrict.len(),
                self.coarse_mix.len(),
                spec.groups
            )));
        }
        for (k, kern) in self.local.iter().enumerate() {
            if kern.out_channels() != spec.out_per_group()
                || kern.in_channels() != spec.in_per_group()
                || kern.size() != spec.d
            {
                return Err(Error::config(format!("local kernel {k} has wrong shape")));
            }
        }
        for (k, kern) in self.coarse_restrict.iter().enumerate() {
            if kern.out_channels() != 1
                || kern.in_channels() != spec.in_per_group()
                || kern.size() != spec.d0
            {
                return Err(Error::config(format!("coarse restriction kernel {k} has wrong shape")));
            }
        }
        for (k, s) in self.coarse_mix.iter().enumerate() {
            if s.rows() != spec.out_per_group() || s.cols() != spec.groups {
                return Err(Error::config(format!("coarse mixing matrix {k} has wrong shape")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.local.iter().map(ConvKernel::param_count).sum::<usize>()
            + self.coarse_restrict.iter().map(ConvKernel::param_count).sum::<usize>()
            + self.coarse_mix.iter().map(|s| s.data().len()).sum::<usize>()
    }
}

/// Per-group He-initialized kernels for a plain group convolution.
pub fn group_kernels_he<R: Rng>(spec: &GroupSpec, rng: &mut R) -> Result<Vec<ConvKernel>> {
    (0..spec.groups)
        .map(|_| ConvKernel::he_normal(spec.out_per_group(), spec.in_per_group(), spec.d, rng))
        .collect()
}

/// Parameters of the prototype coarse path: an `N x N` mixing of the
/// representative channels followed by per-group scalar distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoCoarseParams {
    /// `N x N` coarse-to-coarse 1x1 mixing.
    pub a0: DenseMatrix,
    /// Per group: the `m/N` weights distributing that group's coarse channel.
    pub distribute: Vec<Vec<f64>>,
}

impl ProtoCoarseParams {
    pub fn he_init<R: Rng>(spec: &GroupSpec, rng: &mut R) -> Self {
        let std = (2.0 / spec.groups as f64).sqrt();
        let a0 = DenseMatrix::from_fn(spec.groups, spec.groups, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        });
        let distribute = (0..spec.groups)
            .map(|_| {
                (0..spec.out_per_group())
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        std * z
                    })
                    .collect()
            })
            .collect();
        ProtoCoarseParams { a0, distribute }
    }

    pub fn validate(&self, spec: &GroupSpec) -> Result<()> {
        if self.a0.rows() != spec.groups || self.a0.cols() != spec.groups {
            return Err(Error::config("prototype a0 must be N x N"));
        }
        if self.distribute.len() != spec.groups
            || self.distribute.iter().any(|w| w.len() != spec.out_per_group())
        {
            return Err(Error::config("prototype distribution weights have wrong shape"));
        }
        Ok(())
    }
}

fn check_input(x: &Tensor, channels: usize, what: &str) -> Result<()> {
    if x.channels() != channels {
        return Err(Error::config(format!(
            "{what}: input has {} channels, expected {channels}",
            x.channels()
        )));
    }
    Ok(())
}

/// Standard (full) convolution; the baseline the grouped variants
/// approximate. Alias for [`conv2d`].
pub fn standard_conv(x: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    conv2d(x, kernel)
}

/// Group convolution: group `k` of the output is the convolution of group
/// `k` of the input with `local[k]`; no cross-group terms.
pub fn group_conv(x: &Tensor, spec: &GroupSpec, local: &[ConvKernel]) -> Result<Tensor> {
    check_input(x, spec.n, "group_conv")?;
    if local.len() != spec.groups {
        return Err(Error::config(format!(
            "group_conv: {} kernels for {} groups",
            local.len(),
            spec.groups
        )));
    }
    let mut parts = Vec::with_capacity(spec.groups);
    for (k, kern) in local.iter().enumerate() {
        if kern.out_channels() != spec.out_per_group()
            || kern.in_channels() != spec.in_per_group()
            || kern.size() != spec.d
        {
            return Err(Error::config(format!("group_conv: kernel {k} has wrong shape")));
        }
        let xk = channel_slice(x, spec.in_range(k))?;
        parts.push(conv2d(&xk, kern)?);
    }
    channel_concat(&parts)
}

/// Coarse restriction: channel `k` of the output is the single-channel
/// convolution of input group `k` with `kernels[k]`.
pub fn coarse_restrict(x: &Tensor, spec: &GroupSpec, kernels: &[ConvKernel]) -> Result<Tensor> {
    check_input(x, spec.n, "coarse_restrict")?;
    if kernels.len() != spec.groups {
        return Err(Error::config(format!(
            "coarse_restrict: {} kernels for {} groups",
            kernels.len(),
            spec.groups
        )));
    }
    let mut parts = Vec::with_capacity(spec.groups);
    for (k, kern) in kernels.iter().enumerate() {
        if kern.out_channels() != 1 || kern.in_channels() != spec.in_per_group() {
            return Err(Error::config(format!("coarse_restrict: kernel {k} has wrong shape")));
        }
        let xk = channel_slice(x, spec.in_range(k))?;
        parts.push(conv2d(&xk, kern)?);
    }
    channel_concat(&parts)
}

/// Prototype coarse application: mix the `N` coarse channels with `a0`,
/// then distribute channel `k` of the result over output group `k` with the
/// scalar weights `distribute[k]`.
pub fn coarse_proto_apply(
    x0: &Tensor,
    spec: &GroupSpec,
    proto: &ProtoCoarseParams,
) -> Result<Tensor> {
    check_input(x0, spec.groups, "coarse_proto_apply")?;
    proto.validate(spec)?;
    let y0 = conv1x1(x0, &proto.a0)?;
    let mut parts = Vec::with_capacity(spec.groups);
    for (k, weights) in proto.distribute.iter().enumerate() {
        let yk = channel_slice(&y0, k..k + 1)?;
        let w = DenseMatrix::from_vec(spec.out_per_group(), 1, weights.clone())?;
        parts.push(conv1x1(&yk, &w)?);
    }
    channel_concat(&parts)
}

/// Combined coarse application: output group `k` is `conv1x1(x0, mix[k])`,
/// so every output channel may draw on all `N` coarse channels. This is the
/// only place intergroup information flows.
pub fn coarse_combined_apply(
    x0: &Tensor,
    spec: &GroupSpec,
    mix: &[DenseMatrix],
) -> Result<Tensor> {
    check_input(x0, spec.groups, "coarse_combined_apply")?;
    if mix.len() != spec.groups {
        return Err(Error::config(format!(
            "coarse_combined_apply: {} matrices for {} groups",
            mix.len(),
            spec.groups
        )));
    }
    let mut parts = Vec::with_capacity(spec.groups);
    for (k, s) in mix.iter().enumerate() {
        if s.rows() != spec.out_per_group() || s.cols() != spec.groups {
            return Err(Error::config(format!(
                "coarse_combined_apply: matrix {k} has wrong shape"
            )));
        }
        parts.push(conv1x1(x0, s)?);
    }
    channel_concat(&parts)
}

/// Express the prototype coarse path in combined form:
/// `mix[k][i][j] = distribute[k][i] * a0[k][j]`. The combined application
/// with these matrices reproduces the prototype application for all inputs;
/// the converse fails, since these blocks have rank at most one.
pub fn subsume_prototype(spec: &GroupSpec, proto: &ProtoCoarseParams) -> Result<Vec<DenseMatrix>> {
    proto.validate(spec)?;
    let mut mix = Vec::with_capacity(spec.groups);
    for (k, weights) in proto.distribute.iter().enumerate() {
        mix.push(DenseMatrix::from_fn(spec.out_per_group(), spec.groups, |i, j| {
            weights[i] * proto.a0.get(k, j)
        }));
    }
    Ok(mix)
}

/// Prototype two-level group convolution: group convolution plus the
/// prototype coarse correction.
pub fn two_level_proto(
    x: &Tensor,
    spec: &GroupSpec,
    local: &[ConvKernel],
    restrict_kernels: &[ConvKernel],
    proto: &ProtoCoarseParams,
) -> Result<Tensor> {
    let group = group_conv(x, spec, local)?;
    let x0 = coarse_restrict(x, spec, restrict_kernels)?;
    let coarse = coarse_proto_apply(&x0, spec, proto)?;
    group.add(&coarse)
}

/// Two-level group convolution: group convolution plus the combined coarse
/// correction, summed elementwise in that fixed order.
pub fn two_level(x: &Tensor, spec: &GroupSpec, params: &TwoLevelParams) -> Result<Tensor> {
    params.validate(spec)?;
    let group = group_conv(x, spec, &params.local)?;
    let x0 = coarse_restrict(x, spec, &params.coarse_restrict)?;
    let coarse = coarse_combined_apply(&x0, spec, &params.coarse_mix)?;
    group.add(&coarse)
}

/// Deterministic transpose shuffle: viewing the `c` channels as an
/// `N x (c/N)` grid, emit them in transposed order. `channel_shuffle` with
/// `c/N` undoes `channel_shuffle` with `N`.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let c = x.channels();
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(format!(
            "channel_shuffle: {groups} groups must divide {c} channels"
        )));
    }
    let per = c / groups;
    let mut parts = Vec::with_capacity(c);
    for j in 0..per {
        for k in 0..groups {
            parts.push(channel_slice(x, k * per + j..k * per + j + 1)?);
        }
    }
    channel_concat(&parts)
}

/// Inverse of [`channel_shuffle`] with the same group count.
pub fn channel_shuffle_inverse(x: &Tensor, groups: usize) -> Result<Tensor> {
    let c = x.channels();
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(format!(
            "channel_shuffle_inverse: {groups} groups must divide {c} channels"
        )));
    }
    channel_shuffle(x, c / groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_rel_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn spec(n: usize, m: usize, groups: usize, d: usize) -> GroupSpec {
        GroupSpec::new(n, m, groups, d).unwrap()
    }

    #[test]
    fn group_spec_validates() {
        assert!(GroupSpec::new(6, 4, 3, 3).is_err()); // 3 does not divide 4
        assert!(GroupSpec::new(4, 4, 2, 2).is_err()); // even kernel
        assert!(GroupSpec::with_d0(4, 4, 2, 3, 4).is_err()); // even d0
        let s = spec(8, 12, 4, 3);
        assert_eq!(s.in_per_group(), 2);
        assert_eq!(s.out_per_group(), 3);
        assert_eq!(s.d0, 3);
    }

    #[test]
    fn single_group_is_standard_conv() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let x = Tensor::standard_normal(4, 3, 3, &mut rng);
        let k = ConvKernel::he_normal(4, 4, 3, &mut rng).unwrap();
        let s = spec(4, 4, 1, 3);
        let gc = group_conv(&x, &s, std::slice::from_ref(&k)).unwrap();
        assert_eq!(gc, standard_conv(&x, &k).unwrap());
    }

    #[test]
    fn identity_group_kernels_pass_input_through() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Tensor::standard_normal(2, 3, 3, &mut rng);
        let s = spec(2, 2, 2, 3);
        let kernels = vec![ConvKernel::identity_delta(1, 3).unwrap(); 2];
        assert_eq!(group_conv(&x, &s, &kernels).unwrap(), x);
    }

    #[test]
    fn group_conv_matches_block_zeroed_standard_conv() {
        // Assemble a full kernel whose off-diagonal group blocks are zero;
        // the standard convolution with it must match the group convolution.
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let s = spec(4, 4, 2, 3);
        let kernels: Vec<ConvKernel> = (0..2)
            .map(|_| ConvKernel::he_normal(2, 2, 3, &mut rng).unwrap())
            .collect();
        let full = ConvKernel::from_fn(4, 4, 3, |o, i, u, v| {
            let (ko, ki) = (o / 2, i / 2);
            if ko == ki {
                kernels[ko].get(o % 2, i % 2, u, v)
            } else {
                0.0
            }
        })
        .unwrap();
        let x = Tensor::standard_normal(4, 3, 3, &mut rng);
        let gc = group_conv(&x, &s, &kernels).unwrap();
        let sc = standard_conv(&x, &full).unwrap();
        assert!(max_rel_diff(&gc, &sc) <= 1e-12);
    }

    #[test]
    fn group_locality() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let s = spec(4, 4, 2, 3);
        let kernels: Vec<ConvKernel> = (0..2)
            .map(|_| ConvKernel::he_normal(2, 2, 3, &mut rng).unwrap())
            .collect();
        let x = Tensor::standard_normal(4, 4, 4, &mut rng);
        let mut x2 = x.clone();
        x2.set(0, 1, 1, x2.get(0, 1, 1) + 1.0); // perturb group 0
        let y = group_conv(&x, &s, &kernels).unwrap();
        let y2 = group_conv(&x2, &s, &kernels).unwrap();
        for c in 2..4 {
            for p in 0..16 {
                assert_eq!(y.channel(c)[p], y2.channel(c)[p]);
            }
        }
    }

    #[test]
    fn coarse_restrict_of_zero_is_zero_and_group_local() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let s = spec(4, 4, 2, 3);
        let kernels: Vec<ConvKernel> =
            (0..2).map(|_| ConvKernel::he_normal(1, 2, 3, &mut rng).unwrap()).collect();

        let zero = Tensor::zeros(4, 3, 3);
        let r = coarse_restrict(&zero, &s, &kernels).unwrap();
        assert_eq!(r, Tensor::zeros(2, 3, 3));

        let x = Tensor::standard_normal(4, 3, 3, &mut rng);
        let mut x2 = x.clone();
        x2.set(1, 0, 0, 5.0); // channel 1 lives in group 0
        let r1 = coarse_restrict(&x, &s, &kernels).unwrap();
        let r2 = coarse_restrict(&x2, &s, &kernels).unwrap();
        assert_eq!(r1.channel(1), r2.channel(1));
        assert_ne!(r1.channel(0), r2.channel(0));
    }

    #[test]
    fn coarse_restrict_with_unit_1x1_kernels_sums_group_channels() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let s = GroupSpec::with_d0(4, 4, 2, 3, 1).unwrap();
        let kernels: Vec<ConvKernel> =
            (0..2).map(|_| ConvKernel::from_fn(1, 2, 1, |_, _, _, _| 1.0).unwrap()).collect();
        let x = Tensor::standard_normal(4, 3, 3, &mut rng);
        let r = coarse_restrict(&x, &s, &kernels).unwrap();
        for k in 0..2 {
            for y in 0..3 {
                for xx in 0..3 {
                    let want = x.get(2 * k, y, xx) + x.get(2 * k + 1, y, xx);
                    assert!((r.get(k, y, xx) - want).abs() <= 1e-15 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn proto_identity_distributes_coarse_channels() {
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let s = spec(4, 4, 2, 3);
        let x0 = Tensor::standard_normal(2, 3, 3, &mut rng);
        let proto = ProtoCoarseParams {
            a0: DenseMatrix::identity(2),
            distribute: vec![vec![1.0; 2]; 2],
        };
        let y = coarse_proto_apply(&x0, &s, &proto).unwrap();
        for k in 0..2 {
            for o in 0..2 {
                assert_eq!(y.channel(2 * k + o), x0.channel(k));
            }
        }

        let zero_proto = ProtoCoarseParams {
            a0: DenseMatrix::zeros(2, 2),
            distribute: vec![vec![1.0; 2]; 2],
        };
        let z = coarse_proto_apply(&x0, &s, &zero_proto).unwrap();
        assert_eq!(z, Tensor::zeros(4, 3, 3));
    }

    #[test]
    fn proto_matches_two_stage_composition() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let s = spec(8, 4, 2, 3);
        let proto = ProtoCoarseParams::he_init(&s, &mut rng);
        let x0 = Tensor::standard_normal(2, 3, 3, &mut rng);
        let y = coarse_proto_apply(&x0, &s, &proto).unwrap();

        // Oracle: the explicit two-stage 1x1 composition as one stacked matrix.
        let y0 = conv1x1(&x0, &proto.a0).unwrap();
        let stacked = DenseMatrix::from_fn(4, 2, |row, j| {
            let (k, i) = (row / 2, row % 2);
            if j == k {
                proto.distribute[k][i]
            } else {
                0.0
            }
        });
        let want = conv1x1(&y0, &stacked).unwrap();
        assert!(max_rel_diff(&y, &want) <= 1e-12);
    }

    #[test]
    fn combined_apply_selection_matrices() {
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        let s = spec(4, 4, 2, 3);
        let x0 = Tensor::standard_normal(2, 3, 3, &mut rng);

        let zero = vec![DenseMatrix::zeros(2, 2); 2];
        assert_eq!(
            coarse_combined_apply(&x0, &s, &zero).unwrap(),
            Tensor::zeros(4, 3, 3)
        );

        // Group k selects coarse channel 1-k for its first output channel.
        let mix: Vec<DenseMatrix> = (0..2)
            .map(|k| DenseMatrix::from_fn(2, 2, |i, j| if i == 0 && j == 1 - k { 1.0 } else { 0.0 }))
            .collect();
        let y = coarse_combined_apply(&x0, &s, &mix).unwrap();
        assert_eq!(y.channel(0), x0.channel(1));
        assert_eq!(y.channel(2), x0.channel(0));
        assert!(y.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combined_apply_matches_stacked_matrix() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let s = spec(8, 12, 4, 3);
        let mix: Vec<DenseMatrix> = (0..4)
            .map(|_| {
                DenseMatrix::from_fn(3, 4, |_, _| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    z
                })
            })
            .collect();
        let x0 = Tensor::standard_normal(4, 3, 3, &mut rng);
        let y = coarse_combined_apply(&x0, &s, &mix).unwrap();
        let stacked = DenseMatrix::from_fn(12, 4, |row, j| mix[row / 3].get(row % 3, j));
        let want = conv1x1(&x0, &stacked).unwrap();
        assert!(max_rel_diff(&y, &want) <= 1e-12);
    }

    #[test]
    fn subsumption_formula_and_identity() {
        let s = spec(4, 4, 2, 3);
        let proto = ProtoCoarseParams {
            a0: DenseMatrix::identity(2),
            distribute: vec![vec![1.0; 2]; 2],
        };
        let mix = subsume_prototype(&s, &proto).unwrap();
        // Column k all ones, other column zero.
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(mix[k].get(i, j), if j == k { 1.0 } else { 0.0 });
                }
            }
        }

        let zero_proto = ProtoCoarseParams {
            a0: DenseMatrix::zeros(2, 2),
            distribute: vec![vec![1.0; 2]; 2],
        };
        for s_k in subsume_prototype(&s, &zero_proto).unwrap() {
            assert!(s_k.data().iter().all(|&v| v == 0.0));
        }

        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let s = spec(8, 12, 4, 3);
        for _ in 0..20 {
            let proto = ProtoCoarseParams::he_init(&s, &mut rng);
            let mix = subsume_prototype(&s, &proto).unwrap();
            let x0 = Tensor::standard_normal(4, 4, 4, &mut rng);
            let via_combined = coarse_combined_apply(&x0, &s, &mix).unwrap();
            let via_proto = coarse_proto_apply(&x0, &s, &proto).unwrap();
            assert!(max_rel_diff(&via_combined, &via_proto) <= 1e-12);
        }
    }

    #[test]
    fn two_level_proto_reduces_to_group_conv_when_a0_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let s = spec(4, 4, 2, 3);
        let local = group_kernels_he(&s, &mut rng).unwrap();
        let restrict: Vec<ConvKernel> =
            (0..2).map(|_| ConvKernel::he_normal(1, 2, 3, &mut rng).unwrap()).collect();
        let mut proto = ProtoCoarseParams::he_init(&s, &mut rng);
        proto.a0 = DenseMatrix::zeros(2, 2);
        let x = Tensor::standard_normal(4, 4, 4, &mut rng);
        let y = two_level_proto(&x, &s, &local, &restrict, &proto).unwrap();
        assert_eq!(y, group_conv(&x, &s, &local).unwrap());
    }

    #[test]
    fn two_level_proto_equals_two_level_after_subsumption() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let s = spec(8, 12, 4, 3);
        let local = group_kernels_he(&s, &mut rng).unwrap();
        let restrict: Vec<ConvKernel> =
            (0..4).map(|_| ConvKernel::he_normal(1, 2, 3, &mut rng).unwrap()).collect();
        let proto = ProtoCoarseParams::he_init(&s, &mut rng);
        let params = TwoLevelParams {
            local: local.clone(),
            coarse_restrict: restrict.clone(),
            coarse_mix: subsume_prototype(&s, &proto).unwrap(),
        };
        let x = Tensor::standard_normal(8, 4, 4, &mut rng);
        let via_proto = two_level_proto(&x, &s, &local, &restrict, &proto).unwrap();
        let via_final = two_level(&x, &s, &params).unwrap();
        assert!(max_rel_diff(&via_proto, &via_final) <= 1e-12);
    }

    #[test]
    fn two_level_reductions() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);

        // Zero coarse part: bit-identical to the group convolution.
        let s = spec(8, 12, 4, 3);
        let local = group_kernels_he(&s, &mut rng).unwrap();
        let params = TwoLevelParams::zero_coarse(&s, local.clone()).unwrap();
        let x = Tensor::standard_normal(8, 4, 4, &mut rng);
        assert_eq!(
            two_level(&x, &s, &params).unwrap(),
            group_conv(&x, &s, &local).unwrap()
        );

        // Single group with zero coarse part: bit-identical to standard conv.
        let s1 = spec(4, 4, 1, 3);
        let k = ConvKernel::he_normal(4, 4, 3, &mut rng).unwrap();
        let params = TwoLevelParams::zero_coarse(&s1, vec![k.clone()]).unwrap();
        let x = Tensor::standard_normal(4, 3, 3, &mut rng);
        assert_eq!(two_level(&x, &s1, &params).unwrap(), standard_conv(&x, &k).unwrap());
    }

    #[test]
    fn two_level_is_sum_of_its_parts() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let s = spec(8, 12, 4, 3);
        let params = TwoLevelParams::he_init(&s, &mut rng).unwrap();
        let x = Tensor::standard_normal(8, 5, 5, &mut rng);
        let group = group_conv(&x, &s, &params.local).unwrap();
        let x0 = coarse_restrict(&x, &s, &params.coarse_restrict).unwrap();
        let coarse = coarse_combined_apply(&x0, &s, &params.coarse_mix).unwrap();
        assert_eq!(two_level(&x, &s, &params).unwrap(), group.add(&coarse).unwrap());
    }

    #[test]
    fn two_level_couples_all_groups() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let s = spec(8, 8, 4, 3);
        let params = TwoLevelParams::he_init(&s, &mut rng).unwrap();
        let x = Tensor::standard_normal(8, 4, 4, &mut rng);
        let mut x2 = x.clone();
        x2.set(0, 2, 2, x2.get(0, 2, 2) + 1.0); // perturb one channel of group 0
        let y = two_level(&x, &s, &params).unwrap();
        let y2 = two_level(&x2, &s, &params).unwrap();
        for k in 0..4 {
            let differs = s.out_range(k).any(|c| y.channel(c) != y2.channel(c));
            assert!(differs, "output group {k} did not react to an input perturbation");
        }
    }

    #[test]
    fn shuffle_transpose_order() {
        let x = Tensor::from_fn(4, 1, 1, |c, _, _| c as f64);
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);

        let mut rng = ChaCha20Rng::seed_from_u64(26);
        let t = Tensor::standard_normal(6, 2, 2, &mut rng);
        assert_eq!(channel_shuffle(&t, 1).unwrap(), t);
        let fwd = channel_shuffle(&t, 3).unwrap();
        assert_eq!(channel_shuffle_inverse(&fwd, 3).unwrap(), t);
        assert!(channel_shuffle(&t, 4).is_err());
    }
}
