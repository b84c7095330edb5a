//! Two-level group convolution toolkit.
//!
//! A group convolution computes its `N` channel groups independently, which
//! parallelizes perfectly but cuts all intergroup data flow. This crate
//! implements the two-level variant: a coarse path compresses each group to a
//! single representative channel, mixes the `N` representatives with a full
//! 1x1 convolution, and adds the result back to the group convolution output.
//! The coarse path restores intergroup communication at `O(N)` cost and keeps
//! the parameter layout fully shardable across `N` workers.
//!
//! Modules:
//! - [`tensor`]: dense `C x H x W` tensors and the two convolution primitives.
//! - [`block_jacobi`]: block-diagonal approximation of dense operators, used
//!   as an algebraic oracle for the convolutional instances.
//! - [`conv`]: the operator family (standard, group, prototype and final
//!   two-level convolutions, channel shuffle).
//! - [`grad`]: hand-derived reverse-mode gradients and a finite-difference
//!   checker.
//! - [`sim`]: simulated `N`-worker execution with message-trace accounting.
//! - [`arch`]: architecture descriptors and parameter accounting.
//! - [`train`]: SGD training of small networks built from the operator family.
//! - [`checks`]: named invariant suites shared by tests and the CLI.
//!
//! Index-ordered loops are deliberate throughout the numeric kernels: the
//! accumulation order is part of the bit-reproducibility contract.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod arch;
pub mod block_jacobi;
pub mod checks;
pub mod conv;
pub mod error;
pub mod grad;
pub mod matrix;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use tensor::{ConvKernel, Tensor};
