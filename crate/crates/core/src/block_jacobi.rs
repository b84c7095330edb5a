//! Block Jacobi approximation of dense linear operators.
//!
//! A direct-sum decomposition splits a vector space into contiguous index
//! blocks. Restricting an operator to matching blocks of its domain and
//! codomain and summing the prolonged local operators yields the block
//! Jacobi approximation: the block-diagonal part of the operator. Group
//! convolution is exactly this construction applied to a standard
//! convolution, which is what the bridge checks in [`crate::checks`] verify;
//! everything here stays dense and oracle-scale.
//!
//! Only direct-sum (one-level) decompositions are implemented; the
//! overlapping generalization is realized solely through the concrete
//! two-level convolution in [`crate::conv`].

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Direct-sum decomposition of `{0..total_dim}` into `N` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    block_dims: Vec<usize>,
    offsets: Vec<usize>, // offsets[k] = start of block k; offsets[N] = total
}

impl Decomposition {
    pub fn new(block_dims: Vec<usize>) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(Error::config("decomposition needs at least one block"));
        }
        if block_dims.contains(&0) {
            return Err(Error::config("decomposition blocks must be nonempty"));
        }
        let mut offsets = Vec::with_capacity(block_dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in &block_dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Decomposition { block_dims, offsets })
    }

    /// `blocks` blocks of equal dimension `block_dim`.
    pub fn uniform(blocks: usize, block_dim: usize) -> Result<Self> {
        Self::new(vec![block_dim; blocks])
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn block_dim(&self, k: usize) -> usize {
        self.block_dims[k]
    }

    /// Index range of block `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    fn check_block(&self, k: usize) -> Result<()> {
        if k >= self.num_blocks() {
            return Err(Error::config(format!(
                "block index {} out of range for {} blocks",
                k,
                self.num_blocks()
            )));
        }
        Ok(())
    }
}

/// Extract block `k` of `x`.
pub fn restrict(x: &[f64], decomp: &Decomposition, k: usize) -> Result<Vec<f64>> {
    decomp.check_block(k)?;
    if x.len() != decomp.total_dim() {
        return Err(Error::config(format!(
            "restrict: vector length {} does not match decomposition dim {}",
            x.len(),
            decomp.total_dim()
        )));
    }
    Ok(x[decomp.range(k)].to_vec())
}

/// Embed a block-`k` vector into the full space, zero elsewhere.
pub fn prolong(xk: &[f64], decomp: &Decomposition, k: usize) -> Result<Vec<f64>> {
    decomp.check_block(k)?;
    if xk.len() != decomp.block_dim(k) {
        return Err(Error::config(format!(
            "prolong: vector length {} does not match block dim {}",
            xk.len(),
            decomp.block_dim(k)
        )));
    }
    let mut x = vec![0.0; decomp.total_dim()];
    x[decomp.range(k)].copy_from_slice(xk);
    Ok(x)
}

fn check_shapes(a: &DenseMatrix, row: &Decomposition, col: &Decomposition) -> Result<()> {
    if a.rows() != row.total_dim() || a.cols() != col.total_dim() {
        return Err(Error::config(format!(
            "operator is {}x{} but decompositions give {}x{}",
            a.rows(),
            a.cols(),
            row.total_dim(),
            col.total_dim()
        )));
    }
    Ok(())
}

/// The `(i, j)` block of `a` with respect to the two decompositions.
pub fn block_entry(
    a: &DenseMatrix,
    row: &Decomposition,
    col: &Decomposition,
    i: usize,
    j: usize,
) -> Result<DenseMatrix> {
    check_shapes(a, row, col)?;
    row.check_block(i)?;
    col.check_block(j)?;
    let (r0, c0) = (row.range(i).start, col.range(j).start);
    Ok(DenseMatrix::from_fn(row.block_dim(i), col.block_dim(j), |r, c| {
        a.get(r0 + r, c0 + c)
    }))
}

/// The local operator of block `k`: the `(k, k)` diagonal block.
pub fn local_operator(
    a: &DenseMatrix,
    row: &Decomposition,
    col: &Decomposition,
    k: usize,
) -> Result<DenseMatrix> {
    block_entry(a, row, col, k, k)
}

/// Block Jacobi approximation: keep the diagonal blocks, zero the rest.
/// Equals `a` when there is a single block.
pub fn jacobi_approx(
    a: &DenseMatrix,
    row: &Decomposition,
    col: &Decomposition,
) -> Result<DenseMatrix> {
    check_shapes(a, row, col)?;
    if row.num_blocks() != col.num_blocks() {
        return Err(Error::config(format!(
            "row decomposition has {} blocks, column decomposition {}",
            row.num_blocks(),
            col.num_blocks()
        )));
    }
    let mut m = DenseMatrix::zeros(a.rows(), a.cols());
    for k in 0..row.num_blocks() {
        let (rr, cr) = (row.range(k), col.range(k));
        for r in rr {
            for c in cr.clone() {
                m.set(r, c, a.get(r, c));
            }
        }
    }
    Ok(m)
}
