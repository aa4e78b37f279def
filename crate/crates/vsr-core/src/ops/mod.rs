//! Differentiable tensor operations, implemented as methods on [`crate::Tape`].
//!
//! Each op computes its result eagerly and, when the tape is recording and an
//! operand carries history, pushes one backward step.  Backward steps read the
//! output gradient and accumulate into operand gradients; an output that never
//! received a gradient short-circuits to a no-op, so unrelated subgraphs cost
//! nothing during backward.

pub mod conv;
pub mod dropout;
pub mod elementwise;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod reduce;
pub mod shape;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::fmt_shape;

/// Elementwise broadcasting plan for two operand shapes, NumPy rules:
/// trailing axes aligned, sizes must match or be one.
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    /// Strides aligned to `out_shape` rank; zero on broadcast axes.
    pub a_strides: Vec<usize>,
    pub b_strides: Vec<usize>,
}

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let rank = a.len().max(b.len());
    let mut out_shape = vec![0usize; rank];
    let mut a_ext = vec![1usize; rank];
    let mut b_ext = vec![1usize; rank];
    a_ext[rank - a.len()..].copy_from_slice(a);
    b_ext[rank - b.len()..].copy_from_slice(b);
    for d in 0..rank {
        out_shape[d] = match (a_ext[d], b_ext[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(alloc::format!(
                    "cannot broadcast {} with {}",
                    fmt_shape(a),
                    fmt_shape(b)
                )))
            }
        };
    }
    let full_a = crate::tensor::strides_of(&a_ext);
    let full_b = crate::tensor::strides_of(&b_ext);
    let a_strides = (0..rank).map(|d| if a_ext[d] == 1 { 0 } else { full_a[d] }).collect();
    let b_strides = (0..rank).map(|d| if b_ext[d] == 1 { 0 } else { full_b[d] }).collect();
    Ok(Broadcast { out_shape, a_strides, b_strides })
}

impl Broadcast {
    pub fn is_elementwise(&self) -> bool {
        !self.a_strides.contains(&0) && !self.b_strides.contains(&0)
    }

    /// Walk every output index in row-major order, yielding the operand
    /// offsets.  `f(out_flat, a_off, b_off)`.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out_shape.iter().product();
        if n == 0 {
            return;
        }
        let rank = self.out_shape.len();
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let mut idx = vec![0usize; rank];
        let mut ao = 0usize;
        let mut bo = 0usize;
        for out in 0..n {
            f(out, ao, bo);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ao += self.a_strides[d];
                bo += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                idx[d] = 0;
                ao -= self.a_strides[d] * self.out_shape[d];
                bo -= self.b_strides[d] * self.out_shape[d];
            }
        }
    }
}

/// Check that two shapes are identical, for ops that do not broadcast.
pub(crate) fn expect_same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(alloc::format!(
            "{op}: shapes {} and {} differ",
            fmt_shape(a),
            fmt_shape(b)
        )));
    }
    Ok(())
}
