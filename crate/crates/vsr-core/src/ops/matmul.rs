//! Batched matrix multiplication.
//!
//! Matrices occupy the trailing two axes; leading axes are batch dimensions
//! and broadcast against each other.  The `_nt` variant multiplies by the
//! transpose of the right operand without materializing it, which is what
//! attention scores and most backward passes want.
//!
//! Kernels accumulate with a fixed summation order, so results are
//! bit-identical run to run.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::broadcast_shapes;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// out[rows, cols] += a[rows, inner] * b[inner, cols]
pub(crate) fn mm_nn(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) {
    for i in 0..rows {
        let arow = &a[i * inner..(i + 1) * inner];
        let orow = &mut out[i * cols..(i + 1) * cols];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * cols..(kk + 1) * cols];
            for j in 0..cols {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[rows, cols] += a[rows, inner] * b[cols, inner]^T
pub(crate) fn mm_nt(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) {
    for i in 0..rows {
        let arow = &a[i * inner..(i + 1) * inner];
        let orow = &mut out[i * cols..(i + 1) * cols];
        for j in 0..cols {
            orow[j] += dot(arow, &b[j * inner..(j + 1) * inner]);
        }
    }
}

/// out[cols_a, cols_b] += a[rows, cols_a]^T * b[rows, cols_b]
pub(crate) fn mm_tn(
    out: &mut [f64],
    a: &[f64],
    b: &[f64],
    rows: usize,
    cols_a: usize,
    cols_b: usize,
) {
    for r in 0..rows {
        let arow = &a[r * cols_a..(r + 1) * cols_a];
        let brow = &b[r * cols_b..(r + 1) * cols_b];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * cols_b..(i + 1) * cols_b];
            for j in 0..cols_b {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Dot product with four fixed accumulators.  The split keeps the order
/// deterministic while letting the compiler vectorize.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < chunks {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < n {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

struct MatmulPlan {
    batch_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

fn plan(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<MatmulPlan> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::shape(alloc::format!(
            "matmul: operands must be at least rank 2, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ar, br) = (a.rank(), b.rank());
    let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
    let (bk, n) = if transpose_b {
        (b.shape()[br - 1], b.shape()[br - 2])
    } else {
        (b.shape()[br - 2], b.shape()[br - 1])
    };
    if k != bk {
        return Err(Error::shape(alloc::format!(
            "matmul: inner dims {k} vs {bk} (shapes {:?}, {:?}, transpose_b {transpose_b})",
            a.shape(),
            b.shape()
        )));
    }
    let bc = broadcast_shapes(&a.shape()[..ar - 2], &b.shape()[..br - 2])?;
    Ok(MatmulPlan {
        batch_shape: bc.out_shape,
        a_strides: bc.a_strides,
        b_strides: bc.b_strides,
        m,
        k,
        n,
    })
}

impl MatmulPlan {
    fn for_each_batch(&self, mut f: impl FnMut(usize, usize, usize)) {
        let bc = crate::ops::Broadcast {
            out_shape: self.batch_shape.clone(),
            a_strides: self.a_strides.clone(),
            b_strides: self.b_strides.clone(),
        };
        bc.for_each(&mut f);
    }
}

impl Tape {
    /// `a @ b` over the trailing two axes, batch axes broadcast.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.batched_mm(a, b, false)
    }

    /// `a @ b^T` over the trailing two axes, batch axes broadcast.
    pub fn matmul_nt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.batched_mm(a, b, true)
    }

    fn batched_mm(&self, a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
        let p = plan(a, b, transpose_b)?;
        let (m, k, n) = (p.m, p.k, p.n);
        let asz = m * k;
        let bsz = k * n;
        let ysz = m * n;
        let batch: usize = p.batch_shape.iter().product();
        let mut out_shape = p.batch_shape.clone();
        out_shape.push(m);
        out_shape.push(n);
        let prec = a.precision().combine(b.precision());
        let mut out = vec![0.0f64; batch * ysz];
        {
            let ad = a.data();
            let bd = b.data();
            p.for_each_batch(|ob, ao, bo| {
                let y = &mut out[ob * ysz..(ob + 1) * ysz];
                let am = &ad[ao * asz..(ao + 1) * asz];
                let bm = &bd[bo * bsz..(bo + 1) * bsz];
                if transpose_b {
                    mm_nt(y, am, bm, m, k, n);
                } else {
                    mm_nn(y, am, bm, m, k, n);
                }
            });
        }
        prec.quantize_all(&mut out);
        let y = Tensor::build(out_shape, out, prec);
        let involved = a.wants_grad() || b.wants_grad();
        if self.is_recording() && involved {
            let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let p = plan(&ac, &bc, transpose_b).expect("checked in forward");
                let ad = ac.data();
                let bd = bc.data();
                if ac.wants_grad() {
                    ac.accum_grad(|ga| {
                        p.for_each_batch(|ob, ao, bo| {
                            let gy = &g[ob * ysz..(ob + 1) * ysz];
                            let da = &mut ga[ao * asz..(ao + 1) * asz];
                            let bm = &bd[bo * bsz..(bo + 1) * bsz];
                            if transpose_b {
                                // y = a b^T  =>  da += gy * b
                                mm_nn(da, gy, bm, m, n, k);
                            } else {
                                // y = a b  =>  da += gy * b^T
                                mm_nt(da, gy, bm, m, n, k);
                            }
                        });
                    });
                }
                if bc.wants_grad() {
                    bc.accum_grad(|gb| {
                        p.for_each_batch(|ob, ao, bo| {
                            let gy = &g[ob * ysz..(ob + 1) * ysz];
                            let am = &ad[ao * asz..(ao + 1) * asz];
                            let db = &mut gb[bo * bsz..(bo + 1) * bsz];
                            if transpose_b {
                                // y = a b^T  =>  db += gy^T * a
                                mm_tn(db, gy, am, m, n, k);
                            } else {
                                // y = a b  =>  db += a^T * gy
                                mm_tn(db, am, gy, m, k, n);
                            }
                        });
                    });
                }
            });
        }
        Ok(y)
    }
}
