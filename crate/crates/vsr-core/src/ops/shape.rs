//! Shape manipulation: reshape, transpose, slicing, concatenation, row
//! gathering and the relative-position shift used by attention.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{numel, strides_of, Tensor};

impl Tape {
    /// Same data, new shape.  Element count must match.
    pub fn reshape(&self, x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
        if numel(new_shape) != x.len() {
            return Err(Error::shape(alloc::format!(
                "reshape: {:?} ({} elems) to {:?} ({} elems)",
                x.shape(),
                x.len(),
                new_shape,
                numel(new_shape)
            )));
        }
        let y = Tensor::build(new_shape.to_vec(), x.to_vec(), x.precision());
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i];
                    }
                });
            });
        }
        Ok(y)
    }

    /// Permute axes.  `perm` must be a permutation of `0..rank`.
    pub fn transpose(&self, x: &Tensor, perm: &[usize]) -> Result<Tensor> {
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(alloc::format!(
                "transpose: {perm:?} is not a permutation for rank {rank}"
            )));
        }
        let in_shape = x.shape();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = strides_of(in_shape);
        let out_strides = strides_of(&out_shape);
        // in_offset stride for each output axis
        let axis_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = x.len();
        let mut out = vec![0.0f64; n];
        {
            let xd = x.data();
            for (o, slot) in out.iter_mut().enumerate() {
                let mut rem = o;
                let mut src = 0usize;
                for d in 0..rank {
                    let id = rem / out_strides[d];
                    rem %= out_strides[d];
                    src += id * axis_strides[d];
                }
                *slot = xd[src];
            }
        }
        let y = Tensor::build(out_shape.clone(), out, x.precision());
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for (o, &gv) in g.iter().enumerate() {
                        let mut rem = o;
                        let mut src = 0usize;
                        for d in 0..rank {
                            let id = rem / out_strides[d];
                            rem %= out_strides[d];
                            src += id * axis_strides[d];
                        }
                        gx[src] += gv;
                    }
                });
            });
        }
        Ok(y)
    }

    /// Contiguous range `[start, end)` along one axis.
    pub fn slice_axis(&self, x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = x.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape(alloc::format!(
                "slice_axis: [{start}, {end}) on axis {axis} of {shape:?}"
            )));
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        // View the tensor as [outer, axis, inner].
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let span = end - start;
        let mut out = vec![0.0f64; outer * span * inner];
        {
            let xd = x.data();
            for ou in 0..outer {
                let src_base = (ou * shape[axis] + start) * inner;
                let dst_base = ou * span * inner;
                out[dst_base..dst_base + span * inner]
                    .copy_from_slice(&xd[src_base..src_base + span * inner]);
            }
        }
        let y = Tensor::build(out_shape, out, x.precision());
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            let axis_len = shape[axis];
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for ou in 0..outer {
                        let src_base = (ou * axis_len + start) * inner;
                        let dst_base = ou * span * inner;
                        for i in 0..span * inner {
                            gx[src_base + i] += g[dst_base + i];
                        }
                    }
                });
            });
        }
        Ok(y)
    }

    /// Concatenate tensors along one axis.  All other axes must agree.
    pub fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = xs.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(alloc::format!("concat: axis {axis} out of range")));
        }
        let mut out_shape = first.shape().to_vec();
        let mut total = 0usize;
        for x in xs {
            if x.rank() != rank {
                return Err(Error::shape("concat: rank mismatch"));
            }
            for d in 0..rank {
                if d != axis && x.shape()[d] != out_shape[d] {
                    return Err(Error::shape(alloc::format!(
                        "concat: shapes {:?} vs {:?} differ off-axis",
                        first.shape(),
                        x.shape()
                    )));
                }
            }
            total += x.shape()[axis];
        }
        out_shape[axis] = total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = vec![0.0f64; numel(&out_shape)];
        let mut prec = first.precision();
        for x in &xs[1..] {
            prec = prec.combine(x.precision());
        }
        {
            let mut offset = 0usize;
            for x in xs {
                let span = x.shape()[axis];
                let xd = x.data();
                for ou in 0..outer {
                    let dst = (ou * total + offset) * inner;
                    let src = ou * span * inner;
                    out[dst..dst + span * inner].copy_from_slice(&xd[src..src + span * inner]);
                }
                offset += span;
            }
        }
        prec.quantize_all(&mut out);
        let y = Tensor::build(out_shape, out, prec);
        let involved = xs.iter().any(|x| x.wants_grad());
        if self.is_recording() && involved {
            let parts: Vec<Tensor> = xs.iter().map(|x| (*x).clone()).collect();
            let yc = y.clone();
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let mut offset = 0usize;
                for x in &parts {
                    let span = x.shape()[axis];
                    if x.wants_grad() {
                        x.accum_grad(|gx| {
                            for ou in 0..outer {
                                let src = (ou * total + offset) * inner;
                                let dst = ou * span * inner;
                                for i in 0..span * inner {
                                    gx[dst + i] += g[src + i];
                                }
                            }
                        });
                    }
                    offset += span;
                }
            });
        }
        Ok(y)
    }

    /// Gather rows of a `[V, D]` table by index: result is `[ids.len(), D]`.
    /// Backward scatter-adds into the gathered rows, so repeated ids sum.
    pub fn gather_rows(&self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        if table.rank() != 2 {
            return Err(Error::shape("gather_rows: table must be [V, D]"));
        }
        let (v, d) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(alloc::format!("gather_rows: id {bad} out of range {v}")));
        }
        let mut out = vec![0.0f64; ids.len() * d];
        {
            let td = table.data();
            for (r, &id) in ids.iter().enumerate() {
                out[r * d..(r + 1) * d].copy_from_slice(&td[id * d..(id + 1) * d]);
            }
        }
        let y = Tensor::build(vec![ids.len(), d], out, table.precision());
        if self.is_recording() && table.wants_grad() {
            let (tc, yc) = (table.clone(), y.clone());
            let ids: Vec<usize> = ids.to_vec();
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                tc.accum_grad(|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                });
            });
        }
        Ok(y)
    }

    /// Turn per-offset relative scores into per-pair scores.
    ///
    /// Input is `[.., T, W]` with `W = 2*clip + 1`, holding for each query
    /// position `i` a score per clamped relative offset.  Output is
    /// `[.., T, T]` with `out[.., i, j] = in[.., i, clamp(j - i) + clip]`.
    pub fn rel_shift(&self, x: &Tensor, clip: usize) -> Result<Tensor> {
        let rank = x.rank();
        if rank < 2 {
            return Err(Error::shape("rel_shift: needs at least [T, W]"));
        }
        let w = x.shape()[rank - 1];
        let t = x.shape()[rank - 2];
        if w != 2 * clip + 1 {
            return Err(Error::shape(alloc::format!(
                "rel_shift: last axis {w} does not match clip {clip}"
            )));
        }
        let batch: usize = x.shape()[..rank - 2].iter().product();
        let mut out_shape = x.shape().to_vec();
        out_shape[rank - 1] = t;
        let clip_i = clip as isize;
        let mut out = vec![0.0f64; batch * t * t];
        {
            let xd = x.data();
            for n in 0..batch {
                for i in 0..t {
                    let src = (n * t + i) * w;
                    let dst = (n * t + i) * t;
                    for j in 0..t {
                        let off = (j as isize - i as isize).clamp(-clip_i, clip_i) + clip_i;
                        out[dst + j] = xd[src + off as usize];
                    }
                }
            }
        }
        let y = Tensor::build(out_shape, out, x.precision());
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for n in 0..batch {
                        for i in 0..t {
                            let src = (n * t + i) * w;
                            let dst = (n * t + i) * t;
                            for j in 0..t {
                                let off =
                                    (j as isize - i as isize).clamp(-clip_i, clip_i) + clip_i;
                                gx[src + off as usize] += g[dst + j];
                            }
                        }
                    }
                });
            });
        }
        Ok(y)
    }
}
