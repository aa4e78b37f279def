//! Reductions: full sums and means, and means over chosen axes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{strides_of, Tensor};

impl Tape {
    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let total: f64 = x.data().iter().sum();
        let prec = x.precision();
        let y = Tensor::build(vec![], vec![prec.quantize(total)], prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let g0 = g[0];
                xc.accum_grad(|gx| {
                    for v in gx.iter_mut() {
                        *v += g0;
                    }
                });
            });
        }
        Ok(y)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.len();
        if n == 0 {
            return Err(Error::shape("mean_all of empty tensor"));
        }
        let s = self.sum_all(x)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// Mean over the given axes; reduced axes are removed from the shape.
    /// Axes must be sorted and unique.
    pub fn mean_axes(&self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let shape = x.shape();
        for w in axes.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::shape("mean_axes: axes must be sorted and unique"));
            }
        }
        if let Some(&last) = axes.last() {
            if last >= shape.len() {
                return Err(Error::shape(alloc::format!(
                    "mean_axes: axis {last} out of range for shape {shape:?}"
                )));
            }
        }
        let reduced: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
        let out_shape: Vec<usize> = reduced.iter().map(|&d| shape[d]).collect();
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        if count == 0 {
            return Err(Error::shape("mean_axes over empty axes"));
        }
        let in_strides = strides_of(shape);
        let out_strides_for_in: Vec<usize> = {
            // Stride of each input axis in the output buffer (0 for reduced).
            let out_str = strides_of(&out_shape);
            let mut v = vec![0usize; shape.len()];
            for (oi, &d) in reduced.iter().enumerate() {
                v[d] = out_str[oi];
            }
            v
        };
        let n = x.len();
        let out_n: usize = out_shape.iter().product();
        let prec = x.precision();
        let mut out = vec![0.0f64; out_n];
        {
            let xd = x.data();
            for i in 0..n {
                let mut rem = i;
                let mut o = 0usize;
                for d in 0..shape.len() {
                    let id = rem / in_strides[d];
                    rem %= in_strides[d];
                    o += id * out_strides_for_in[d];
                }
                out[o] += xd[i];
            }
            let inv = 1.0 / count as f64;
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
        prec.quantize_all(&mut out);
        let y = Tensor::build(out_shape, out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            let in_strides = in_strides.clone();
            let out_map = out_strides_for_in.clone();
            let rank = shape.len();
            let inv = 1.0 / count as f64;
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for i in 0..gx.len() {
                        let mut rem = i;
                        let mut o = 0usize;
                        for d in 0..rank {
                            let id = rem / in_strides[d];
                            rem %= in_strides[d];
                            o += id * out_map[d];
                        }
                        gx[i] += g[o] * inv;
                    }
                });
            });
        }
        Ok(y)
    }
}
