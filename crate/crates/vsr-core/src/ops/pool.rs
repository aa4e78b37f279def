//! Pooling over trailing spatial axes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{strides_of, Tensor};

impl Tape {
    /// Max pooling over 1 to 3 spatial axes of `[B, C, spatial..]`.
    /// Padding positions never win the max (they act as minus infinity).
    /// Backward routes the gradient to the first maximal element.
    pub fn max_pool(
        &self,
        x: &Tensor,
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
    ) -> Result<Tensor> {
        let sdims = x.rank().saturating_sub(2);
        if !(1..=3).contains(&sdims)
            || kernel.len() != sdims
            || stride.len() != sdims
            || padding.len() != sdims
        {
            return Err(Error::shape(alloc::format!(
                "max_pool: input {:?} with kernel {kernel:?} stride {stride:?} padding {padding:?}",
                x.shape()
            )));
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(Error::config("max_pool: zero stride"));
        }
        for d in 0..sdims {
            if padding[d] >= kernel[d] {
                return Err(Error::config("max_pool: padding must be smaller than kernel"));
            }
        }
        let (batch, ch) = (x.shape()[0], x.shape()[1]);
        let spatial = &x.shape()[2..];
        let mut out_spatial = Vec::with_capacity(sdims);
        for d in 0..sdims {
            let padded = spatial[d] + 2 * padding[d];
            if padded < kernel[d] {
                return Err(Error::shape("max_pool: axis shorter than kernel"));
            }
            out_spatial.push((padded - kernel[d]) / stride[d] + 1);
        }
        let in_str = strides_of(spatial);
        let out_str = strides_of(&out_spatial);
        let in_total: usize = spatial.iter().product();
        let out_total: usize = out_spatial.iter().product();
        let ksize: usize = kernel.iter().product();
        let k_str = strides_of(kernel);

        let mut out = vec![0.0f64; batch * ch * out_total];
        let mut argmax = vec![0u32; batch * ch * out_total];
        {
            let xd = x.data();
            for bc in 0..batch * ch {
                let src_base = bc * in_total;
                let dst_base = bc * out_total;
                for o in 0..out_total {
                    let mut rem = o;
                    let mut start = [0isize; 3];
                    for d in 0..sdims {
                        let c = rem / out_str[d];
                        rem %= out_str[d];
                        start[d] = (c * stride[d]) as isize - padding[d] as isize;
                    }
                    let mut best = f64::NEG_INFINITY;
                    let mut best_off = usize::MAX;
                    for kf in 0..ksize {
                        let mut krem = kf;
                        let mut off = 0isize;
                        let mut ok = true;
                        for d in 0..sdims {
                            let kc = (krem / k_str[d]) as isize;
                            krem %= k_str[d];
                            let ic = start[d] + kc;
                            if ic < 0 || ic >= spatial[d] as isize {
                                ok = false;
                                break;
                            }
                            off += ic * in_str[d] as isize;
                        }
                        if !ok {
                            continue;
                        }
                        let v = xd[src_base + off as usize];
                        if best_off == usize::MAX || v > best {
                            best = v;
                            best_off = off as usize;
                        }
                    }
                    debug_assert!(best_off != usize::MAX, "empty pooling window");
                    out[dst_base + o] = best;
                    argmax[dst_base + o] = best_off as u32;
                }
            }
        }
        let prec = x.precision();
        prec.quantize_all(&mut out);
        let mut shape = vec![batch, ch];
        shape.extend_from_slice(&out_spatial);
        let y = Tensor::build(shape, out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for bc in 0..batch * ch {
                        let src_base = bc * in_total;
                        let dst_base = bc * out_total;
                        for o in 0..out_total {
                            gx[src_base + argmax[dst_base + o] as usize] += g[dst_base + o];
                        }
                    }
                });
            });
        }
        Ok(y)
    }

    /// Average pooling along the last axis of `[B, C, T]`.  Each window is
    /// averaged over its in-bounds elements only, so windows that hang over
    /// the padded edge keep an unbiased scale.
    pub fn avg_pool1d(
        &self,
        x: &Tensor,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::shape("avg_pool1d: input must be [B, C, T]"));
        }
        if stride == 0 || kernel == 0 {
            return Err(Error::config("avg_pool1d: zero kernel or stride"));
        }
        if padding >= kernel {
            return Err(Error::config("avg_pool1d: padding must be smaller than kernel"));
        }
        let (batch, ch, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let padded = t + 2 * padding;
        if padded < kernel {
            return Err(Error::shape("avg_pool1d: axis shorter than kernel"));
        }
        let out_t = (padded - kernel) / stride + 1;
        let mut out = vec![0.0f64; batch * ch * out_t];
        {
            let xd = x.data();
            for bc in 0..batch * ch {
                let src = bc * t;
                let dst = bc * out_t;
                for o in 0..out_t {
                    let start = (o * stride) as isize - padding as isize;
                    let lo = start.max(0) as usize;
                    let hi = ((start + kernel as isize).min(t as isize)) as usize;
                    let mut s = 0.0;
                    for i in lo..hi {
                        s += xd[src + i];
                    }
                    out[dst + o] = s / (hi - lo) as f64;
                }
            }
        }
        let prec = x.precision();
        prec.quantize_all(&mut out);
        let y = Tensor::build(vec![batch, ch, out_t], out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for bc in 0..batch * ch {
                        let src = bc * t;
                        let dst = bc * out_t;
                        for o in 0..out_t {
                            let start = (o * stride) as isize - padding as isize;
                            let lo = start.max(0) as usize;
                            let hi = ((start + kernel as isize).min(t as isize)) as usize;
                            let gv = g[dst + o] / (hi - lo) as f64;
                            for i in lo..hi {
                                gx[src + i] += gv;
                            }
                        }
                    }
                });
            });
        }
        Ok(y)
    }
}
