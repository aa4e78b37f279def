//! Softmax and normalization layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Result of a training-mode batch norm: the normalized output plus the
/// batch statistics the layer folds into its running estimates.
pub struct BatchNormOut {
    pub out: Tensor,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl Tape {
    /// Softmax over the last axis.
    pub fn softmax_last(&self, x: &Tensor) -> Result<Tensor> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax_last: scalar input"))?;
        if d == 0 {
            return Err(Error::shape("softmax_last: empty last axis"));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0f64; x.len()];
        {
            let xd = x.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let orow = &mut out[r * d..(r + 1) * d];
                let mut mx = row[0];
                for &v in &row[1..] {
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = 0.0;
                for (o, &v) in orow.iter_mut().zip(row.iter()) {
                    let e = math::exp(v - mx);
                    *o = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for o in orow.iter_mut() {
                    *o *= inv;
                }
            }
        }
        let prec = x.precision();
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let yd = yc.data();
                xc.accum_grad(|gx| {
                    for r in 0..rows {
                        let yrow = &yd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut inner = 0.0;
                        for i in 0..d {
                            inner += grow[i] * yrow[i];
                        }
                        let gxr = &mut gx[r * d..(r + 1) * d];
                        for i in 0..d {
                            gxr[i] += yrow[i] * (grow[i] - inner);
                        }
                    }
                });
            });
        }
        Ok(y)
    }

    /// Log-softmax over the last axis; numerically safe for large negative
    /// mask values.
    pub fn log_softmax_last(&self, x: &Tensor) -> Result<Tensor> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("log_softmax_last: scalar input"))?;
        if d == 0 {
            return Err(Error::shape("log_softmax_last: empty last axis"));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0f64; x.len()];
        {
            let xd = x.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let orow = &mut out[r * d..(r + 1) * d];
                let mut mx = row[0];
                for &v in &row[1..] {
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = 0.0;
                for &v in row.iter() {
                    sum += math::exp(v - mx);
                }
                let lse = mx + math::ln(sum);
                for (o, &v) in orow.iter_mut().zip(row.iter()) {
                    *o = v - lse;
                }
            }
        }
        let prec = x.precision();
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let yd = yc.data();
                xc.accum_grad(|gx| {
                    for r in 0..rows {
                        let yrow = &yd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut gsum = 0.0;
                        for i in 0..d {
                            gsum += grow[i];
                        }
                        let gxr = &mut gx[r * d..(r + 1) * d];
                        for i in 0..d {
                            gxr[i] += grow[i] - math::exp(yrow[i]) * gsum;
                        }
                    }
                });
            });
        }
        Ok(y)
    }

    /// Layer normalization over the last axis with learned gain and bias
    /// (each shaped `[D]` where `D` is the last axis).
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm: scalar input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(alloc::format!(
                "layer_norm: gain/bias must be [{d}], got {:?} / {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0f64; x.len()];
        let mut xhat = vec![0.0f64; x.len()];
        let mut inv_std = vec![0.0f64; rows];
        {
            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mut mean = 0.0;
                for &v in row {
                    mean += v;
                }
                mean /= d as f64;
                let mut var = 0.0;
                for &v in row {
                    let c = v - mean;
                    var += c * c;
                }
                var /= d as f64;
                let istd = 1.0 / math::sqrt(var + eps);
                inv_std[r] = istd;
                let xh = &mut xhat[r * d..(r + 1) * d];
                let orow = &mut out[r * d..(r + 1) * d];
                for i in 0..d {
                    let h = (row[i] - mean) * istd;
                    xh[i] = h;
                    orow[i] = h * gd[i] + bd[i];
                }
            }
        }
        let prec = x.precision().combine(gamma.precision()).combine(beta.precision());
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        let involved = x.wants_grad() || gamma.wants_grad() || beta.wants_grad();
        if self.is_recording() && involved {
            let (xc, gc, bc, yc) = (x.clone(), gamma.clone(), beta.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let gd = gc.data();
                if bc.wants_grad() {
                    bc.accum_grad(|gb| {
                        for r in 0..rows {
                            let grow = &g[r * d..(r + 1) * d];
                            for i in 0..d {
                                gb[i] += grow[i];
                            }
                        }
                    });
                }
                if gc.wants_grad() {
                    gc.accum_grad(|gg| {
                        for r in 0..rows {
                            let grow = &g[r * d..(r + 1) * d];
                            let xh = &xhat[r * d..(r + 1) * d];
                            for i in 0..d {
                                gg[i] += grow[i] * xh[i];
                            }
                        }
                    });
                }
                if xc.wants_grad() {
                    xc.accum_grad(|gx| {
                        for r in 0..rows {
                            let grow = &g[r * d..(r + 1) * d];
                            let xh = &xhat[r * d..(r + 1) * d];
                            let istd = inv_std[r];
                            // dxhat_i = g_i * gamma_i; then the standard
                            // layer norm backward over the row.
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for i in 0..d {
                                let dh = grow[i] * gd[i];
                                sum_dh += dh;
                                sum_dh_h += dh * xh[i];
                            }
                            let inv_d = 1.0 / d as f64;
                            let gxr = &mut gx[r * d..(r + 1) * d];
                            for i in 0..d {
                                let dh = grow[i] * gd[i];
                                gxr[i] +=
                                    istd * (dh - inv_d * sum_dh - xh[i] * inv_d * sum_dh_h);
                            }
                        }
                    });
                }
            });
        }
        Ok(y)
    }

    /// Training-mode batch normalization of `[B, C, T]` over batch and time,
    /// with per-channel gain/bias `[C]`.
    ///
    /// `lengths`, when given, restricts the statistics to `t < lengths[b]`
    /// per sample; padded positions are still normalized with the batch
    /// statistics.  The backward pass is exact provided padded positions
    /// receive zero output-gradient, which holds whenever the caller masks
    /// padded frames downstream (the encoder does).
    pub fn batch_norm_train(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
        lengths: Option<&[usize]>,
    ) -> Result<BatchNormOut> {
        if x.rank() != 3 {
            return Err(Error::shape("batch_norm: input must be [B, C, T]"));
        }
        let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batch_norm: gain/bias must be [C]"));
        }
        if let Some(ls) = lengths {
            if ls.len() != b || ls.iter().any(|&l| l > t) {
                return Err(Error::shape("batch_norm: bad lengths"));
            }
        }
        let count: usize = match lengths {
            Some(ls) => ls.iter().sum(),
            None => b * t,
        };
        if count == 0 {
            return Err(Error::shape("batch_norm: no valid positions"));
        }
        let valid_t = |bi: usize| lengths.map(|ls| ls[bi]).unwrap_or(t);

        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        {
            let xd = x.data();
            for bi in 0..b {
                let vt = valid_t(bi);
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let mut s = 0.0;
                    for i in 0..vt {
                        s += xd[base + i];
                    }
                    mean[ci] += s;
                }
            }
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
            for bi in 0..b {
                let vt = valid_t(bi);
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let m = mean[ci];
                    let mut s = 0.0;
                    for i in 0..vt {
                        let d = xd[base + i] - m;
                        s += d * d;
                    }
                    var[ci] += s;
                }
            }
            for v in var.iter_mut() {
                *v /= count as f64;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
        let mut out = vec![0.0f64; x.len()];
        {
            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let (m, istd, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                    for i in 0..t {
                        out[base + i] = (xd[base + i] - m) * istd * ga + be;
                    }
                }
            }
        }
        let prec = x.precision().combine(gamma.precision()).combine(beta.precision());
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        let involved = x.wants_grad() || gamma.wants_grad() || beta.wants_grad();
        if self.is_recording() && involved {
            let (xc, gc, bc, yc) = (x.clone(), gamma.clone(), beta.clone(), y.clone());
            let mean_c = mean.clone();
            let inv_std_c = inv_std.clone();
            let lengths_c: Option<Vec<usize>> = lengths.map(|l| l.to_vec());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let xd = xc.data();
                let gd = gc.data();
                let valid_t = |bi: usize| lengths_c.as_ref().map(|ls| ls[bi]).unwrap_or(t);
                // Per-channel sums over valid positions.
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gh = vec![0.0f64; c];
                for bi in 0..b {
                    let vt = valid_t(bi);
                    for ci in 0..c {
                        let base = (bi * c + ci) * t;
                        let m = mean_c[ci];
                        let istd = inv_std_c[ci];
                        let mut sg = 0.0;
                        let mut sgh = 0.0;
                        for i in 0..vt {
                            let gv = g[base + i];
                            sg += gv;
                            sgh += gv * (xd[base + i] - m) * istd;
                        }
                        sum_g[ci] += sg;
                        sum_gh[ci] += sgh;
                    }
                }
                if bc.wants_grad() {
                    bc.accum_grad(|gb| {
                        for ci in 0..c {
                            gb[ci] += sum_g[ci];
                        }
                    });
                }
                if gc.wants_grad() {
                    gc.accum_grad(|gg| {
                        for ci in 0..c {
                            gg[ci] += sum_gh[ci];
                        }
                    });
                }
                if xc.wants_grad() {
                    let inv_n = 1.0 / count as f64;
                    xc.accum_grad(|gx| {
                        for bi in 0..b {
                            let vt = valid_t(bi);
                            for ci in 0..c {
                                let base = (bi * c + ci) * t;
                                let m = mean_c[ci];
                                let istd = inv_std_c[ci];
                                let ga = gd[ci];
                                for i in 0..t {
                                    let direct = g[base + i];
                                    let coupled = if i < vt {
                                        inv_n
                                            * (sum_g[ci]
                                                + (xd[base + i] - m) * istd * sum_gh[ci])
                                    } else {
                                        0.0
                                    };
                                    gx[base + i] += ga * istd * (direct - coupled);
                                }
                            }
                        }
                    });
                }
            });
        }
        Ok(BatchNormOut { out: y, batch_mean: mean, batch_var: var })
    }

    /// Inference-mode batch normalization using fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::shape("batch_norm: input must be [B, C, T]"));
        }
        let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c
        {
            return Err(Error::shape("batch_norm: stats/gain/bias must be [C]"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
        let mut out = vec![0.0f64; x.len()];
        {
            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * t;
                    let (m, istd, ga, be) = (running_mean[ci], inv_std[ci], gd[ci], bd[ci]);
                    for i in 0..t {
                        out[base + i] = (xd[base + i] - m) * istd * ga + be;
                    }
                }
            }
        }
        let prec = x.precision().combine(gamma.precision()).combine(beta.precision());
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        let involved = x.wants_grad() || gamma.wants_grad() || beta.wants_grad();
        if self.is_recording() && involved {
            let (xc, gc, bc, yc) = (x.clone(), gamma.clone(), beta.clone(), y.clone());
            let inv_std_c = inv_std.clone();
            let mean_c = running_mean.to_vec();
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let xd = xc.data();
                let gd = gc.data();
                if bc.wants_grad() {
                    bc.accum_grad(|gb| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * t;
                                for i in 0..t {
                                    gb[ci] += g[base + i];
                                }
                            }
                        }
                    });
                }
                if gc.wants_grad() {
                    gc.accum_grad(|gg| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * t;
                                let m = mean_c[ci];
                                let istd = inv_std_c[ci];
                                for i in 0..t {
                                    gg[ci] += g[base + i] * (xd[base + i] - m) * istd;
                                }
                            }
                        }
                    });
                }
                if xc.wants_grad() {
                    xc.accum_grad(|gx| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * t;
                                let scale = gd[ci] * inv_std_c[ci];
                                for i in 0..t {
                                    gx[base + i] += g[base + i] * scale;
                                }
                            }
                        }
                    });
                }
            });
        }
        Ok(y)
    }
}
