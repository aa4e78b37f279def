//! Pointwise operations and broadcast binary arithmetic.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::ops::{broadcast_shapes, expect_same_shape};
use crate::tape::Tape;
use crate::tensor::Tensor;

impl Tape {
    /// Elementwise `a + b` with broadcasting.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, 1)
    }

    /// Elementwise `a - b` with broadcasting.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, 2)
    }

    /// Elementwise `a * b` with broadcasting.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, 3)
    }

    /// Shared implementation of broadcast binary arithmetic.  `kind` selects
    /// the backward rule: 1 add, 2 sub, 3 mul.
    fn binary(
        &self,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        kind: u8,
    ) -> Result<Tensor> {
        let bc = broadcast_shapes(a.shape(), b.shape())?;
        let prec = a.precision().combine(b.precision());
        let mut out = vec![0.0f64; bc.out_shape.iter().product()];
        {
            let ad = a.data();
            let bd = b.data();
            if bc.is_elementwise() {
                for (o, (x, y)) in out.iter_mut().zip(ad.iter().zip(bd.iter())) {
                    *o = f(*x, *y);
                }
            } else {
                bc.for_each(|o, ao, bo| out[o] = f(ad[ao], bd[bo]));
            }
        }
        prec.quantize_all(&mut out);
        let y = Tensor::build(bc.out_shape.clone(), out, prec);
        let involved = a.wants_grad() || b.wants_grad();
        if self.is_recording() && involved {
            let (ac, bcl, yc) = (a.clone(), b.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let bc = broadcast_shapes(ac.shape(), bcl.shape()).expect("checked in forward");
                match kind {
                    1 => {
                        if ac.wants_grad() {
                            ac.accum_grad(|ga| bc.for_each(|o, ao, _| ga[ao] += g[o]));
                        }
                        if bcl.wants_grad() {
                            bcl.accum_grad(|gb| bc.for_each(|o, _, bo| gb[bo] += g[o]));
                        }
                    }
                    2 => {
                        if ac.wants_grad() {
                            ac.accum_grad(|ga| bc.for_each(|o, ao, _| ga[ao] += g[o]));
                        }
                        if bcl.wants_grad() {
                            bcl.accum_grad(|gb| bc.for_each(|o, _, bo| gb[bo] -= g[o]));
                        }
                    }
                    _ => {
                        let ad = ac.data();
                        let bd = bcl.data();
                        if ac.wants_grad() {
                            ac.accum_grad(|ga| bc.for_each(|o, ao, bo| ga[ao] += g[o] * bd[bo]));
                        }
                        if bcl.wants_grad() {
                            bcl.accum_grad(|gb| bc.for_each(|o, ao, bo| gb[bo] += g[o] * ad[ao]));
                        }
                    }
                }
            });
        }
        Ok(y)
    }

    /// `x * c` for a plain constant.
    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(x, |v| v * c, move |_v, _y| c)
    }

    /// `x + c` for a plain constant.
    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(x, move |v| v + c, |_v, _y| 1.0)
    }

    /// `-x`.
    pub fn neg(&self, x: &Tensor) -> Result<Tensor> {
        self.scale(x, -1.0)
    }

    /// Rectified linear unit.
    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, |v, _y| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, math::sigmoid, |_v, y| y * (1.0 - y))
    }

    /// Swish / SiLU: `x * sigmoid(x)`.
    pub fn swish(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, |v| v * math::sigmoid(v), |v, _y| {
            let s = math::sigmoid(v);
            s + v * s * (1.0 - s)
        })
    }

    /// Hyperbolic tangent.
    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, math::tanh, |_v, y| 1.0 - y * y)
    }

    /// Shared pointwise unary: `fwd` maps value, `dfu(input, output)` gives
    /// the local derivative.
    fn unary(
        &self,
        x: &Tensor,
        fwd: impl Fn(f64) -> f64,
        dfu: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let prec = x.precision();
        let mut out: Vec<f64> = x.data().iter().map(|&v| fwd(v)).collect();
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let xd = xc.data();
                let yd = yc.data();
                xc.accum_grad(|gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * dfu(xd[i], yd[i]);
                    }
                });
            });
        }
        Ok(y)
    }

    /// Gated linear unit along `axis`: the tensor is split in two halves on
    /// that axis and the first half is gated by the sigmoid of the second.
    pub fn glu(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let size = x.shape().get(axis).copied().ok_or_else(|| {
            crate::error::Error::shape(alloc::format!(
                "glu: axis {axis} out of range for shape {:?}",
                x.shape()
            ))
        })?;
        if size % 2 != 0 {
            return Err(crate::error::Error::shape(alloc::format!(
                "glu: axis {axis} has odd size {size}"
            )));
        }
        let half = size / 2;
        let value = self.slice_axis(x, axis, 0, half)?;
        let gate = self.slice_axis(x, axis, half, size)?;
        let gate = self.sigmoid(&gate)?;
        self.mul(&value, &gate)
    }

    /// Mean absolute difference between two same-shape tensors, optionally
    /// restricted by a 0/1 weight mask of the same shape.  With a mask the
    /// mean runs over positions where the mask is 1.
    pub fn l1_distance(&self, a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        expect_same_shape(a.shape(), b.shape(), "l1_distance")?;
        if let Some(m) = mask {
            expect_same_shape(a.shape(), m.shape(), "l1_distance mask")?;
        }
        let prec = a.precision().combine(b.precision());
        let n = a.len();
        let (total, count) = {
            let ad = a.data();
            let bd = b.data();
            match mask {
                None => {
                    let mut t = 0.0;
                    for i in 0..n {
                        t += (ad[i] - bd[i]).abs();
                    }
                    (t, n as f64)
                }
                Some(m) => {
                    let md = m.data();
                    let mut t = 0.0;
                    let mut c = 0.0;
                    for i in 0..n {
                        if md[i] != 0.0 {
                            t += (ad[i] - bd[i]).abs();
                            c += 1.0;
                        }
                    }
                    (t, c)
                }
            }
        };
        let denom = if count > 0.0 { count } else { 1.0 };
        let y = Tensor::build(vec![], vec![prec.quantize(total / denom)], prec);
        let involved = a.wants_grad() || b.wants_grad();
        if self.is_recording() && involved {
            let (ac, bc, yc) = (a.clone(), b.clone(), y.clone());
            let mc = mask.cloned();
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                let g0 = g[0] / denom;
                let ad = ac.data();
                let bd = bc.data();
                let md = mc.as_ref().map(|m| m.to_vec());
                let sign = |i: usize| -> f64 {
                    if let Some(md) = &md {
                        if md[i] == 0.0 {
                            return 0.0;
                        }
                    }
                    let d = ad[i] - bd[i];
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if ac.wants_grad() {
                    ac.accum_grad(|ga| {
                        for i in 0..ga.len() {
                            ga[i] += g0 * sign(i);
                        }
                    });
                }
                if bc.wants_grad() {
                    bc.accum_grad(|gb| {
                        for i in 0..gb.len() {
                            gb[i] -= g0 * sign(i);
                        }
                    });
                }
            });
        }
        Ok(y)
    }
}
