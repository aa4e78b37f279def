//! Inverted dropout.

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl Tape {
    /// Zero each element with probability `p` and scale survivors by
    /// `1 / (1 - p)`, so the expectation is unchanged.  The mask is drawn
    /// from `rng`, one draw per element, whether or not the tape records;
    /// that keeps a named stream's position independent of gradient mode.
    pub fn dropout(&self, x: &Tensor, p: f64, rng: &mut StreamRng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(alloc::format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Rc<Vec<f64>> = Rc::new(
            (0..x.len())
                .map(|_| if rng.uniform() < p { 0.0 } else { keep_scale })
                .collect(),
        );
        let prec = x.precision();
        let mut out: Vec<f64> = {
            let xd = x.data();
            xd.iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect()
        };
        prec.quantize_all(&mut out);
        let y = Tensor::build(x.shape().to_vec(), out, prec);
        if self.is_recording() && x.wants_grad() {
            let (xc, yc) = (x.clone(), y.clone());
            let mask = Rc::clone(&mask);
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(g) = og.as_ref() else { return };
                xc.accum_grad(|gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * mask[i];
                    }
                });
            });
        }
        Ok(y)
    }
}
