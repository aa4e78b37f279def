//! Finite-difference gradient verification.
//!
//! The checker evaluates a forward function twice per perturbed element and
//! compares the central difference against the gradient produced by the
//! tape.  It exercises nothing but forward passes for the numeric side, so
//! it is an independent oracle for every differentiable op.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Outcome of a gradient check: worst observed relative error and where.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare analytic gradients of `f` against central differences.
///
/// `f` must be a pure function of the parameter values, returning a scalar
/// loss on the given tape.  `params` are the leaves to perturb (named for
/// reporting).  `h` is the step; `tol` the relative error bound.  Errors are
/// measured as `|a - n| / max(1, |a|, |n|)`.
pub fn check_gradients(
    f: &dyn Fn(&Tape) -> Result<Tensor>,
    params: &[(&str, &Tensor)],
    h: f64,
    tol: f64,
) -> core::result::Result<GradReport, String> {
    // Analytic pass.
    for (_, p) in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape).map_err(|e| format!("forward failed: {e}"))?;
    tape.backward(&loss).map_err(|e| format!("backward failed: {e}"))?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(name, p)| {
            p.grad().unwrap_or_else(|| {
                // A parameter the loss ignores has zero gradient.
                let _ = name;
                alloc::vec![0.0; p.len()]
            })
        })
        .collect();

    let mut report = GradReport {
        worst_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (pi, (name, p)) in params.iter().enumerate() {
        for i in 0..p.len() {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + h);
            let up = f(&Tape::inference()).map_err(|e| format!("forward failed: {e}"))?.item();
            p.update_data(|d| d[i] = orig - h);
            let down = f(&Tape::inference()).map_err(|e| format!("forward failed: {e}"))?.item();
            p.update_data(|d| d[i] = orig);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][i];
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
                report.worst_param = String::from(*name);
                report.worst_index = i;
            }
            if rel > tol {
                return Err(format!(
                    "gradient mismatch for {name}[{i}]: analytic {a:.9e}, numeric {numeric:.9e}, rel {rel:.3e} > tol {tol:.1e}"
                ));
            }
        }
    }
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(report)
}
