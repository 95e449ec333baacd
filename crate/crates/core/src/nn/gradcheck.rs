use ndarray::ArrayView2;

use super::mlp::{grad_slices, MlpModel};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub n_params: usize,
}

/// Compares backprop gradients of the mean BCE against central differences
/// on every parameter. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &MlpModel, x: ArrayView2<f64>, y: ArrayView2<f64>) -> GradCheck {
    let (_, grads) = model.loss_and_gradients(x, y);
    let analytic: Vec<f64> = grad_slices(&grads).concat();

    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let n_tensors = probe.param_slices_mut().len();
    for t in 0..n_tensors {
        let len = probe.param_slices_mut()[t].len();
        for k in 0..len {
            let orig = probe.param_slices_mut()[t][k];
            probe.param_slices_mut()[t][k] = orig + FD_STEP;
            let up = probe.loss(x, y);
            probe.param_slices_mut()[t][k] = orig - FD_STEP;
            let down = probe.loss(x, y);
            probe.param_slices_mut()[t][k] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }

    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        n_params: analytic.len(),
    };
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.max_abs_analytic = out.max_abs_analytic.max(a.abs());
        out.max_abs_numeric = out.max_abs_numeric.max(n.abs());
    }
    out
}
