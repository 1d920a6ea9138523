//! Stage 2: restores each class probability map by minimizing
//!
//! ```text
//! 1/2 |u - v|^2 + beta1 |Du|_1 + beta2/2 |Du|^2   s.t.  u = v on training pixels
//! ```
//!
//! with ADMM over the splits `s = Du`, `w = u`, anisotropic TV and
//! periodic boundaries.

mod admm;
pub mod fft;
pub mod operators;

pub use admm::{admm_denoise, admm_denoise_with, AdmmState, Diagnostics, IterationRecord};
pub use fft::{FftPlan2d, PeriodicSolver};
pub use operators::{gradient, gradient_adjoint, project_w, shrink};

use rayon::prelude::*;

use crate::error::{HsiError, Result};
use crate::types::ProbabilityTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseParams {
    /// TV weight.
    pub beta1: f64,
    /// Quadratic smoothness weight.
    pub beta2: f64,
    /// ADMM penalty.
    pub mu: f64,
    /// Iteration stops once both the relative change of `u` and the
    /// relative constraint residual fall below this value.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        DenoiseParams {
            beta1: 0.3,
            beta2: 3.0,
            mu: 1.0,
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

impl DenoiseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 >= 0.0
            && self.beta2 >= 0.0
            && self.mu > 0.0
            && self.tol > 0.0
            && self.max_iters > 0
            && [self.beta1, self.beta2, self.mu, self.tol].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(HsiError::InvalidParameter(format!(
                "denoising parameters out of range: {self:?}"
            )))
        }
    }
}

/// The objective being minimized (constraint excluded).
pub fn objective(u: &[f64], v: &[f64], height: usize, width: usize, beta1: f64, beta2: f64) -> f64 {
    let (dx, dy) = gradient(u, height, width);
    let fit: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let tv: f64 = dx.iter().chain(&dy).map(|d| d.abs()).sum();
    let quad: f64 = dx.iter().chain(&dy).map(|d| d * d).sum();
    0.5 * fit + beta1 * tv + 0.5 * beta2 * quad
}

/// One u-update: `(I + beta2 D^T D + mu E^T E)^{-1} (v + mu E^T (g + lambda))`
/// with `E = [D; I]`, `g = (s, w)` and `lambda = (lambda1, lambda2)`.
/// `s` and `lambda1` hold the horizontal half followed by the vertical half.
pub fn solve_u(
    v: &[f64],
    s: &[f64],
    w: &[f64],
    lambda1: &[f64],
    lambda2: &[f64],
    height: usize,
    width: usize,
    params: &DenoiseParams,
) -> Result<Vec<f64>> {
    let n = height * width;
    if v.len() != n || w.len() != n || lambda2.len() != n || s.len() != 2 * n || lambda1.len() != 2 * n {
        return Err(HsiError::Dimension("inconsistent ADMM operand shapes".into()));
    }
    let solver = PeriodicSolver::new(height, width, params.beta2, params.mu);
    let sum1: Vec<f64> = s.iter().zip(lambda1).map(|(a, b)| a + b).collect();
    let dt = gradient_adjoint(&sum1[..n], &sum1[n..], height, width);
    let rhs: Vec<f64> = (0..n)
        .map(|p| v[p] + params.mu * (dt[p] + w[p] + lambda2[p]))
        .collect();
    Ok(solver.solve(&rhs))
}

/// Per-class results of [`denoise_tensor`].
#[derive(Debug, Clone)]
pub struct TensorDiagnostics {
    pub per_class: Vec<Diagnostics>,
}

impl TensorDiagnostics {
    pub fn all_converged(&self) -> bool {
        self.per_class.iter().all(|d| d.converged)
    }

    pub fn unconverged_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.converged)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Restores every class slice with the same parameters.
pub fn denoise_tensor(
    tensor: &ProbabilityTensor,
    upsilon: &[bool],
    params: &DenoiseParams,
) -> Result<(ProbabilityTensor, TensorDiagnostics)> {
    denoise_tensor_with(tensor, upsilon, params, true)
}

pub fn denoise_tensor_with(
    tensor: &ProbabilityTensor,
    upsilon: &[bool],
    params: &DenoiseParams,
    parallel: bool,
) -> Result<(ProbabilityTensor, TensorDiagnostics)> {
    params.validate()?;
    let (h, w) = (tensor.height, tensor.width);
    if upsilon.len() != h * w {
        return Err(HsiError::LengthMismatch {
            expected: h * w,
            actual: upsilon.len(),
        });
    }
    let solver = PeriodicSolver::new(h, w, params.beta2, params.mu);
    let run = |k: usize| admm_denoise_with(tensor.slice(k), upsilon, h, w, params, &solver);
    let results: Vec<Result<(Vec<f64>, Diagnostics)>> = if parallel {
        (0..tensor.num_classes).into_par_iter().map(run).collect()
    } else {
        (0..tensor.num_classes).map(run).collect()
    };
    let mut out = ProbabilityTensor::zeros(h, w, tensor.num_classes);
    let mut per_class = Vec::with_capacity(tensor.num_classes);
    for (k, r) in results.into_iter().enumerate() {
        let (u, diag) = r?;
        out.slice_mut(k).copy_from_slice(&u);
        per_class.push(diag);
    }
    let diagnostics = TensorDiagnostics { per_class };
    for k in diagnostics.unconverged_classes() {
        log::warn!("class {} map did not reach tol {:e} in {} iterations", k + 1, params.tol, params.max_iters);
    }
    Ok((out, diagnostics))
}
