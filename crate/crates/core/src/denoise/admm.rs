use std::fmt::Write as _;

use super::fft::PeriodicSolver;
use super::operators::{gradient_adjoint_into, gradient_into, shrink_scalar};
use super::{objective, DenoiseParams};
use crate::error::{HsiError, Result};

/// Iterates of one ADMM run. `s` and `lambda1` hold the horizontal
/// component followed by the vertical one.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub iter: usize,
}

impl AdmmState {
    /// `u = v`, `s = Dv`, `w = v`, zero multipliers.
    pub fn initial(v: &[f64], height: usize, width: usize) -> Self {
        let n = v.len();
        let mut s = vec![0.0; 2 * n];
        let (sx, sy) = s.split_at_mut(n);
        gradient_into(v, height, width, sx, sy);
        AdmmState {
            u: v.to_vec(),
            s,
            w: v.to_vec(),
            lambda1: vec![0.0; 2 * n],
            lambda2: vec![0.0; n],
            iter: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub relative_change: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    pub relative_change: f64,
    /// `|Eu - g| / max(|Eu|, |g|)` at the last iteration.
    pub primal_residual: f64,
    pub objective: f64,
    /// Largest `|u - v|` over the pinned pixels.
    pub max_constraint_violation: f64,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl Diagnostics {
    /// `iteration,relative_change,objective` records with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,relative_change,objective\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{:e},{:.12e}", r.iteration, r.relative_change, r.objective);
        }
        out
    }
}

/// Restores one map. `upsilon` marks the pixels held at their input value.
pub fn admm_denoise(
    v: &[f64],
    upsilon: &[bool],
    height: usize,
    width: usize,
    params: &DenoiseParams,
) -> Result<(Vec<f64>, Diagnostics)> {
    params.validate()?;
    let solver = PeriodicSolver::new(height, width, params.beta2, params.mu);
    admm_denoise_with(v, upsilon, height, width, params, &solver)
}

/// [`admm_denoise`] with a prebuilt u-update operator.
pub fn admm_denoise_with(
    v: &[f64],
    upsilon: &[bool],
    height: usize,
    width: usize,
    params: &DenoiseParams,
    solver: &PeriodicSolver,
) -> Result<(Vec<f64>, Diagnostics)> {
    let n = height * width;
    if v.len() != n || upsilon.len() != n {
        return Err(HsiError::Dimension(format!(
            "map of {} values and mask of {} for a {height}x{width} image",
            v.len(),
            upsilon.len()
        )));
    }
    if solver.height() != height || solver.width() != width {
        return Err(HsiError::Dimension("solver was built for another image shape".into()));
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(HsiError::NonFinite { index });
    }

    let mu = params.mu;
    let kappa = params.beta1 / mu;
    let mut st = AdmmState::initial(v, height, width);
    let mut ws = solver.workspace();
    let mut rhs = vec![0.0; n];
    let mut dt = vec![0.0; n];
    let mut sum1 = vec![0.0; 2 * n];
    let mut u_next = vec![0.0; n];
    let mut du = vec![0.0; 2 * n];
    let mut trace = Vec::new();
    let mut relative_change = f64::INFINITY;
    let mut primal_residual = f64::INFINITY;
    let mut converged = false;

    while st.iter < params.max_iters {
        // u-update
        for (o, (a, b)) in sum1.iter_mut().zip(st.s.iter().zip(&st.lambda1)) {
            *o = a + b;
        }
        gradient_adjoint_into(&sum1[..n], &sum1[n..], height, width, &mut dt);
        for p in 0..n {
            rhs[p] = v[p] + mu * (dt[p] + st.w[p] + st.lambda2[p]);
        }
        solver.solve_into(&rhs, &mut u_next, &mut ws);

        // g-update: shrink for s, projection for w
        {
            let (dx, dy) = du.split_at_mut(n);
            gradient_into(&u_next, height, width, dx, dy);
        }
        for k in 0..2 * n {
            st.s[k] = shrink_scalar(du[k] - st.lambda1[k], kappa);
        }
        for p in 0..n {
            st.w[p] = if upsilon[p] { v[p] } else { u_next[p] - st.lambda2[p] };
        }

        // multipliers: lambda <- lambda - E u + g
        let (mut r2, mut eu2, mut g2) = (0.0, 0.0, 0.0);
        for k in 0..2 * n {
            let r = st.s[k] - du[k];
            st.lambda1[k] += r;
            r2 += r * r;
            eu2 += du[k] * du[k];
            g2 += st.s[k] * st.s[k];
        }
        for p in 0..n {
            let r = st.w[p] - u_next[p];
            st.lambda2[p] += r;
            r2 += r * r;
            eu2 += u_next[p] * u_next[p];
            g2 += st.w[p] * st.w[p];
        }
        primal_residual = r2.sqrt() / eu2.max(g2).sqrt().max(1e-12);

        let diff: f64 = u_next.iter().zip(&st.u).map(|(a, b)| (a - b) * (a - b)).sum();
        let prev: f64 = st.u.iter().map(|a| a * a).sum();
        relative_change = diff.sqrt() / prev.sqrt().max(1e-12);
        std::mem::swap(&mut st.u, &mut u_next);
        st.iter += 1;
        trace.push(IterationRecord {
            iteration: st.iter,
            relative_change,
            objective: objective(&st.u, v, height, width, params.beta1, params.beta2),
        });
        // u alone can stall on a plateau while the multipliers are still
        // moving, so the constraint residual must be small as well.
        if relative_change < params.tol && primal_residual < params.tol {
            converged = true;
            break;
        }
    }

    let max_constraint_violation = st
        .u
        .iter()
        .zip(v)
        .zip(upsilon)
        .filter(|(_, &fixed)| fixed)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max);
    let diagnostics = Diagnostics {
        iterations: st.iter,
        relative_change,
        primal_residual,
        objective: objective(&st.u, v, height, width, params.beta1, params.beta2),
        max_constraint_violation,
        converged,
        trace,
    };
    Ok((st.u, diagnostics))
}
