//! Sigmoid calibration of decision values.
//!
//! Fits `r(f) = 1 / (1 + exp(rho f + tau))` by Newton's method with a
//! backtracking line search on the regularized negative log-likelihood,
//! using the smoothed targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.

use crate::error::{HsiError, Result};

const MAX_ITERATIONS: usize = 100;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-5;

/// Exponent bound applied before evaluating the sigmoid.
pub const EXPONENT_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidFit {
    pub rho: f64,
    pub tau: f64,
    pub iterations: usize,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Regularized negative log-likelihood of the calibration targets.
pub fn sigmoid_objective(f_values: &[f64], labels: &[i8], rho: f64, tau: f64) -> f64 {
    let targets = targets(labels);
    objective(f_values, &targets, rho, tau)
}

fn targets(labels: &[i8]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&y| y > 0).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    labels.iter().map(|&y| if y > 0 { hi } else { lo }).collect()
}

fn objective(f_values: &[f64], targets: &[f64], rho: f64, tau: f64) -> f64 {
    f_values
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * rho + tau;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

pub fn fit_sigmoid(f_values: &[f64], labels: &[i8]) -> Result<SigmoidFit> {
    if f_values.len() != labels.len() {
        return Err(HsiError::LengthMismatch {
            expected: f_values.len(),
            actual: labels.len(),
        });
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(HsiError::SingleClass);
    }
    let t = targets(labels);
    let pos = labels.iter().filter(|&&y| y > 0).count() as f64;
    let neg = labels.len() as f64 - pos;

    let mut rho = 0.0;
    let mut tau = ((neg + 1.0) / (pos + 1.0)).ln();
    let mut fval = objective(f_values, &t, rho, tau);
    let mut trace = vec![fval];

    for iteration in 0..MAX_ITERATIONS {
        let mut h11 = HESSIAN_RIDGE;
        let mut h22 = HESSIAN_RIDGE;
        let mut h21 = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for (&f, &ti) in f_values.iter().zip(&t) {
            let z = f * rho + tau;
            // p = r(f), q = 1 - r(f), evaluated without overflow
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < GRADIENT_TOL && g2.abs() < GRADIENT_TOL {
            return Ok(SigmoidFit {
                rho,
                tau,
                iterations: iteration,
                objective_trace: trace,
            });
        }

        let det = h11 * h22 - h21 * h21;
        let d_rho = -(h22 * g1 - h21 * g2) / det;
        let d_tau = -(-h21 * g1 + h11 * g2) / det;
        let slope = g1 * d_rho + g2 * d_tau;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let new_rho = rho + step * d_rho;
            let new_tau = tau + step * d_tau;
            let new_f = objective(f_values, &t, new_rho, new_tau);
            if new_f < fval + 1e-4 * step * slope {
                rho = new_rho;
                tau = new_tau;
                fval = new_f;
                trace.push(fval);
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            // No descent left at machine precision: the current point is
            // as good as this iteration can make it.
            return Ok(SigmoidFit {
                rho,
                tau,
                iterations: iteration,
                objective_trace: trace,
            });
        }
    }

    let (g1, g2) = gradient(f_values, &t, rho, tau);
    Err(HsiError::SigmoidNotConverged {
        grad_norm: g1.hypot(g2),
    })
}

fn gradient(f_values: &[f64], targets: &[f64], rho: f64, tau: f64) -> (f64, f64) {
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for (&f, &t) in f_values.iter().zip(targets) {
        let p = sigmoid(f, rho, tau);
        g1 += f * (t - p);
        g2 += t - p;
    }
    (g1, g2)
}

/// `1 / (1 + exp(rho f + tau))` with the exponent clamped to
/// `[-EXPONENT_CLAMP, EXPONENT_CLAMP]`. Always strictly positive; near the
/// upper end the result may round to exactly 1.
pub fn sigmoid(f: f64, rho: f64, tau: f64) -> f64 {
    let z = (rho * f + tau).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}
