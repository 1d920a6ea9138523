//! Stage 1: kernel ν-SVC, one-against-one multiclass training and pairwise
//! probability coupling.

pub mod coupling;
pub mod kernel;
pub mod multiclass;
pub mod sigmoid;
pub mod solver;

pub use coupling::{couple, Coupled, PairwiseMatrix};
pub use kernel::{rbf, KernelKind, KernelSpec};
pub use multiclass::{
    pair_index, predict_pixel, predict_probabilities, predict_tensor, train_multiclass,
    train_multiclass_with, MulticlassModel, TrainOptions,
};
pub use sigmoid::{fit_sigmoid, sigmoid, SigmoidFit};
pub use solver::{nu_max, solve_nu_dual, DualSolution, SolverConfig};

use crate::error::{HsiError, Result};

/// Marks a support vector that did not come from an image pixel.
pub const INLINE_SV: u32 = u32::MAX;

/// Default sigmoid for pairs with too few points to calibrate.
pub const FALLBACK_SIGMOID: (f64, f64) = (-1.0, 0.0);

/// A trained binary ν-SVC with its probability calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel {
    pub bands: usize,
    /// `n_sv × bands`, single precision as persisted.
    pub support_vectors: Vec<f32>,
    /// Source pixel of each support vector, or [`INLINE_SV`].
    pub sv_pixels: Vec<u32>,
    /// Multipliers pre-multiplied by their label, `alpha_i y_i`.
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    /// Sigmoid slope.
    pub rho: f64,
    /// Sigmoid offset.
    pub tau: f64,
    pub nu: f64,
    /// True when `(rho, tau)` is the uncalibrated fallback.
    pub sigmoid_fallback: bool,
}

impl BinaryModel {
    pub fn num_sv(&self) -> usize {
        self.alphas.len()
    }

    pub fn support_vector(&self, k: usize) -> &[f32] {
        &self.support_vectors[k * self.bands..(k + 1) * self.bands]
    }
}

/// Trains a binary ν-SVC with the default solver settings. The returned
/// model carries the fallback sigmoid until calibrated.
pub fn train_binary(samples: &[&[f64]], labels: &[i8], nu: f64, kernel: &KernelSpec) -> Result<BinaryModel> {
    train_binary_with(samples, labels, None, nu, kernel, &SolverConfig::default()).map(|(m, _)| m)
}

/// Like [`train_binary`], also returning the full dual solution.
/// `pixels` records where each sample came from.
pub fn train_binary_with(
    samples: &[&[f64]],
    labels: &[i8],
    pixels: Option<&[u32]>,
    nu: f64,
    kernel: &KernelSpec,
    config: &SolverConfig,
) -> Result<(BinaryModel, DualSolution)> {
    if let Some(p) = pixels {
        if p.len() != samples.len() {
            return Err(HsiError::LengthMismatch {
                expected: samples.len(),
                actual: p.len(),
            });
        }
    }
    let solution = solve_nu_dual(samples, labels, nu, kernel, config)?;
    let bands = samples[0].len();
    let mut model = BinaryModel {
        bands,
        support_vectors: Vec::new(),
        sv_pixels: Vec::new(),
        alphas: Vec::new(),
        bias: solution.bias,
        kernel: *kernel,
        rho: FALLBACK_SIGMOID.0,
        tau: FALLBACK_SIGMOID.1,
        nu,
        sigmoid_fallback: true,
    };
    for (i, &a) in solution.alpha.iter().enumerate() {
        if a > 0.0 {
            model.alphas.push(a * f64::from(labels[i]));
            model.support_vectors.extend(samples[i].iter().map(|&v| v as f32));
            model.sv_pixels.push(pixels.map_or(INLINE_SV, |p| p[i]));
        }
    }
    Ok((model, solution))
}

/// `f(x) = sum_i alpha_i y_i K(x_i, x) + b`
pub fn decision(model: &BinaryModel, x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (k, &a) in model.alphas.iter().enumerate() {
        sum += a * model.kernel.eval_f32(model.support_vector(k), x);
    }
    sum + model.bias
}

/// Calibrated probability that `x` belongs to the positive class of the pair.
pub fn pairwise_probability(model: &BinaryModel, x: &[f64]) -> f64 {
    sigmoid(decision(model, x), model.rho, model.tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_model(bias: f64) -> BinaryModel {
        BinaryModel {
            bands: 2,
            support_vectors: vec![],
            sv_pixels: vec![],
            alphas: vec![],
            bias,
            kernel: KernelSpec::rbf(1.0).unwrap(),
            rho: -1.0,
            tau: 0.0,
            nu: 0.5,
            sigmoid_fallback: true,
        }
    }

    #[test]
    fn decision_without_support_vectors_is_the_bias() {
        let m = empty_model(0.7);
        assert_eq!(decision(&m, &[3.0, -1.0]), 0.7);
        assert_eq!(decision(&m, &[0.0, 0.0]), 0.7);
    }

    #[test]
    fn zero_decision_gives_one_half() {
        let m = empty_model(0.0);
        assert_eq!(pairwise_probability(&m, &[1.0, 1.0]), 0.5);
    }

    #[test]
    fn symmetric_pair_vanishes_at_midpoint() {
        let x = [[0.0, 0.0], [2.0, 1.0]];
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let m = train_binary(&refs, &[-1, 1], 1.0, &KernelSpec::rbf(1.0).unwrap()).unwrap();
        assert!(decision(&m, &[1.0, 0.5]).abs() < 1e-8);
        assert!(decision(&m, &x[1]) > 0.0);
        assert!(decision(&m, &x[0]) < 0.0);
    }

    #[test]
    fn support_vectors_record_their_pixels() {
        let x = [[0.0], [0.2], [1.0], [1.3]];
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let (m, sol) = train_binary_with(
            &refs,
            &[-1, -1, 1, 1],
            Some(&[10, 11, 12, 13]),
            0.5,
            &KernelSpec::rbf(0.5).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        let n_pos = sol.alpha.iter().filter(|&&a| a > 0.0).count();
        assert_eq!(m.num_sv(), n_pos);
        assert!(m.sv_pixels.iter().all(|p| (10..14).contains(p)));
    }
}
