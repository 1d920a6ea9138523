use crate::error::{HsiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum KernelKind {
    /// `exp(-|x-y|^2 / (2 sigma^2))`
    Rbf = 0,
}

/// Kernel choice and its width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(HsiError::InvalidParameter(format!(
                "kernel width must be positive, got {sigma}"
            )));
        }
        Ok(KernelSpec {
            kind: KernelKind::Rbf,
            sigma,
        })
    }

    /// `1 / (2 sigma^2)`
    pub fn gamma(&self) -> f64 {
        1.0 / (2.0 * self.sigma * self.sigma)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => (-self.gamma() * squared_distance(x, y)).exp(),
        }
    }

    /// Evaluates against a single-precision stored spectrum.
    pub fn eval_f32(&self, sv: &[f32], x: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = sv
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b;
                        d * d
                    })
                    .sum();
                (-self.gamma() * d2).exp()
            }
        }
    }
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Gaussian RBF kernel value, in (0, 1].
pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HsiError::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(KernelSpec::rbf(sigma)?.eval(x, y))
}

/// Dense row-major Gram matrix of `samples`.
pub fn gram_matrix(samples: &[&[f64]], kernel: &KernelSpec) -> Vec<f64> {
    let m = samples.len();
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        k[i * m + i] = kernel.eval(samples[i], samples[i]);
        for j in 0..i {
            let v = kernel.eval(samples[i], samples[j]);
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    k
}
