//! Two-stage spectral-spatial classification of hyperspectral images.
//!
//! Stage 1 trains one-against-one ν-SVC models with an RBF kernel and turns
//! their pairwise sigmoid outputs into per-pixel class probabilities. Stage 2
//! smooths each class probability map with a total-variation plus Tikhonov
//! model that keeps training pixels fixed, then labels each pixel by argmax.

pub mod denoise;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod svm;
pub mod synthetic;
pub mod types;

pub use error::{HsiError, Result};
pub use types::{
    normalize_cube, validate_cube, ConfusionMatrix, HyperCube, LabelMap, LabeledPixel, ProbabilityTensor, SplitSpec,
};
