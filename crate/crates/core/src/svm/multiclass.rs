//! One-against-one multiclass training and probability tensor assembly.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::coupling::{couple, Coupled, PairwiseMatrix};
use super::kernel::KernelSpec;
use super::sigmoid::{fit_sigmoid, sigmoid};
use super::solver::{nu_max, solve_nu_dual, SolverConfig};
use super::{decision, train_binary_with, BinaryModel, FALLBACK_SIGMOID, INLINE_SV};
use crate::error::{HsiError, Result};
use crate::types::{HyperCube, LabeledPixel, ProbabilityTensor, SplitSpec};

/// One binary model per unordered class pair, ordered
/// (0,1), (0,2), …, (0,c-1), (1,2), …
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    pub num_classes: usize,
    pub bands: usize,
    pub kernel: KernelSpec,
    pub pairs: Vec<BinaryModel>,
}

impl MulticlassModel {
    pub fn pair(&self, i: usize, j: usize) -> &BinaryModel {
        &self.pairs[pair_index(self.num_classes, i, j)]
    }
}

/// Position of the pair `(i, j)`, `i < j`, in the model's pair list.
pub fn pair_index(c: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < c);
    i * (2 * c - i - 1) / 2 + (j - i - 1)
}

pub fn class_pairs(c: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..c).flat_map(move |i| (i + 1..c).map(move |j| (i, j)))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub solver: SolverConfig,
    /// Folds of the internal cross-validation that produces calibration
    /// decision values.
    pub sigmoid_folds: usize,
    /// Below this many points in either class the fallback sigmoid is used.
    pub min_per_class_for_sigmoid: usize,
    /// Train the class pairs concurrently.
    pub parallel: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            solver: SolverConfig::default(),
            sigmoid_folds: 5,
            min_per_class_for_sigmoid: 5,
            parallel: true,
        }
    }
}

/// Spectra of a set of labeled pixels, gathered contiguously.
pub(crate) struct TrainingSet {
    pub bands: usize,
    pub spectra: Vec<f64>,
    pub classes: Vec<usize>,
    pub pixels: Vec<u32>,
}

impl TrainingSet {
    pub fn gather(cube: &HyperCube, pixels: &[LabeledPixel]) -> Self {
        let n = cube.num_pixels();
        let mut spectra = Vec::with_capacity(pixels.len() * cube.bands);
        for px in pixels {
            let p = px.index(cube.width);
            spectra.extend((0..cube.bands).map(|b| cube.data[b * n + p]));
        }
        TrainingSet {
            bands: cube.bands,
            spectra,
            classes: pixels.iter().map(|px| px.class).collect(),
            pixels: pixels.iter().map(|px| px.index(cube.width) as u32).collect(),
        }
    }

    pub fn spectrum(&self, k: usize) -> &[f64] {
        &self.spectra[k * self.bands..(k + 1) * self.bands]
    }
}

/// Trains all class pairs on the split's training pixels.
pub fn train_multiclass(cube: &HyperCube, split: &SplitSpec, nu: f64, kernel: &KernelSpec) -> Result<MulticlassModel> {
    train_multiclass_with(cube, split, nu, kernel, &TrainOptions::default())
}

pub fn train_multiclass_with(
    cube: &HyperCube,
    split: &SplitSpec,
    nu: f64,
    kernel: &KernelSpec,
    options: &TrainOptions,
) -> Result<MulticlassModel> {
    let num_classes = split
        .training
        .iter()
        .chain(&split.testing)
        .map(|px| px.class + 1)
        .max()
        .unwrap_or(0);
    let set = TrainingSet::gather(cube, &split.training);
    train_on_set(&set, num_classes, nu, kernel, options, split.seed)
}

pub(crate) fn train_on_set(
    set: &TrainingSet,
    num_classes: usize,
    nu: f64,
    kernel: &KernelSpec,
    options: &TrainOptions,
    seed: u64,
) -> Result<MulticlassModel> {
    if num_classes == 0 {
        return Err(HsiError::InvalidSplit("no labeled pixels".into()));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (k, &c) in set.classes.iter().enumerate() {
        members[c].push(k);
    }
    if let Some(k) = members.iter().position(|m| m.is_empty()) {
        return Err(HsiError::InvalidSplit(format!("class {} has no training pixel", k + 1)));
    }

    let pairs: Vec<(usize, usize)> = class_pairs(num_classes).collect();
    let train_pair = |(i, j): (usize, usize)| -> Result<BinaryModel> {
        let idx: Vec<usize> = members[i].iter().chain(&members[j]).copied().collect();
        let samples: Vec<&[f64]> = idx.iter().map(|&k| set.spectrum(k)).collect();
        let labels: Vec<i8> = idx.iter().map(|&k| if set.classes[k] == i { 1 } else { -1 }).collect();
        let pixels: Vec<u32> = idx.iter().map(|&k| set.pixels[k]).collect();
        let (mut model, _) = train_binary_with(&samples, &labels, Some(&pixels), nu, kernel, &options.solver)?;
        let pair_seed = seed ^ (pair_index(num_classes, i, j) as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        calibrate(&mut model, &samples, &labels, options, pair_seed)?;
        Ok(model)
    };
    let models: Result<Vec<BinaryModel>> = if options.parallel {
        pairs.par_iter().map(|&p| train_pair(p)).collect()
    } else {
        pairs.iter().map(|&p| train_pair(p)).collect()
    };
    Ok(MulticlassModel {
        num_classes,
        bands: set.bands,
        kernel: *kernel,
        pairs: models?,
    })
}

/// Fits the pair's sigmoid on held-out decision values from a stratified
/// internal cross-validation.
fn calibrate(
    model: &mut BinaryModel,
    samples: &[&[f64]],
    labels: &[i8],
    options: &TrainOptions,
    seed: u64,
) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y > 0).count();
    let neg = labels.len() - pos;
    if pos.min(neg) < options.min_per_class_for_sigmoid || options.sigmoid_folds < 2 {
        model.rho = FALLBACK_SIGMOID.0;
        model.tau = FALLBACK_SIGMOID.1;
        model.sigmoid_fallback = true;
        return Ok(());
    }
    let folds = stratified_folds(labels, options.sigmoid_folds, seed);
    let mut held_out = vec![0.0; labels.len()];
    for fold in 0..options.sigmoid_folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&k| folds[k] != fold).collect();
        let sub_samples: Vec<&[f64]> = train.iter().map(|&k| samples[k]).collect();
        let sub_labels: Vec<i8> = train.iter().map(|&k| labels[k]).collect();
        let nu = model.nu.min(nu_max(&sub_labels));
        let sol = solve_nu_dual(&sub_samples, &sub_labels, nu, &model.kernel, &options.solver)?;
        for k in (0..labels.len()).filter(|&k| folds[k] == fold) {
            let mut f = sol.bias;
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    f += a * f64::from(sub_labels[t]) * model.kernel.eval(sub_samples[t], samples[k]);
                }
            }
            held_out[k] = f;
        }
    }
    let fit = fit_sigmoid(&held_out, labels)?;
    model.rho = fit.rho;
    model.tau = fit.tau;
    model.sigmoid_fallback = false;
    Ok(())
}

/// Assigns each point to one of `k` folds, balancing every label
/// separately. Deterministic for a fixed seed.
pub(crate) fn stratified_folds<T: Copy + Eq + std::hash::Hash + Ord>(labels: &[T], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: HashMap<T, Vec<usize>> = HashMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut keys: Vec<T> = groups.keys().copied().collect();
    keys.sort();
    let mut folds = vec![0; labels.len()];
    for key in keys {
        let mut members = groups.remove(&key).expect("key present");
        members.shuffle(&mut rng);
        for (rank, i) in members.into_iter().enumerate() {
            folds[i] = rank % k;
        }
    }
    folds
}

/// Coupled class probabilities of one spectrum, computed pair by pair.
pub fn predict_pixel(model: &MulticlassModel, x: &[f64]) -> Result<Coupled> {
    if x.len() != model.bands {
        return Err(HsiError::LengthMismatch {
            expected: model.bands,
            actual: x.len(),
        });
    }
    if model.num_classes == 1 {
        return Ok(Coupled {
            p: vec![1.0],
            singular: false,
        });
    }
    let c = model.num_classes;
    let r = PairwiseMatrix::from_upper(c, |i, j| {
        let m = model.pair(i, j);
        sigmoid(decision(m, x), m.rho, m.tau)
    });
    couple(&r)
}

/// Support vectors shared between pairs are evaluated once per pixel.
struct PreparedModel {
    unique: Vec<f32>,
    /// Per pair, `(unique index, alpha_i y_i)` in the pair's own order.
    terms: Vec<Vec<(usize, f64)>>,
}

impl PreparedModel {
    fn new(model: &MulticlassModel) -> Self {
        let mut by_pixel: HashMap<u32, usize> = HashMap::new();
        let mut unique = Vec::new();
        let mut count = 0usize;
        let mut terms = Vec::with_capacity(model.pairs.len());
        for pair in &model.pairs {
            let mut t = Vec::with_capacity(pair.num_sv());
            for k in 0..pair.num_sv() {
                let sv = pair.support_vector(k);
                let pixel = pair.sv_pixels[k];
                let existing = if pixel == INLINE_SV {
                    None
                } else {
                    by_pixel.get(&pixel).copied()
                };
                let slot = match existing {
                    Some(slot) if unique[slot * model.bands..(slot + 1) * model.bands] == *sv => slot,
                    _ => {
                        unique.extend_from_slice(sv);
                        if pixel != INLINE_SV {
                            by_pixel.insert(pixel, count);
                        }
                        count += 1;
                        count - 1
                    }
                };
                t.push((slot, pair.alphas[k]));
            }
            terms.push(t);
        }
        PreparedModel { unique, terms }
    }

    fn probabilities(&self, model: &MulticlassModel, x: &[f64], kvals: &mut Vec<f64>) -> Result<Coupled> {
        let c = model.num_classes;
        if c == 1 {
            return Ok(Coupled {
                p: vec![1.0],
                singular: false,
            });
        }
        kvals.clear();
        kvals.extend(
            self.unique
                .chunks_exact(model.bands)
                .map(|sv| model.kernel.eval_f32(sv, x)),
        );
        let r = PairwiseMatrix::from_upper(c, |i, j| {
            let idx = pair_index(c, i, j);
            let pair = &model.pairs[idx];
            let mut f = 0.0;
            for &(slot, a) in &self.terms[idx] {
                f += a * kvals[slot];
            }
            sigmoid(f + pair.bias, pair.rho, pair.tau)
        });
        couple(&r)
    }
}

/// Coupled probabilities for every pixel of the cube.
pub fn predict_probabilities(model: &MulticlassModel, cube: &HyperCube) -> Result<ProbabilityTensor> {
    if cube.bands != model.bands {
        return Err(HsiError::Dimension(format!(
            "model expects {} bands, cube has {}",
            model.bands, cube.bands
        )));
    }
    let prepared = PreparedModel::new(model);
    let spectra = cube.pixel_major();
    let n = cube.num_pixels();
    let per_pixel: Vec<Coupled> = spectra
        .par_chunks_exact(cube.bands)
        .map_init(Vec::new, |kvals, x| prepared.probabilities(model, x, kvals))
        .collect::<Result<_>>()?;
    let singular = per_pixel.iter().filter(|c| c.singular).count();
    if singular > 0 {
        log::warn!("{singular} pixels fell back to uniform probabilities");
    }
    let mut tensor = ProbabilityTensor::zeros(cube.height, cube.width, model.num_classes);
    for (p, coupled) in per_pixel.iter().enumerate() {
        for (k, &v) in coupled.p.iter().enumerate() {
            tensor.values[k * n + p] = v;
        }
    }
    Ok(tensor)
}

/// Stage-1 tensor: coupled probabilities everywhere except on training
/// pixels, which hold the one-hot vector of their class.
pub fn predict_tensor(model: &MulticlassModel, cube: &HyperCube, split: &SplitSpec) -> Result<ProbabilityTensor> {
    let mut tensor = predict_probabilities(model, cube)?;
    let n = tensor.num_pixels();
    for px in &split.training {
        if px.class >= model.num_classes {
            return Err(HsiError::InvalidSplit(format!(
                "training class {} exceeds model class count {}",
                px.class + 1,
                model.num_classes
            )));
        }
        let p = px.index(cube.width);
        for k in 0..model.num_classes {
            tensor.values[k * n + p] = if k == px.class { 1.0 } else { 0.0 };
        }
    }
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_enumerates_in_order() {
        for c in 2..7 {
            for (expected, (i, j)) in class_pairs(c).enumerate() {
                assert_eq!(pair_index(c, i, j), expected);
            }
            assert_eq!(class_pairs(c).count(), c * (c - 1) / 2);
        }
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let labels: Vec<i8> = (0..23).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let a = stratified_folds(&labels, 5, 9);
        let b = stratified_folds(&labels, 5, 9);
        assert_eq!(a, b);
        for fold in 0..5 {
            let pos = (0..23).filter(|&i| a[i] == fold && labels[i] == 1).count();
            assert!((1..=2).contains(&pos));
        }
    }
}
