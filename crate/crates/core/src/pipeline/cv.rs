use rayon::prelude::*;

use crate::error::{HsiError, Result};
use crate::svm::multiclass::{stratified_folds, train_on_set, TrainingSet};
use crate::svm::{predict_pixel, KernelSpec, TrainOptions};
use crate::types::{HyperCube, SplitSpec};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub nu: f64,
    pub sigma: f64,
}

/// Mean held-out accuracy of one grid point; `None` when some fold could
/// not be trained (typically an infeasible ν).
#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    pub point: GridPoint,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub best: GridPoint,
    pub best_accuracy: f64,
    pub folds: usize,
    pub scores: Vec<CvScore>,
}

/// Cartesian product of the two axes, ν varying fastest.
pub fn grid(nus: &[f64], sigmas: &[f64]) -> Vec<GridPoint> {
    sigmas
        .iter()
        .flat_map(|&sigma| nus.iter().map(move |&nu| GridPoint { nu, sigma }))
        .collect()
}

/// Stratified k-fold cross-validation over the training pixels of `split`.
/// Fold count drops to the smallest class size when that is below
/// `folds`. Ties in accuracy prefer the smaller σ, then the smaller ν.
pub fn cross_validate(
    cube: &HyperCube,
    split: &SplitSpec,
    points: &[GridPoint],
    folds: usize,
    options: &TrainOptions,
) -> Result<CvReport> {
    if points.is_empty() {
        return Err(HsiError::InvalidParameter("empty parameter grid".into()));
    }
    if folds < 2 {
        return Err(HsiError::InvalidParameter(format!("{folds} folds")));
    }
    let set = TrainingSet::gather(cube, &split.training);
    let num_classes = set.classes.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut sizes = vec![0usize; num_classes];
    for &c in &set.classes {
        sizes[c] += 1;
    }
    let smallest = sizes.iter().copied().filter(|&s| s > 0).min().unwrap_or(0);
    if smallest < 2 {
        let class = sizes.iter().position(|&s| s == smallest).unwrap_or(0) + 1;
        return Err(HsiError::ClassTooSmall {
            class,
            available: smallest,
            requested: 2,
        });
    }
    let k = folds.min(smallest);
    if k < folds {
        log::warn!("smallest class has {smallest} training pixels; using {k} folds instead of {folds}");
    }
    let assignment = stratified_folds(&set.classes, k, split.seed);

    let subsets: Vec<(TrainingSet, Vec<usize>)> = (0..k)
        .map(|fold| {
            let train: Vec<usize> = (0..set.classes.len()).filter(|&i| assignment[i] != fold).collect();
            let held: Vec<usize> = (0..set.classes.len()).filter(|&i| assignment[i] == fold).collect();
            (subset(&set, &train), held)
        })
        .collect();

    let inner = TrainOptions {
        parallel: false,
        ..options.clone()
    };
    let score = |p: &GridPoint| -> Result<Option<f64>> {
        let kernel = KernelSpec::rbf(p.sigma)?;
        let mut correct = 0usize;
        for (fold, (train, held)) in subsets.iter().enumerate() {
            let seed = split.seed.wrapping_add(fold as u64 + 1);
            let model = match train_on_set(train, num_classes, p.nu, &kernel, &inner, seed) {
                Ok(m) => m,
                Err(HsiError::InfeasibleNu { nu, nu_max }) => {
                    log::info!("skipping nu={nu} sigma={}: infeasible (max {nu_max})", p.sigma);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            for &i in held {
                let probs = predict_pixel(&model, set.spectrum(i))?.p;
                if argmax(&probs) == set.classes[i] {
                    correct += 1;
                }
            }
        }
        Ok(Some(correct as f64 / set.classes.len() as f64))
    };
    let accuracies: Vec<Option<f64>> = if options.parallel {
        points.par_iter().map(score).collect::<Result<_>>()?
    } else {
        points.iter().map(score).collect::<Result<_>>()?
    };

    let scores: Vec<CvScore> = points
        .iter()
        .zip(accuracies)
        .map(|(&point, accuracy)| CvScore { point, accuracy })
        .collect();
    let best = scores
        .iter()
        .filter_map(|s| s.accuracy.map(|a| (a, s.point)))
        .min_by(|(a1, p1), (a2, p2)| {
            a2.total_cmp(a1)
                .then(p1.sigma.total_cmp(&p2.sigma))
                .then(p1.nu.total_cmp(&p2.nu))
        })
        .ok_or_else(|| HsiError::InvalidParameter("no grid point could be trained".into()))?;
    Ok(CvReport {
        best: best.1,
        best_accuracy: best.0,
        folds: k,
        scores,
    })
}

fn subset(set: &TrainingSet, idx: &[usize]) -> TrainingSet {
    TrainingSet {
        bands: set.bands,
        spectra: idx.iter().flat_map(|&i| set.spectrum(i).iter().copied()).collect(),
        classes: idx.iter().map(|&i| set.classes[i]).collect(),
        pixels: idx.iter().map(|&i| set.pixels[i]).collect(),
    }
}

/// Index of the largest entry, first one on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}
