use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HsiError, Result};
use crate::types::{LabelMap, SplitSpec};

/// How many training pixels to draw from each class.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// Exact count for every class, indexed by 0-based class.
    Counts(Vec<usize>),
    /// Percentage in `(0, 100]` of each class; at least one pixel is
    /// drawn from every non-empty class.
    Percentage(f64),
}

impl SplitRule {
    fn count_for(&self, class: usize, available: usize) -> Result<usize> {
        match self {
            SplitRule::Counts(counts) => {
                let requested = *counts.get(class).ok_or_else(|| {
                    HsiError::InvalidParameter(format!("no training count given for class {}", class + 1))
                })?;
                if requested > available {
                    return Err(HsiError::ClassTooSmall {
                        class: class + 1,
                        available,
                        requested,
                    });
                }
                Ok(requested)
            }
            SplitRule::Percentage(pct) => {
                let n = (pct / 100.0 * available as f64).round() as usize;
                Ok(n.clamp(1, available))
            }
        }
    }

    fn validate(&self, labels: &LabelMap) -> Result<()> {
        match self {
            SplitRule::Counts(counts) if counts.len() < labels.num_classes => Err(HsiError::InvalidParameter(
                format!("{} training counts for {} classes", counts.len(), labels.num_classes),
            )),
            SplitRule::Percentage(p) if !(p.is_finite() && *p > 0.0 && *p <= 100.0) => {
                Err(HsiError::InvalidParameter(format!("training percentage {p} outside (0, 100]")))
            }
            _ => Ok(()),
        }
    }
}

/// Draws a stratified random split: for each class in turn, its pixels are
/// shuffled by one seeded stream and the first `n_k` become training.
/// Training pixels are returned in row-major order.
pub fn stratified_split(labels: &LabelMap, rule: &SplitRule, seed: u64) -> Result<SplitSpec> {
    rule.validate(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut training = Vec::new();
    for (class, mut pixels) in labels.pixels_by_class().into_iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let n = rule.count_for(class, pixels.len())?;
        if n == 0 {
            return Err(HsiError::InvalidSplit(format!("class {} would get no training pixel", class + 1)));
        }
        pixels.shuffle(&mut rng);
        training.extend(pixels[..n].iter().map(|&p| (p / labels.width, p % labels.width)));
    }
    training.sort_unstable();
    let split = SplitSpec::from_training(labels, &training, seed)?;
    if split.testing.is_empty() {
        log::warn!("split leaves no testing pixels");
    }
    Ok(split)
}

/// Number of training pixels per 0-based class.
pub fn training_counts(split: &SplitSpec, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for px in &split.training {
        counts[px.class] += 1;
    }
    counts
}
