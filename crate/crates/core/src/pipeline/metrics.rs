use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{HsiError, Result};
use crate::io::encode_pgm;
use crate::types::{ConfusionMatrix, LabelMap, LabeledPixel, ProbabilityTensor};

/// Accuracy figures of one classification. All ratios are computed exactly
/// from the integer confusion counts and rounded once to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Producer's accuracy per class; `None` for classes without test pixels.
    pub per_class: Vec<Option<f64>>,
}

fn ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("bounded ratio converts to f64")
}

/// OA, AA and Cohen's kappa of a confusion matrix (rows are truth).
pub fn metrics_from_confusion(confusion: &ConfusionMatrix) -> Result<MetricsReport> {
    let c = confusion.num_classes;
    let total = confusion.total();
    if total == 0 {
        return Err(HsiError::EmptyTesting);
    }
    let oa = ratio(confusion.trace(), total);

    let mut per_class = Vec::with_capacity(c);
    let mut aa_sum = BigRational::zero();
    let mut tested = 0u64;
    for k in 0..c {
        let row = confusion.row_sum(k);
        if row == 0 {
            per_class.push(None);
            continue;
        }
        let acc = ratio(confusion.get(k, k), row);
        per_class.push(Some(to_f64(&acc)));
        aa_sum += acc;
        tested += 1;
    }
    let aa = aa_sum / BigInt::from(tested);

    // kappa = (N * trace - sum r_k c_k) / (N^2 - sum r_k c_k)
    let n = BigInt::from(total);
    let chance: BigInt = (0..c)
        .map(|k| BigInt::from(confusion.row_sum(k)) * BigInt::from(confusion.col_sum(k)))
        .sum();
    let num = &n * BigInt::from(confusion.trace()) - &chance;
    let den = &n * &n - &chance;
    // Zero denominator: truth and prediction are the same single class.
    let kappa = if den.is_zero() { 1.0 } else { to_f64(&BigRational::new(num, den)) };

    Ok(MetricsReport {
        confusion: confusion.clone(),
        oa: to_f64(&oa),
        aa: to_f64(&aa),
        kappa,
        per_class,
    })
}

/// Scores `predicted` against `truth` over the testing pixels.
pub fn compute_metrics(predicted: &LabelMap, truth: &LabelMap, testing: &[LabeledPixel]) -> Result<MetricsReport> {
    if !predicted.same_shape(truth) {
        return Err(HsiError::Dimension(format!(
            "prediction is {}x{}, ground truth {}x{}",
            predicted.height, predicted.width, truth.height, truth.width
        )));
    }
    if testing.is_empty() {
        return Err(HsiError::EmptyTesting);
    }
    let c = truth.num_classes.max(predicted.num_classes);
    let mut confusion = ConfusionMatrix::new(c);
    for px in testing {
        let p = px.index(truth.width);
        let t = truth.class_of(p).ok_or_else(|| {
            HsiError::InvalidSplit(format!("testing pixel ({}, {}) is unlabeled", px.row, px.col))
        })?;
        let y = predicted.class_of(p).ok_or_else(|| {
            HsiError::InvalidParameter(format!("no prediction at testing pixel ({}, {})", px.row, px.col))
        })?;
        confusion.add(t, y);
    }
    metrics_from_confusion(&confusion)
}

/// Labels each pixel with its most probable class (1-based); ties go to
/// the smallest class index.
pub fn classify_argmax(tensor: &ProbabilityTensor) -> Result<LabelMap> {
    let n = tensor.num_pixels();
    let c = tensor.num_classes;
    if c == 0 || c > u16::MAX as usize {
        return Err(HsiError::InvalidParameter(format!("{c} classes")));
    }
    let mut best = vec![0u16; n];
    let mut best_val = tensor.slice(0).to_vec();
    for k in 1..c {
        for (p, &v) in tensor.slice(k).iter().enumerate() {
            if v > best_val[p] {
                best_val[p] = v;
                best[p] = k as u16;
            }
        }
    }
    LabelMap::new(tensor.height, tensor.width, c, best.into_iter().map(|k| k + 1).collect())
}

/// Per-pixel count of runs in which a testing pixel was misclassified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub num_runs: usize,
    pub counts: Vec<u32>,
    /// True where the pixel was a testing pixel in at least one run.
    pub tested: Vec<bool>,
}

impl Heatmap {
    /// Greymap with `maxval` equal to the number of runs.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        let maxval = u16::try_from(self.num_runs.max(1))
            .map_err(|_| HsiError::InvalidParameter(format!("{} runs exceed the PGM range", self.num_runs)))?;
        let values: Vec<u16> = self.counts.iter().map(|&v| v as u16).collect();
        encode_pgm(self.width, self.height, maxval, &values)
    }

    /// `row,col,count,tested` records, one per pixel in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,count,tested\n");
        for p in 0..self.counts.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p / self.width,
                p % self.width,
                self.counts[p],
                u8::from(self.tested[p])
            );
        }
        out
    }
}

/// Accumulates misclassifications over runs, each given as its predicted
/// map and its testing pixels.
pub fn misclassification_heatmap(truth: &LabelMap, runs: &[(&LabelMap, &[LabeledPixel])]) -> Result<Heatmap> {
    let n = truth.num_pixels();
    let mut counts = vec![0u32; n];
    let mut tested = vec![false; n];
    for (predicted, testing) in runs {
        if !predicted.same_shape(truth) {
            return Err(HsiError::Dimension("prediction and ground truth differ in shape".into()));
        }
        for px in testing.iter() {
            let p = px.index(truth.width);
            let t = truth.class_of(p).ok_or_else(|| {
                HsiError::InvalidSplit(format!("testing pixel ({}, {}) is unlabeled", px.row, px.col))
            })?;
            tested[p] = true;
            if predicted.class_of(p) != Some(t) {
                counts[p] += 1;
            }
        }
    }
    Ok(Heatmap {
        height: truth.height,
        width: truth.width,
        num_runs: runs.len(),
        counts,
        tested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.oa, 0.7);
        assert_eq!(m.aa, 0.7);
        assert_eq!(m.kappa, 0.4);
        assert_eq!(m.per_class, vec![Some(0.8), Some(0.6)]);
    }

    #[test]
    fn untested_class_is_excluded_from_aa() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 0, 0], vec![0, 0, 2]]).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!(m.per_class[1], None);
        assert_eq!(m.aa, 0.875);
    }

    #[test]
    fn perfect_single_class() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            metrics_from_confusion(&ConfusionMatrix::new(3)),
            Err(HsiError::EmptyTesting)
        ));
    }

    #[test]
    fn argmax_ties_pick_first() {
        let t = ProbabilityTensor::new(1, 2, 3, vec![0.4, 0.2, 0.4, 0.2, 0.2, 0.6]).unwrap();
        let l = classify_argmax(&t).unwrap();
        assert_eq!(l.labels, vec![1, 3]);
    }

    #[test]
    fn heatmap_counts_runs() {
        let truth = LabelMap::from_labels(1, 3, vec![1, 2, 0]).unwrap();
        let good = truth.clone();
        let bad = LabelMap::new(1, 3, 2, vec![2, 2, 1]).unwrap();
        let testing = [LabeledPixel { row: 0, col: 0, class: 0 }];
        let h = misclassification_heatmap(&truth, &[(&good, &testing), (&bad, &testing), (&bad, &testing)]).unwrap();
        assert_eq!(h.counts, vec![2, 0, 0]);
        assert_eq!(h.tested, vec![true, false, false]);
        assert_eq!(h.to_pgm().unwrap(), b"P5\n3 1\n3\n\x02\x00\x00".to_vec());
    }
}
