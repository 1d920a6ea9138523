//! Shared domain types: the spectral cube, label maps, training/testing
//! splits, probability tensors and confusion matrices.
//!
//! Class indices are 0-based everywhere in memory. Only [`LabelMap`] keeps
//! the on-disk convention of 1-based labels with 0 meaning "unlabeled".

use std::collections::HashSet;

use crate::error::{HsiError, Result};

/// An H×W×B spectral cube stored band-sequentially: all pixels of band 0
/// in row-major order, then band 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f64>,
    /// Set once every band has been min-max scaled to [0, 1].
    pub normalized: bool,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        let cube = HyperCube {
            height,
            width,
            bands,
            data,
            normalized: false,
        };
        validate_cube(&cube)?;
        Ok(cube)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.num_pixels();
        &self.data[b * n..(b + 1) * n]
    }

    /// Spectrum of the pixel at row-major index `pixel`.
    pub fn spectrum(&self, pixel: usize) -> Vec<f64> {
        let n = self.num_pixels();
        (0..self.bands).map(|b| self.data[b * n + pixel]).collect()
    }

    /// The cube transposed to pixel-interleaved order (`n × bands`, one
    /// contiguous spectrum per pixel).
    pub fn pixel_major(&self) -> Vec<f64> {
        let n = self.num_pixels();
        let mut out = vec![0.0; n * self.bands];
        for b in 0..self.bands {
            let band = self.band(b);
            for (p, &v) in band.iter().enumerate() {
                out[p * self.bands + b] = v;
            }
        }
        out
    }
}

/// Checks the dimension and finiteness invariants of a cube.
pub fn validate_cube(cube: &HyperCube) -> Result<()> {
    if cube.height == 0 || cube.width == 0 || cube.bands == 0 {
        return Err(HsiError::Dimension(format!(
            "cube dimensions must be positive, got {}x{}x{}",
            cube.height, cube.width, cube.bands
        )));
    }
    let expected = cube.height * cube.width * cube.bands;
    if cube.data.len() != expected {
        return Err(HsiError::Dimension(format!(
            "cube {}x{}x{} needs {} values, got {}",
            cube.height,
            cube.width,
            cube.bands,
            expected,
            cube.data.len()
        )));
    }
    if let Some(index) = cube.data.iter().position(|v| !v.is_finite()) {
        return Err(HsiError::NonFinite { index });
    }
    Ok(())
}

/// Maps every band affinely onto [0, 1]. Constant bands map to 0.
pub fn normalize_cube(cube: &HyperCube) -> Result<HyperCube> {
    validate_cube(cube)?;
    let n = cube.num_pixels();
    let mut data = Vec::with_capacity(cube.data.len());
    for b in 0..cube.bands {
        let band = cube.band(b);
        let (lo, hi) = band
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        if span > 0.0 {
            data.extend(band.iter().map(|&v| (v - lo) / span));
        } else {
            data.extend(std::iter::repeat(0.0).take(n));
        }
    }
    Ok(HyperCube {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        data,
        normalized: true,
    })
}

/// Ground-truth or predicted labels, row-major, `0` = unlabeled and
/// `1..=num_classes` the classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(HsiError::Dimension("label map dimensions must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(HsiError::LengthMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize > num_classes) {
            return Err(HsiError::Dimension(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            labels,
        })
    }

    /// Builds a map whose class count is the largest label present.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        let c = labels.iter().copied().max().unwrap_or(0) as usize;
        Self::new(height, width, c, labels)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// 0-based class of a pixel, `None` when unlabeled.
    pub fn class_of(&self, pixel: usize) -> Option<usize> {
        match self.labels[pixel] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    /// Row-major pixel indices of each class, in increasing order.
    pub fn pixels_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (p, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                by_class[l as usize - 1].push(p);
            }
        }
        by_class
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// A pixel position with its 0-based ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledPixel {
    pub row: usize,
    pub col: usize,
    pub class: usize,
}

impl LabeledPixel {
    pub fn index(&self, width: usize) -> usize {
        self.row * width + self.col
    }
}

/// Disjoint training and testing pixel sets drawn from one label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub training: Vec<LabeledPixel>,
    pub testing: Vec<LabeledPixel>,
    pub seed: u64,
}

impl SplitSpec {
    /// Builds a split from its training pixel positions; every other
    /// labeled pixel becomes a testing pixel.
    pub fn from_training(labels: &LabelMap, training: &[(usize, usize)], seed: u64) -> Result<Self> {
        let mut chosen = vec![false; labels.num_pixels()];
        let mut train = Vec::with_capacity(training.len());
        for &(row, col) in training {
            if row >= labels.height || col >= labels.width {
                return Err(HsiError::InvalidSplit(format!(
                    "pixel ({row}, {col}) outside {}x{} map",
                    labels.height, labels.width
                )));
            }
            let p = row * labels.width + col;
            let class = labels.class_of(p).ok_or_else(|| {
                HsiError::InvalidSplit(format!("training pixel ({row}, {col}) is unlabeled"))
            })?;
            if std::mem::replace(&mut chosen[p], true) {
                return Err(HsiError::InvalidSplit(format!(
                    "training pixel ({row}, {col}) listed twice"
                )));
            }
            train.push(LabeledPixel { row, col, class });
        }
        let testing = (0..labels.num_pixels())
            .filter(|&p| !chosen[p])
            .filter_map(|p| {
                labels.class_of(p).map(|class| LabeledPixel {
                    row: p / labels.width,
                    col: p % labels.width,
                    class,
                })
            })
            .collect();
        let split = SplitSpec {
            training: train,
            testing,
            seed,
        };
        split.validate(labels)?;
        Ok(split)
    }

    /// Checks disjointness, label agreement and per-class coverage.
    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.training.len());
        for px in self.training.iter().chain(&self.testing) {
            if px.row >= labels.height || px.col >= labels.width {
                return Err(HsiError::InvalidSplit(format!(
                    "pixel ({}, {}) outside label map",
                    px.row, px.col
                )));
            }
            if labels.class_of(px.index(labels.width)) != Some(px.class) {
                return Err(HsiError::InvalidSplit(format!(
                    "pixel ({}, {}) does not carry class {} in the label map",
                    px.row,
                    px.col,
                    px.class + 1
                )));
            }
            if !seen.insert((px.row, px.col)) {
                return Err(HsiError::InvalidSplit(format!(
                    "pixel ({}, {}) appears more than once",
                    px.row, px.col
                )));
            }
        }
        let mut covered = vec![false; labels.num_classes];
        for px in &self.training {
            covered[px.class] = true;
        }
        for (k, pixels) in labels.pixels_by_class().iter().enumerate() {
            if !pixels.is_empty() && !covered[k] {
                return Err(HsiError::InvalidSplit(format!(
                    "class {} has no training pixel",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Boolean mask over the map, true on training pixels.
    pub fn training_mask(&self, height: usize, width: usize) -> Vec<bool> {
        let mut mask = vec![false; height * width];
        for px in &self.training {
            mask[px.index(width)] = true;
        }
        mask
    }
}

/// Per-pixel class scores, stored class-major: the full H×W map of class 0,
/// then class 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTensor {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub values: Vec<f64>,
}

impl ProbabilityTensor {
    pub fn new(height: usize, width: usize, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(HsiError::Dimension("tensor dimensions must be positive".into()));
        }
        let expected = height * width * num_classes;
        if values.len() != expected {
            return Err(HsiError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::NonFinite { index });
        }
        Ok(ProbabilityTensor {
            height,
            width,
            num_classes,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        ProbabilityTensor {
            height,
            width,
            num_classes,
            values: vec![0.0; height * width * num_classes],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn slice(&self, class: usize) -> &[f64] {
        let n = self.num_pixels();
        &self.values[class * n..(class + 1) * n]
    }

    pub fn slice_mut(&mut self, class: usize) -> &mut [f64] {
        let n = self.num_pixels();
        &mut self.values[class * n..(class + 1) * n]
    }

    pub fn pixel(&self, pixel: usize) -> Vec<f64> {
        let n = self.num_pixels();
        (0..self.num_classes)
            .map(|k| self.values[k * n + pixel])
            .collect()
    }

    /// Rounds every entry to single precision, the resolution at which
    /// tensors are persisted.
    pub fn quantized(&self) -> ProbabilityTensor {
        ProbabilityTensor {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

/// c×c counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(HsiError::Dimension("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.num_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, k)).sum()
    }
}
