//! Piecewise-constant synthetic scenes for tests and demos: the image is
//! cut into Voronoi regions, each carrying one class, and every pixel gets
//! its class mean spectrum plus Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HsiError, Result};
use crate::types::{HyperCube, LabelMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: usize,
    /// Number of Voronoi cells; cell `r` carries class `r % num_classes`.
    pub regions: usize,
    /// Amplitude of the class mean curves. Neighbouring classes differ by
    /// a quarter-period phase shift.
    pub separation: f64,
    /// Per-band noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 32,
            width: 32,
            bands: 8,
            num_classes: 4,
            regions: 8,
            separation: 0.25,
            noise: 0.25,
            seed: 0,
        }
    }
}

/// Mean spectrum of class `k`.
pub fn class_mean(spec: &SceneSpec, k: usize) -> Vec<f64> {
    let phase = 2.0 * PI * k as f64 / spec.num_classes as f64;
    (0..spec.bands)
        .map(|b| 0.5 + spec.separation * (2.0 * PI * b as f64 / spec.bands as f64 + phase).cos())
        .collect()
}

pub fn generate_scene(spec: &SceneSpec) -> Result<(HyperCube, LabelMap)> {
    if spec.height == 0 || spec.width == 0 || spec.bands == 0 {
        return Err(HsiError::Dimension("empty scene".into()));
    }
    if spec.num_classes == 0 || spec.regions < spec.num_classes || spec.num_classes > u16::MAX as usize {
        return Err(HsiError::InvalidParameter(format!(
            "{} regions cannot hold {} classes",
            spec.regions, spec.num_classes
        )));
    }
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| HsiError::InvalidParameter(format!("noise level {}: {e}", spec.noise)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<(f64, f64)> = (0..spec.regions)
        .map(|_| (rng.gen_range(0.0..spec.height as f64), rng.gen_range(0.0..spec.width as f64)))
        .collect();
    let means: Vec<Vec<f64>> = (0..spec.num_classes).map(|k| class_mean(spec, k)).collect();

    let n = spec.height * spec.width;
    let mut labels = vec![0u16; n];
    let mut data = vec![0.0; n * spec.bands];
    for p in 0..n {
        let (i, j) = ((p / spec.width) as f64 + 0.5, (p % spec.width) as f64 + 0.5);
        let region = centers
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a.0 - i).powi(2) + (a.1 - j).powi(2);
                let db = (b.0 - i).powi(2) + (b.1 - j).powi(2);
                da.total_cmp(&db)
            })
            .map(|(r, _)| r)
            .unwrap_or(0);
        let class = region % spec.num_classes;
        labels[p] = class as u16 + 1;
        for b in 0..spec.bands {
            data[b * n + p] = means[class][b] + noise.sample(&mut rng);
        }
    }
    let cube = HyperCube::new(spec.height, spec.width, spec.bands, data)?;
    let labels = LabelMap::new(spec.height, spec.width, spec.num_classes, labels)?;
    Ok((cube, labels))
}
