use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::metrics::{classify_argmax, compute_metrics, misclassification_heatmap, Heatmap, MetricsReport};
use super::split::{stratified_split, SplitRule};
use crate::denoise::{denoise_tensor, DenoiseParams, TensorDiagnostics};
use crate::error::{HsiError, Result};
use crate::io;
use crate::svm::{predict_tensor, train_multiclass_with, KernelSpec, MulticlassModel, TrainOptions};
use crate::types::{normalize_cube, HyperCube, LabelMap, ProbabilityTensor, SplitSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSource {
    /// The same training pixels in every run; run `r` (1-based) seeds its
    /// calibration with `split.seed + r - 1`.
    Fixed(SplitSpec),
    /// A fresh stratified split per run, drawn with seed `base_seed + r`.
    Random(SplitRule),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub nu: f64,
    pub sigma: f64,
    pub denoise: DenoiseParams,
    pub split: SplitSource,
    pub base_seed: u64,
    pub runs: usize,
    /// Execute independent runs concurrently.
    pub parallel_runs: bool,
    pub train: TrainOptions,
}

impl RunConfig {
    pub fn new(nu: f64, sigma: f64, split: SplitSource) -> Self {
        RunConfig {
            nu,
            sigma,
            denoise: DenoiseParams::default(),
            split,
            base_seed: 0,
            runs: 1,
            parallel_runs: false,
            train: TrainOptions::default(),
        }
    }

    fn split_for(&self, labels: &LabelMap, run: usize) -> Result<SplitSpec> {
        match &self.split {
            SplitSource::Fixed(split) => {
                split.validate(labels)?;
                let mut split = split.clone();
                split.seed = split.seed.wrapping_add(run as u64 - 1);
                Ok(split)
            }
            SplitSource::Random(rule) => stratified_split(labels, rule, self.base_seed.wrapping_add(run as u64)),
        }
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub split: SplitSpec,
    pub model: MulticlassModel,
    /// Stage-1 tensor at storage (`f32`) precision; this is the input of
    /// Stage 2 so that file-based and in-memory pipelines agree bit for bit.
    pub prob_stage1: ProbabilityTensor,
    pub prob_stage2: ProbabilityTensor,
    pub pred_stage1: LabelMap,
    pub pred_stage2: LabelMap,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
    pub diagnostics: TensorDiagnostics,
}

/// Trains, predicts, denoises and scores one split. `cube` must already be
/// normalized.
pub fn run_once(
    cube: &HyperCube,
    labels: &LabelMap,
    split: &SplitSpec,
    nu: f64,
    kernel: &KernelSpec,
    denoise: &DenoiseParams,
    train: &TrainOptions,
) -> Result<RunArtifacts> {
    if split.testing.is_empty() {
        return Err(HsiError::EmptyTesting);
    }
    let model = train_multiclass_with(cube, split, nu, kernel, train)?;
    let prob_stage1 = predict_tensor(&model, cube, split)?.quantized();
    let mask = split.training_mask(cube.height, cube.width);
    let (prob_stage2, diagnostics) = denoise_tensor(&prob_stage1, &mask, denoise)?;
    let pred_stage1 = classify_argmax(&prob_stage1)?;
    let pred_stage2 = classify_argmax(&prob_stage2)?;
    let stage1 = compute_metrics(&pred_stage1, labels, &split.testing)?;
    let stage2 = compute_metrics(&pred_stage2, labels, &split.testing)?;
    Ok(RunArtifacts {
        split: split.clone(),
        model,
        prob_stage1,
        prob_stage2,
        pred_stage1,
        pred_stage2,
        stage1,
        stage2,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// 1-based run number.
    pub run: usize,
    pub split: SplitSpec,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
    pub pred_stage1: LabelMap,
    pub pred_stage2: LabelMap,
    pub denoise_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageReport {
    pub runs: Vec<RunSummary>,
    pub heatmap_stage1: Heatmap,
    pub heatmap_stage2: Heatmap,
}

impl TwoStageReport {
    fn stage(&self, stage: usize) -> impl Iterator<Item = &MetricsReport> {
        self.runs.iter().map(move |r| if stage == 1 { &r.stage1 } else { &r.stage2 })
    }

    pub fn oa(&self, stage: usize) -> MeanStd {
        MeanStd::of(&self.stage(stage).map(|m| m.oa).collect::<Vec<_>>())
    }

    pub fn aa(&self, stage: usize) -> MeanStd {
        MeanStd::of(&self.stage(stage).map(|m| m.aa).collect::<Vec<_>>())
    }

    pub fn kappa(&self, stage: usize) -> MeanStd {
        MeanStd::of(&self.stage(stage).map(|m| m.kappa).collect::<Vec<_>>())
    }

    /// Per-class accuracy over the runs in which the class was tested.
    pub fn class_accuracy(&self, stage: usize, class: usize) -> MeanStd {
        let v: Vec<f64> = self
            .stage(stage)
            .filter_map(|m| m.per_class.get(class).copied().flatten())
            .collect();
        MeanStd::of(&v)
    }

    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.denoise_converged)
    }

    pub fn summary_csv(&self, num_classes: usize) -> String {
        let mut out = String::from("stage,metric,mean,std\n");
        for stage in [1, 2] {
            let mut rows = vec![
                ("oa".to_string(), self.oa(stage)),
                ("aa".to_string(), self.aa(stage)),
                ("kappa".to_string(), self.kappa(stage)),
            ];
            rows.extend((0..num_classes).map(|k| (format!("class_{}", k + 1), self.class_accuracy(stage, k))));
            for (name, ms) in rows {
                let _ = writeln!(out, "{stage},{name},{:.6},{:.6}", ms.mean, ms.std);
            }
        }
        out
    }
}

/// `run,stage,oa,aa,kappa,class_1,…` with two records per run.
pub fn metrics_csv(runs: &[RunSummary], num_classes: usize) -> String {
    let mut out = String::from("run,stage,oa,aa,kappa");
    for k in 1..=num_classes {
        let _ = write!(out, ",class_{k}");
    }
    out.push('\n');
    for r in runs {
        for (stage, m) in [(1, &r.stage1), (2, &r.stage2)] {
            let _ = write!(out, "{},{},{:.6},{:.6},{:.6}", r.run, stage, m.oa, m.aa, m.kappa);
            for k in 0..num_classes {
                match m.per_class.get(k).copied().flatten() {
                    Some(a) => {
                        let _ = write!(out, ",{a:.6}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

fn diagnostics_csv(d: &TensorDiagnostics) -> String {
    let mut out = String::from("class,iteration,relative_change,objective\n");
    for (k, diag) in d.per_class.iter().enumerate() {
        for rec in &diag.trace {
            let _ = writeln!(
                out,
                "{},{},{:e},{:.12e}",
                k + 1,
                rec.iteration,
                rec.relative_change,
                rec.objective
            );
        }
    }
    out
}

fn write_run(dir: &Path, a: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_split(&dir.join("split.hss"), &a.split)?;
    io::write_model(&dir.join("model.hsm"), &a.model)?;
    io::write_probabilities(&dir.join("prob_stage1.hsp"), &a.prob_stage1)?;
    io::write_probabilities(&dir.join("prob_stage2.hsp"), &a.prob_stage2)?;
    io::write_labels(&dir.join("pred_stage1.hsl"), &a.pred_stage1)?;
    io::write_labels(&dir.join("pred_stage2.hsl"), &a.pred_stage2)?;
    io::write_atomic(&dir.join("denoise.csv"), diagnostics_csv(&a.diagnostics).as_bytes())?;
    Ok(())
}

/// Repeats the two-stage classification `config.runs` times. With an
/// output directory, each run's artifacts land in `run_<k>/` as soon as the
/// run finishes, followed by `metrics.csv`, the heatmaps and
/// `summary.csv`. When a run fails, the artifacts and metrics of the runs
/// that completed are kept and the first error is returned.
pub fn run_two_stage(
    cube: &HyperCube,
    labels: &LabelMap,
    config: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<TwoStageReport> {
    if config.runs == 0 {
        return Err(HsiError::InvalidParameter("at least one run is required".into()));
    }
    if cube.height != labels.height || cube.width != labels.width {
        return Err(HsiError::Dimension(format!(
            "cube is {}x{}, labels {}x{}",
            cube.height, cube.width, labels.height, labels.width
        )));
    }
    config.denoise.validate()?;
    let kernel = KernelSpec::rbf(config.sigma)?;
    let normalized;
    let cube = if cube.normalized {
        cube
    } else {
        normalized = normalize_cube(cube)?;
        &normalized
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let one = |run: usize| -> Result<RunSummary> {
        let split = config.split_for(labels, run)?;
        let a = run_once(cube, labels, &split, config.nu, &kernel, &config.denoise, &config.train)?;
        if let Some(dir) = out_dir {
            write_run(&dir.join(format!("run_{run}")), &a)?;
        }
        log::info!(
            "run {run}: stage 1 oa={:.4} stage 2 oa={:.4}",
            a.stage1.oa,
            a.stage2.oa
        );
        Ok(RunSummary {
            run,
            denoise_converged: a.diagnostics.all_converged(),
            split: a.split,
            stage1: a.stage1,
            stage2: a.stage2,
            pred_stage1: a.pred_stage1,
            pred_stage2: a.pred_stage2,
        })
    };
    let results: Vec<Result<RunSummary>> = if config.parallel_runs {
        (1..=config.runs).into_par_iter().map(one).collect()
    } else {
        let mut out = Vec::with_capacity(config.runs);
        for run in 1..=config.runs {
            let r = one(run);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };

    let mut runs = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let num_classes = labels.num_classes;
    if let Some(dir) = out_dir {
        io::write_atomic(&dir.join("metrics.csv"), metrics_csv(&runs, num_classes).as_bytes())?;
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let heat = |stage: usize| {
        let pairs: Vec<(&LabelMap, &[crate::types::LabeledPixel])> = runs
            .iter()
            .map(|r| {
                let pred = if stage == 1 { &r.pred_stage1 } else { &r.pred_stage2 };
                (pred, r.split.testing.as_slice())
            })
            .collect();
        misclassification_heatmap(labels, &pairs)
    };
    let report = TwoStageReport {
        heatmap_stage1: heat(1)?,
        heatmap_stage2: heat(2)?,
        runs,
    };
    if let Some(dir) = out_dir {
        for (name, h) in [("stage1", &report.heatmap_stage1), ("stage2", &report.heatmap_stage2)] {
            io::write_atomic(&dir.join(format!("heatmap_{name}.pgm")), &h.to_pgm()?)?;
            io::write_atomic(&dir.join(format!("heatmap_{name}.csv")), h.to_csv().as_bytes())?;
        }
        io::write_atomic(&dir.join("summary.csv"), report.summary_csv(num_classes).as_bytes())?;
    }
    if !report.all_converged() {
        log::warn!("denoising did not converge in every run");
    }
    Ok(report)
}
