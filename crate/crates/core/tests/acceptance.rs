//! Acceptance checks. Each criterion prints one `PASS`, `FAIL` or `SKIP`
//! line with the measured figure; the test fails if any line is `FAIL`.
//! Everything runs inside a single test so the timing checks do not
//! compete with each other for cores.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use hsi_core::denoise::{admm_denoise, solve_u, DenoiseParams};
use hsi_core::io;
use hsi_core::pipeline::{
    compute_metrics, cross_validate, grid, metrics_from_confusion, run_two_stage, stratified_split, RunConfig,
    SplitRule, SplitSource, DEFAULT_FOLDS,
};
use hsi_core::svm::{couple, solve_nu_dual, KernelSpec, PairwiseMatrix, SolverConfig, TrainOptions};
use hsi_core::synthetic::{generate_scene, SceneSpec};
use hsi_core::{normalize_cube, ConfusionMatrix, LabelMap, LabeledPixel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        name,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn fft_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut elapsed = Duration::ZERO;
    for _ in 0..50 {
        let h = rng.gen_range(1..=16);
        let w = rng.gen_range(1..=16);
        let n = h * w;
        let params = DenoiseParams {
            beta2: log_uniform(&mut rng, 0.01, 10.0),
            mu: log_uniform(&mut rng, 0.01, 10.0),
            ..DenoiseParams::default()
        };
        let mut vec = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (v, s, wv, l1, l2) = (vec(n), vec(2 * n), vec(n), vec(2 * n), vec(n));
        let t = Instant::now();
        let u = solve_u(&v, &s, &wv, &l1, &l2, h, w, &params).unwrap();
        elapsed += t.elapsed();
        let reference = common::dense_solve_u(&v, &s, &wv, &l1, &l2, h, w, params.beta2, params.mu);
        worst = worst.max(rel_err(&u, &reference));
    }
    outcome(
        "fft solver matches dense solve",
        worst <= 1e-8 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e} (limit 1e-8), solver time {elapsed:.2?} (limit 1 s)"),
    )
}

fn admm_instances() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (h, w) = (6, 6);
    let n = h * w;
    let mut worst_obj: f64 = 0.0;
    let mut worst_violation: f64 = 0.0;
    let mut elapsed = Duration::ZERO;
    let mut unconverged = 0;
    for _ in 0..20 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut mask = vec![false; n];
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for &p in &order[..n / 4] {
            mask[p] = true;
        }
        let params = DenoiseParams {
            beta1: rng.gen_range(0.05..0.5),
            beta2: rng.gen_range(0.1..3.0),
            mu: 1.0,
            tol: 1e-6,
            max_iters: 100_000,
        };
        let t = Instant::now();
        let (u, diag) = admm_denoise(&v, &mask, h, w, &params).unwrap();
        elapsed += t.elapsed();
        if !diag.converged {
            unconverged += 1;
        }
        let reference = common::constrained_tv_oracle(&v, &mask, h, w, params.beta1, params.beta2, 100_000);
        let f_ref = common::restoration_objective(&reference, &v, h, w, params.beta1, params.beta2);
        let f = common::restoration_objective(&u, &v, h, w, params.beta1, params.beta2);
        worst_obj = worst_obj.max((f - f_ref).abs() / f_ref.abs().max(1e-12));
        let violation = (0..n).filter(|&p| mask[p]).map(|p| (u[p] - v[p]).abs()).fold(0.0, f64::max);
        worst_violation = worst_violation.max(violation);
    }
    (
        outcome(
            "admm reaches the constrained optimum",
            worst_obj <= 1e-4 && elapsed < Duration::from_secs(30) && unconverged == 0,
            format!(
                "max relative objective gap {worst_obj:.2e} (limit 1e-4), {unconverged} unconverged, admm time {elapsed:.2?} (limit 30 s)"
            ),
        ),
        outcome(
            "admm keeps training pixels pinned",
            worst_violation <= 1e-3,
            format!("max |u - v| on pinned pixels {worst_violation:.2e} (limit 1e-3)"),
        ),
    )
}

fn coupling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_grid: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for k in 0..20 {
        let c = [2, 3, 5][k % 3];
        let r = common::random_pairwise(&mut rng, c);
        let pm = PairwiseMatrix::from_upper(c, |i, j| r[i][j]);
        let p = couple(&pm).unwrap().p;
        if c == 2 {
            let closed = r[0][1] / (r[0][1] + r[1][0]);
            worst_closed = worst_closed.max((p[0] - closed).abs());
        }
        let initial = if c == 3 { 1e-3 } else { 0.05 };
        let reference = common::coupling_grid_oracle(&r, initial, 1e-5);
        let diff = p.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_grid = worst_grid.max(diff);
    }
    outcome(
        "pairwise coupling matches simplex search",
        worst_grid <= 2e-3 && worst_closed <= 1e-10,
        format!(
            "max component gap to grid {worst_grid:.2e} (limit 2e-3), two-class closed form gap {worst_closed:.2e} (limit 1e-10)"
        ),
    )
}

fn nu_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_residual: f64 = 0.0;
    for _ in 0..30 {
        let m = rng.gen_range(8..=60);
        let (x, y) = common::random_binary_problem(&mut rng, m, 3);
        let pos = y.iter().filter(|&&l| l > 0).count();
        let nu_max = 2.0 * pos.min(m - pos) as f64 / m as f64;
        let nu = rng.gen_range(0.05..0.95) * nu_max;
        let kernel = KernelSpec::rbf(rng.gen_range(0.3..2.0)).unwrap();
        let samples: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let config = SolverConfig::default();
        let sol = solve_nu_dual(&samples, &y, nu, &kernel, &config).unwrap();
        // Free multipliers sit on the margin only up to the KKT tolerance,
        // so points within that distance of it are not margin errors.
        let fraction = sol.margin_errors(&y, config.tolerance) as f64 / m as f64;
        worst_excess = worst_excess.max(fraction - (nu + 1.0 / m as f64));
        let ub = 1.0 / m as f64;
        let sum_pos: f64 = (0..m).filter(|&i| y[i] > 0).map(|i| sol.alpha[i]).sum();
        let sum_neg: f64 = (0..m).filter(|&i| y[i] < 0).map(|i| sol.alpha[i]).sum();
        let bounds = sol.alpha.iter().map(|&a| (-a).max(a - ub)).fold(0.0, f64::max);
        let residual = (sum_pos - nu / 2.0).abs().max((sum_neg - nu / 2.0).abs()).max(bounds);
        worst_residual = worst_residual.max(residual);
    }
    outcome(
        "nu bounds the fraction of margin errors",
        worst_excess <= 0.0 && worst_residual <= 1e-8,
        format!(
            "max (error fraction - nu - 1/m) {worst_excess:.3} (limit 0), max dual feasibility residual {worst_residual:.2e} (limit 1e-8)"
        ),
    )
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let (cube, labels) = generate_scene(&SceneSpec::default()).unwrap();
    let mut config = RunConfig::new(0.3, 1.0, SplitSource::Random(SplitRule::Percentage(10.0)));
    config.runs = 10;
    // Light regularization suits the small regions of a 32x32 scene.
    config.denoise = DenoiseParams {
        beta1: 0.15,
        beta2: 0.5,
        ..DenoiseParams::default()
    };
    let report = run_two_stage(&cube, &labels, &config, None).unwrap();
    let elapsed = t.elapsed();
    let (s1, s2) = (report.oa(1).mean, report.oa(2).mean);
    outcome(
        "two-stage run on synthetic scene",
        s2 >= s1 && s2 >= 0.95 && elapsed < Duration::from_secs(60),
        format!("mean OA stage 1 {s1:.4}, stage 2 {s2:.4} (limit 0.95), time {elapsed:.2?} (limit 60 s)"),
    )
}

fn metrics() -> Outcome {
    // Truth: 50 of class 1, 50 of class 2; predictions laid out to give
    // the confusion [[40, 10], [20, 30]].
    let truth_labels: Vec<u16> = (0..100).map(|p| if p < 50 { 1 } else { 2 }).collect();
    let pred_labels: Vec<u16> = (0..100)
        .map(|p| match p {
            0..=39 => 1,
            40..=49 => 2,
            50..=69 => 1,
            _ => 2,
        })
        .collect();
    let truth = LabelMap::from_labels(10, 10, truth_labels).unwrap();
    let pred = LabelMap::new(10, 10, 2, pred_labels).unwrap();
    let testing: Vec<LabeledPixel> = (0..100)
        .map(|p| LabeledPixel {
            row: p / 10,
            col: p % 10,
            class: truth.class_of(p).unwrap(),
        })
        .collect();
    let m = compute_metrics(&pred, &truth, &testing).unwrap();
    let perfect = compute_metrics(&truth, &truth, &testing).unwrap();
    let diag = metrics_from_confusion(&ConfusionMatrix::from_rows(&[vec![7, 0, 0], vec![0, 3, 0], vec![0, 0, 9]]).unwrap())
        .unwrap();
    let ok = m.oa == 0.7
        && m.aa == 0.7
        && m.kappa == 0.4
        && [perfect.oa, perfect.aa, perfect.kappa] == [1.0; 3]
        && [diag.oa, diag.aa, diag.kappa] == [1.0; 3];
    outcome(
        "accuracy metrics are exact",
        ok,
        format!(
            "OA {} AA {} kappa {}; perfect prediction OA {} AA {} kappa {}",
            m.oa, m.aa, m.kappa, perfect.oa, perfect.aa, perfect.kappa
        ),
    )
}

fn scaling() -> Outcome {
    let time_for = |side: usize| -> Duration {
        let mut rng = ChaCha8Rng::seed_from_u64(side as u64);
        let n = side * side;
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let params = DenoiseParams {
            tol: f64::MIN_POSITIVE,
            max_iters: 50,
            ..DenoiseParams::default()
        };
        (0..3)
            .map(|_| {
                let t = Instant::now();
                let (_, d) = admm_denoise(&v, &mask, side, side, &params).unwrap();
                assert_eq!(d.iterations, 50);
                t.elapsed()
            })
            .min()
            .unwrap()
    };
    let small = time_for(128);
    let large = time_for(256);
    // 256x256 has four times the pixels: two doublings.
    let per_doubling = (large.as_secs_f64() / small.as_secs_f64()).sqrt();
    outcome(
        "admm cost grows near-linearly with pixels",
        per_doubling <= 2.5,
        format!("128x128 {small:.2?}, 256x256 {large:.2?}, ratio per doubling {per_doubling:.2} (limit 2.5)"),
    )
}

/// Runs only when `HSI_INDIAN_PINES_DIR` points at a directory holding
/// `cube.hsc` and `labels.hsl`.
fn indian_pines() -> Outcome {
    const NAME: &str = "indian pines reproduction";
    let Some(dir) = std::env::var_os("HSI_INDIAN_PINES_DIR").map(PathBuf::from) else {
        return Outcome {
            name: NAME,
            verdict: Verdict::Skip,
            detail: "set HSI_INDIAN_PINES_DIR to a directory with cube.hsc and labels.hsl".into(),
        };
    };
    let t = Instant::now();
    let cube = io::read_cube(&dir.join("cube.hsc")).unwrap();
    let labels = io::read_labels(&dir.join("labels.hsl")).unwrap();
    let counts_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/indian_pines_counts.csv");
    let counts = io::read_counts_csv(&counts_path).unwrap();
    let rule = SplitRule::Counts(counts);
    let cube = normalize_cube(&cube).unwrap();
    let cv_split = stratified_split(&labels, &rule, 0).unwrap();
    let points = grid(&[0.01, 0.02, 0.04, 0.06], &[0.05, 0.1, 0.2, 0.5, 1.0]);
    let cv = cross_validate(&cube, &cv_split, &points, DEFAULT_FOLDS, &TrainOptions::default()).unwrap();
    let mut config = RunConfig::new(cv.best.nu, cv.best.sigma, SplitSource::Random(rule));
    config.runs = 10;
    let report = run_two_stage(&cube, &labels, &config, None).unwrap();
    let oa = 100.0 * report.oa(2).mean;
    outcome(
        NAME,
        (oa - 98.83).abs() <= 1.0,
        format!(
            "nu {} sigma {}, mean OA {oa:.2}% (target 98.83 +/- 1.0), time {:.1?}",
            cv.best.nu,
            cv.best.sigma,
            t.elapsed()
        ),
    )
}

#[test]
fn acceptance() {
    let (admm, pinned) = admm_instances();
    let outcomes = vec![
        fft_solver(),
        admm,
        pinned,
        coupling(),
        nu_bound(),
        end_to_end(),
        metrics(),
        scaling(),
        indian_pines(),
    ];
    // Written to the raw handle so the verdicts show without --nocapture.
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for o in &outcomes {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed.push(o.name);
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        writeln!(out, "{tag} {}: {}", o.name, o.detail).unwrap();
    }
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
