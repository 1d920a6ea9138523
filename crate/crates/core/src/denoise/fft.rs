//! Solves `((1 + mu) I + (beta2 + mu) D^T D) u = rhs` under periodic
//! boundary conditions. `D^T D` is a circulant (periodic Laplacian), so the
//! system is diagonal in the 2-D DFT basis with symbol
//!
//! ```text
//! 1 + mu + (beta2 + mu) (|1 - e^{-2 pi i k/W}|^2 + |1 - e^{-2 pi i l/H}|^2)
//! ```
//!
//! at frequency `(l, k)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for one `(height, width)`. Safe to share
/// between threads; every call brings its own buffers.
#[derive(Clone)]
pub struct FftPlan2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl FftPlan2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPlan2d {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn scratch_len(&self) -> usize {
        [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0)
    }

    /// Unnormalized transform of a row-major buffer, in place.
    fn transform(&self, ws: &mut Workspace, forward: bool) {
        let (rows, cols) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        rows.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        transpose(&ws.buf, &mut ws.transposed, self.height, self.width);
        cols.process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        transpose(&ws.transposed, &mut ws.buf, self.width, self.height);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Per-caller buffers for [`PeriodicSolver::solve`].
pub struct Workspace {
    buf: Vec<Complex64>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// The u-update operator of the ADMM iteration, built once per image
/// shape and parameter set.
#[derive(Debug, Clone)]
pub struct PeriodicSolver {
    plan: FftPlan2d,
    denominators: Vec<f64>,
}

impl PeriodicSolver {
    pub fn new(height: usize, width: usize, beta2: f64, mu: f64) -> Self {
        Self::with_plan(FftPlan2d::new(height, width), beta2, mu)
    }

    pub fn with_plan(plan: FftPlan2d, beta2: f64, mu: f64) -> Self {
        let (h, w) = (plan.height, plan.width);
        let symbol = |k: usize, n: usize| 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos();
        let mut denominators = Vec::with_capacity(h * w);
        for l in 0..h {
            let sy = symbol(l, h);
            for k in 0..w {
                denominators.push(1.0 + mu + (beta2 + mu) * (symbol(k, w) + sy));
            }
        }
        PeriodicSolver { plan, denominators }
    }

    pub fn height(&self) -> usize {
        self.plan.height
    }

    pub fn width(&self) -> usize {
        self.plan.width
    }

    /// Transfer-function denominators, row-major over `(l, k)`.
    pub fn denominators(&self) -> &[f64] {
        &self.denominators
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.denominators.len();
        Workspace {
            buf: vec![Complex64::new(0.0, 0.0); n],
            transposed: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); self.plan.scratch_len()],
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rhs.len()];
        self.solve_into(rhs, &mut out, &mut self.workspace());
        out
    }

    pub fn solve_into(&self, rhs: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let n = self.denominators.len();
        assert_eq!(rhs.len(), n, "right-hand side does not match solver shape");
        for (b, &r) in ws.buf.iter_mut().zip(rhs) {
            *b = Complex64::new(r, 0.0);
        }
        self.plan.transform(ws, true);
        let scale = 1.0 / n as f64;
        for (b, &d) in ws.buf.iter_mut().zip(&self.denominators) {
            *b *= scale / d;
        }
        self.plan.transform(ws, false);
        for (o, b) in out.iter_mut().zip(&ws.buf) {
            *o = b.re;
        }
    }
}
