//! Working-set decomposition for the ν-SVC dual
//!
//! ```text
//! min  1/2 a^T Q a      Q_ij = y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= 1/m,  sum_i a_i y_i = 0,  sum_i a_i = nu
//! ```
//!
//! The two equality constraints split into `sum_{y=+1} a_i = nu/2` and
//! `sum_{y=-1} a_i = nu/2`, so every step moves a pair of multipliers that
//! share a label. Pair selection uses second-order information, one
//! maximal violator per label group.

use std::collections::HashMap;
use std::sync::Arc;

use log::warn;

use super::kernel::KernelSpec;
use crate::error::{HsiError, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stop once the maximal KKT violation falls below this value.
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Byte budget of the kernel column cache used above `dense_limit`.
    pub cache_bytes: usize,
    /// Largest problem for which the full Gram matrix is precomputed.
    pub dense_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-6,
            max_iterations: 10_000_000,
            cache_bytes: 256 << 20,
            dense_limit: 4000,
        }
    }
}

/// Optimal multipliers and the quantities recovered from them.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// One multiplier per training point, not multiplied by the label.
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Functional margin: points with `y f(x) < margin` are margin errors.
    pub margin: f64,
    /// `f(x_i)` on every training point.
    pub decision_values: Vec<f64>,
    pub objective: f64,
    pub iterations: u64,
    pub max_violation: f64,
    pub converged: bool,
}

impl DualSolution {
    /// Number of training points strictly inside the margin, `y f < margin - slack`.
    pub fn margin_errors(&self, labels: &[i8], slack: f64) -> usize {
        self.decision_values
            .iter()
            .zip(labels)
            .filter(|(&f, &y)| f64::from(y) * f < self.margin - slack)
            .count()
    }
}

/// Largest ν for which the dual is feasible: `2 min(m+, m-) / m`.
pub fn nu_max(labels: &[i8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y > 0).count();
    let neg = labels.len() - pos;
    2.0 * pos.min(neg) as f64 / labels.len() as f64
}

pub(crate) fn check_problem(samples: &[&[f64]], labels: &[i8], nu: f64) -> Result<()> {
    if samples.len() != labels.len() {
        return Err(HsiError::LengthMismatch {
            expected: samples.len(),
            actual: labels.len(),
        });
    }
    if samples.len() < 2 {
        return Err(HsiError::InvalidParameter(
            "at least two training points are required".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(HsiError::InvalidParameter(format!("label {bad} is not +1 or -1")));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(HsiError::Dimension("training spectra differ in length".into()));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(HsiError::SingleClass);
    }
    let max = nu_max(labels);
    if !(nu > 0.0) || nu > max * (1.0 + 1e-12) {
        return Err(HsiError::InfeasibleNu { nu, nu_max: max });
    }
    Ok(())
}

/// Kernel columns, either fully precomputed or produced on demand through
/// an LRU cache.
enum KernelColumns<'a> {
    Dense {
        m: usize,
        gram: Vec<f64>,
    },
    Cached(ColumnCache<'a>),
}

impl KernelColumns<'_> {
    fn column(&mut self, i: usize) -> Column<'_> {
        match self {
            KernelColumns::Dense { m, gram } => Column::Borrowed(&gram[i * *m..(i + 1) * *m]),
            KernelColumns::Cached(cache) => Column::Shared(cache.get(i)),
        }
    }
}

enum Column<'a> {
    Borrowed(&'a [f64]),
    Shared(Arc<Vec<f64>>),
}

impl std::ops::Deref for Column<'_> {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match self {
            Column::Borrowed(s) => s,
            Column::Shared(v) => v,
        }
    }
}

pub(crate) struct ColumnCache<'a> {
    samples: &'a [&'a [f64]],
    kernel: KernelSpec,
    capacity: usize,
    columns: HashMap<usize, (Arc<Vec<f64>>, u64)>,
    clock: u64,
}

impl<'a> ColumnCache<'a> {
    fn new(samples: &'a [&'a [f64]], kernel: KernelSpec, cache_bytes: usize) -> Self {
        let col_bytes = samples.len() * std::mem::size_of::<f64>();
        ColumnCache {
            samples,
            kernel,
            // two columns are live per iteration
            capacity: (cache_bytes / col_bytes.max(1)).max(2),
            columns: HashMap::new(),
            clock: 0,
        }
    }

    fn get(&mut self, i: usize) -> Arc<Vec<f64>> {
        self.clock += 1;
        if let Some((col, stamp)) = self.columns.get_mut(&i) {
            *stamp = self.clock;
            return Arc::clone(col);
        }
        if self.columns.len() >= self.capacity {
            let oldest = self
                .columns
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(&k, _)| k)
                .expect("cache is non-empty");
            self.columns.remove(&oldest);
        }
        let xi = self.samples[i];
        let col: Arc<Vec<f64>> = Arc::new(self.samples.iter().map(|xj| self.kernel.eval(xi, xj)).collect());
        self.columns.insert(i, (Arc::clone(&col), self.clock));
        col
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Upper,
    Free,
}

/// Solves the ν-SVC dual for pre-validated input.
pub fn solve_nu_dual(
    samples: &[&[f64]],
    labels: &[i8],
    nu: f64,
    kernel: &KernelSpec,
    config: &SolverConfig,
) -> Result<DualSolution> {
    check_problem(samples, labels, nu)?;
    let m = samples.len();
    let upper = 1.0 / m as f64;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();

    let mut columns = if m <= config.dense_limit {
        KernelColumns::Dense {
            m,
            gram: super::kernel::gram_matrix(samples, kernel),
        }
    } else {
        KernelColumns::Cached(ColumnCache::new(samples, *kernel, config.cache_bytes))
    };
    let diag: Vec<f64> = samples.iter().map(|x| kernel.eval(x, x)).collect();

    // Feasible start: fill each label group up to nu/2 in index order.
    let mut alpha = vec![0.0; m];
    let mut remaining_pos = nu / 2.0;
    let mut remaining_neg = nu / 2.0;
    for i in 0..m {
        let remaining = if y[i] > 0.0 {
            &mut remaining_pos
        } else {
            &mut remaining_neg
        };
        let a = upper.min(*remaining);
        alpha[i] = a;
        *remaining -= a;
    }
    let bound_of = |a: f64| {
        if a >= upper {
            Bound::Upper
        } else if a <= 0.0 {
            Bound::Lower
        } else {
            Bound::Free
        }
    };
    let mut status: Vec<Bound> = alpha.iter().map(|&a| bound_of(a)).collect();

    let mut grad = vec![0.0; m];
    for i in 0..m {
        if alpha[i] != 0.0 {
            let col = columns.column(i);
            for k in 0..m {
                grad[k] += y[k] * y[i] * col[k] * alpha[i];
            }
        }
    }

    let mut iterations = 0u64;
    let mut max_violation;
    loop {
        let selection = select_pair(&grad, &y, &status, &diag, &mut columns);
        max_violation = selection.violation;
        let (i, j) = match selection.pair {
            Some(pair) if max_violation >= config.tolerance => pair,
            _ => break,
        };
        if iterations >= config.max_iterations {
            warn!(
                "nu-SVC solver stopped after {iterations} iterations, KKT violation {max_violation:e}"
            );
            break;
        }
        iterations += 1;

        let col_i = columns.column(i).to_vec();
        let col_j = columns.column(j);
        // y_i == y_j, so Q_ij = K_ij
        let mut quad = diag[i] + diag[j] - 2.0 * col_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let old_i = alpha[i];
        let old_j = alpha[j];
        let delta = (grad[i] - grad[j]) / quad;
        let sum = old_i + old_j;
        let mut new_i = old_i - delta;
        let mut new_j = old_j + delta;
        if sum > upper {
            if new_i > upper {
                new_i = upper;
                new_j = sum - upper;
            }
        } else if new_j < 0.0 {
            new_j = 0.0;
            new_i = sum;
        }
        if sum > upper {
            if new_j > upper {
                new_j = upper;
                new_i = sum - upper;
            }
        } else if new_i < 0.0 {
            new_i = 0.0;
            new_j = sum;
        }
        alpha[i] = new_i;
        alpha[j] = new_j;
        status[i] = bound_of(new_i);
        status[j] = bound_of(new_j);

        let d_i = new_i - old_i;
        let d_j = new_j - old_j;
        for k in 0..m {
            grad[k] += y[k] * (y[i] * col_i[k] * d_i + y[j] * col_j[k] * d_j);
        }
    }

    let (margin, bias) = margin_and_bias(&grad, &y, &status);
    let decision_values: Vec<f64> = (0..m).map(|k| y[k] * grad[k] + bias).collect();
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias,
        margin,
        decision_values,
        objective,
        iterations,
        max_violation,
        converged: max_violation < config.tolerance,
    })
}

struct Selection {
    pair: Option<(usize, usize)>,
    violation: f64,
}

fn select_pair(
    grad: &[f64],
    y: &[f64],
    status: &[Bound],
    diag: &[f64],
    columns: &mut KernelColumns<'_>,
) -> Selection {
    let mut gmax_pos = f64::NEG_INFINITY;
    let mut gmax_pos_idx = None;
    let mut gmax_neg = f64::NEG_INFINITY;
    let mut gmax_neg_idx = None;
    for t in 0..grad.len() {
        if y[t] > 0.0 {
            if status[t] != Bound::Upper && -grad[t] >= gmax_pos {
                gmax_pos = -grad[t];
                gmax_pos_idx = Some(t);
            }
        } else if status[t] != Bound::Lower && grad[t] >= gmax_neg {
            gmax_neg = grad[t];
            gmax_neg_idx = Some(t);
        }
    }

    let col_pos = gmax_pos_idx.map(|i| columns.column(i).to_vec());
    let col_neg = gmax_neg_idx.map(|i| columns.column(i).to_vec());

    let mut gmax_pos2 = f64::NEG_INFINITY;
    let mut gmax_neg2 = f64::NEG_INFINITY;
    let mut best_j = None;
    let mut best_obj = f64::INFINITY;
    for j in 0..grad.len() {
        if y[j] > 0.0 {
            if status[j] != Bound::Lower {
                gmax_pos2 = gmax_pos2.max(grad[j]);
                if let (Some(ip), Some(col)) = (gmax_pos_idx, &col_pos) {
                    let diff = gmax_pos + grad[j];
                    if diff > 0.0 {
                        let quad = diag[ip] + diag[j] - 2.0 * col[j];
                        let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                        if obj <= best_obj {
                            best_obj = obj;
                            best_j = Some(j);
                        }
                    }
                }
            }
        } else if status[j] != Bound::Upper {
            gmax_neg2 = gmax_neg2.max(-grad[j]);
            if let (Some(ineg), Some(col)) = (gmax_neg_idx, &col_neg) {
                let diff = gmax_neg - grad[j];
                if diff > 0.0 {
                    let quad = diag[ineg] + diag[j] - 2.0 * col[j];
                    let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        best_j = Some(j);
                    }
                }
            }
        }
    }

    let violation = (gmax_pos + gmax_pos2).max(gmax_neg + gmax_neg2);
    let pair = best_j.map(|j| {
        let i = if y[j] > 0.0 { gmax_pos_idx } else { gmax_neg_idx };
        (i.expect("violating pair has a first index"), j)
    });
    Selection { pair, violation }
}

/// Recovers the margin and bias from the KKT conditions: free multipliers
/// of each group pin the group's gradient level, otherwise the midpoint of
/// the feasible interval is used.
fn margin_and_bias(grad: &[f64], y: &[f64], status: &[Bound]) -> (f64, f64) {
    let level = |sign: f64| {
        let mut lb = f64::NEG_INFINITY;
        let mut ub = f64::INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..grad.len() {
            if y[t] != sign {
                continue;
            }
            match status[t] {
                Bound::Upper => lb = lb.max(grad[t]),
                Bound::Lower => ub = ub.min(grad[t]),
                Bound::Free => {
                    free += 1;
                    free_sum += grad[t];
                }
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if lb.is_finite() {
            lb
        } else {
            ub
        }
    };
    let r_pos = level(1.0);
    let r_neg = level(-1.0);
    ((r_pos + r_neg) / 2.0, (r_neg - r_pos) / 2.0)
}
