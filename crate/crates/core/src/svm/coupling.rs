//! Pairwise coupling: turns the c(c-1)/2 pairwise probabilities of one
//! pixel into a single class-probability vector by solving the bordered
//! system
//!
//! ```text
//! [ Q   e ] [p]   [0]
//! [ e^T 0 ] [b] = [1]
//! ```
//!
//! with `Q_ii = sum_{s != i} r_si^2` and `Q_ij = -r_ji r_ij`.

use crate::error::{HsiError, Result};

const PIVOT_FLOOR: f64 = 1e-12;
const RIDGE: f64 = 1e-10;

/// Bounds applied to pairwise probabilities before coupling.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// A c×c matrix of pairwise probabilities, `r[i][j] = P(i | i or j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    c: usize,
    r: Vec<f64>,
}

impl PairwiseMatrix {
    /// Builds the matrix from the upper triangle, setting `r_ji = 1 - r_ij`.
    ///
    /// Entries are clamped to `[1e-12, 1 - 1e-12]` and adjusted so that
    /// `r_ij + r_ji == 1` holds exactly in floating point.
    pub fn from_upper(c: usize, mut upper: impl FnMut(usize, usize) -> f64) -> Self {
        let mut r = vec![0.0; c * c];
        for i in 0..c {
            for j in i + 1..c {
                let v = upper(i, j).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
                // 1 - x is exact for x in [0.5, 1], so derive the smaller
                // entry from the larger one.
                let (rij, rji) = if v >= 0.5 {
                    (v, 1.0 - v)
                } else {
                    let big = 1.0 - v;
                    (1.0 - big, big)
                };
                r[i * c + j] = rij;
                r[j * c + i] = rji;
            }
        }
        PairwiseMatrix { c, r }
    }

    /// Wraps a full row-major matrix; the diagonal is ignored.
    pub fn from_full(c: usize, r: Vec<f64>) -> Result<Self> {
        if r.len() != c * c {
            return Err(HsiError::LengthMismatch {
                expected: c * c,
                actual: r.len(),
            });
        }
        Ok(PairwiseMatrix { c, r })
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.c + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupled {
    pub p: Vec<f64>,
    /// The system stayed singular after the ridge retry and `p` is uniform.
    pub singular: bool,
}

/// Builds the c×c matrix `Q`.
pub fn coupling_matrix(r: &PairwiseMatrix) -> Vec<f64> {
    let c = r.c;
    let mut q = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            if i == j {
                q[i * c + i] = (0..c).filter(|&s| s != i).map(|s| r.get(s, i).powi(2)).sum();
            } else {
                q[i * c + j] = -r.get(j, i) * r.get(i, j);
            }
        }
    }
    q
}

pub fn couple(r: &PairwiseMatrix) -> Result<Coupled> {
    let c = r.c;
    if c < 2 {
        return Err(HsiError::InvalidParameter(
            "coupling needs at least two classes".into(),
        ));
    }
    for i in 0..c {
        for j in 0..c {
            let v = r.get(i, j);
            if i != j && !(v > 0.0 && v < 1.0) {
                return Err(HsiError::InvalidParameter(format!(
                    "pairwise probability r[{i}][{j}] = {v} is outside (0, 1)"
                )));
            }
        }
    }
    let q = coupling_matrix(r);
    let solution = solve_bordered(&q, c, 0.0).or_else(|| solve_bordered(&q, c, RIDGE));
    let Some(mut p) = solution else {
        log::warn!("coupling system is singular; returning the uniform distribution");
        return Ok(Coupled {
            p: vec![1.0 / c as f64; c],
            singular: true,
        });
    };
    for v in &mut p {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(Coupled { p, singular: false })
}

/// Gaussian elimination with partial pivoting on the (c+1)×(c+1) bordered
/// system. `None` when a pivot falls below the floor.
fn solve_bordered(q: &[f64], c: usize, ridge: f64) -> Option<Vec<f64>> {
    let n = c + 1;
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for i in 0..c {
        for j in 0..c {
            a[i * n + j] = q[i * c + j];
        }
        a[i * n + i] += ridge;
        a[i * n + c] = 1.0;
        a[c * n + i] = 1.0;
    }
    rhs[c] = 1.0;

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .expect("non-empty range");
        if a[pivot_row * n + col].abs() < PIVOT_FLOOR {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / a[row * n + row];
    }
    x.truncate(c);
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_classes_closed_form() {
        let r = PairwiseMatrix::from_upper(2, |_, _| 0.7);
        let out = couple(&r).unwrap();
        let expected = r.get(0, 1) / (r.get(0, 1) + r.get(1, 0));
        assert!((out.p[0] - expected).abs() < 1e-10);
        assert!((out.p[0] - 0.7).abs() < 1e-10);
        assert!((out.p[1] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn indifferent_pairs_give_uniform() {
        for c in 2..8 {
            let out = couple(&PairwiseMatrix::from_upper(c, |_, _| 0.5)).unwrap();
            for &v in &out.p {
                assert!((v - 1.0 / c as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complementary_entries_sum_to_exactly_one() {
        let vals = [0.1, 0.3, 1e-9, 0.999_999_7, 0.5, 0.123_456_789];
        let mut it = vals.iter().cycle();
        let r = PairwiseMatrix::from_upper(4, |_, _| *it.next().unwrap());
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(r.get(i, j) + r.get(j, i), 1.0);
                }
            }
        }
    }

    #[test]
    fn out_of_range_entries_are_rejected() {
        let r = PairwiseMatrix::from_full(2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(couple(&r).is_err());
        let r = PairwiseMatrix::from_full(1, vec![0.0]).unwrap();
        assert!(couple(&r).is_err());
    }

    #[test]
    fn q_is_symmetric() {
        let r = PairwiseMatrix::from_upper(4, |i, j| 0.2 + 0.1 * (i + 2 * j) as f64 % 0.7);
        let q = coupling_matrix(&r);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(q[i * 4 + j], q[j * 4 + i]);
            }
        }
    }
}
