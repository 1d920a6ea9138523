//! Reference solvers used by the integration tests. None of them call into
//! the crate's numerical code; they rebuild every operator from its
//! definition with dense matrices.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Periodic forward-difference matrix, `2n × n`: horizontal rows first,
/// then vertical rows.
pub fn diff_matrix(h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut d = DMatrix::zeros(2 * n, n);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            d[(p, p)] -= 1.0;
            d[(p, i * w + (j + 1) % w)] += 1.0;
            d[(n + p, p)] -= 1.0;
            d[(n + p, ((i + 1) % h) * w + j)] += 1.0;
        }
    }
    d
}

/// The u-update solved densely:
/// `(I + beta2 D'D + mu (D'D + I)) u = v + mu (D'(s + l1) + w + l2)`.
#[allow(clippy::too_many_arguments)]
pub fn dense_solve_u(
    v: &[f64],
    s: &[f64],
    wv: &[f64],
    l1: &[f64],
    l2: &[f64],
    h: usize,
    w: usize,
    beta2: f64,
    mu: f64,
) -> Vec<f64> {
    let n = h * w;
    let d = diff_matrix(h, w);
    let dtd = d.transpose() * &d;
    let a = DMatrix::identity(n, n) * (1.0 + mu) + dtd * (beta2 + mu);
    let sl = DVector::from_iterator(2 * n, s.iter().zip(l1).map(|(a, b)| a + b));
    let rhs = DVector::from_column_slice(v)
        + (d.transpose() * sl + DVector::from_column_slice(wv) + DVector::from_column_slice(l2)) * mu;
    let x = a.lu().solve(&rhs).expect("system is positive definite");
    x.iter().copied().collect()
}

/// `1/2 |u - v|^2 + beta1 |Du|_1 + beta2/2 |Du|^2`.
pub fn restoration_objective(u: &[f64], v: &[f64], h: usize, w: usize, beta1: f64, beta2: f64) -> f64 {
    let d = diff_matrix(h, w);
    let du = &d * DVector::from_column_slice(u);
    let fit: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * fit + beta1 * du.iter().map(|x| x.abs()).sum::<f64>() + 0.5 * beta2 * du.norm_squared()
}

/// Minimizer of the restoration objective with `u = v` on `mask`, found by
/// accelerated projected gradient ascent on the dual variable of the
/// `l1` term (`|p|_inf <= beta1`). For fixed `p` the free pixels solve
/// `A_FF u_F = v_F - A_FB v_B - (D'p)_F`, `A = I + beta2 D'D`.
pub fn constrained_tv_oracle(
    v: &[f64],
    mask: &[bool],
    h: usize,
    w: usize,
    beta1: f64,
    beta2: f64,
    iterations: usize,
) -> Vec<f64> {
    let n = h * w;
    let d = diff_matrix(h, w);
    let a = DMatrix::identity(n, n) + d.transpose() * &d * beta2;
    let free: Vec<usize> = (0..n).filter(|&p| !mask[p]).collect();
    let fixed: Vec<usize> = (0..n).filter(|&p| mask[p]).collect();
    if free.is_empty() {
        return v.to_vec();
    }
    let nf = free.len();
    let a_ff = DMatrix::from_fn(nf, nf, |r, c| a[(free[r], free[c])]);
    let m = a_ff.try_inverse().expect("A_FF is positive definite");
    let vb = DVector::from_iterator(fixed.len(), fixed.iter().map(|&p| v[p]));
    let c = DVector::from_fn(nf, |r, _| {
        v[free[r]] - fixed.iter().zip(vb.iter()).map(|(&q, &x)| a[(free[r], q)] * x).sum::<f64>()
    });
    let d_f = DMatrix::from_fn(2 * n, nf, |r, col| d[(r, free[col])]);
    let d_b = DMatrix::from_fn(2 * n, fixed.len(), |r, col| d[(r, fixed[col])]);
    let mc = &m * &c;
    let g = &m * d_f.transpose();
    let dvb = &d_b * &vb;
    // Gradient of the dual: D u(p) = D_F (M c - G p) + D_B v_B.
    let h_op = &d_f * &g;
    let offset = &d_f * &mc + dvb;
    let lipschitz = h_op.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lipschitz;

    let mut p = DVector::zeros(2 * n);
    let mut y = p.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let grad = &offset - &h_op * &y;
        let next = (&y + grad * step).map(|x| x.clamp(-beta1, beta1));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &p) * ((t - 1.0) / t_next);
        p = next;
        t = t_next;
    }
    let uf = mc - g * p;
    let mut u = v.to_vec();
    for (k, &q) in free.iter().enumerate() {
        u[q] = uf[k];
    }
    u
}

/// Pairwise-coupling objective `sum_i sum_{j != i} (r_ji p_i - r_ij p_j)^2`.
pub fn coupling_objective(r: &[Vec<f64>], p: &[f64]) -> f64 {
    let c = p.len();
    let mut total = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                total += (r[j][i] * p[i] - r[i][j] * p[j]).powi(2);
            }
        }
    }
    total
}

fn simplex_points(c: usize, lo: &[f64], hi: &[f64], step: f64, out: &mut Vec<Vec<f64>>) {
    // Enumerate the first c-1 coordinates; the last takes the remainder.
    fn rec(k: usize, c: usize, lo: &[f64], hi: &[f64], step: f64, cur: &mut Vec<f64>, acc: f64, out: &mut Vec<Vec<f64>>) {
        if k == c - 1 {
            let last = 1.0 - acc;
            if last >= -1e-12 && last >= lo[k] - 1e-12 && last <= hi[k] + 1e-12 {
                let mut p = cur.clone();
                p.push(last.max(0.0));
                out.push(p);
            }
            return;
        }
        let mut x = lo[k].max(0.0);
        while x <= hi[k].min(1.0 - acc) + 1e-12 {
            cur.push(x);
            rec(k + 1, c, lo, hi, step, cur, acc + x, out);
            cur.pop();
            x += step;
        }
    }
    rec(0, c, lo, hi, step, &mut Vec::new(), 0.0, out);
}

/// Grid search over the probability simplex, refined around the best point
/// until the spacing falls below `final_step`.
pub fn coupling_grid_oracle(r: &[Vec<f64>], initial_step: f64, final_step: f64) -> Vec<f64> {
    let c = r.len();
    let mut lo = vec![0.0; c];
    let mut hi = vec![1.0; c];
    let mut step = initial_step;
    let mut best = vec![1.0 / c as f64; c];
    loop {
        let mut pts = Vec::new();
        simplex_points(c, &lo, &hi, step, &mut pts);
        let mut best_val = coupling_objective(r, &best);
        for p in pts {
            let val = coupling_objective(r, &p);
            if val < best_val {
                best_val = val;
                best = p;
            }
        }
        if step <= final_step {
            return best;
        }
        for k in 0..c {
            lo[k] = (best[k] - 3.0 * step).max(0.0);
            hi[k] = (best[k] + 3.0 * step).min(1.0);
        }
        step /= 5.0;
    }
}

/// Gaussian RBF kernel from its definition.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Global minimum of the ν-SVC dual
/// `min 1/2 a'Qa, 0 <= a <= 1/m, sum over each label of a = nu/2`
/// by enumerating which variables sit at 0, at 1/m, or strictly between,
/// and solving the equality-constrained problem for each pattern.
pub fn nu_dual_oracle(q: &DMatrix<f64>, y: &[i8], nu: f64) -> (Vec<f64>, f64) {
    let m = y.len();
    let ub = 1.0 / m as f64;
    let total = 3usize.pow(m as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..total {
        let mut state = vec![0u8; m];
        let mut x = code;
        for s in state.iter_mut() {
            *s = (x % 3) as u8;
            x /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { ub } else { 0.0 }).collect();
        let groups: Vec<i8> = [1i8, -1]
            .into_iter()
            .filter(|&g| free.iter().any(|&i| y[i] == g))
            .collect();
        let mut ok = true;
        for g in [1i8, -1] {
            if !groups.contains(&g) {
                let s: f64 = (0..m).filter(|&i| y[i] == g).map(|i| alpha[i]).sum();
                if (s - nu / 2.0).abs() > 1e-12 {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        if !free.is_empty() {
            let nf = free.len();
            let k = nf + groups.len();
            let mut kkt = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    kkt[(r, c)] = q[(i, j)];
                }
                rhs[r] = -(0..m).filter(|&j| state[j] != 2).map(|j| q[(i, j)] * alpha[j]).sum::<f64>();
                for (gi, &g) in groups.iter().enumerate() {
                    if y[i] == g {
                        kkt[(r, nf + gi)] = 1.0;
                        kkt[(nf + gi, r)] = 1.0;
                    }
                }
            }
            for (gi, &g) in groups.iter().enumerate() {
                let fixed: f64 = (0..m).filter(|&j| y[j] == g && state[j] != 2).map(|j| alpha[j]).sum();
                rhs[nf + gi] = nu / 2.0 - fixed;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            if free.iter().enumerate().any(|(r, _)| sol[r] < -1e-12 || sol[r] > ub + 1e-12) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let a = DVector::from_column_slice(&alpha);
        let obj = 0.5 * a.dot(&(q * &a));
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((alpha, obj));
        }
    }
    best.expect("feasible nu has a solution")
}

/// Signed kernel matrix `Q_ij = y_i y_j K(x_i, x_j)`.
pub fn signed_gram(samples: &[Vec<f64>], y: &[i8], sigma: f64) -> DMatrix<f64> {
    let m = samples.len();
    DMatrix::from_fn(m, m, |i, j| f64::from(y[i] * y[j]) * rbf_kernel(&samples[i], &samples[j], sigma))
}

/// Random binary problem with both labels present.
pub fn random_binary_problem<R: Rng>(rng: &mut R, m: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<i8>) {
    loop {
        let y: Vec<i8> = (0..m).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
        if y.iter().any(|&v| v > 0) && y.iter().any(|&v| v < 0) {
            let x = y
                .iter()
                .map(|&l| (0..dim).map(|_| rng.gen_range(-1.0..1.0) + 0.4 * f64::from(l)).collect())
                .collect();
            return (x, y);
        }
    }
}

/// Random pairwise probabilities with `r_ij + r_ji = 1`.
pub fn random_pairwise<R: Rng>(rng: &mut R, c: usize) -> Vec<Vec<f64>> {
    let mut r = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in i + 1..c {
            let v: f64 = rng.gen_range(0.05..0.95);
            r[i][j] = v;
            r[j][i] = 1.0 - v;
        }
    }
    r
}
