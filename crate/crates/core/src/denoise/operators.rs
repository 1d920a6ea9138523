//! Periodic forward differences, soft thresholding and the training-pixel
//! projection. Maps are row-major `height × width`.

/// Forward differences with periodic wrap:
/// `dx[i,j] = u[i,j+1] - u[i,j]`, `dy[i,j] = u[i+1,j] - u[i,j]`.
pub fn gradient(u: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; u.len()];
    let mut dy = vec![0.0; u.len()];
    gradient_into(u, height, width, &mut dx, &mut dy);
    (dx, dy)
}

pub fn gradient_into(u: &[f64], height: usize, width: usize, dx: &mut [f64], dy: &mut [f64]) {
    debug_assert_eq!(u.len(), height * width);
    for i in 0..height {
        let row = i * width;
        let below = ((i + 1) % height) * width;
        for j in 0..width {
            let right = if j + 1 == width { 0 } else { j + 1 };
            let here = u[row + j];
            dx[row + j] = u[row + right] - here;
            dy[row + j] = u[below + j] - here;
        }
    }
}

/// Adjoint of [`gradient`]: `D^T (px, py)`.
pub fn gradient_adjoint(px: &[f64], py: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; px.len()];
    gradient_adjoint_into(px, py, height, width, &mut out);
    out
}

pub fn gradient_adjoint_into(px: &[f64], py: &[f64], height: usize, width: usize, out: &mut [f64]) {
    for i in 0..height {
        let row = i * width;
        let above = ((i + height - 1) % height) * width;
        for j in 0..width {
            let left = if j == 0 { width - 1 } else { j - 1 };
            out[row + j] = px[row + left] - px[row + j] + py[above + j] - py[row + j];
        }
    }
}

/// Componentwise soft thresholding, `sgn(r) max(|r| - kappa, 0)`.
pub fn shrink(r: &[f64], kappa: f64) -> Vec<f64> {
    r.iter().map(|&v| shrink_scalar(v, kappa)).collect()
}

#[inline]
pub fn shrink_scalar(v: f64, kappa: f64) -> f64 {
    let mag = v.abs() - kappa;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

/// `v` on training pixels, `u - lambda2` elsewhere.
pub fn project_w(u_minus_lambda2: &[f64], v: &[f64], upsilon: &[bool]) -> Vec<f64> {
    u_minus_lambda2
        .iter()
        .zip(v)
        .zip(upsilon)
        .map(|((&free, &pinned), &fixed)| if fixed { pinned } else { free })
        .collect()
}
