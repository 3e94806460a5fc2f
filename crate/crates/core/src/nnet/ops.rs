//! Small dense kernels. Matrices are row-major slices with an explicit
//! column count.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y = W x` for `W` of shape `[y.len(), cols]`.
pub fn matvec(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), y.len() * cols);
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi = dot(row, x);
    }
}

/// `y += W x`
pub fn matvec_add(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += dot(row, x);
    }
}

/// `dx += Wᵀ dy` for `W` of shape `[dy.len(), dx.len()]`.
pub fn matvec_t_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    debug_assert_eq!(w.len(), dy.len() * cols);
    for (d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *d != 0.0 {
            axpy(*d, row, dx);
        }
    }
}

/// `dW += dy xᵀ`
pub fn add_outer(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), dy.len() * cols);
    for (d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *d != 0.0 {
            axpy(*d, x, row);
        }
    }
}

/// `C += Aᵀ B` where `A` is `[k, m]`, `B` is `[k, n]` and `C` is `[m, n]`.
pub fn gemm_tn_add(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: bounds asserted above; strides describe Aᵀ (k×m row-major read
    // column-wise), B row-major and C row-major, none aliasing.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place softmax.
pub fn softmax(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, n, k) = (3, 4, 5);
        let a: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![1.0; m * n];
        gemm_tn_add(m, n, k, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want = 1.0 + (0..k).map(|l| a[l * m + i] * b[l * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let w: Vec<f64> = (0..12).map(|i| i as f64 - 5.0).collect();
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut y = [0.0; 3];
        matvec(&w, 4, &x, &mut y);
        let dy = [0.3, -1.0, 2.0];
        let mut dx = [0.0; 4];
        matvec_t_add(&w, &dy, &mut dx);
        // <W x, dy> == <x, Wᵀ dy>
        assert!((dot(&y, &dy) - dot(&x, &dx)).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_stable() {
        let mut v = [1000.0, 1000.0, f64::NEG_INFINITY];
        softmax(&mut v);
        assert_eq!(v, [0.5, 0.5, 0.0]);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && sigmoid(800.0) == 1.0);
    }
}
