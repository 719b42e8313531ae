//! Largest-singular-value estimation by power iteration.

/// Runs `iterations` power-iteration steps on the row-major `rows x cols`
/// matrix, updating the left singular vector estimate `u` in place, and
/// returns the resulting estimate of the largest singular value.
///
/// Each step computes `v = M^T u / |M^T u|`, `u = M v / |M v|`, and the
/// estimate is `|M v|` from the last step. The estimate never exceeds the
/// true spectral norm. A zero matrix yields `0.0` and leaves `u` untouched.
pub fn power_iteration_sn(matrix: &[f64], rows: usize, cols: usize, u: &mut [f64], iterations: usize) -> f64 {
    assert_eq!(matrix.len(), rows * cols, "matrix length does not match its shape");
    assert_eq!(u.len(), rows, "u must have one entry per matrix row");
    let mut v = vec![0.0; cols];
    let mut wv = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        v.fill(0.0);
        for (r, &ur) in u.iter().enumerate() {
            let row = &matrix[r * cols..(r + 1) * cols];
            for (vc, &m) in v.iter_mut().zip(row) {
                *vc += m * ur;
            }
        }
        let vn = norm(&v);
        if vn == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        for (r, out) in wv.iter_mut().enumerate() {
            let row = &matrix[r * cols..(r + 1) * cols];
            *out = row.iter().zip(&v).map(|(m, x)| m * x).sum();
        }
        sigma = norm(&wv);
        if sigma == 0.0 {
            return 0.0;
        }
        for (ur, &x) in u.iter_mut().zip(&wv) {
            *ur = x / sigma;
        }
    }
    sigma
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
