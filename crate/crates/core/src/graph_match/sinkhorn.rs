//! Sinkhorn balancing onto the doubly-stochastic matrices.

/// Alternately normalizes rows and columns of a nonnegative square matrix in
/// place until both sums are within `tol` of 1 or `max_iters` passes elapse.
/// Returns the number of passes used.
pub fn sinkhorn(x: &mut [f64], n: usize, max_iters: usize, tol: f64) -> usize {
    assert_eq!(x.len(), n * n);
    for it in 0..max_iters {
        for row in x.chunks_exact_mut(n) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        let mut worst = 0.0f64;
        for c in 0..n {
            let s: f64 = (0..n).map(|r| x[r * n + c]).sum();
            if s > 0.0 {
                for r in 0..n {
                    x[r * n + c] /= s;
                }
            }
            worst = worst.max((s - 1.0).abs());
        }
        if worst < tol {
            // Columns are exact now; rows drifted by at most about `tol`.
            return it + 1;
        }
    }
    max_iters
}

/// Largest deviation of any row or column sum from 1.
pub fn stochastic_error(x: &[f64], n: usize) -> f64 {
    let rows = x.chunks_exact(n).map(|r| (r.iter().sum::<f64>() - 1.0).abs());
    let cols = (0..n).map(|c| ((0..n).map(|r| x[r * n + c]).sum::<f64>() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}
