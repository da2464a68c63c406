//! Blocked dense kernels for the LM normal equations. The trailing updates go
//! through nalgebra's GEMM, which is far faster than its column-oriented
//! Cholesky on matrices of a thousand or more rows.

use nalgebra::{DMatrix, DVector};

const BLOCK: usize = 96;

/// Lower Cholesky factor of a symmetric positive definite matrix, or `None`
/// if a pivot is not positive. Only the lower triangle of `a` is read.
pub fn cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix");
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        // Diagonal block.
        for j in k..k + kb {
            let mut d = a[(j, j)];
            for p in k..j {
                d -= a[(j, p)] * a[(j, p)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            a[(j, j)] = d;
            for i in j + 1..k + kb {
                let mut s = a[(i, j)];
                for p in k..j {
                    s -= a[(i, p)] * a[(j, p)];
                }
                a[(i, j)] = s / d;
            }
        }
        let rest = n - k - kb;
        if rest > 0 {
            // Panel: X L11' = A21.
            let l11 = a.view((k, k), (kb, kb)).clone_owned();
            let mut panel_t = a.view((k + kb, k), (rest, kb)).transpose();
            if !l11.solve_lower_triangular_mut(&mut panel_t) {
                return None;
            }
            let panel = panel_t.transpose();
            a.view_mut((k + kb, k), (rest, kb)).copy_from(&panel);
            // Trailing update on the lower triangle, one block column at a time.
            let mut c = 0;
            while c < rest {
                let cb = BLOCK.min(rest - c);
                let rows = rest - c;
                let lhs = panel.view((c, 0), (rows, kb));
                let rhs = panel.view((c, 0), (cb, kb));
                let mut dst = a.view_mut((k + kb + c, k + kb + c), (rows, cb));
                dst.gemm(-1.0, &lhs, &rhs.transpose(), 1.0);
                c += cb;
            }
        }
        k += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

/// Solve `L L' x = b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// `J'J` computed block-column-wise on the lower triangle and mirrored.
pub fn gram_tr(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let jt = j.transpose();
    let mut h = DMatrix::zeros(n, n);
    let mut c = 0;
    while c < n {
        let cb = BLOCK.min(n - c);
        let lhs = jt.rows(c, n - c);
        let rhs = j.columns(c, cb);
        h.view_mut((c, c), (n - c, cb)).gemm(1.0, &lhs, &rhs, 0.0);
        c += cb;
    }
    for col in 1..n {
        for row in 0..col {
            h[(row, col)] = h[(col, row)];
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let j = DMatrix::from_fn(n + 5, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let mut h = gram_tr(&j);
        for i in 0..n {
            h[(i, i)] += 1e-3;
        }
        h
    }

    #[test]
    fn gram_matches_product() {
        let h = spd(250, 3);
        let j = DMatrix::from_fn(40, 250, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        assert!((gram_tr(&j) - j.transpose() * &j).abs().max() < 1e-9);
        assert!((h.transpose() - &h).abs().max() == 0.0);
    }

    #[test]
    fn factor_reconstructs_matrix() {
        for n in [1, 7, 96, 97, 300] {
            let a = spd(n, n as u64);
            let l = cholesky(a.clone()).unwrap();
            assert!((&l * l.transpose() - &a).abs().max() < 1e-10, "n={n}");
            let b = DVector::from_fn(n, |i, _| (i as f64).sin());
            let x = cholesky_solve(&l, &b);
            assert!((&a * x - b).abs().max() < 1e-6);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = DMatrix::identity(120, 120);
        a[(110, 110)] = -1.0;
        assert!(cholesky(a).is_none());
    }
}
