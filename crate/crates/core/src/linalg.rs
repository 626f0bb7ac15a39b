//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// `½(A − Aᵀ)`.
pub fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// `½(A + Aᵀ)`.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Splits `a` into its skew-symmetric and symmetric parts.
pub fn split(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (skew_part(a), sym_part(a))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of a symmetric matrix (symmetrised first), ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let s = sym_part(a);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Smallest eigenvalue of a symmetric matrix; `0` for the empty matrix.
pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(0.0)
}

/// Largest eigenvalue of a symmetric matrix; `0` for the empty matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(0.0)
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    a.clone().singular_values().iter().copied().collect()
}

/// Smallest singular value of a square matrix. Diagonal matrices are handled
/// without an SVD.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    if is_diagonal(a) {
        return a.diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    }
    singular_values(a)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_diagonal(a: &DMatrix<f64>) -> bool {
    a.is_square()
        && a.iter()
            .enumerate()
            .all(|(k, x)| *x == 0.0 || k % a.nrows() == k / a.nrows())
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD, with
/// singular values below `rel_cutoff · σ_max` treated as zero. Two rounds of
/// residual refinement recover the accuracy the SVD loses on badly scaled
/// rows; corrections stay in the row space, so the result is still minimum-norm.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    let cols = a.ncols();
    if cols == 0 || a.nrows() == 0 {
        return DVector::zeros(cols);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
    if sigma_max == 0.0 {
        return DVector::zeros(cols);
    }
    let cutoff = rel_cutoff * sigma_max;
    let apply_pinv = |r: &DVector<f64>| {
        let mut x = DVector::zeros(cols);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff {
                x += v_t.row(k).transpose() * (u.column(k).dot(r) / s);
            }
        }
        x
    };
    let mut x = apply_pinv(b);
    for _ in 0..2 {
        let r = b - a * &x;
        x += apply_pinv(&r);
    }
    x
}

/// Returns `x` with `x · a = b`, i.e. `b a⁻¹`, via an LU factorisation of `aᵀ`.
/// Diagonal `a` is handled by column scaling.
pub fn right_divide(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if is_diagonal(a) {
        let mut x = b.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let d = a[(j, j)];
            if d == 0.0 {
                return None;
            }
            col /= d;
        }
        return Some(x);
    }
    let lu = a.transpose().lu();
    lu.solve(&b.transpose()).map(|xt| xt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let (s, h) = split(&DMatrix::identity(2, 2));
        assert_eq!(s, DMatrix::zeros(2, 2));
        assert_eq!(h, DMatrix::identity(2, 2));

        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (s, h) = split(&m);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.5, 0.0]));
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        assert_eq!(s + h, m);
    }

    #[test]
    fn eigen_extremes() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((lambda_min(&r) + 1.0).abs() < 1e-15);
        assert!((lambda_max(&r) - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(lambda_min(&d), 0.0);
    }

    #[test]
    fn min_norm_prefers_shortest_solution() {
        // x1 + x2 = 2 -> (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_lstsq(&a, &DVector::from_vec(vec![2.0]), 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let zero = min_norm_lstsq(&DMatrix::zeros(3, 2), &DVector::from_vec(vec![1.0, 2.0, 3.0]), 1e-12);
        assert_eq!(zero, DVector::zeros(2));
    }

    #[test]
    fn right_divide_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 4.0, -1.0]);
        let x = right_divide(&b, &a).unwrap();
        assert!((x * &a - &b).amax() < 1e-14);
        assert!(right_divide(&b, &DMatrix::zeros(2, 2)).is_none());
    }
}
