//! Small dense helpers shared by the fitting and sampling code.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; column `j` of the returned matrix pairs with value `j`.
pub fn sym_eigen_desc(m: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let d = m.nrows();
    let dm = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Array1::from_iter(order.iter().map(|&j| eig.eigenvalues[j]));
    let vecs = Array2::from_shape_fn((d, d), |(i, c)| eig.eigenvectors[(i, order[c])]);
    (vals, vecs)
}

/// Cholesky factorization; `None` when the matrix is not positive definite.
pub fn cholesky(m: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let d = m.nrows();
    let dm = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let c = dm.cholesky()?;
    let l = c.l();
    Some(Array2::from_shape_fn((d, d), |(i, j)| l[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn logsumexp_handles_large_and_empty_inputs() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let m = array![[2.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 1.0]];
        let (vals, vecs) = sym_eigen_desc(m.view());
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rec = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (a, b) in rec.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
