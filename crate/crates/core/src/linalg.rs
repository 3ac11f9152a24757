//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvalues sorted by descending modulus, ties broken by real then
/// imaginary part so the order is reproducible.
pub fn eigenvalues_by_modulus(m: &DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    ev
}

/// Orthonormal basis of the complement of the unit vector `normal`, as the
/// columns of an `n × (n-1)` matrix (from a Householder reflection).
pub fn orthogonal_complement(normal: &DVector<f64>) -> DMatrix<f64> {
    let n = normal.len();
    let k = normal.iamax();
    // w = normal + sign(normal_k) e_k
    let mut w = normal.clone();
    w[k] += if normal[k] >= 0.0 { 1.0 } else { -1.0 };
    let h = DMatrix::identity(n, n) - (&w * w.transpose()) * (2.0 / w.norm_squared());
    let cols: Vec<usize> = (0..n).filter(|&j| j != k).collect();
    h.select_columns(cols.iter())
}

/// Singular data used for null vectors and conditioning.
pub struct NullVector {
    pub vector: DVector<f64>,
    pub smallest: f64,
    pub second_smallest: f64,
    pub largest: f64,
}

/// Right singular vector of the smallest singular value.
pub fn null_vector(m: &DMatrix<f64>) -> NullVector {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let imin = order[0];
    NullVector {
        vector: v_t.row(imin).transpose(),
        smallest: sv[imin],
        second_smallest: order.get(1).map_or(f64::INFINITY, |&i| sv[i]),
        largest: sv[*order.last().unwrap()],
    }
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares / minimum-norm solve via SVD, truncating singular values
/// below `rcond * σ_max`. Returns the solution and the condition number.
pub fn solve_truncated(m: &DMatrix<f64>, rhs: &DVector<f64>, rcond: f64) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let cond = if min == 0.0 { f64::INFINITY } else { max / min };
    let x = svd
        .solve(rhs, rcond * max)
        .unwrap_or_else(|_| DVector::zeros(m.ncols()));
    (x, cond)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal() {
        for v in [vec![0.0, 1.0], vec![-3.0, 4.0], vec![1.0, -2.0, 2.0]] {
            let nrm = DVector::from_vec(v).normalize();
            let b = orthogonal_complement(&nrm);
            let gram = b.transpose() * &b;
            assert!((gram - DMatrix::identity(b.ncols(), b.ncols())).amax() < 1e-14);
            assert!((b.transpose() * &nrm).amax() < 1e-14);
        }
    }

    #[test]
    fn sorted_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -2.0]);
        let ev = eigenvalues_by_modulus(&m);
        assert_eq!(ev[0], Complex64::new(-2.0, 0.0));
        assert_eq!(ev[1], Complex64::new(0.5, 0.0));
    }

    #[test]
    fn null_vector_of_rank_one_defect() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let nv = null_vector(&m);
        assert!(nv.smallest < 1e-14);
        assert!((&m * &nv.vector).amax() < 1e-14);
    }
}
