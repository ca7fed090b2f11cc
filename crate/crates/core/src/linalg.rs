//! Small dense complex linear-algebra helpers shared by the state and
//! tomography code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Kronecker product `a ⊗ b` of two vectors, row-major (index `j * b.len() + k`).
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let n = b.len();
    CVector::from_fn(a.len() * n, |idx, _| a[idx / n] * b[idx % n])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (br, bc) = b.shape();
    CMatrix::from_fn(a.nrows() * br, a.ncols() * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// `|v⟩⟨v|`
pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `⟨v|m|v⟩`, real part only (m Hermitian).
pub fn expectation(m: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(m * v)).re
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Principal square root of a Hermitian PSD matrix; negative eigenvalues are
/// clipped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let roots = DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| Complex64::new(v.max(0.0).sqrt(), 0.0)),
    );
    &vectors * CMatrix::from_diagonal(&roots) * vectors.adjoint()
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Numerical rank from singular values relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.3),
                Complex64::new(0.5, -0.3),
                Complex64::new(1.0, 0.0),
            ],
        );
        let r = psd_sqrt(&a);
        let back = &r * &r;
        for (x, y) in back.iter().zip(a.iter()) {
            assert_relative_eq!(x.re, y.re, epsilon = 1e-12);
            assert_relative_eq!(x.im, y.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn kron_orders_row_major() {
        let a = CVector::from_vec(vec![ONE, ZERO]);
        let b = CVector::from_vec(vec![ZERO, ONE]);
        let v = kron_vec(&a, &b);
        assert_eq!(v[1], ONE);
        assert_eq!(v.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        assert_eq!(hermitian_eigenvalues(&m), vec![-1.0, 2.0, 3.0]);
    }
}
