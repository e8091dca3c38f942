//! Dimension-dispatched dense linear algebra helpers.
//!
//! nalgebra's eigendecomposition and determinant are not implemented for
//! arbitrary const-generic dimensions, so the 2x2/3x3 cases are routed to
//! the concrete types here.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector};

pub struct SymEigen<const D: usize> {
    pub values: SVector<f64, D>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: SMatrix<f64, D, D>,
}

impl<const D: usize> SymEigen<D> {
    pub fn recompose(&self) -> SMatrix<f64, D, D> {
        self.vectors * SMatrix::<f64, D, D>::from_diagonal(&self.values) * self.vectors.transpose()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn sym_eigen<const D: usize>(m: &SMatrix<f64, D, D>) -> SymEigen<D> {
    match D {
        2 => {
            let e = Matrix2::from_fn(|i, j| m[(i, j)]).symmetric_eigen();
            SymEigen {
                values: SVector::from_fn(|i, _| e.eigenvalues[i]),
                vectors: SMatrix::from_fn(|i, j| e.eigenvectors[(i, j)]),
            }
        }
        3 => {
            let e = Matrix3::from_fn(|i, j| m[(i, j)]).symmetric_eigen();
            SymEigen {
                values: SVector::from_fn(|i, _| e.eigenvalues[i]),
                vectors: SMatrix::from_fn(|i, j| e.eigenvectors[(i, j)]),
            }
        }
        _ => unimplemented!("symmetric eigendecomposition for D = {D}"),
    }
}

pub fn determinant<const D: usize>(m: &SMatrix<f64, D, D>) -> f64 {
    match D {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        _ => unimplemented!("determinant for D = {D}"),
    }
}

pub fn try_inverse<const D: usize>(m: &SMatrix<f64, D, D>) -> Option<SMatrix<f64, D, D>> {
    match D {
        2 => Matrix2::from_fn(|i, j| m[(i, j)])
            .try_inverse()
            .map(|inv| SMatrix::from_fn(|i, j| inv[(i, j)])),
        3 => Matrix3::from_fn(|i, j| m[(i, j)])
            .try_inverse()
            .map(|inv| SMatrix::from_fn(|i, j| inv[(i, j)])),
        _ => unimplemented!("inverse for D = {D}"),
    }
}
