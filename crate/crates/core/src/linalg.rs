//! Small dense symmetric eigensolver.
//!
//! The EPnP and DLT solvers only need the eigenvector of the smallest
//! eigenvalue of a 9×9 or 12×12 normal matrix. Cyclic Jacobi is accurate to
//! full working precision on these sizes and has no external dependency on a
//! LAPACK backend.

use nalgebra::{SMatrix, SVector};

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<const N: usize> {
    pub values: SVector<f64, N>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: SMatrix<f64, N, N>,
}

impl<const N: usize> SymmetricEigen<N> {
    /// Eigenvector of the smallest eigenvalue.
    pub fn smallest_vector(&self) -> SVector<f64, N> {
        self.vectors.column(0).into_owned()
    }
}

const MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigen-decomposition.
///
/// Only the upper triangle of `a` is read. Sweeps stop once the off-diagonal
/// Frobenius mass falls below `tol` relative to the diagonal mass.
pub fn symmetric_eigen<const N: usize>(a: &SMatrix<f64, N, N>, tol: f64) -> SymmetricEigen<N> {
    let mut m = *a;
    for i in 0..N {
        for j in (i + 1)..N {
            m[(j, i)] = m[(i, j)];
        }
    }
    let mut v = SMatrix::<f64, N, N>::identity();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..N {
            diag += m[(i, i)] * m[(i, i)];
            for j in (i + 1)..N {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= tol * tol * diag || off == 0.0 {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..N {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;

                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = SVector::<f64, N>::from_fn(|k, _| m[(order[k], order[k])]);
    let vectors = SMatrix::<f64, N, N>::from_fn(|r, k| v[(r, order[k])]);
    SymmetricEigen { values, vectors }
}
