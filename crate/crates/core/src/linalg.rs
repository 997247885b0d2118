//! Dense linear-algebra helpers shared by the extension and representation code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidConfig("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig("matrix rows are empty or ragged".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

pub fn rank(m: &Matrix, tol: f64) -> usize {
    singular_values(m).into_iter().filter(|s| *s > tol).count()
}

/// Smallest singular value of a square matrix (0 for non-square shortfall).
pub fn min_singular_value(m: &Matrix) -> f64 {
    let k = m.nrows().min(m.ncols());
    if m.nrows() != m.ncols() {
        return 0.0;
    }
    singular_values(m).into_iter().take(k).fold(f64::INFINITY, f64::min)
}

pub fn pinv(m: &Matrix) -> Matrix {
    m.clone().pseudo_inverse(RANK_TOL).expect("pseudo-inverse with non-negative tolerance")
}

/// Minimum-norm right inverse `m^T (m m^T)^-1` of a full-row-rank matrix;
/// falls back to the pseudo-inverse when `m m^T` is not positive definite.
pub fn right_inverse(m: &Matrix) -> Matrix {
    match (m * m.transpose()).cholesky() {
        Some(c) => c.solve(m).transpose(),
        None => pinv(m),
    }
}

/// Left inverse `(m^T m)^-1 m^T` of a full-column-rank matrix.
pub fn left_inverse(m: &Matrix) -> Matrix {
    right_inverse(&m.transpose()).transpose()
}

/// Orthonormal basis of the orthogonal complement of `col(b)`, computed from a
/// column-pivoted QR factorization of `b` padded to a square matrix.
///
/// Returns the numerical rank of `b` and an `n x (n - rank)` matrix with
/// orthonormal columns.
pub fn complement_basis(b: &Matrix, tol: f64) -> (usize, Matrix) {
    let n = b.nrows();
    let k = b.ncols();
    if k == 0 {
        return (0, Matrix::identity(n, n));
    }
    let width = n.max(k);
    let mut padded = Matrix::zeros(n, width);
    padded.view_mut((0, 0), (n, k)).copy_from(b);
    if n < width {
        // more columns than rows: the column space is captured by QR of b as-is
        let qr = b.clone().col_piv_qr();
        let r = qr.r();
        let scale = r.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let rank = r.diagonal().iter().filter(|v| v.abs() > tol * scale).count();
        let q = qr.q();
        return (rank, q.columns(rank, n - rank).into_owned());
    }
    let qr = padded.col_piv_qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let rank = r.diagonal().iter().filter(|v| v.abs() > tol * scale).count();
    let q = qr.q();
    (rank, q.columns(rank, n - rank).into_owned())
}

/// Orthonormal basis of `ker a`.
pub fn kernel_basis(a: &Matrix, tol: f64) -> Matrix {
    complement_basis(&a.transpose(), tol).1
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &Matrix, b: &Vector) -> Vector {
    let svd = a.clone().svd(true, true);
    svd.solve(b, RANK_TOL).expect("svd with u and v_t computed")
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, nrows: usize, ncols: usize) -> Matrix {
    Matrix::from_column_slice(nrows, ncols, v.as_slice())
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Serde adapter: matrices as row-major nested arrays.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: lists of matrices.
pub mod serde_matrices {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        ms.iter().map(matrix_to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Matrix>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter().map(|rows| matrix_from_rows(rows).map_err(serde::de::Error::custom)).collect()
    }
}

/// Serde adapter: vectors as flat arrays.
pub mod serde_vector {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter: lists of vectors.
pub mod serde_vectors {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> std::result::Result<S::Ok, S::Error> {
        vs.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vector>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(Vector::from_vec).collect())
    }
}
