//! Small dense linear-algebra helpers shared by the likelihood, fit and theory code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Log-determinant and inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Fails with [`Error::IllConditioned`] when the factorization breaks down or the
/// pivots span more than ~14 orders of magnitude.
pub fn spd_logdet_inverse(k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = k.nrows();
    if n == 0 {
        return Ok((0.0, DMatrix::zeros(0, 0)));
    }
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => {
            return Err(Error::IllConditioned {
                condition: condition_estimate(k),
            })
        }
    };
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..n {
        let d = l[(i, i)];
        dmin = dmin.min(d * d);
        dmax = dmax.max(d * d);
        logdet += 2.0 * d.ln();
    }
    if !(dmin > 0.0) || dmax / dmin > 1e14 || !logdet.is_finite() {
        return Err(Error::IllConditioned {
            condition: condition_estimate(k),
        });
    }
    Ok((logdet, chol.inverse()))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn spd_logdet(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} matrix")))?;
    let l = chol.l_dirty();
    Ok((0..n).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

/// Ratio of extreme absolute eigenvalues, used only for error reporting.
pub fn condition_estimate(k: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(k);
    let ev = sym.symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Principal submatrix on `idx` (rows and columns).
pub fn restrict(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Embed a principal submatrix back into a `p x p` zero matrix.
pub fn pad(small: &DMatrix<f64>, idx: &[usize], p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p, p);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out[(i, j)] = small[(r, c)];
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; columns of the returned matrix are the eigenvectors.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Inverse of `I - B` for a connectivity matrix whose support is acyclic.
///
/// Panics if the matrix is singular, which cannot happen for acyclic support
/// (the determinant is exactly one).
pub fn inv_i_minus(b: &DMatrix<f64>) -> DMatrix<f64> {
    let p = b.nrows();
    let m = DMatrix::<f64>::identity(p, p) - b;
    m.try_inverse()
        .expect("I - B must be invertible for acyclic B")
}

/// Empirical covariance (divisor `n`) of the rows of `x` after centering.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return DMatrix::zeros(p, p);
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n as f64;
    symmetrize(&cov)
}

/// Row-major nested-array serde for dense matrices.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// Sequence of row-major matrices.
pub mod serde_matrix_vec {
    use nalgebra::DMatrix;
    use serde::{ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(ms.len()))?;
        for m in ms {
            let rows: Vec<Vec<f64>> = (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect();
            seq.serialize_element(&rows)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        all.iter()
            .map(|rows| super::serde_matrix::from_rows(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&v.iter().copied().collect::<Vec<_>>(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

pub mod serde_vector_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().copied().collect()).collect();
        serde::Serialize::serialize(&all, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        let all: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Ok(all.into_iter().map(DVector::from_vec).collect())
    }
}
