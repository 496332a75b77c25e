//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const MAX_JITTER_ATTEMPTS: usize = 7;

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor of `cov + εI`, with `ε = 1e-10 · (1 + tr(cov)/n)`
/// (absolute diagonal, so the scale cannot cancel).
///
/// The jitter grows by a factor of ten on every failed attempt. An exactly
/// zero matrix factors to zero, so sampling from it returns the mean.
pub fn jittered_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            n,
            cov.ncols()
        )));
    }
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("covariance entry".into()));
    }
    if cov.iter().all(|&x| x == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let sym = symmetrize(cov);
    let diag: f64 = sym.diagonal().iter().map(|x| x.abs()).sum();
    let mut eps = 1e-10 * (1.0 + diag / n as f64);
    for _ in 0..MAX_JITTER_ATTEMPTS {
        let mut m = sym.clone();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(ch.l());
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        attempts: MAX_JITTER_ATTEMPTS,
    })
}

/// Solves the symmetric positive definite system `a x = b`, falling back to
/// LU when Cholesky fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("normal equations".into()))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("matrix inverse".into()))?,
    };
    Ok(symmetrize(&inv))
}

/// Largest absolute eigenvalue of a square matrix (via the real Schur form).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Serde adapter writing a matrix as an array of rows.
pub mod nested_matrix {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Serde adapter writing a vector as a flat array.
pub mod flat_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, ser: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(de)?))
    }
}

/// [`nested_matrix`] for a sequence of matrices.
pub mod nested_matrix_vec {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::nested_matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], ser: S) -> Result<S::Ok, S::Error> {
        let wrapped: Vec<Wrap> = ms.iter().cloned().map(Wrap).collect();
        wrapped.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(de)?.into_iter().map(|w| w.0).collect())
    }
}

/// [`flat_vector`] for a sequence of vectors.
pub mod flat_vector_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(vs: &[DVector<f64>], ser: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        raw.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(de)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}
