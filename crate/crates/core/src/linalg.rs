//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; problem sizes are tiny
//! (n ≤ 4) so clarity wins over blocking or in-place tricks.

use nalgebra::{Complex, DMatrix, DVector};

pub type Mat = DMatrix<f64>;

/// Max-abs-entry norm.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn symmetry_defect(m: &Mat) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Symmetric PSD square root; negative eigenvalues (round-off) are clipped.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// A factor `F` with `F·Fᵀ = cov`: Cholesky when PD, eigen square root otherwise.
pub fn covariance_factor(cov: &Mat) -> Mat {
    match symmetrize(cov).cholesky() {
        Some(ch) => ch.l(),
        None => psd_sqrt(cov),
    }
}

/// Inverse with a pseudo-inverse fallback for singular input.
pub fn inverse_or_pinv(m: &Mat) -> Mat {
    if m.nrows() == 0 {
        return m.clone();
    }
    if let Some(ch) = symmetrize(m).cholesky() {
        if symmetry_defect(m) <= 1e-12 * (1.0 + max_abs(m)) {
            return ch.inverse();
        }
    }
    if let Some(inv) = m.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return inv;
        }
    }
    m.clone()
        .pseudo_inverse(1e-14 * (1.0 + max_abs(m)))
        .unwrap_or_else(|_| Mat::zeros(m.ncols(), m.nrows()))
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn rank(m: &Mat, tol: f64) -> usize {
    singular_values(m).into_iter().filter(|&s| s > tol).count()
}

/// Complex eigenvalues of a real square matrix.
pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// PBH test: rank [A − λI ; C] over the complex field.
pub fn pbh_rank(a: &Mat, c: &Mat, lambda: Complex<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let rows = n + c.nrows();
    let mut stacked = DMatrix::<Complex<f64>>::zeros(rows, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = Complex::new(a[(i, j)], 0.0);
            if i == j {
                v -= lambda;
            }
            stacked[(i, j)] = v;
        }
    }
    for i in 0..c.nrows() {
        for j in 0..n {
            stacked[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
        }
    }
    stacked
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}

/// `[B, AB, …, Aⁿ⁻¹B]`
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    out
}

/// Row-major copy of a matrix.
pub fn row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<Mat, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged rows".to_string());
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `xᵀ M x` for a row-major `n×n` matrix.
#[inline]
pub fn quad_form(m: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += row[j] * x[j];
        }
        acc += x[i] * s;
    }
    acc
}

/// `out = M x` for a row-major `rows×x.len()` matrix.
#[inline]
pub fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        *o = s;
    }
}

/// `out += M x`
#[inline]
pub fn mat_vec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        *o += s;
    }
}

#[inline]
pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Serde adapter writing matrices as row-major nested arrays.
pub mod rows {
    use super::{from_rows, to_rows, Mat};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}
