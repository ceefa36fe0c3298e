//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical column rank from the singular values.
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Fails with [`Error::RankDeficient`] unless `m` has full column rank.
pub fn ensure_full_column_rank(m: &DMatrix<f64>) -> Result<()> {
    let rank = numeric_rank(m);
    if rank < m.ncols() {
        return Err(Error::RankDeficient { rank, columns: m.ncols() });
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

/// Orthonormal basis of the column space of `a`, dropping directions whose
/// singular value falls below [`RANK_TOL`] relative to the largest.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let t = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::zeros(t, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = svd.singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| max > 0.0 && sv[i] > RANK_TOL * max).collect();
    let mut q = DMatrix::zeros(t, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        q.set_column(j, &u.column(i));
    }
    q
}

/// Symmetrizes `m` and clips small negative eigenvalues to zero.
///
/// Eigenvalues below `-tol * trace` are reported as an error instead.
pub fn psd_repair(m: &DMatrix<f64>, tol: f64) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let trace = sym.trace().max(0.0);
    let scale = sym.amax();
    let mut eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -(tol * trace + 4.0 * f64::EPSILON * scale) {
        return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min });
    }
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Square-root factor `L` with `L Lᵀ = m` for a (repaired) PSD matrix.
pub fn psd_sqrt_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let eig = psd_repair(m, tol)?;
    let n = m.nrows();
    let mut l = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_duplicated_columns() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert_eq!(numeric_rank(&m), 1);
        assert!(ensure_full_column_rank(&m).is_err());
    }

    #[test]
    fn psd_repair_clips_roundoff_but_rejects_indefinite() {
        let nearly = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-15]);
        assert!(psd_repair(&nearly, 1e-10).is_ok());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            psd_repair(&indefinite, 1e-10),
            Err(Error::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn sqrt_factor_reproduces_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let l = psd_sqrt_factor(&m, 1e-10).unwrap();
        assert!((&l * l.transpose() - &m).abs().max() < 1e-12);
    }
}
