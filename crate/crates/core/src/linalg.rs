//! Symmetric eigendecomposition and spectral matrix functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for refusing to invert: eigenvalues at or below `RANK_TOL · λ_max` are singular.
pub const RANK_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigvals: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigvals[j]`.
    pub eigvecs: DMatrix<f64>,
}

impl SymEigen {
    /// `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.eigvals.len();
        let mut scaled = self.eigvecs.clone();
        for (j, &lam) in self.eigvals.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(j).scale_mut(s);
        }
        let mut out = scaled * self.eigvecs.transpose();
        symmetrize(&mut out);
        debug_assert_eq!(out.nrows(), n);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|l| l)
    }

    pub fn max(&self) -> f64 {
        self.eigvals.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.eigvals.last().copied().unwrap_or(0.0)
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Backed by nalgebra's Householder tridiagonalization with implicit QR sweeps,
/// which is deterministic for a given input.
pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEigen> {
    if s.nrows() != s.ncols() {
        return Err(Error::dim(
            "sym_eig",
            format!("{}x{} is not square", s.nrows(), s.ncols()),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("sym_eig", "non-finite entry"));
    }
    let scale = s.amax();
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::contract(
            "sym_eig",
            format!("matrix is not symmetric (max |S - Sᵀ| = {asym:e})"),
        ));
    }
    let n = s.nrows();
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let eigvals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigvecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { eigvals, eigvecs })
}

fn check_spd(op: &'static str, eig: &SymEigen) -> Result<()> {
    let tol = RANK_TOL * eig.max().max(0.0);
    let lmin = eig.min();
    if !(lmin > tol) {
        return Err(Error::Singular {
            op,
            eigenvalue: lmin,
            tolerance: tol,
        });
    }
    Ok(())
}

/// `S^{-1/2}` for symmetric positive definite `S`.
pub fn inv_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    check_spd("inv_sqrt", &eig)?;
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// `S^{1/2}` for symmetric positive definite `S`.
pub fn sqrt_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(s)?;
    check_spd("sqrt_spd", &eig)?;
    Ok(eig.map(f64::sqrt))
}

/// `S^{1/2}` and `S^{-1/2}` from a single decomposition.
pub fn sqrt_and_inv_sqrt(
    op: &'static str,
    s: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, SymEigen)> {
    let eig = sym_eig(s)?;
    check_spd(op, &eig)?;
    Ok((eig.map(f64::sqrt), eig.map(|l| 1.0 / l.sqrt()), eig))
}

/// `M v` for a dense matrix and a slice.
pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), v.len());
    let mut out = vec![0.0; m.nrows()];
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        for (o, mij) in out.iter_mut().zip(m.column(j).iter()) {
            *o += mij * vj;
        }
    }
    out
}

/// `Mᵀ v` for a dense matrix and a slice.
pub fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), v.len());
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Symmetric Toeplitz matrix with first row `r`.
pub fn sym_toeplitz(r: &[f64]) -> DMatrix<f64> {
    let n = r.len();
    DMatrix::from_fn(n, n, |i, j| r[i.abs_diff(j)])
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{gaussian_vector, rng_from_seed};

    /// Cyclic-sweep Jacobi eigenvalue iteration: an independent route to the spectrum.
    fn jacobi_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
        let n = s.nrows();
        let mut a = s.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off.sqrt() <= 1e-15 * a.norm() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)] == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for kk in 0..n {
                        let akp = a[(kk, p)];
                        let akq = a[(kk, q)];
                        a[(kk, p)] = c * akp - sn * akq;
                        a[(kk, q)] = sn * akp + c * akq;
                    }
                    for kk in 0..n {
                        let apk = a[(p, kk)];
                        let aqk = a[(q, kk)];
                        a[(p, kk)] = c * apk - sn * aqk;
                        a[(q, kk)] = sn * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        d.sort_by(|x, y| y.total_cmp(x));
        d
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::from_vec(n, n, gaussian_vector(n * n, &mut rng));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_spectrum() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.eigvals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rotated_diagonal_recovers_spectrum() {
        let th: f64 = 0.3;
        let q = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let s = &q * d * q.transpose();
        let e = sym_eig(&s).unwrap();
        assert!((e.eigvals[0] - 3.0).abs() < 1e-12);
        assert!((e.eigvals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_spd_reconstruction_and_orthogonality() {
        let s = random_spd(50, 1);
        let e = sym_eig(&s).unwrap();
        let rec = e.reconstruct();
        assert!((&rec - &s).norm() <= 1e-10 * s.norm());
        let vtv = e.eigvecs.transpose() * &e.eigvecs;
        assert!((vtv - DMatrix::identity(50, 50)).amax() <= 1e-10);
        assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
        let jac = jacobi_eigenvalues(&s);
        for (a, b) in e.eigvals.iter().zip(&jac) {
            assert!((a - b).abs() <= 1e-10 * e.max());
        }
    }

    #[test]
    fn rejects_nonsymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&s), Err(Error::Contract { .. })));
    }

    #[test]
    fn inv_sqrt_examples() {
        let out = inv_sqrt(&(DMatrix::identity(2, 2) * 4.0)).unwrap();
        assert!((out - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let out = inv_sqrt(&d).unwrap();
        assert!((out - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]))).amax() < 1e-15);

        let s = random_spd(12, 8);
        let w = inv_sqrt(&s).unwrap();
        let prod = &w * &w * &s;
        assert!((prod - DMatrix::identity(12, 12)).amax() <= 1e-8);
    }

    #[test]
    fn inv_sqrt_refuses_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match inv_sqrt(&s) {
            Err(Error::Singular { eigenvalue, .. }) => assert!(eigenvalue.abs() < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn toeplitz_and_products() {
        let t = sym_toeplitz(&[2.0, 1.0, 0.5]);
        assert_eq!(t[(0, 2)], 0.5);
        assert_eq!(t[(2, 1)], 1.0);
        let v = [1.0, -1.0, 2.0];
        assert_eq!(mat_vec(&t, &v), (&t * to_dvector(&v)).as_slice());
        assert_eq!(
            mat_t_vec(&t, &v),
            (t.transpose() * to_dvector(&v)).as_slice()
        );
    }
}
