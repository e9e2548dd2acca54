//! The shift-truncation matrix `A₀`, its Gram, the preconditioned matrix
//! `A = (A₀A₀ᵀ)^{-1/2}A₀` and the scalars `σ_min`, `κ`, `μ` derived from them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, sym_toeplitz};
use crate::par::{map_indexed, Parallelism};
use crate::signals::{
    cyclic_autocorrelation, derive_seed, shift_truncation, Kernel, KernelFamily, Observation,
};

/// `A₀ ∈ ℝ^{k×(2k−1)}`: column `c` (0-based) is the shift truncation of `a₀`
/// by `τ = c − (k − 1)`, so the middle column is `a₀` itself.
pub fn build_a0(a0: &Kernel) -> DMatrix<f64> {
    let k = a0.len();
    let mut out = DMatrix::zeros(k, 2 * k - 1);
    for c in 0..2 * k - 1 {
        let tau = c as i64 - (k as i64 - 1);
        let col = shift_truncation(a0.values(), tau);
        out.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    out
}

/// Linear autocorrelation `r(τ) = Σₙ a(n) a(n + τ)` for `τ = 0..k`.
pub fn linear_autocorrelation(a: &[f64]) -> Vec<f64> {
    let k = a.len();
    (0..k)
        .map(|tau| crate::signals::dot(&a[..k - tau], &a[tau..]))
        .collect()
}

/// `A₀A₀ᵀ`, which is the symmetric Toeplitz matrix of the kernel's linear autocorrelation.
pub fn kernel_gram(a0: &Kernel) -> DMatrix<f64> {
    sym_toeplitz(&linear_autocorrelation(a0.values()))
}

/// `(A, (A₀A₀ᵀ)^{-1/2})` for a full-row-rank `A₀`.
pub fn precondition(a0: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gram = a0 * a0.transpose();
    let eig = linalg::sym_eig(&gram)?;
    let w = inv_sqrt_checked("precondition", &eig)?;
    Ok((&w * a0, w))
}

fn inv_sqrt_checked(op: &'static str, eig: &linalg::SymEigen) -> Result<DMatrix<f64>> {
    let tol = linalg::RANK_TOL * eig.max().max(0.0);
    if !(eig.min() > tol) {
        return Err(Error::Singular {
            op,
            eigenvalue: eig.min(),
            tolerance: tol,
        });
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// `max_{i≠j} |⟨aᵢ, aⱼ⟩|` over the columns of `a`. Zero columns contribute 0.
pub fn coherence(a: &DMatrix<f64>) -> f64 {
    max_off_diagonal(&(a.transpose() * a))
}

fn max_off_diagonal(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut mu = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                mu = mu.max(g[(i, j)].abs());
            }
        }
    }
    mu
}

/// `(σ_min, κ)` of `A₀`: `σ_min = √λ_min(A₀A₀ᵀ)`, `κ = √(λ_max/λ_min)`.
pub fn spectrum_stats(a0: &DMatrix<f64>) -> Result<(f64, f64)> {
    let eig = linalg::sym_eig(&(a0 * a0.transpose()))?;
    stats_from_eig("spectrum_stats", &eig)
}

fn stats_from_eig(op: &'static str, eig: &linalg::SymEigen) -> Result<(f64, f64)> {
    let (lmax, lmin) = (eig.max(), eig.min());
    let tol = linalg::RANK_TOL * lmax.max(0.0);
    if !(lmin > tol) {
        return Err(Error::Singular {
            op,
            eigenvalue: lmin,
            tolerance: tol,
        });
    }
    Ok((lmin.sqrt(), (lmax / lmin).sqrt().max(1.0)))
}

/// Everything the population landscape needs to know about a kernel.
#[derive(Debug, Clone)]
pub struct ShiftModel {
    pub kernel: Kernel,
    pub a0: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub inv_sqrt_gram: DMatrix<f64>,
    /// Preconditioned matrix; column `c` corresponds to shift `τ = c − (k − 1)`.
    pub a: DMatrix<f64>,
    /// `AᵀA`, the pairwise column inner products.
    pub col_gram: DMatrix<f64>,
    pub sigma_min: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl ShiftModel {
    pub fn new(kernel: &Kernel) -> Result<Self> {
        let a0 = build_a0(kernel);
        let gram = kernel_gram(kernel);
        let eig = linalg::sym_eig(&gram)?;
        let (sigma_min, kappa) = stats_from_eig("ShiftModel::new", &eig)?;
        let inv_sqrt_gram = inv_sqrt_checked("ShiftModel::new", &eig)?;
        let a = &inv_sqrt_gram * &a0;
        let col_gram = a.transpose() * &a;
        let mu = max_off_diagonal(&col_gram);
        Ok(ShiftModel {
            kernel: kernel.clone(),
            a0,
            gram,
            inv_sqrt_gram,
            a,
            col_gram,
            sigma_min,
            kappa,
            mu,
        })
    }

    pub fn k(&self) -> usize {
        self.kernel.len()
    }

    /// Number of columns, `2k − 1`.
    pub fn n_cols(&self) -> usize {
        self.a.ncols()
    }

    /// Shift `τ` represented by column `c`.
    pub fn shift_of_column(&self, c: usize) -> i64 {
        c as i64 - (self.k() as i64 - 1)
    }

    /// `ζ = Aᵀq`.
    pub fn zeta(&self, q: &[f64]) -> Vec<f64> {
        linalg::mat_t_vec(&self.a, q)
    }

    /// Column `c` of `A`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.a.column(c).iter().copied().collect()
    }
}

/// `YYᵀ = Σᵢ yᵢyᵢᵀ` over the `m` cyclic windows of length `k`.
///
/// Entry `(i, j)` is the cyclic autocorrelation `r_y(|i − j|)`, so only `k`
/// lags are computed (cost `O(mk)`).
pub fn window_gram(obs: &Observation) -> DMatrix<f64> {
    sym_toeplitz(&cyclic_autocorrelation(&obs.y, obs.k))
}

/// Averaged kernel statistics for one kernel length.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub k: usize,
    pub sigma_min_avg: f64,
    pub kappa_avg: f64,
    pub mu_avg: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Averages `(σ_min, κ, μ)` over `trials` random kernels for every `k` in `k_list`.
///
/// Trial `t` at length `k` draws its kernel from `derive_seed(seed, [k, t])`,
/// so a row does not depend on which other lengths are in the list.
pub fn estimate_kernel_params(
    k_list: &[usize],
    trials: usize,
    seed: u64,
    family: KernelFamily,
    par: Parallelism,
) -> Result<Vec<ParamRow>> {
    if trials == 0 {
        return Err(Error::param(
            "estimate_kernel_params",
            "trials must be at least 1",
        ));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k < 2) {
        return Err(Error::param(
            "estimate_kernel_params",
            format!("kernel length {k} < 2"),
        ));
    }
    let jobs: Vec<(usize, usize)> = k_list
        .iter()
        .flat_map(|&k| (0..trials).map(move |t| (k, t)))
        .collect();
    let stats = map_indexed(jobs.len(), par, |j| {
        let (k, t) = jobs[j];
        let kernel = family.sample(k, derive_seed(seed, &[k as u64, t as u64]))?;
        let model = ShiftModel::new(&kernel)?;
        Ok((model.sigma_min, model.kappa, model.mu))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(k_list
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let chunk = &stats[i * trials..(i + 1) * trials];
            let n = trials as f64;
            ParamRow {
                k,
                sigma_min_avg: chunk.iter().map(|s| s.0).sum::<f64>() / n,
                kappa_avg: chunk.iter().map(|s| s.1).sum::<f64>() / n,
                mu_avg: chunk.iter().map(|s| s.2).sum::<f64>() / n,
                trials,
                seed,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{
        cyclic_shift, dot, gaussian_vector, norm2, random_unit, rng_from_seed, truncate, zero_pad,
    };
    use proptest::prelude::*;

    fn random_kernel(k: usize, seed: u64) -> Kernel {
        KernelFamily::Generic.sample(k, seed).unwrap()
    }

    #[test]
    fn delta_kernel_has_orthonormal_a0() {
        let k = 6;
        let a0 = build_a0(&Kernel::delta(k).unwrap());
        let nonzero: Vec<usize> = (0..2 * k - 1)
            .filter(|&c| a0.column(c).amax() > 0.0)
            .collect();
        assert_eq!(nonzero, (k - 1..2 * k - 1).collect::<Vec<_>>());
        for (r, &c) in nonzero.iter().enumerate() {
            assert_eq!(a0[(r, c)], 1.0);
        }
        assert_eq!(&a0 * a0.transpose(), DMatrix::identity(k, k));
    }

    #[test]
    fn two_tap_layout() {
        let kern = Kernel::new(vec![0.6, 0.8]).unwrap();
        let a0 = build_a0(&kern);
        let (a1, a2) = (kern.values()[0], kern.values()[1]);
        assert_eq!(
            a0,
            DMatrix::from_row_slice(2, 3, &[a2, a1, 0.0, 0.0, a2, a1])
        );
    }

    #[test]
    fn columns_match_shift_truncations_for_any_padding() {
        let kern = random_kernel(7, 3);
        let a0 = build_a0(&kern);
        let k = 7;
        for pad in [2 * k - 1, 2 * k + 5, 64] {
            for c in 0..2 * k - 1 {
                let tau = c as i64 - (k as i64 - 1);
                let col = truncate(
                    &cyclic_shift(&zero_pad(kern.values(), pad).unwrap(), tau),
                    k,
                )
                .unwrap();
                let got: Vec<f64> = a0.column(c).iter().copied().collect();
                assert_eq!(got, col, "pad {pad} column {c}");
            }
        }
    }

    #[test]
    fn toeplitz_gram_matches_product() {
        let kern = random_kernel(9, 5);
        let a0 = build_a0(&kern);
        let diff = (kernel_gram(&kern) - &a0 * a0.transpose()).amax();
        assert!(diff < 1e-14);
        assert!((kernel_gram(&kern)[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn preconditioning_is_exact() {
        let kern = random_kernel(10, 1);
        let (a, _) = precondition(&build_a0(&kern)).unwrap();
        assert!((&a * a.transpose() - DMatrix::identity(10, 10)).norm() <= 1e-10);

        let delta = build_a0(&Kernel::delta(5).unwrap());
        let (a, _) = precondition(&delta).unwrap();
        assert!((a - &delta).amax() < 1e-15);
    }

    #[test]
    fn preconditioning_is_scale_invariant() {
        let a0 = build_a0(&random_kernel(8, 2));
        let (a, _) = precondition(&a0).unwrap();
        let (b, _) = precondition(&(&a0 * 3.5)).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn model_invariants() {
        let model = ShiftModel::new(&random_kernel(12, 4)).unwrap();
        assert!((&model.a * model.a.transpose() - DMatrix::identity(12, 12)).norm() <= 1e-10);
        for c in 0..model.n_cols() {
            assert!(norm2(&model.column(c)) <= 1.0 + 1e-10);
        }
        assert!(model.kappa >= 1.0 && model.mu < 1.0 && model.sigma_min > 0.0);
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            let q = random_unit(12, &mut rng);
            assert!((norm2(&model.zeta(&q)) - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn delta_statistics() {
        let model = ShiftModel::new(&Kernel::delta(5).unwrap()).unwrap();
        assert_eq!(model.mu, 0.0);
        assert!((model.sigma_min - 1.0).abs() < 1e-15);
        assert!((model.kappa - 1.0).abs() < 1e-15);
        assert_eq!(coherence(&build_a0(&Kernel::delta(5).unwrap())), 0.0);
    }

    #[test]
    fn two_tap_coherence_by_hand() {
        // a = [1,1]/√2: A₀ columns [s,0], [s,s], [0,s] with s = 1/√2, Gram [[1, ½],[½, 1]].
        let model = ShiftModel::new(&Kernel::new(vec![1.0, 1.0]).unwrap()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let w = linalg::inv_sqrt(&g).unwrap();
        let cols: Vec<Vec<f64>> = [[s, 0.0], [s, s], [0.0, s]]
            .iter()
            .map(|c| linalg::mat_vec(&w, c))
            .collect();
        let mut want = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    want = want.max(dot(&cols[i], &cols[j]).abs());
                }
            }
        }
        assert!((model.mu - want).abs() < 1e-14);
        assert!((coherence(&model.a) - want).abs() < 1e-14);
    }

    #[test]
    fn singular_a0_is_refused() {
        let a0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(spectrum_stats(&a0), Err(Error::Singular { .. })));
        assert!(matches!(precondition(&a0), Err(Error::Singular { .. })));
    }

    #[test]
    fn two_vector_span_bound() {
        let model = ShiftModel::new(&random_kernel(15, 9)).unwrap();
        let mut rng = rng_from_seed(10);
        use rand::Rng;
        let n = model.n_cols();
        for _ in 0..500 {
            let l = rng.gen_range(0..n);
            let mut lp = rng.gen_range(0..n);
            while lp == l {
                lp = rng.gen_range(0..n);
            }
            let (al, alp) = (model.column(l), model.column(lp));
            let (nl, nlp) = (norm2(&al), norm2(&alp));
            let cos = dot(&al, &alp).abs() / (nl * nlp);
            for _ in 0..100 {
                let c = gaussian_vector(2, &mut rng);
                let v: Vec<f64> = al
                    .iter()
                    .zip(&alp)
                    .map(|(x, y)| c[0] * x + c[1] * y)
                    .collect();
                let v = crate::signals::normalize(&v).unwrap();
                let lhs = (dot(&al, &v) / nl).powi(2) + (dot(&alp, &v) / nlp).powi(2);
                assert!(lhs >= 1.0 - cos - 1e-10);
            }
        }
    }

    fn brute_window_gram(y: &[f64], k: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(k, k);
        for i in 0..y.len() {
            let w = crate::signals::window(y, i, k);
            for a in 0..k {
                for b in 0..k {
                    g[(a, b)] += w[a] * w[b];
                }
            }
        }
        g
    }

    #[test]
    fn window_gram_examples() {
        let mut e1 = vec![0.0; 20];
        e1[0] = 1.0;
        assert_eq!(
            window_gram(&Observation::new(e1, 4).unwrap()),
            DMatrix::identity(4, 4)
        );

        let ones = Observation::new(vec![1.0; 20], 3).unwrap();
        assert_eq!(window_gram(&ones), DMatrix::from_element(3, 3, 20.0));

        let mut rng = rng_from_seed(2);
        let y = gaussian_vector(32, &mut rng);
        let fast = window_gram(&Observation::new(y.clone(), 4).unwrap());
        let slow = brute_window_gram(&y, 4);
        assert!((fast - slow).amax() <= 1e-12);
    }

    #[test]
    fn params_are_reproducible_and_sane() {
        let a = estimate_kernel_params(&[30], 1, 5, KernelFamily::Generic, Parallelism::Sequential)
            .unwrap();
        let b = estimate_kernel_params(
            &[10, 30],
            1,
            5,
            KernelFamily::Generic,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(a[0], b[1]);
        assert!(estimate_kernel_params(
            &[30],
            0,
            5,
            KernelFamily::Generic,
            Parallelism::Sequential
        )
        .is_err());
    }

    #[test]
    fn params_k100_follow_the_scaling_laws() {
        let rows =
            estimate_kernel_params(&[100], 50, 1, KernelFamily::Generic, Parallelism::default())
                .unwrap();
        let k = 100f64;
        let mu_law = (k.ln() / k).sqrt();
        let kappa_law = k.ln().powf(4.0 / 3.0);
        assert!(
            rows[0].mu_avg / mu_law > 0.5 && rows[0].mu_avg / mu_law < 2.0,
            "{:?}",
            rows[0]
        );
        assert!(
            rows[0].kappa_avg / kappa_law > 0.5 && rows[0].kappa_avg / kappa_law < 2.0,
            "{:?}",
            rows[0]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn preconditioned_rows_are_orthonormal(seed in any::<u64>(), k in 2usize..25) {
            let model = ShiftModel::new(&random_kernel(k, seed)).unwrap();
            let err = (&model.a * model.a.transpose() - DMatrix::identity(k, k)).norm();
            prop_assert!(err <= 1e-10, "err {err:e}, kappa {}", model.kappa);
        }
    }
}
