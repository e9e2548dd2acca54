//! End-to-end deconvolution: initialize from a data window, minimize `ψ`,
//! lift back to a kernel, and score against a known kernel when one is given.

use rand::Rng;

use crate::error::{Error, Result};
use crate::landscape::{psi, ObservationModel, PsiObjective, SpherePoint};
use crate::linalg::mat_vec;
use crate::optimizer::{descend, OptReport, SolveOptions};
use crate::signals::{
    correlate_windows, cyclic_convolve, derive_seed, dot, norm2, normalize, rng_from_seed,
    shift_truncation, window, Kernel, Observation,
};

/// Number of window indices tried before giving up on an all-zero start.
pub const INIT_ATTEMPTS: usize = 32;

/// `q_init = P_S[B·yᵢ]` for the window starting at 0-based index `start`.
pub fn init_point(model: &ObservationModel, start: usize) -> Result<SpherePoint> {
    if start >= model.m() {
        return Err(Error::param(
            "init_point",
            format!("window index {start} >= m = {}", model.m()),
        ));
    }
    let w = window(model.y(), start, model.k());
    SpherePoint::project(&mat_vec(&model.b, &w)).map_err(|_| Error::ZeroWindow { attempts: 1 })
}

/// Draws the window index uniformly from `seed`, resampling on all-zero windows.
pub fn choose_init(model: &ObservationModel, seed: u64) -> Result<(usize, SpherePoint)> {
    let mut rng = rng_from_seed(derive_seed(seed, &[0x1417]));
    for _ in 0..INIT_ATTEMPTS {
        let i = rng.gen_range(0..model.m());
        if let Ok(q) = init_point(model, i) {
            return Ok((i, q));
        }
    }
    Err(Error::ZeroWindow {
        attempts: INIT_ATTEMPTS,
    })
}

/// `ā = P_S[(YYᵀ)^{1/2} q̄]`.
pub fn lift_kernel(model: &ObservationModel, q_bar: &[f64]) -> Result<Kernel> {
    if q_bar.len() != model.k() {
        return Err(Error::dim(
            "lift_kernel",
            format!("q has {} entries, k = {}", q_bar.len(), model.k()),
        ));
    }
    Kernel::new(mat_vec(&model.yy_sqrt, q_bar))
}

/// Distance of a recovered kernel to the closest signed shift truncation of the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// `1 − max_τ |⟨ā, P_S[ι_k* s_τ[ι(a₀)]]⟩|`.
    pub err: f64,
    pub best_shift: i64,
    pub sign: i8,
}

/// Exhaustive search over `τ ∈ [−(k−1), k−1]`, skipping truncations that are
/// entirely zero. Ties keep the smallest `τ`.
pub fn shift_truncation_error(a_bar: &Kernel, a0: &Kernel) -> Result<Score> {
    let k = a0.len();
    if a_bar.len() != k {
        return Err(Error::dim(
            "shift_truncation_error",
            format!("k = {} vs {k}", a_bar.len()),
        ));
    }
    let mut best: Option<(f64, i64, f64)> = None;
    for tau in -(k as i64 - 1)..=(k as i64 - 1) {
        let Some(t) = normalize(&shift_truncation(a0.values(), tau)) else {
            continue;
        };
        let ip = dot(a_bar.values(), &t);
        if best.map_or(true, |(b, _, _)| ip.abs() > b) {
            best = Some((ip.abs(), tau, ip));
        }
    }
    let (b, tau, ip) = best.ok_or_else(|| {
        Error::DegenerateKernel("every shift truncation of the reference is zero".into())
    })?;
    Ok(Score {
        err: (1.0 - b).clamp(0.0, 1.0),
        best_shift: tau,
        sign: if ip < 0.0 { -1 } else { 1 },
    })
}

/// Options for [`deconvolve`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeconvOptions {
    pub solve: SolveOptions,
    /// 0-based window index for initialization; drawn from `solve.seed` when absent.
    pub init_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvResult {
    pub q_bar: SpherePoint,
    pub a_bar: Kernel,
    pub report: OptReport,
    pub init_window: usize,
    pub q_init: SpherePoint,
    /// Unscaled `ψ(q̄)`.
    pub psi_final: f64,
    pub score: Option<Score>,
}

/// Runs the full pipeline on `y` with kernel length `k`. Requires `m > 2k`.
pub fn deconvolve(
    y: &[f64],
    k: usize,
    opts: &DeconvOptions,
    truth: Option<&Kernel>,
) -> Result<DeconvResult> {
    if y.len() <= 2 * k {
        return Err(Error::dim(
            "deconvolve",
            format!("need m > 2k, got m = {}, k = {k}", y.len()),
        ));
    }
    if let Some(t) = truth {
        if t.len() != k {
            return Err(Error::dim(
                "deconvolve",
                format!("reference kernel has length {}, k = {k}", t.len()),
            ));
        }
    }
    let model = ObservationModel::new(Observation::new(y.to_vec(), k)?)?;
    deconvolve_model(&model, opts, truth)
}

/// [`deconvolve`] on an already-built model.
pub fn deconvolve_model(
    model: &ObservationModel,
    opts: &DeconvOptions,
    truth: Option<&Kernel>,
) -> Result<DeconvResult> {
    let (init_window, q_init) = match opts.init_window {
        Some(i) => (i, init_point(model, i)?),
        None => choose_init(model, opts.solve.seed)?,
    };
    let objective = PsiObjective::normalized(model);
    let report = descend(&objective, &q_init, &opts.solve)?;
    finish(model, report, init_window, q_init, truth)
}

pub(crate) fn finish(
    model: &ObservationModel,
    report: OptReport,
    init_window: usize,
    q_init: SpherePoint,
    truth: Option<&Kernel>,
) -> Result<DeconvResult> {
    let q_bar = report.q_final.clone();
    let a_bar = lift_kernel(model, &q_bar)?;
    let psi_final = psi(model, &q_bar)?;
    let score = truth
        .map(|t| shift_truncation_error(&a_bar, t))
        .transpose()?;
    Ok(DeconvResult {
        q_bar,
        a_bar,
        report,
        init_window,
        q_init,
        psi_final,
        score,
    })
}

/// Least-squares activation estimate `argmin_x ‖y − ā ⊛ x‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub x: Vec<f64>,
    /// `‖y − ā ⊛ x‖₂`.
    pub residual: f64,
    pub iterations: usize,
}

const CG_MAX_ITERS: usize = 10_000;

/// Conjugate gradients on the normal equations `CᵀC x = Cᵀy`, where `C` is the
/// circulant of `ā`. Each product costs two `O(mk)` passes.
pub fn solve_activation(a_bar: &Kernel, y: &Observation) -> Result<Activation> {
    let a = a_bar.values();
    let m = y.m();
    if a.len() > m {
        return Err(Error::dim(
            "solve_activation",
            format!("k = {} > m = {m}", a.len()),
        ));
    }
    let normal = |x: &[f64]| -> Result<Vec<f64>> { correlate_windows(&cyclic_convolve(a, x)?, a) };
    let rhs = correlate_windows(&y.y, a)?;
    let rhs_norm = norm2(&rhs);
    let mut x = vec![0.0; m];
    let mut iterations = 0;
    if rhs_norm > 0.0 {
        let l1: f64 = a.iter().map(|v| v.abs()).sum();
        let curvature_floor = 1e-12 * l1 * l1;
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        while iterations < CG_MAX_ITERS {
            if rr.sqrt() <= 1e-13 * rhs_norm {
                break;
            }
            let ap = normal(&p)?;
            let pap = dot(&p, &ap);
            let pp = dot(&p, &p);
            if !(pap > curvature_floor * pp) {
                return Err(Error::Singular {
                    op: "solve_activation",
                    eigenvalue: pap / pp,
                    tolerance: curvature_floor,
                });
            }
            let step = rr / pap;
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += step * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= step * ai);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            p.iter_mut()
                .zip(&r)
                .for_each(|(pi, ri)| *pi = ri + beta * *pi);
            rr = rr_new;
            iterations += 1;
        }
        if iterations == CG_MAX_ITERS && rr.sqrt() > 1e-13 * rhs_norm {
            return Err(Error::Iteration {
                op: "solve_activation",
                iterations,
            });
        }
    }
    let fitted = cyclic_convolve(a, &x)?;
    let residual = norm2(
        &y.y.iter()
            .zip(&fitted)
            .map(|(u, v)| u - v)
            .collect::<Vec<_>>(),
    );
    Ok(Activation {
        x,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{convolve, gaussian_vector, random_unit, sample_bg, KernelFamily};

    #[test]
    fn init_on_unit_impulse() {
        let mut y = vec![0.0; 20];
        y[0] = 1.0;
        let model = ObservationModel::new(Observation::new(y, 4).unwrap()).unwrap();
        assert_eq!(
            init_point(&model, 0).unwrap().as_slice(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            init_point(&model, 5),
            Err(Error::ZeroWindow { .. })
        ));
        assert!(init_point(&model, 20).is_err());
    }

    #[test]
    fn init_points_are_unit() {
        for seed in 0..100u64 {
            let kern = KernelFamily::Generic.sample(6, seed).unwrap();
            let x = sample_bg(200, 0.2, seed).unwrap();
            let model = ObservationModel::new(convolve(&kern, &x.values()).unwrap()).unwrap();
            let (_, q) = choose_init(&model, seed).unwrap();
            assert!((norm2(&q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_observation_cannot_initialize() {
        let y = vec![0.0; 30];
        // YYᵀ is singular, so the model itself is refused.
        assert!(matches!(
            ObservationModel::new(Observation::new(y, 3).unwrap()),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn lift_with_identity_gram_is_identity() {
        let mut y = vec![0.0; 20];
        y[0] = 1.0;
        let model = ObservationModel::new(Observation::new(y, 3).unwrap()).unwrap();
        let q = normalize(&[0.2, -0.5, 0.7]).unwrap();
        let a = lift_kernel(&model, &q).unwrap();
        for (x, y) in a.values().iter().zip(&q) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn score_examples() {
        let a0 = KernelFamily::Generic.sample(10, 3).unwrap();
        let s = shift_truncation_error(&a0, &a0).unwrap();
        assert_eq!((s.best_shift, s.sign), (0, 1));
        assert!(s.err.abs() < 1e-15);

        let t: Vec<f64> = shift_truncation(a0.values(), 3)
            .iter()
            .map(|v| -v)
            .collect();
        let s = shift_truncation_error(&Kernel::new(t).unwrap(), &a0).unwrap();
        assert_eq!((s.best_shift, s.sign), (3, -1));
        assert!(s.err.abs() < 1e-14);
    }

    #[test]
    fn score_of_unrelated_kernel_is_large() {
        let mut rng = rng_from_seed(5);
        let mut large = 0;
        for _ in 0..20 {
            let a0 = Kernel::new(random_unit(50, &mut rng)).unwrap();
            let other = Kernel::new(random_unit(50, &mut rng)).unwrap();
            if shift_truncation_error(&other, &a0).unwrap().err >= 0.5 {
                large += 1;
            }
        }
        assert!(large >= 19);
    }

    #[test]
    fn score_is_invariant_to_sign() {
        let mut rng = rng_from_seed(1);
        let a0 = Kernel::new(random_unit(8, &mut rng)).unwrap();
        let a = Kernel::new(random_unit(8, &mut rng)).unwrap();
        let neg = Kernel::new(a.values().iter().map(|v| -v).collect()).unwrap();
        let s1 = shift_truncation_error(&a, &a0).unwrap();
        let s2 = shift_truncation_error(&neg, &a0).unwrap();
        assert_eq!(s1.err, s2.err);
        assert_eq!(s1.best_shift, s2.best_shift);
        assert_eq!(s1.sign, -s2.sign);
    }

    #[test]
    fn delta_kernel_is_recovered() {
        let a0 = Kernel::delta(8).unwrap();
        let x = sample_bg(1 << 14, 0.05, 2).unwrap();
        let y = convolve(&a0, &x.values()).unwrap().y;
        let opts = DeconvOptions::default();
        let r = deconvolve(&y, 8, &opts, Some(&a0)).unwrap();
        assert!(r.score.unwrap().err <= 1e-3, "{:?}", r.score);
        let again = deconvolve(&y, 8, &opts, Some(&a0)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn deconvolve_validates_sizes() {
        assert!(matches!(
            deconvolve(&[1.0; 10], 5, &DeconvOptions::default(), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn exact_kernel_recovers_activation() {
        let mut rng = rng_from_seed(4);
        let a0 = KernelFamily::Generic.sample(5, 8).unwrap();
        let x = gaussian_vector(64, &mut rng);
        let y = convolve(&a0, &x).unwrap();
        let sol = solve_activation(&a0, &y).unwrap();
        for (a, b) in sol.x.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-8);
        }
        assert!(sol.residual <= norm2(&y.y));

        let d = Kernel::delta(3).unwrap();
        let y = Observation::new(gaussian_vector(40, &mut rng), 3).unwrap();
        let sol = solve_activation(&d, &y).unwrap();
        for (a, b) in sol.x.iter().zip(&y.y) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn every_signed_shift_truncation_scores_zero() {
        let a0 = KernelFamily::Generic.sample(12, 1).unwrap();
        for tau in -11i64..=11 {
            for sign in [1.0, -1.0] {
                let t: Vec<f64> = shift_truncation(a0.values(), tau)
                    .iter()
                    .map(|v| sign * v)
                    .collect();
                let s = shift_truncation_error(&Kernel::new(t).unwrap(), &a0).unwrap();
                assert!(s.err < 1e-14, "tau {tau}: {s:?}");
                assert_eq!(s.best_shift, tau);
                assert_eq!(s.sign as f64, sign);
            }
        }
    }
}
