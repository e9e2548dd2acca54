//! The finite-sample objective `ψ`, its population counterpart `φ`, their
//! Riemannian derivatives on the sphere, region membership, and the analysis
//! of stationary points.
//!
//! Notation: `B = (YYᵀ)^{-1/2}`, `η = YᵀBq` (window correlations of `y` with
//! `Bq`), `ζ = Aᵀq`, and `P = I − qqᵀ` is the tangent projection at `q`.

use std::cell::RefCell;
use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, mat_t_vec, mat_vec};
use crate::optimizer::Objective;
use crate::shiftmodel::{window_gram, ShiftModel};
use crate::signals::{
    correlate_extended, cyclic_autocorrelation, dot, gaussian_vector, norm2, normalize,
    rng_from_seed, scatter_extended, wrap_extend, Observation, SparseSignal,
};

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(Vec<f64>);

impl SpherePoint {
    /// Accepts a vector whose norm is within `1e-10` of one and renormalizes it.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm2(&v);
        if !((n - 1.0).abs() <= 1e-10) {
            return Err(Error::contract(
                "SpherePoint::new",
                format!("norm {n} is not 1"),
            ));
        }
        Ok(SpherePoint(v.into_iter().map(|x| x / n).collect()))
    }

    /// `P_S[v]`.
    pub fn project(v: &[f64]) -> Result<Self> {
        normalize(v).map(SpherePoint).ok_or_else(|| {
            Error::contract("SpherePoint::project", "cannot normalize the zero vector")
        })
    }

    pub(crate) fn from_unit_unchecked(v: Vec<f64>) -> Self {
        SpherePoint(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SpherePoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `v − q⟨q, v⟩`.
pub fn project_tangent(q: &[f64], v: &[f64]) -> Vec<f64> {
    let c = dot(q, v);
    v.iter().zip(q).map(|(vi, qi)| vi - c * qi).collect()
}

fn sum4(v: &[f64]) -> f64 {
    v.iter().map(|x| (x * x) * (x * x)).sum()
}

fn sum3_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs().powi(3)).sum()
}

/// `Σ (b⁴ − a⁴)` for `b = a + d`, factored so that small `d` keeps full relative accuracy.
fn quartic_increment(a: &[f64], d: &[f64]) -> f64 {
    a.iter()
        .zip(d)
        .map(|(&x, &dx)| {
            let y = x + dx;
            dx * (x + y) * (x * x + y * y)
        })
        .sum()
}

fn check_dim(op: &'static str, k: usize, v: &[f64]) -> Result<()> {
    if v.len() != k {
        return Err(Error::dim(
            op,
            format!("vector has {} entries, expected {k}", v.len()),
        ));
    }
    Ok(())
}

fn check_tangent(op: &'static str, q: &[f64], v: &[f64]) -> Result<()> {
    let c = dot(q, v);
    if !(c.abs() <= 1e-8 * norm2(v).max(1.0)) {
        return Err(Error::contract(
            op,
            format!("direction is not tangent: <v, q> = {c:e}"),
        ));
    }
    Ok(())
}

/// An observation with its window Gram and preconditioner.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub obs: Observation,
    pub yy_gram: DMatrix<f64>,
    /// `B = (YYᵀ)^{-1/2}`.
    pub b: DMatrix<f64>,
    /// `(YYᵀ)^{1/2}`, used to lift a solution back to a kernel.
    pub yy_sqrt: DMatrix<f64>,
    y_ext: Vec<f64>,
}

impl ObservationModel {
    pub fn new(obs: Observation) -> Result<Self> {
        let yy_gram = window_gram(&obs);
        let (yy_sqrt, b, _) = linalg::sqrt_and_inv_sqrt("ObservationModel::new", &yy_gram)?;
        let y_ext = wrap_extend(&obs.y, obs.k);
        Ok(ObservationModel {
            obs,
            yy_gram,
            b,
            yy_sqrt,
            y_ext,
        })
    }

    pub fn k(&self) -> usize {
        self.obs.k
    }

    pub fn m(&self) -> usize {
        self.obs.m()
    }

    pub fn y(&self) -> &[f64] {
        &self.obs.y
    }

    /// `Yᵀw`.
    pub fn correlate(&self, w: &[f64]) -> Vec<f64> {
        correlate_extended(&self.y_ext, self.m(), w)
    }

    /// `Yv` for `v ∈ ℝᵐ`.
    pub fn scatter(&self, v: &[f64]) -> Vec<f64> {
        scatter_extended(&self.y_ext, v, self.k())
    }

    fn eta_unchecked(&self, q: &[f64]) -> Vec<f64> {
        self.correlate(&mat_vec(&self.b, q))
    }

    fn grad_from_eta(&self, q: &[f64], eta: &[f64]) -> Vec<f64> {
        let m = self.m() as f64;
        let cubes: Vec<f64> = eta.iter().map(|x| x * x * x).collect();
        let egrad: Vec<f64> = mat_vec(&self.b, &self.scatter(&cubes))
            .into_iter()
            .map(|x| -x / m)
            .collect();
        project_tangent(q, &egrad)
    }

    fn hess_from_eta(&self, q: &[f64], eta: &[f64], v: &[f64]) -> Vec<f64> {
        let m = self.m() as f64;
        let u = project_tangent(q, v);
        let xi = self.correlate(&mat_vec(&self.b, &u));
        let weighted: Vec<f64> = eta.iter().zip(&xi).map(|(e, x)| e * e * x).collect();
        let h: Vec<f64> = mat_vec(&self.b, &self.scatter(&weighted))
            .into_iter()
            .map(|x| -3.0 * x / m)
            .collect();
        let s4 = sum4(eta) / m;
        project_tangent(q, &h)
            .iter()
            .zip(&u)
            .map(|(hi, ui)| hi + s4 * ui)
            .collect()
    }
}

/// `η = Yᵀ(YYᵀ)^{-1/2}q`, computed with one window pass.
pub fn eta(model: &ObservationModel, q: &[f64]) -> Result<Vec<f64>> {
    check_dim("eta", model.k(), q)?;
    Ok(model.eta_unchecked(q))
}

/// `ψ(q) = −(1/4m)‖η‖₄⁴`.
pub fn psi(model: &ObservationModel, q: &[f64]) -> Result<f64> {
    let e = eta(model, q)?;
    Ok(-sum4(&e) / (4.0 * model.m() as f64))
}

/// Riemannian gradient `−(1/m)P[BYη³]`.
pub fn grad_psi(model: &ObservationModel, q: &[f64]) -> Result<Vec<f64>> {
    let e = eta(model, q)?;
    Ok(model.grad_from_eta(q, &e))
}

/// Riemannian Hessian of `ψ` applied to a tangent vector `v`:
/// `P[−(3/m)BY diag(η²) YᵀBv] + (1/m)‖η‖₄⁴ v`.
pub fn hess_psi_vec(model: &ObservationModel, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dim("hess_psi_vec", model.k(), v)?;
    check_tangent("hess_psi_vec", q, v)?;
    let e = eta(model, q)?;
    Ok(model.hess_from_eta(q, &e, v))
}

/// `ψ` scaled by a constant, as an [`Objective`].
///
/// The pipeline minimizes `m²ψ`, whose values and derivatives are `O(1)` in
/// `m`, so that absolute tolerances mean the same thing at every size.
pub struct PsiObjective<'a> {
    model: &'a ObservationModel,
    scale: f64,
    cache: RefCell<Option<(Vec<f64>, Vec<f64>)>>,
}

impl<'a> PsiObjective<'a> {
    pub fn new(model: &'a ObservationModel, scale: f64) -> Self {
        PsiObjective {
            model,
            scale,
            cache: RefCell::new(None),
        }
    }

    /// `m²ψ`.
    pub fn normalized(model: &'a ObservationModel) -> Self {
        let m = model.m() as f64;
        Self::new(model, m * m)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn eta_at(&self, q: &[f64]) -> Vec<f64> {
        if let Some((cq, ce)) = self.cache.borrow().as_ref() {
            if cq.as_slice() == q {
                return ce.clone();
            }
        }
        let e = self.model.eta_unchecked(q);
        *self.cache.borrow_mut() = Some((q.to_vec(), e.clone()));
        e
    }
}

impl Objective for PsiObjective<'_> {
    fn dim(&self) -> usize {
        self.model.k()
    }

    fn value(&self, q: &[f64]) -> f64 {
        -self.scale * sum4(&self.eta_at(q)) / (4.0 * self.model.m() as f64)
    }

    fn grad(&self, q: &[f64]) -> Vec<f64> {
        let e = self.eta_at(q);
        self.model
            .grad_from_eta(q, &e)
            .into_iter()
            .map(|x| self.scale * x)
            .collect()
    }

    fn hess_vec(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        let e = self.eta_at(q);
        self.model
            .hess_from_eta(q, &e, v)
            .into_iter()
            .map(|x| self.scale * x)
            .collect()
    }

    fn degree(&self) -> i32 {
        4
    }

    fn increment(&self, from: &[f64], step: &[f64]) -> f64 {
        let e = self.eta_at(from);
        let de = self.model.eta_unchecked(step);
        -self.scale * quartic_increment(&e, &de) / (4.0 * self.model.m() as f64)
    }
}

/// `φ(q) = −¼‖Aᵀq‖₄⁴`.
pub fn phi(a: &DMatrix<f64>, q: &[f64]) -> f64 {
    -0.25 * sum4(&mat_t_vec(a, q))
}

/// `−P[Aζ³]`, which equals `−Aζ³ + q‖ζ‖₄⁴` when `AAᵀ = I`.
pub fn grad_phi(a: &DMatrix<f64>, q: &[f64]) -> Vec<f64> {
    let zeta = mat_t_vec(a, q);
    let cubes: Vec<f64> = zeta.iter().map(|z| z * z * z).collect();
    let egrad: Vec<f64> = mat_vec(a, &cubes).into_iter().map(|x| -x).collect();
    project_tangent(q, &egrad)
}

/// `−P[3A diag(ζ²)Aᵀ − ‖ζ‖₄⁴ I]P` as a dense `k×k` matrix.
pub fn hess_phi(a: &DMatrix<f64>, q: &[f64]) -> DMatrix<f64> {
    let k = q.len();
    let zeta = mat_t_vec(a, q);
    let s4 = sum4(&zeta);
    let mut scaled = a.clone();
    for (j, z) in zeta.iter().enumerate() {
        scaled.column_mut(j).scale_mut(3.0 * z * z);
    }
    let inner = scaled * a.transpose() - DMatrix::identity(k, k) * s4;
    let qv = linalg::to_dvector(q);
    let p = DMatrix::identity(k, k) - &qv * qv.transpose();
    let mut h = -(&p * inner * &p);
    linalg::symmetrize(&mut h);
    h
}

/// `Hess φ(q) v` without forming the matrix.
pub fn hess_phi_vec(a: &DMatrix<f64>, q: &[f64], v: &[f64]) -> Vec<f64> {
    let zeta = mat_t_vec(a, q);
    let u = project_tangent(q, v);
    let au = mat_t_vec(a, &u);
    let w: Vec<f64> = zeta.iter().zip(&au).map(|(z, x)| 3.0 * z * z * x).collect();
    let h = project_tangent(q, &mat_vec(a, &w));
    let s4 = sum4(&zeta);
    h.iter().zip(&u).map(|(hi, ui)| -hi + s4 * ui).collect()
}

/// `φ` as an [`Objective`].
pub struct PhiObjective<'a> {
    pub a: &'a DMatrix<f64>,
}

impl Objective for PhiObjective<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, q: &[f64]) -> f64 {
        phi(self.a, q)
    }

    fn grad(&self, q: &[f64]) -> Vec<f64> {
        grad_phi(self.a, q)
    }

    fn hess_vec(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        hess_phi_vec(self.a, q, v)
    }

    fn degree(&self) -> i32 {
        4
    }

    fn increment(&self, from: &[f64], step: &[f64]) -> f64 {
        let z = mat_t_vec(self.a, from);
        -0.25 * quartic_increment(&z, &mat_t_vec(self.a, step))
    }
}

/// `E[(1/m)‖Yᵀ(A₀A₀ᵀ)^{-1/2}q‖₄⁴] = 3θ(1−θ)‖ζ‖₄⁴ + 3θ²‖ζ‖₂⁴` for BG(θ) activations.
///
/// Each window contributes the same expectation, so the value does not depend on `m`.
pub fn population_expectation(a: &DMatrix<f64>, q: &[f64], theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(
            "population_expectation",
            format!("theta = {theta} not in (0, 1)"),
        ));
    }
    check_dim("population_expectation", a.nrows(), q)?;
    let zeta = mat_t_vec(a, q);
    let n2 = dot(&zeta, &zeta);
    Ok(3.0 * theta * (1.0 - theta) * sum4(&zeta) + 3.0 * theta * theta * n2 * n2)
}

/// Both sides of the region inequalities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionValues {
    /// `‖ζ‖₄⁶`.
    pub lhs: f64,
    /// `C⋆μκ²‖ζ‖₃³`.
    pub rhs_r: f64,
    /// `C⋆μκ²`.
    pub rhs_rhat: f64,
    pub in_r: bool,
    pub in_rhat: bool,
}

pub fn region_values_from_zeta(zeta: &[f64], mu: f64, kappa: f64, c_star: f64) -> RegionValues {
    let lhs = sum4(zeta).powf(1.5);
    let rhs_rhat = c_star * mu * kappa * kappa;
    let rhs_r = rhs_rhat * sum3_abs(zeta);
    RegionValues {
        lhs,
        rhs_r,
        rhs_rhat,
        in_r: lhs >= rhs_r,
        in_rhat: lhs >= rhs_rhat,
    }
}

/// Membership of `q` in `R_{C⋆}` (`‖ζ‖₄⁶ ≥ C⋆μκ²‖ζ‖₃³`) and `R̂_{C⋆}` (`‖ζ‖₄⁶ ≥ C⋆μκ²`).
pub fn region_values(model: &ShiftModel, q: &[f64], c_star: f64) -> RegionValues {
    region_values_from_zeta(&model.zeta(q), model.mu, model.kappa, c_star)
}

/// A closed interval `[center − half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootInterval {
    pub center: f64,
    pub half_width: f64,
}

impl RootInterval {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.half_width
    }

    pub fn distance(&self, x: f64) -> f64 {
        ((x - self.center).abs() - self.half_width).max(0.0)
    }
}

/// Intervals around `√α`, `−√α` and `0`, each of half-width `2|β|/α`, containing
/// one root each of `x(α − x²) − β = 0`. Requires `|β| < α^{3/2}/4`.
pub fn cubic_root_intervals(alpha: f64, beta: f64) -> Result<[RootInterval; 3]> {
    if !(alpha > 0.0) || !beta.is_finite() || !alpha.is_finite() {
        return Err(Error::param(
            "cubic_root_intervals",
            format!("alpha = {alpha}, beta = {beta}"),
        ));
    }
    if !(beta.abs() < 0.25 * alpha.powf(1.5)) {
        return Err(Error::param(
            "cubic_root_intervals",
            format!(
                "|beta| = {} is not below alpha^(3/2)/4 = {}",
                beta.abs(),
                0.25 * alpha.powf(1.5)
            ),
        ));
    }
    let r = alpha.sqrt();
    let hw = 2.0 * beta.abs() / alpha;
    Ok([
        RootInterval {
            center: r,
            half_width: hw,
        },
        RootInterval {
            center: -r,
            half_width: hw,
        },
        RootInterval {
            center: 0.0,
            half_width: hw,
        },
    ])
}

/// Verdict on a point.
#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    /// Exactly one spike, at column `column`.
    LocalMin {
        column: usize,
        /// `|⟨q, a_l/‖a_l‖⟩|`.
        alignment: f64,
        /// `1 − 2c⋆κ⁻²`.
        bound: f64,
        meets_bound: bool,
    },
    /// Two or more spikes; `curvature = vᵀ Hess φ v` along the most negative
    /// unit tangent `v` found in the spans of spike-column pairs.
    Saddle {
        spikes: Vec<usize>,
        direction: Vec<f64>,
        curvature: f64,
    },
    Unresolved(String),
}

/// The stationary-point quantities of the population landscape at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReport {
    pub zeta: Vec<f64>,
    /// `αᵢ = ‖ζ‖₄⁴/‖aᵢ‖²`; infinite for zero columns.
    pub alpha: Vec<f64>,
    /// `βᵢ = Σ_{j≠i} ⟨aᵢ,aⱼ⟩ζⱼ³/‖aᵢ‖²`; zero for zero columns.
    pub beta: Vec<f64>,
    /// `2μ‖ζ‖₃³/‖ζ‖₄⁴`.
    pub spike_threshold: f64,
    pub spikes: Vec<usize>,
    pub region: RegionValues,
    pub grad_norm: f64,
    pub classification: Classification,
}

/// Entries below this magnitude are never spikes.
pub const SPIKE_FLOOR: f64 = 1e-12;

impl StationaryReport {
    /// Largest amount by which some `ζᵢ` lies outside the union of its three
    /// root intervals (zero when all entries are inside).
    pub fn interval_excess(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.zeta.len() {
            if !self.alpha[i].is_finite() {
                worst = worst.max(self.zeta[i].abs());
                continue;
            }
            let r = self.alpha[i].sqrt();
            let hw = 2.0 * self.beta[i].abs() / self.alpha[i];
            let d = [r, -r, 0.0]
                .iter()
                .map(|c| ((self.zeta[i] - c).abs() - hw).max(0.0))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
        worst
    }
}

/// Stationarity tolerance `1e-8·max(1, ‖ζ‖₄⁴)`.
pub fn default_grad_tol(zeta: &[f64]) -> f64 {
    1e-8 * sum4(zeta).max(1.0)
}

/// Computes the report at any point, without requiring stationarity.
pub fn analyze_point(model: &ShiftModel, q: &[f64], c_star: f64) -> StationaryReport {
    let zeta = model.zeta(q);
    let s4 = sum4(&zeta);
    let n = zeta.len();
    let g = &model.col_gram;
    let mut alpha = vec![f64::INFINITY; n];
    let mut beta = vec![0.0; n];
    for i in 0..n {
        let nn = g[(i, i)];
        if nn <= 0.0 {
            continue;
        }
        alpha[i] = s4 / nn;
        let mut b = 0.0;
        for j in 0..n {
            if j != i {
                b += g[(i, j)] * zeta[j].powi(3);
            }
        }
        beta[i] = b / nn;
    }
    let spike_threshold = 2.0 * model.mu * sum3_abs(&zeta) / s4;
    let spikes: Vec<usize> = (0..n)
        .filter(|&i| zeta[i].abs() > spike_threshold && zeta[i].abs() > SPIKE_FLOOR)
        .collect();
    let region = region_values_from_zeta(&zeta, model.mu, model.kappa, c_star);
    let grad_norm = norm2(&grad_phi(&model.a, q));
    let classification = if !region.in_r {
        Classification::Unresolved("outside region".into())
    } else {
        match spikes.len() {
            0 => Classification::Unresolved("no spike inside region".into()),
            1 => {
                let l = spikes[0];
                let col = model.column(l);
                let alignment = dot(q, &col).abs() / norm2(&col);
                let bound = 1.0 - 2.0 / (c_star * model.kappa * model.kappa);
                Classification::LocalMin {
                    column: l,
                    alignment,
                    bound,
                    meets_bound: alignment >= bound,
                }
            }
            _ => saddle_certificate(model, q, &zeta, &spikes),
        }
    };
    StationaryReport {
        zeta,
        alpha,
        beta,
        spike_threshold,
        spikes,
        region,
        grad_norm,
        classification,
    }
}

fn saddle_certificate(
    model: &ShiftModel,
    q: &[f64],
    zeta: &[f64],
    spikes: &[usize],
) -> Classification {
    let h = hess_phi(&model.a, q);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (x, &l) in spikes.iter().enumerate() {
        for &lp in &spikes[x + 1..] {
            // ζ_{l'}a_l − ζ_l a_{l'} spans span(a_l, a_{l'}) ∩ q⊥.
            let (al, alp) = (model.column(l), model.column(lp));
            let v: Vec<f64> = al
                .iter()
                .zip(&alp)
                .map(|(a, b)| zeta[lp] * a - zeta[l] * b)
                .collect();
            let Some(v) = normalize(&project_tangent(q, &v)) else {
                continue;
            };
            let curv = dot(&v, &mat_vec(&h, &v));
            if best.as_ref().map_or(true, |(c, _)| curv < *c) {
                best = Some((curv, v));
            }
        }
    }
    match best {
        Some((curvature, direction)) => Classification::Saddle {
            spikes: spikes.to_vec(),
            direction,
            curvature,
        },
        None => Classification::Unresolved("spike columns are parallel to q".into()),
    }
}

/// [`analyze_point`] for a stationary point of `φ`.
///
/// Fails with a contract error if `‖grad φ(q)‖ > 1e-8·max(1, ‖ζ‖₄⁴)`.
pub fn classify_stationary(model: &ShiftModel, q: &[f64], c_star: f64) -> Result<StationaryReport> {
    check_dim("classify_stationary", model.k(), q)?;
    let report = analyze_point(model, q, c_star);
    let tol = default_grad_tol(&report.zeta);
    if report.grad_norm > tol {
        return Err(Error::contract(
            "classify_stationary",
            format!("gradient norm {:e} exceeds {tol:e}", report.grad_norm),
        ));
    }
    Ok(report)
}

/// Smallest eigenpair of a symmetric operator restricted to `q⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentEig {
    pub lambda: f64,
    /// Unit vector orthogonal to `q`.
    pub v: Vec<f64>,
    pub residual: f64,
}

const LANCZOS_MAX_STEPS: usize = 5000;

/// Lanczos iteration with full reorthogonalization on the tangent space at `q`.
///
/// Stops once the Ritz residual of the smallest Ritz value is at most
/// `tol·max(1, |λ|)`; on an invariant subspace it restarts from a fresh
/// direction orthogonal to everything seen so far, so the whole tangent space
/// is eventually covered.
pub fn min_tangent_eig(op: impl Fn(&[f64]) -> Vec<f64>, q: &[f64], tol: f64) -> Result<TangentEig> {
    let k = q.len();
    if k < 2 {
        return Err(Error::dim(
            "min_tangent_eig",
            "tangent space is trivial for k < 2",
        ));
    }
    let n = k - 1;
    let mut rng = rng_from_seed(0x1A2C_05E5 ^ k as u64);
    let apply = |v: &[f64]| project_tangent(q, &op(&project_tangent(q, v)));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let fresh = |basis: &[Vec<f64>], rng: &mut rand_chacha::ChaCha8Rng| -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut w = project_tangent(q, &gaussian_vector(k, rng));
            for _ in 0..2 {
                for b in basis {
                    let c = dot(&w, b);
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
                w = project_tangent(q, &w);
            }
            if let Some(u) = normalize(&w) {
                if norm2(&w) > 1e-8 {
                    return Some(u);
                }
            }
        }
        None
    };

    let mut v = fresh(&basis, &mut rng).ok_or(Error::Iteration {
        op: "min_tangent_eig",
        iterations: 0,
    })?;
    let mut scale = 0.0f64;
    for step in 0..LANCZOS_MAX_STEPS {
        let mut w = apply(&v);
        let alpha = dot(&w, &v);
        scale = scale.max(norm2(&w));
        basis.push(v.clone());
        alphas.push(alpha);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            w = project_tangent(q, &w);
        }
        let beta = norm2(&w);
        let j = basis.len();
        let exhausted = j == n;
        let breakdown = beta <= 1e-12 * scale.max(1e-300);
        let check = exhausted || breakdown || j < 40 || step % 5 == 0;
        if check {
            let t = tridiagonal(&alphas, &betas);
            let eig = linalg::sym_eig(&t)?;
            let lambda = eig.min();
            let s = eig.eigvecs.column(j - 1);
            let residual = beta * s[j - 1].abs();
            let converged = !breakdown && residual <= tol * lambda.abs().max(1.0);
            if converged || exhausted {
                let mut u = vec![0.0; k];
                for (coef, b) in s.iter().zip(&basis) {
                    u.iter_mut().zip(b).for_each(|(x, y)| *x += coef * y);
                }
                let u = normalize(&project_tangent(q, &u)).ok_or(Error::Iteration {
                    op: "min_tangent_eig",
                    iterations: step + 1,
                })?;
                let hu = apply(&u);
                let rayleigh = dot(&u, &hu);
                let res: f64 = hu
                    .iter()
                    .zip(&u)
                    .map(|(h, x)| (h - rayleigh * x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                return Ok(TangentEig {
                    lambda: rayleigh,
                    v: u,
                    residual: res,
                });
            }
        }
        if breakdown {
            betas.push(0.0);
            v = match fresh(&basis, &mut rng) {
                Some(u) => u,
                None => {
                    return Err(Error::Iteration {
                        op: "min_tangent_eig",
                        iterations: step + 1,
                    })
                }
            };
        } else {
            betas.push(beta);
            v = w.iter().map(|x| x / beta).collect();
        }
    }
    Err(Error::Iteration {
        op: "min_tangent_eig",
        iterations: LANCZOS_MAX_STEPS,
    })
}

fn tridiagonal(alphas: &[f64], betas: &[f64]) -> DMatrix<f64> {
    let j = alphas.len();
    let mut t = DMatrix::zeros(j, j);
    for i in 0..j {
        t[(i, i)] = alphas[i];
        if i + 1 < j {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    t
}

/// A measured deviation next to the corresponding theoretical bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMeasurement {
    pub deviation: f64,
    pub bound: f64,
    /// `deviation / bound`.
    pub ratio: f64,
}

fn population_scale(model: &ObservationModel, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::param(
            "population_scale",
            format!("theta = {theta} not in (0, 1)"),
        ));
    }
    let m = model.m() as f64;
    Ok(3.0 * (1.0 - theta) / (theta * m * m))
}

fn check_pair(
    op: &'static str,
    model: &ObservationModel,
    sm: &ShiftModel,
    q: &[f64],
) -> Result<()> {
    if model.k() != sm.k() {
        return Err(Error::dim(
            op,
            format!("observation k = {} but kernel k = {}", model.k(), sm.k()),
        ));
    }
    check_dim(op, sm.k(), q)
}

/// `‖grad ψ(q) − (3(1−θ)/(θm²)) grad φ(q)‖` against `(3/(2c⋆κ²))((1−θ)/(θm²))‖ζ‖₄⁶`.
pub fn measure_gradient_gap(
    model: &ObservationModel,
    sm: &ShiftModel,
    theta: f64,
    q: &[f64],
    c_star: f64,
) -> Result<GapMeasurement> {
    check_pair("measure_gradient_gap", model, sm, q)?;
    let s = population_scale(model, theta)?;
    let gp = grad_psi(model, q)?;
    let gf = grad_phi(&sm.a, q);
    let diff: Vec<f64> = gp.iter().zip(&gf).map(|(a, b)| a - s * b).collect();
    let deviation = norm2(&diff);
    let m = model.m() as f64;
    let zeta = sm.zeta(q);
    let bound = 1.5 / (c_star * sm.kappa * sm.kappa)
        * ((1.0 - theta) / (theta * m * m))
        * sum4(&zeta).powf(1.5);
    Ok(GapMeasurement {
        deviation,
        bound,
        ratio: deviation / bound,
    })
}

const GAP_POWER_ITERS: usize = 50;

/// Operator norm (50 power iterations) of `Hess ψ − (3(1−θ)/(θm²)) Hess φ` on `q⊥`
/// against `3(1 − 6c⋆ − 36c⋆² − 24c⋆³)((1−θ)/(θm²))‖ζ‖₄⁴`.
pub fn measure_hessian_gap(
    model: &ObservationModel,
    sm: &ShiftModel,
    theta: f64,
    q: &[f64],
    c_star: f64,
) -> Result<GapMeasurement> {
    check_pair("measure_hessian_gap", model, sm, q)?;
    let s = population_scale(model, theta)?;
    let e = model.eta_unchecked(q);
    let diff_op = |v: &[f64]| -> Vec<f64> {
        let hp = model.hess_from_eta(q, &e, v);
        let hf = hess_phi_vec(&sm.a, q, v);
        hp.iter().zip(&hf).map(|(a, b)| a - s * b).collect()
    };
    let mut rng = rng_from_seed(0x4E55_0001);
    let mut v = normalize(&project_tangent(q, &gaussian_vector(sm.k(), &mut rng)))
        .ok_or_else(|| Error::contract("measure_hessian_gap", "degenerate start vector"))?;
    let mut deviation = 0.0;
    for _ in 0..GAP_POWER_ITERS {
        let w = project_tangent(q, &diff_op(&v));
        deviation = norm2(&w);
        match normalize(&w) {
            Some(u) => v = u,
            None => break,
        }
    }
    let c = 1.0 / c_star;
    let m = model.m() as f64;
    let zeta = sm.zeta(q);
    let bound = 3.0
        * (1.0 - 6.0 * c - 36.0 * c * c - 24.0 * c * c * c)
        * ((1.0 - theta) / (theta * m * m))
        * sum4(&zeta);
    Ok(GapMeasurement {
        deviation,
        bound,
        ratio: deviation / bound,
    })
}

/// `δ = ‖(1/θm)X₀X₀ᵀ − I‖₂` and the reference bound `10√(k ln m / m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteningGap {
    pub delta: f64,
    pub bound: f64,
}

/// Whitening gap of the `(2k−1)`-windowed activation Gram, normalized by `θm`
/// exactly (not by the realized second moment).
pub fn measure_whitening_gap(x0: &SparseSignal, k: usize) -> Result<WhiteningGap> {
    let m = x0.len();
    if k < 1 || m <= 2 * k {
        return Err(Error::dim(
            "measure_whitening_gap",
            format!("need m > 2k, got m = {m}, k = {k}"),
        ));
    }
    let x = x0.values();
    let r = cyclic_autocorrelation(&x, 2 * k - 1);
    let norm = x0.theta * m as f64;
    let mut g = linalg::sym_toeplitz(&r) / norm;
    for i in 0..2 * k - 1 {
        g[(i, i)] -= 1.0;
    }
    let eig = linalg::sym_eig(&g)?;
    let delta = eig.max().abs().max(eig.min().abs());
    let mf = m as f64;
    Ok(WhiteningGap {
        delta,
        bound: 10.0 * (k as f64 * mf.ln() / mf).sqrt(),
    })
}
