//! Riemannian descent on the unit sphere with Armijo backtracking and
//! negative-curvature escape steps.

use crate::error::{Error, Result, StallInfo};
use crate::landscape::{min_tangent_eig, project_tangent, SpherePoint};
use crate::signals::{dot, norm2, normalize};

/// A smooth function on the sphere with Riemannian derivatives.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> f64;
    /// Riemannian gradient (tangent at `q`).
    fn grad(&self, q: &[f64]) -> Vec<f64>;
    /// Riemannian Hessian applied to a tangent vector.
    fn hess_vec(&self, q: &[f64], v: &[f64]) -> Vec<f64>;
    /// Degree `d` of homogeneity of `value` off the sphere: `value(cq) = c^d value(q)`.
    fn degree(&self) -> i32;
    /// `value(from + step) − value(from)` with `from + step` off the sphere.
    /// Implementations may override this with a form that stays accurate for
    /// tiny steps.
    fn increment(&self, from: &[f64], step: &[f64]) -> f64 {
        let to: Vec<f64> = from.iter().zip(step).map(|(a, b)| a + b).collect();
        self.value(&to) - self.value(from)
    }
}

/// `value(P_S[q + s]) − value(q)` computed from the exact step `s` through
/// homogeneity, so it does not suffer from the rounding of the normalized point.
fn retraction_difference(obj: &dyn Objective, q: &[f64], f_q: f64, s: &[f64]) -> f64 {
    let qq = dot(q, q);
    let u = (2.0 * dot(q, s) + dot(s, s)) / qq;
    let r_minus_1 = (0.5 * obj.degree() as f64 * u.ln_1p()).exp_m1();
    (obj.increment(q, s) - f_q * r_minus_1) / (1.0 + r_minus_1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Residual tolerance of the smallest-eigenpair solve.
    pub curvature_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub escape_check_period: usize,
    pub min_eig_tol: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 2000,
            grad_tol: 1e-8,
            curvature_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            escape_check_period: 10,
            min_eig_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("curvature_tol", self.curvature_tol),
            ("armijo_c", self.armijo_c),
            ("initial_step", self.initial_step),
            ("min_eig_tol", self.min_eig_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(
                    "SolveOptions",
                    format!("{name} = {v} must be positive"),
                ));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::param(
                "SolveOptions",
                format!("backtrack_factor = {} not in (0, 1)", self.backtrack_factor),
            ));
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::param("SolveOptions", "armijo_c must be below 1"));
        }
        if self.escape_check_period == 0 {
            return Err(Error::param(
                "SolveOptions",
                "escape_check_period must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    ConvergedSecondOrder,
    ConvergedFirstOrder,
    MaxIters,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::ConvergedSecondOrder => "converged_second_order",
            Status::ConvergedFirstOrder => "converged_first_order",
            Status::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeEvent {
    pub iteration: usize,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptReport {
    pub q_final: SpherePoint,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub escape_events: Vec<EscapeEvent>,
    pub status: Status,
    /// Smallest tangent Hessian eigenvalue from the last curvature check, if any.
    pub final_lambda_min: Option<f64>,
}

impl OptReport {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.objective_trace.len() - 1
    }

    /// Trace as CSV with header `iter,objective,grad_norm,escape_lambda`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,objective,grad_norm,escape_lambda\n");
        for (i, (f, g)) in self
            .objective_trace
            .iter()
            .zip(&self.grad_norm_trace)
            .enumerate()
        {
            let esc = self
                .escape_events
                .iter()
                .find(|e| e.iteration + 1 == i)
                .map(|e| crate::io::fmt_g17(e.lambda_min))
                .unwrap_or_default();
            out.push_str(&format!(
                "{i},{},{},{esc}\n",
                crate::io::fmt_g17(*f),
                crate::io::fmt_g17(*g)
            ));
        }
        out
    }
}

/// `P_S[q + step]` for a tangent `step`.
pub fn retract(q: &[f64], step: &[f64]) -> Result<SpherePoint> {
    if q.len() != step.len() {
        return Err(Error::dim(
            "retract",
            format!("{} vs {}", q.len(), step.len()),
        ));
    }
    let c = dot(q, step);
    if !(c.abs() <= 1e-8 * norm2(step).max(1.0)) {
        return Err(Error::contract(
            "retract",
            format!("step is not tangent: <step, q> = {c:e}"),
        ));
    }
    if step.iter().all(|&s| s == 0.0) {
        return Ok(SpherePoint::from_unit_unchecked(q.to_vec()));
    }
    let moved: Vec<f64> = q.iter().zip(step).map(|(a, b)| a + b).collect();
    normalize(&moved)
        .map(SpherePoint::from_unit_unchecked)
        .ok_or_else(|| Error::contract("retract", "q + step is the zero vector"))
}

/// `(P_S[q + scale·step], scale·step)`.
fn retract_unchecked(q: &[f64], step: &[f64], scale: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let s: Vec<f64> = step.iter().map(|b| scale * b).collect();
    let moved: Vec<f64> = q.iter().zip(&s).map(|(a, b)| a + b).collect();
    normalize(&moved).map(|q_new| (q_new, s))
}

const MIN_STEP: f64 = 1e-16;

struct State {
    q: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    objective_trace: Vec<f64>,
    grad_norm_trace: Vec<f64>,
}

impl State {
    fn stalled(&self, iteration: usize) -> Error {
        Error::Stalled(Box::new(StallInfo {
            iteration,
            q: self.q.clone(),
            objective_trace: self.objective_trace.clone(),
            grad_norm_trace: self.grad_norm_trace.clone(),
        }))
    }

    fn accept(&mut self, obj: &dyn Objective, q: Vec<f64>, df: f64) {
        self.f += df;
        self.q = q;
        self.g = obj.grad(&self.q);
        self.objective_trace.push(self.f);
        self.grad_norm_trace.push(norm2(&self.g));
    }
}

/// Riemannian gradient descent with Armijo backtracking and eigenvector escape.
///
/// The objective trace is accumulated from the accepted decreases and so is
/// non-increasing by construction. Curvature is examined whenever the gradient
/// norm is below `grad_tol`, and every `escape_check_period` iterations while
/// it is below `10·grad_tol`.
pub fn descend(obj: &dyn Objective, q0: &[f64], opts: &SolveOptions) -> Result<OptReport> {
    opts.validate()?;
    if q0.len() != obj.dim() {
        return Err(Error::dim(
            "descend",
            format!("start has {} entries, expected {}", q0.len(), obj.dim()),
        ));
    }
    let q = normalize(q0).ok_or_else(|| Error::contract("descend", "start point is zero"))?;
    let f = obj.value(&q);
    let g = obj.grad(&q);
    let mut st = State {
        objective_trace: vec![f],
        grad_norm_trace: vec![norm2(&g)],
        q,
        f,
        g,
    };
    let mut escape_events = Vec::new();
    let mut final_lambda_min = None;
    let mut last_step = opts.initial_step;

    for it in 0..opts.max_iters {
        let gn = norm2(&st.g);
        let small = gn <= opts.grad_tol;
        let periodic = gn <= 10.0 * opts.grad_tol && it % opts.escape_check_period == 0;
        if small || periodic {
            let q = st.q.clone();
            match min_tangent_eig(|v| obj.hess_vec(&q, v), &q, opts.curvature_tol) {
                Err(_) if small => {
                    return Ok(finish(
                        st,
                        escape_events,
                        Status::ConvergedFirstOrder,
                        final_lambda_min,
                    ));
                }
                Err(_) => {}
                Ok(eig) => {
                    final_lambda_min = Some(eig.lambda);
                    if eig.lambda < -opts.min_eig_tol {
                        let (q_new, df) = escape_step(obj, &st, &eig.v, eig.lambda, opts)
                            .ok_or_else(|| st.stalled(it))?;
                        escape_events.push(EscapeEvent {
                            iteration: it,
                            lambda_min: eig.lambda,
                        });
                        st.accept(obj, q_new, df);
                        last_step = opts.initial_step;
                        continue;
                    }
                    if small {
                        return Ok(finish(
                            st,
                            escape_events,
                            Status::ConvergedSecondOrder,
                            final_lambda_min,
                        ));
                    }
                }
            }
        }

        let dir: Vec<f64> = st.g.iter().map(|x| -x).collect();
        let mut t = opts.initial_step.min(2.0 * last_step);
        loop {
            if let Some((q_new, s)) = retract_unchecked(&st.q, &dir, t) {
                let df = retraction_difference(obj, &st.q, st.f, &s);
                if df <= -opts.armijo_c * t * gn * gn {
                    st.accept(obj, q_new, df);
                    last_step = t;
                    break;
                }
            }
            t *= opts.backtrack_factor;
            if t < MIN_STEP {
                return Err(st.stalled(it));
            }
        }
    }
    Ok(finish(
        st,
        escape_events,
        Status::MaxIters,
        final_lambda_min,
    ))
}

/// Backtracking along `±v` from an initial length `|λ|`, requiring a decrease
/// of at least `c·½t²|λ|`. The sign with the lower objective at the initial
/// length is kept; an exact tie keeps `+v`.
fn escape_step(
    obj: &dyn Objective,
    st: &State,
    v: &[f64],
    lambda: f64,
    opts: &SolveOptions,
) -> Option<(Vec<f64>, f64)> {
    let v = project_tangent(&st.q, v);
    let t0 = lambda.abs().min(1.0);
    let trial = |sign: f64, t: f64| -> Option<(Vec<f64>, f64)> {
        let (q_new, s) = retract_unchecked(&st.q, &v, sign * t)?;
        let df = retraction_difference(obj, &st.q, st.f, &s);
        Some((q_new, df))
    };
    let plus = trial(1.0, t0).map_or(f64::INFINITY, |(_, d)| d);
    let minus = trial(-1.0, t0).map_or(f64::INFINITY, |(_, d)| d);
    let sign = if minus < plus { -1.0 } else { 1.0 };
    let mut t = t0;
    while t >= MIN_STEP {
        if let Some((q_new, df)) = trial(sign, t) {
            if df < 0.0 && df <= -opts.armijo_c * 0.5 * t * t * lambda.abs() {
                return Some((q_new, df));
            }
        }
        t *= opts.backtrack_factor;
    }
    None
}

fn finish(
    st: State,
    escape_events: Vec<EscapeEvent>,
    status: Status,
    final_lambda_min: Option<f64>,
) -> OptReport {
    OptReport {
        q_final: SpherePoint::from_unit_unchecked(st.q),
        objective_trace: st.objective_trace,
        grad_norm_trace: st.grad_norm_trace,
        escape_events,
        status,
        final_lambda_min,
    }
}
