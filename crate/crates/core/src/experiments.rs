//! Seeded sweeps producing CSV tables: kernel parameter scaling, recovery
//! grids, initialization-region rates and concentration trends.
//!
//! Every trial seed is `derive_seed(master, [i, j, l, t])` for cell indices
//! `(i, j, l)` and trial `t`, and results are merged by index, so rows do not
//! depend on the execution order or on the worker count.

use crate::error::{Error, Result};
use crate::io::fmt_g17;
use crate::landscape::{
    measure_gradient_gap, measure_hessian_gap, measure_whitening_gap, region_values,
    GapMeasurement, ObservationModel,
};
use crate::optimizer::SolveOptions;
use crate::par::{map_indexed, Parallelism};
use crate::pipeline::{choose_init, deconvolve_model, finish, DeconvOptions};
use crate::shiftmodel::{estimate_kernel_params, ParamRow, ShiftModel};
use crate::signals::{
    convolve, derive_seed, random_unit, rng_from_seed, sample_bg, KernelFamily, Observation,
};

/// Default cap on the estimated cost of a recovery grid, in flops.
pub const DEFAULT_BUDGET: f64 = 1e11;

/// Nominal cost of one deconvolution: about 100 iterations of four `O(mk)` window passes.
pub fn estimated_run_flops(m: usize, k: usize) -> f64 {
    800.0 * m as f64 * k as f64
}

/// How the sparsity rate of a cell is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaRule {
    /// The listed rates, shared by every `k`.
    Values(Vec<f64>),
    /// Overlap ratios `k·θ`; the rate is `ratio / k`.
    Overlap(Vec<f64>),
    /// A single rate `k^exponent` per `k` (e.g. `−2/3`).
    Power(f64),
}

impl ThetaRule {
    pub fn thetas(&self, k: usize) -> Vec<f64> {
        match self {
            ThetaRule::Values(v) => v.clone(),
            ThetaRule::Overlap(r) => r.iter().map(|x| x / k as f64).collect(),
            ThetaRule::Power(e) => vec![(k as f64).powf(*e)],
        }
    }

    fn len(&self) -> usize {
        match self {
            ThetaRule::Values(v) | ThetaRule::Overlap(v) => v.len(),
            ThetaRule::Power(_) => 1,
        }
    }

    pub fn describe(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_g17(*x)).collect::<Vec<_>>().join(";");
        match self {
            ThetaRule::Values(v) => format!("values:{}", list(v)),
            ThetaRule::Overlap(v) => format!("overlap:{}", list(v)),
            ThetaRule::Power(e) => format!("power:{}", fmt_g17(*e)),
        }
    }

    /// Inverse of [`ThetaRule::describe`]; a bare list means `values:`.
    pub fn parse(s: &str) -> Result<Self> {
        let list = |body: &str| -> Result<Vec<f64>> {
            body.split(|c| c == ',' || c == ';')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::param("ThetaRule::parse", format!("bad number {t:?}")))
                })
                .collect()
        };
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("overlap:") {
            Ok(ThetaRule::Overlap(list(rest)?))
        } else if let Some(rest) = s.strip_prefix("power:") {
            let e = rest
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::param("ThetaRule::parse", format!("bad exponent {rest:?}")))?;
            Ok(ThetaRule::Power(e))
        } else {
            Ok(ThetaRule::Values(list(
                s.strip_prefix("values:").unwrap_or(s),
            )?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub k_values: Vec<usize>,
    pub theta: ThetaRule,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub family: KernelFamily,
    pub solve: SolveOptions,
    /// Refuse to run when the estimated cost exceeds this many flops.
    pub budget: f64,
}

impl GridSpec {
    fn validate(&self, op: &'static str) -> Result<()> {
        if self.k_values.is_empty() || self.m_values.is_empty() || self.theta.len() == 0 {
            return Err(Error::param(op, "k, theta and m lists must be nonempty"));
        }
        if self.trials == 0 {
            return Err(Error::param(op, "trials must be at least 1"));
        }
        for &k in &self.k_values {
            if k < 2 {
                return Err(Error::param(op, format!("kernel length {k} < 2")));
            }
            for theta in self.theta.thetas(k) {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::param(
                        op,
                        format!("theta = {theta} not in (0, 1) at k = {k}"),
                    ));
                }
            }
            for &m in &self.m_values {
                if m <= 2 * k {
                    return Err(Error::param(
                        op,
                        format!("need m > 2k, got m = {m}, k = {k}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Cells in `(k, θ, m)` order with their index triples.
    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (i, &k) in self.k_values.iter().enumerate() {
            for (j, theta) in self.theta.thetas(k).into_iter().enumerate() {
                for (l, &m) in self.m_values.iter().enumerate() {
                    out.push(Cell {
                        i,
                        j,
                        l,
                        k,
                        theta,
                        m,
                    });
                }
            }
        }
        out
    }

    pub fn estimated_flops(&self) -> f64 {
        self.cells()
            .iter()
            .map(|c| estimated_run_flops(c.m, c.k) * self.trials as f64)
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    l: usize,
    k: usize,
    theta: f64,
    m: usize,
}

impl Cell {
    fn trial_seed(&self, master: u64, t: usize) -> u64 {
        derive_seed(
            master,
            &[self.i as u64, self.j as u64, self.l as u64, t as u64],
        )
    }
}

/// The synthetic instance of one trial: kernel, activation and observation.
pub struct TrialInstance {
    pub kernel: crate::signals::Kernel,
    pub signal: crate::signals::SparseSignal,
    pub obs: Observation,
}

/// Kernel from `derive_seed(trial_seed, [0])`, activation from `[1]`; the
/// solver seed is `derive_seed(trial_seed, [2])`.
pub fn trial_instance(
    k: usize,
    theta: f64,
    m: usize,
    family: KernelFamily,
    trial_seed: u64,
) -> Result<TrialInstance> {
    let kernel = family.sample(k, derive_seed(trial_seed, &[0]))?;
    let signal = sample_bg(m, theta, derive_seed(trial_seed, &[1]))?;
    let obs = convolve(&kernel, &signal.values())?;
    Ok(TrialInstance {
        kernel,
        signal,
        obs,
    })
}

pub fn trial_solver_seed(trial_seed: u64) -> u64 {
    derive_seed(trial_seed, &[2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub k: usize,
    pub theta: f64,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub err: f64,
    pub best_shift: i64,
    pub sign: i8,
    /// Solver status, or `stalled` when the line search gave out (the row is
    /// then scored at the point where it stopped).
    pub status: String,
    pub iters: usize,
    pub escapes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub k: usize,
    pub theta: f64,
    pub m: usize,
    pub trials: usize,
    pub mean_err: f64,
    pub median_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub cells: Vec<CellSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One recovery trial, as run by the grid.
pub fn run_trial(
    k: usize,
    theta: f64,
    m: usize,
    family: KernelFamily,
    trial_seed: u64,
    solve: &SolveOptions,
) -> Result<GridRow> {
    let inst = trial_instance(k, theta, m, family, trial_seed)?;
    let model = ObservationModel::new(inst.obs)?;
    let opts = DeconvOptions {
        solve: SolveOptions {
            seed: trial_solver_seed(trial_seed),
            ..solve.clone()
        },
        init_window: None,
    };
    let (result, status) = match deconvolve_model(&model, &opts, Some(&inst.kernel)) {
        Ok(r) => {
            let s = r.report.status.as_str().to_string();
            (r, s)
        }
        Err(Error::Stalled(info)) => {
            let (init, q_init) = choose_init(&model, opts.solve.seed)?;
            let report = crate::optimizer::OptReport {
                q_final: crate::landscape::SpherePoint::project(&info.q)?,
                objective_trace: info.objective_trace.clone(),
                grad_norm_trace: info.grad_norm_trace.clone(),
                escape_events: Vec::new(),
                status: crate::optimizer::Status::MaxIters,
                final_lambda_min: None,
            };
            (
                finish(&model, report, init, q_init, Some(&inst.kernel))?,
                "stalled".to_string(),
            )
        }
        Err(e) => return Err(e),
    };
    let score = result.score.expect("truth supplied");
    Ok(GridRow {
        k,
        theta,
        m,
        trial: 0,
        seed: trial_seed,
        err: score.err,
        best_shift: score.best_shift,
        sign: score.sign,
        status,
        iters: result.report.iterations(),
        escapes: result.report.escape_events.len(),
    })
}

/// Runs every cell of the grid. Refuses up front if the estimated cost exceeds `spec.budget`.
pub fn run_recovery_grid(spec: &GridSpec, par: Parallelism) -> Result<GridResult> {
    spec.validate("run_recovery_grid")?;
    spec.solve.validate()?;
    let estimate = spec.estimated_flops();
    if estimate > spec.budget {
        return Err(Error::Budget {
            estimate,
            cap: spec.budget,
            hint: "reduce the number of trials, m values or theta values, or raise the budget"
                .into(),
        });
    }
    let cells = spec.cells();
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|&c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let rows = map_indexed(jobs.len(), par, |n| {
        let (c, t) = jobs[n];
        let mut row = run_trial(
            c.k,
            c.theta,
            c.m,
            spec.family,
            c.trial_seed(spec.seed, t),
            &spec.solve,
        )?;
        row.trial = t;
        Ok(row)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let errs: Vec<f64> = rows[ci * spec.trials..(ci + 1) * spec.trials]
                .iter()
                .map(|r| r.err)
                .collect();
            CellSummary {
                k: c.k,
                theta: c.theta,
                m: c.m,
                trials: spec.trials,
                mean_err: errs.iter().sum::<f64>() / errs.len() as f64,
                median_err: median(&errs),
            }
        })
        .collect();
    Ok(GridResult {
        rows,
        cells: summaries,
    })
}

pub const GRID_HEADER: &str =
    "k,theta,k_theta,m,trial,seed,err,best_shift,sign,status,iters,escapes";
pub const GRID_SUMMARY_HEADER: &str = "k,theta,k_theta,m,trials,mean_err,median_err";

pub fn grid_csv(result: &GridResult) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            fmt_g17(r.theta),
            fmt_g17(r.k as f64 * r.theta),
            r.m,
            r.trial,
            r.seed,
            fmt_g17(r.err),
            r.best_shift,
            r.sign,
            r.status,
            r.iters,
            r.escapes
        ));
    }
    out
}

pub fn grid_summary_csv(result: &GridResult) -> String {
    let mut out = format!("{GRID_SUMMARY_HEADER}\n");
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.k,
            fmt_g17(c.theta),
            fmt_g17(c.k as f64 * c.theta),
            c.m,
            c.trials,
            fmt_g17(c.mean_err),
            fmt_g17(c.median_err)
        ));
    }
    out
}

/// Kernel statistics per `k`; see [`estimate_kernel_params`].
pub fn run_param_sweep(
    k_list: &[usize],
    trials: usize,
    seed: u64,
    family: KernelFamily,
    par: Parallelism,
) -> Result<Vec<ParamRow>> {
    estimate_kernel_params(k_list, trials, seed, family, par)
}

pub const PARAM_HEADER: &str = "k,sigma_min_avg,kappa_avg,mu_avg,trials,seed";
const PARAM_PREDICTION_COLUMNS: &str = ",inv_log_k,log_k_pow_4_3,sqrt_log_k_over_k";

/// Parameter table; `predictions` appends the asymptotic laws `1/ln k`,
/// `ln(k)^{4/3}` and `√(ln k / k)` for plotting.
pub fn param_csv(rows: &[ParamRow], predictions: bool) -> String {
    let mut out = String::from(PARAM_HEADER);
    if predictions {
        out.push_str(PARAM_PREDICTION_COLUMNS);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.k,
            fmt_g17(r.sigma_min_avg),
            fmt_g17(r.kappa_avg),
            fmt_g17(r.mu_avg),
            r.trials,
            r.seed
        ));
        if predictions {
            let lk = (r.k as f64).ln();
            out.push_str(&format!(
                ",{},{},{}",
                fmt_g17(1.0 / lk),
                fmt_g17(lk.powf(4.0 / 3.0)),
                fmt_g17((lk / r.k as f64).sqrt())
            ));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRateSpec {
    pub k_values: Vec<usize>,
    pub theta: ThetaRule,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub family: KernelFamily,
    /// Region constant `C⋆`; membership is tested in `R̂_{3C⋆}`.
    pub c_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRateRow {
    pub k: usize,
    pub theta: f64,
    pub m: usize,
    pub trials: usize,
    pub in_region_fraction: f64,
    pub lhs_median: f64,
    pub rhs_median: f64,
}

/// Fraction of seeds whose initialization lands in `R̂_{3C⋆}`.
pub fn run_init_region_rate(spec: &InitRateSpec, par: Parallelism) -> Result<Vec<InitRateRow>> {
    let grid = GridSpec {
        k_values: spec.k_values.clone(),
        theta: spec.theta.clone(),
        m_values: spec.m_values.clone(),
        trials: spec.trials,
        seed: spec.seed,
        family: spec.family,
        solve: SolveOptions::default(),
        budget: f64::INFINITY,
    };
    grid.validate("run_init_region_rate")?;
    if !(spec.c_star > 0.0) {
        return Err(Error::param(
            "run_init_region_rate",
            "c_star must be positive",
        ));
    }
    let cells = grid.cells();
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|&c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let values = map_indexed(jobs.len(), par, |n| {
        let (c, t) = jobs[n];
        let ts = c.trial_seed(spec.seed, t);
        let inst = trial_instance(c.k, c.theta, c.m, spec.family, ts)?;
        let sm = ShiftModel::new(&inst.kernel)?;
        let model = ObservationModel::new(inst.obs)?;
        let (_, q) = choose_init(&model, trial_solver_seed(ts))?;
        Ok(region_values(&sm, &q, 3.0 * spec.c_star))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let chunk = &values[ci * spec.trials..(ci + 1) * spec.trials];
            let inside = chunk.iter().filter(|r| r.in_rhat).count();
            InitRateRow {
                k: c.k,
                theta: c.theta,
                m: c.m,
                trials: spec.trials,
                in_region_fraction: inside as f64 / spec.trials as f64,
                lhs_median: median(&chunk.iter().map(|r| r.lhs).collect::<Vec<_>>()),
                rhs_median: median(&chunk.iter().map(|r| r.rhs_rhat).collect::<Vec<_>>()),
            }
        })
        .collect())
}

pub const INITRATE_HEADER: &str =
    "k,theta,k_theta,m,trials,in_region_fraction,lhs_median,rhs_median";

pub fn initrate_csv(rows: &[InitRateRow]) -> String {
    let mut out = format!("{INITRATE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            fmt_g17(r.theta),
            fmt_g17(r.k as f64 * r.theta),
            r.m,
            r.trials,
            fmt_g17(r.in_region_fraction),
            fmt_g17(r.lhs_median),
            fmt_g17(r.rhs_median)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcSpec {
    pub k: usize,
    pub theta: f64,
    pub m_values: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub family: KernelFamily,
    /// Samples are drawn from `R̂_{2C⋆}`.
    pub c_star: f64,
    /// Total rejection-sampling attempts allowed.
    pub attempt_cap: usize,
}

impl ConcSpec {
    pub fn new(
        k: usize,
        theta: f64,
        m_values: Vec<usize>,
        samples: usize,
        seed: u64,
        family: KernelFamily,
    ) -> Self {
        ConcSpec {
            k,
            theta,
            m_values,
            samples,
            seed,
            family,
            c_star: 10.0,
            attempt_cap: 100_000,
        }
    }
}

/// One `(m, sample)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcRow {
    pub m: usize,
    pub sample: usize,
    pub grad: GapMeasurement,
    pub hess: GapMeasurement,
}

/// Per-`m` aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcCell {
    pub m: usize,
    /// False when the region could not be sampled for this kernel.
    pub sampled: bool,
    pub samples: usize,
    pub grad_dev_median: f64,
    pub grad_ratio_median: f64,
    pub hess_dev_median: f64,
    pub hess_ratio_median: f64,
    pub delta: f64,
    pub delta_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcResult {
    pub rows: Vec<ConcRow>,
    pub cells: Vec<ConcCell>,
    /// Rejection-sampling attempts used.
    pub attempts: usize,
}

/// Draws `samples` points from `R̂_{2C⋆}` once (so every `m` sees the same
/// points), then for each `m` draws a fresh activation and measures the
/// gradient, Hessian and whitening gaps.
///
/// The kernel comes from `derive_seed(seed, [0])`, the sample points from
/// `[1]`, and the activation for the `l`-th `m` from `[2, l]`.
pub fn run_concentration_sweep(spec: &ConcSpec, par: Parallelism) -> Result<ConcResult> {
    if spec.m_values.iter().any(|&m| m <= 2 * spec.k) || spec.k < 2 {
        return Err(Error::param(
            "run_concentration_sweep",
            "need k >= 2 and m > 2k for every m",
        ));
    }
    if !(spec.theta > 0.0 && spec.theta < 1.0) {
        return Err(Error::param(
            "run_concentration_sweep",
            format!("theta = {} not in (0, 1)", spec.theta),
        ));
    }
    let kernel = spec.family.sample(spec.k, derive_seed(spec.seed, &[0]))?;
    let sm = ShiftModel::new(&kernel)?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[1]));
    let mut points = Vec::with_capacity(spec.samples);
    let mut attempts = 0;
    while points.len() < spec.samples && attempts < spec.attempt_cap {
        attempts += 1;
        let q = random_unit(spec.k, &mut rng);
        if region_values(&sm, &q, 2.0 * spec.c_star).in_rhat {
            points.push(q);
        }
    }
    let sampled = points.len() == spec.samples;
    let per_m = map_indexed(spec.m_values.len(), par, |l| {
        let m = spec.m_values[l];
        let x = sample_bg(m, spec.theta, derive_seed(spec.seed, &[2, l as u64]))?;
        let whitening = measure_whitening_gap(&x, spec.k)?;
        let mut rows = Vec::new();
        if sampled {
            let model = ObservationModel::new(convolve(&kernel, &x.values())?)?;
            for (n, q) in points.iter().enumerate() {
                rows.push(ConcRow {
                    m,
                    sample: n,
                    grad: measure_gradient_gap(&model, &sm, spec.theta, q, spec.c_star)?,
                    hess: measure_hessian_gap(&model, &sm, spec.theta, q, spec.c_star)?,
                });
            }
        }
        Ok((rows, whitening))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (l, (cell_rows, w)) in per_m.into_iter().enumerate() {
        let col =
            |f: &dyn Fn(&ConcRow) -> f64| median(&cell_rows.iter().map(f).collect::<Vec<_>>());
        cells.push(ConcCell {
            m: spec.m_values[l],
            sampled,
            samples: cell_rows.len(),
            grad_dev_median: col(&|r| r.grad.deviation),
            grad_ratio_median: col(&|r| r.grad.ratio),
            hess_dev_median: col(&|r| r.hess.deviation),
            hess_ratio_median: col(&|r| r.hess.ratio),
            delta: w.delta,
            delta_bound: w.bound,
        });
        rows.extend(cell_rows);
    }
    Ok(ConcResult {
        rows,
        cells,
        attempts,
    })
}

pub const CONC_HEADER: &str =
    "m,sample,grad_dev,grad_bound,grad_ratio,hess_dev,hess_bound,hess_ratio";
pub const CONC_SUMMARY_HEADER: &str =
    "m,sampled,samples,grad_dev_median,grad_ratio_median,hess_dev_median,hess_ratio_median,delta,delta_bound";

pub fn conc_csv(result: &ConcResult) -> String {
    let mut out = format!("{CONC_HEADER}\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.m,
            r.sample,
            fmt_g17(r.grad.deviation),
            fmt_g17(r.grad.bound),
            fmt_g17(r.grad.ratio),
            fmt_g17(r.hess.deviation),
            fmt_g17(r.hess.bound),
            fmt_g17(r.hess.ratio)
        ));
    }
    out
}

pub fn conc_summary_csv(result: &ConcResult) -> String {
    let mut out = format!("{CONC_SUMMARY_HEADER}\n");
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.m,
            c.sampled,
            c.samples,
            fmt_g17(c.grad_dev_median),
            fmt_g17(c.grad_ratio_median),
            fmt_g17(c.hess_dev_median),
            fmt_g17(c.hess_ratio_median),
            fmt_g17(c.delta),
            fmt_g17(c.delta_bound)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::deconvolve;
    use crate::signals::Kernel;

    fn small_grid() -> GridSpec {
        GridSpec {
            k_values: vec![6],
            theta: ThetaRule::Values(vec![0.1]),
            m_values: vec![600, 1200],
            trials: 3,
            seed: 17,
            family: KernelFamily::Generic,
            solve: SolveOptions::default(),
            budget: DEFAULT_BUDGET,
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn theta_rules() {
        assert_eq!(
            ThetaRule::Overlap(vec![1.0, 2.0]).thetas(50),
            vec![0.02, 0.04]
        );
        let p = ThetaRule::Power(-2.0 / 3.0).thetas(27);
        assert!((p[0] - 1.0 / 9.0).abs() < 1e-15);
        for rule in [
            ThetaRule::Values(vec![0.05, 0.1]),
            ThetaRule::Overlap(vec![0.5, 4.0]),
            ThetaRule::Power(-2.0 / 3.0),
        ] {
            assert_eq!(ThetaRule::parse(&rule.describe()).unwrap(), rule);
        }
        assert_eq!(
            ThetaRule::parse("0.1, 0.2").unwrap(),
            ThetaRule::Values(vec![0.1, 0.2])
        );
        assert!(ThetaRule::parse("power:x").is_err());
    }

    #[test]
    fn grid_is_order_free_and_matches_standalone_runs() {
        let spec = small_grid();
        let seq = run_recovery_grid(&spec, Parallelism::Sequential).unwrap();
        let par = run_recovery_grid(&spec, Parallelism::Rayon { workers: 3 }).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.rows.len(), 6);
        assert!(seq.rows.iter().all(|r| (0.0..=1.0).contains(&r.err)));

        let one = GridSpec {
            m_values: vec![600],
            trials: 1,
            ..spec.clone()
        };
        let grid = run_recovery_grid(&one, Parallelism::Sequential).unwrap();
        let ts = derive_seed(17, &[0, 0, 0, 0]);
        let inst = trial_instance(6, 0.1, 600, KernelFamily::Generic, ts).unwrap();
        let opts = DeconvOptions {
            solve: SolveOptions {
                seed: trial_solver_seed(ts),
                ..SolveOptions::default()
            },
            init_window: None,
        };
        let alone = deconvolve(&inst.obs.y, 6, &opts, Some(&inst.kernel)).unwrap();
        assert_eq!(grid.rows[0].err, alone.score.unwrap().err);
        assert_eq!(grid.rows[0].iters, alone.report.iterations());
    }

    #[test]
    fn grid_refuses_over_budget() {
        let spec = GridSpec {
            budget: 1.0,
            ..small_grid()
        };
        assert!(matches!(
            run_recovery_grid(&spec, Parallelism::Sequential),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn grid_csv_schema() {
        let res = run_recovery_grid(
            &GridSpec {
                m_values: vec![600],
                trials: 1,
                ..small_grid()
            },
            Parallelism::Sequential,
        )
        .unwrap();
        let csv = grid_csv(&res);
        assert!(csv.starts_with(&format!(
            "{GRID_HEADER}\n6,0.10000000000000001,0.60000000000000009,600,0,"
        )));
        assert_eq!(grid_summary_csv(&res).lines().count(), 2);
    }

    #[test]
    fn param_csv_schema_and_bandpass_ordering() {
        let rows =
            run_param_sweep(&[30], 1, 1, KernelFamily::Generic, Parallelism::Sequential).unwrap();
        let csv = param_csv(&rows, false);
        assert!(csv.starts_with("k,sigma_min_avg,kappa_avg,mu_avg,trials,seed\n30,"));
        assert_eq!(
            csv,
            param_csv(
                &run_param_sweep(&[30], 1, 1, KernelFamily::Generic, Parallelism::Sequential)
                    .unwrap(),
                false
            )
        );
        assert_eq!(
            param_csv(&rows, true)
                .lines()
                .next()
                .unwrap()
                .split(',')
                .count(),
            9
        );

        let g = &run_param_sweep(&[40], 10, 2, KernelFamily::Generic, Parallelism::Sequential)
            .unwrap()[0];
        let b = &run_param_sweep(
            &[40],
            10,
            2,
            KernelFamily::Bandpass,
            Parallelism::Sequential,
        )
        .unwrap()[0];
        assert!(
            b.kappa_avg > g.kappa_avg && b.mu_avg > g.mu_avg,
            "generic {g:?} bandpass {b:?}"
        );
    }

    #[test]
    fn init_rate_on_delta_like_kernels_and_determinism() {
        let spec = InitRateSpec {
            k_values: vec![5],
            theta: ThetaRule::Values(vec![0.1]),
            m_values: vec![400],
            trials: 8,
            seed: 3,
            family: KernelFamily::NearDelta { spread: 0.0 },
            c_star: 10.0,
        };
        let rows = run_init_region_rate(&spec, Parallelism::Sequential).unwrap();
        assert_eq!(rows[0].in_region_fraction, 1.0);
        assert_eq!(
            rows,
            run_init_region_rate(&spec, Parallelism::Rayon { workers: 2 }).unwrap()
        );
        assert!(initrate_csv(&rows).starts_with(INITRATE_HEADER));
    }

    #[test]
    fn concentration_sweep_shapes() {
        let spec = ConcSpec::new(
            5,
            0.2,
            vec![256, 512],
            0,
            4,
            KernelFamily::NearDelta { spread: 0.01 },
        );
        let res = run_concentration_sweep(&spec, Parallelism::Sequential).unwrap();
        assert_eq!(conc_csv(&res), format!("{CONC_HEADER}\n"));
        assert_eq!(res.cells.len(), 2);

        let spec = ConcSpec { samples: 3, ..spec };
        let a = run_concentration_sweep(&spec, Parallelism::Sequential).unwrap();
        let b = run_concentration_sweep(&spec, Parallelism::Rayon { workers: 2 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        assert!(a.cells.iter().all(|c| c.sampled));

        let empty = ConcSpec {
            family: KernelFamily::Generic,
            k: 20,
            m_values: vec![256],
            attempt_cap: 1000,
            ..spec
        };
        let res = run_concentration_sweep(&empty, Parallelism::Sequential).unwrap();
        assert!(!res.cells[0].sampled);
        let _ = Kernel::delta(2);
    }
}
