use std::fs;
use std::path::{Path, PathBuf};

use l4deconv::experiments::{
    self, conc_csv, conc_summary_csv, grid_csv, grid_summary_csv, initrate_csv, param_csv,
    trial_instance, ConcSpec, GridSpec, InitRateSpec, ThetaRule,
};
use l4deconv::io::{fmt_g17, format_vector, parse_rows, parse_vector};
use l4deconv::landscape::{
    analyze_point, min_tangent_eig, psi, region_values, Classification, PsiObjective,
};
use l4deconv::optimizer::Objective;
use l4deconv::pipeline::solve_activation;
use l4deconv::signals::{bandpass_band, norm2, random_unit, rng_from_seed};
use l4deconv::{
    deconvolve, DeconvOptions, Kernel, KernelFamily, Observation, ObservationModel, Parallelism,
    ShiftModel, SolveOptions, SpherePoint,
};

use crate::config::{meta_text, List, Resolver};
use crate::{
    CliError, ConcArgs, DeconvArgs, GenArgs, GridArgs, InitrateArgs, LandscapeArgs, ParamsArgs,
    SolverArgs,
};

fn read_vector(path: &str) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {path}: {e}")))?;
    parse_vector(&text).map_err(|e| CliError::input(format!("{path}: {e}")))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn family(r: &mut Resolver, flag: Option<String>, default: &str) -> Result<KernelFamily, CliError> {
    let name = r.get("family", flag, default.to_string())?;
    Ok(KernelFamily::parse(&name)?)
}

fn theta_rule(
    r: &mut Resolver,
    flag: Option<String>,
    default: &str,
) -> Result<ThetaRule, CliError> {
    let text = r.get("theta", flag, default.to_string())?;
    Ok(ThetaRule::parse(&text)?)
}

fn solver(r: &mut Resolver, a: SolverArgs, seed: u64) -> Result<SolveOptions, CliError> {
    let d = SolveOptions::default();
    let opts = SolveOptions {
        max_iters: r.get("max_iters", a.max_iters, d.max_iters)?,
        grad_tol: r.get("grad_tol", a.grad_tol, d.grad_tol)?,
        curvature_tol: r.get("curvature_tol", a.curvature_tol, d.curvature_tol)?,
        armijo_c: r.get("armijo_c", a.armijo_c, d.armijo_c)?,
        backtrack_factor: r.get("backtrack_factor", a.backtrack_factor, d.backtrack_factor)?,
        initial_step: r.get("initial_step", a.initial_step, d.initial_step)?,
        escape_check_period: r.get(
            "escape_check_period",
            a.escape_check_period,
            d.escape_check_period,
        )?,
        min_eig_tol: r.get("min_eig_tol", a.min_eig_tol, d.min_eig_tol)?,
        seed,
    };
    opts.validate()?;
    Ok(opts)
}

fn workers(r: &mut Resolver, flag: Option<usize>) -> Result<Parallelism, CliError> {
    Ok(Parallelism::from_workers(r.get("workers", flag, 0)?))
}

fn family_notes(family: KernelFamily, ks: &[usize]) -> Vec<String> {
    match family {
        KernelFamily::Bandpass => ks
            .iter()
            .map(|&k| {
                let (lo, hi) = bandpass_band(k);
                format!("bandpass k={k}: Gaussian DFT coefficients on frequencies {lo}..={hi} of 0..={}, mirrored, then normalized", k / 2)
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn outdir(r: &mut Resolver, flag: Option<String>) -> Result<PathBuf, CliError> {
    Ok(PathBuf::from(r.get("outdir", flag, ".".to_string())?))
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let k: usize = r.require("k", a.k)?;
    let m: usize = r.require("m", a.m)?;
    let theta: f64 = r.require("theta", a.theta)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let fam = family(&mut r, a.family, "generic")?;
    let output = PathBuf::from(r.get("output", a.output, "y.txt".to_string())?);
    let effective = r.finish()?;

    let inst = trial_instance(k, theta, m, fam, seed)?;
    let dir = output.parent().map(Path::to_path_buf).unwrap_or_default();
    write(&output, &format_vector(&inst.obs.y))?;
    write(&dir.join("a0.txt"), &format_vector(inst.kernel.values()))?;
    write(&dir.join("x0.txt"), &format_vector(&inst.signal.values()))?;
    write(
        &dir.join("gen.meta"),
        &meta_text("gen", &effective, &family_notes(fam, &[k])),
    )
}

pub fn deconv(a: DeconvArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let input: String = r.require("input", a.input)?;
    let k: usize = r.require("k", a.k)?;
    let truth_path: Option<String> = r.optional("truth", a.truth)?;
    let init_window: Option<usize> = r.optional("init_window", a.init_window)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let solve = solver(&mut r, a.solver, seed)?;
    let trace = r.switch("trace", a.trace)?;
    let activation = r.switch("activation", a.activation)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let y = read_vector(&input)?;
    let truth = match &truth_path {
        Some(p) => Some(Kernel::new(read_vector(p)?)?),
        None => None,
    };
    let init_window = match init_window {
        None => None,
        Some(i) if (1..=y.len()).contains(&i) => Some(i - 1),
        Some(i) => {
            return Err(CliError::input(format!(
                "init_window {i} is outside 1..={}",
                y.len()
            )))
        }
    };
    let m = y.len();
    let opts = DeconvOptions { solve, init_window };
    let res = deconvolve(&y, k, &opts, truth.as_ref())?;

    let (err, shift, sign) = match res.score {
        Some(s) => (fmt_g17(s.err), s.best_shift.to_string(), s.sign.to_string()),
        None => ("nan".to_string(), String::new(), String::new()),
    };
    let csv = format!(
        "seed,k,m,status,iters,escapes,err,best_shift,sign,psi_final\n{seed},{k},{m},{},{},{},{err},{shift},{sign},{}\n",
        res.report.status.as_str(),
        res.report.iterations(),
        res.report.escape_events.len(),
        fmt_g17(res.psi_final)
    );
    write(&dir.join("q_bar.txt"), &format_vector(&res.q_bar))?;
    write(&dir.join("a_bar.txt"), &format_vector(res.a_bar.values()))?;
    write(&dir.join("deconv.csv"), &csv)?;
    if trace {
        write(&dir.join("trace.csv"), &res.report.trace_csv())?;
    }
    if activation {
        let obs = Observation::new(y, k)?;
        let act = solve_activation(&res.a_bar, &obs)?;
        write(&dir.join("x_hat.txt"), &format_vector(&act.x))?;
    }
    let notes = vec![format!("init_window_used = {}", res.init_window + 1)];
    write(
        &dir.join("deconv.meta"),
        &meta_text("deconv", &effective, &notes),
    )
}

const LANDSCAPE_HEADER: &str =
    "point,psi,grad_norm_scaled,lambda_min_scaled,lhs,rhs_r,rhs_rhat,in_r,in_rhat,spikes,classification,value";

pub fn landscape(a: LandscapeArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let input: String = r.require("input", a.input)?;
    let k: usize = r.require("k", a.k)?;
    let truth_path: Option<String> = r.optional("truth", a.truth)?;
    let points_path: Option<String> = r.optional("points", a.points)?;
    let (samples, seed) = if points_path.is_none() {
        (
            r.get("samples", a.samples, 10usize)?,
            r.get("seed", a.common.seed, 0u64)?,
        )
    } else {
        (0, 0)
    };
    let c_star = r.get("c_star", a.c_star, 10.0f64)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let model = ObservationModel::new(Observation::new(read_vector(&input)?, k)?)?;
    let sm = match &truth_path {
        Some(p) => {
            let kernel = Kernel::new(read_vector(p)?)?;
            if kernel.len() != k {
                return Err(CliError::input(format!(
                    "truth kernel has length {}, k = {k}",
                    kernel.len()
                )));
            }
            Some(ShiftModel::new(&kernel)?)
        }
        None => None,
    };
    let points: Vec<SpherePoint> = match &points_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::input(format!("cannot read {p}: {e}")))?;
            let rows = parse_rows(&text).map_err(|e| CliError::input(format!("{p}: {e}")))?;
            rows.iter()
                .enumerate()
                .map(|(i, row)| {
                    if row.len() != k {
                        return Err(CliError::input(format!(
                            "{p}: point {} has {} entries, k = {k}",
                            i + 1,
                            row.len()
                        )));
                    }
                    SpherePoint::project(row)
                        .map_err(|e| CliError::input(format!("{p}: point {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?
        }
        None => {
            let mut rng = rng_from_seed(seed);
            (0..samples)
                .map(|_| SpherePoint::project(&random_unit(k, &mut rng)))
                .collect::<Result<_, _>>()?
        }
    };

    let obj = PsiObjective::normalized(&model);
    let mut csv = format!("{LANDSCAPE_HEADER}\n");
    for (i, q) in points.iter().enumerate() {
        let value = psi(&model, q)?;
        let grad_norm = norm2(&obj.grad(q));
        let lambda = match min_tangent_eig(|v| obj.hess_vec(q, v), q, 1e-8) {
            Ok(e) => fmt_g17(e.lambda),
            Err(_) => "nan".to_string(),
        };
        let region_cols = match &sm {
            Some(sm) => {
                let rv = region_values(sm, q, c_star);
                let rep = analyze_point(sm, q, c_star);
                let (class, v) = match &rep.classification {
                    Classification::LocalMin { alignment, .. } => {
                        ("local_min", fmt_g17(*alignment))
                    }
                    Classification::Saddle { curvature, .. } => ("saddle", fmt_g17(*curvature)),
                    Classification::Unresolved(_) => ("unresolved", String::new()),
                };
                format!(
                    "{},{},{},{},{},{},{class},{v}",
                    fmt_g17(rv.lhs),
                    fmt_g17(rv.rhs_r),
                    fmt_g17(rv.rhs_rhat),
                    rv.in_r,
                    rv.in_rhat,
                    rep.spikes.len()
                )
            }
            None => ",,,,,,,".to_string(),
        };
        csv.push_str(&format!(
            "{},{},{},{lambda},{region_cols}\n",
            i + 1,
            fmt_g17(value),
            fmt_g17(grad_norm)
        ));
    }
    write(&dir.join("landscape.csv"), &csv)?;
    write(
        &dir.join("landscape.meta"),
        &meta_text("landscape", &effective, &[]),
    )
}

pub fn params(a: ParamsArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let ks: List<usize> = r.require("k", a.k)?;
    let trials = r.get("trials", a.trials, 20usize)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let fam = family(&mut r, a.family, "generic")?;
    let predictions = r.switch("predictions", a.predictions)?;
    let par = workers(&mut r, a.workers.workers)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let rows = experiments::run_param_sweep(&ks.0, trials, seed, fam, par)?;
    write(&dir.join("params.csv"), &param_csv(&rows, predictions))?;
    write(
        &dir.join("params.meta"),
        &meta_text("params", &effective, &family_notes(fam, &ks.0)),
    )
}

pub fn grid(a: GridArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let ks: List<usize> = r.get("k", a.k, List(vec![50]))?;
    let theta = theta_rule(&mut r, a.theta, "0.07")?;
    let ms: List<usize> = r.get("m", a.m, List(vec![1 << 13, 1 << 15, 1 << 17]))?;
    let trials = r.get("trials", a.trials, 10usize)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let fam = family(&mut r, a.family, "generic")?;
    let budget = r.get("budget", a.budget, experiments::DEFAULT_BUDGET)?;
    let solve = solver(&mut r, a.solver, 0)?;
    let par = workers(&mut r, a.workers.workers)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let spec = GridSpec {
        k_values: ks.0.clone(),
        theta,
        m_values: ms.0,
        trials,
        seed,
        family: fam,
        solve,
        budget,
    };
    let res = experiments::run_recovery_grid(&spec, par)?;
    write(&dir.join("grid.csv"), &grid_csv(&res))?;
    write(&dir.join("grid_summary.csv"), &grid_summary_csv(&res))?;
    let mut notes = vec![format!(
        "estimated_flops = {}",
        fmt_g17(spec.estimated_flops())
    )];
    notes.extend(family_notes(fam, &ks.0));
    write(
        &dir.join("grid.meta"),
        &meta_text("grid", &effective, &notes),
    )
}

pub fn initrate(a: InitrateArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let ks: List<usize> = r.get("k", a.k, List(vec![50]))?;
    let theta = theta_rule(&mut r, a.theta, "0.05")?;
    let ms: List<usize> = r.get("m", a.m, List(vec![1 << 16]))?;
    let trials = r.get("trials", a.trials, 100usize)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let fam = family(&mut r, a.family, "generic")?;
    let c_star = r.get("c_star", a.c_star, 10.0f64)?;
    let par = workers(&mut r, a.workers.workers)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let spec = InitRateSpec {
        k_values: ks.0.clone(),
        theta,
        m_values: ms.0,
        trials,
        seed,
        family: fam,
        c_star,
    };
    let rows = experiments::run_init_region_rate(&spec, par)?;
    write(&dir.join("initrate.csv"), &initrate_csv(&rows))?;
    write(
        &dir.join("initrate.meta"),
        &meta_text("initrate", &effective, &family_notes(fam, &ks.0)),
    )
}

pub fn conc(a: ConcArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let k = r.get("k", a.k, 8usize)?;
    let theta = r.get("theta", a.theta, 0.1f64)?;
    let ms: List<usize> = r.get("m", a.m, List((10..=16).map(|e| 1usize << e).collect()))?;
    let samples = r.get("samples", a.samples, 20usize)?;
    let seed = r.get("seed", a.common.seed, 0u64)?;
    let fam = family(&mut r, a.family, "neardelta")?;
    let c_star = r.get("c_star", a.c_star, 10.0f64)?;
    let attempt_cap = r.get("attempt_cap", a.attempt_cap, 100_000usize)?;
    let par = workers(&mut r, a.workers.workers)?;
    let dir = outdir(&mut r, a.outdir)?;
    let effective = r.finish()?;

    let spec = ConcSpec {
        c_star,
        attempt_cap,
        ..ConcSpec::new(k, theta, ms.0, samples, seed, fam)
    };
    let res = experiments::run_concentration_sweep(&spec, par)?;
    write(&dir.join("conc.csv"), &conc_csv(&res))?;
    write(&dir.join("conc_summary.csv"), &conc_summary_csv(&res))?;
    let mut notes = vec![format!("region_attempts = {}", res.attempts)];
    notes.extend(family_notes(fam, &[k]));
    write(
        &dir.join("conc.meta"),
        &meta_text("conc", &effective, &notes),
    )
}
