use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use iapda::dynamics::{
    energy_excess, feasibility_mass_ratio, integrate, scaled_gap_sup, write_trajectory_csv, OdeConfig, OdeState,
};
use iapda::io::ProblemManifest;
use iapda::{DVector, Error, InnerMethod, InnerSolverConfig, ProxFunction, Result};
use iapda_bench::experiment::{
    build_problem, default_output_dir, run_experiment, run_solver, CertificateStatus, ExperimentSpec, ProblemSpec,
    RuleName, SolverSpec,
};
use iapda_bench::export::{save_l1l2, save_nnls, save_qp, MANIFEST_FILE};
use iapda_bench::generate::{gen_l1l2, gen_nnls, random_qp, scalar_instance, L1L2Params, NnlsParams, RidgePlacement};
use iapda_bench::rates::{fit_rate_slope, read_csv_columns};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "iapda-bench",
    version,
    about = "Problem generation, solver runs and rate checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    L1l2,
    Nnls,
    Qp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Iapda,
    Fista,
    Afbm,
}

#[derive(Clone, Copy, ValueEnum)]
enum InnerKind {
    Auto,
    Fista,
    Newton,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded instance and write it as manifest.json plus Matrix Market files.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full-size dimensions instead of the small default ones.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Put the ridge term into the prox part (l1l2 only).
        #[arg(long)]
        ridge_in_prox: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver on a problem manifest and write its trace CSV.
    Solve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "iapda")]
        solver: SolverKind,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long, default_value = "nesterov")]
        rule: RuleName,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        beta0: f64,
        #[arg(long)]
        beta_power: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Baseline step size (defaults to 1/L_f).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, value_enum, default_value = "auto")]
        inner: InnerKind,
        #[arg(long)]
        subtol: Option<f64>,
        /// Check the convergence bounds against the manifest's saddle point.
        #[arg(long)]
        certify: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment from a JSON spec or a named preset.
    Bench {
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// example5.2, example5.3 or scalar.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        full: bool,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the continuous-time dynamics and write t,gap,feas,energy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a log-log slope to one column of a trace CSV.
    Rates {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "feas_violation")]
        column: String,
        /// Abscissa column (k for iteration traces, t for trajectories).
        #[arg(long, default_value = "k")]
        x_column: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        /// Fail (exit 1) unless the slope is at most this value.
        #[arg(long)]
        max_slope: Option<f64>,
    },
}

/// Input of `simulate`; without a manifest the scalar `½x² + |x|, x = 0` instance is used.
#[derive(Deserialize)]
struct SimulateSpec {
    ode: OdeConfig,
    #[serde(default)]
    manifest: Option<PathBuf>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    lambda0: Option<Vec<f64>>,
    /// Tolerated energy growth per unit time.
    #[serde(default)]
    energy_tol_rate: Option<f64>,
}

fn gen(
    kind: GenKind,
    seed: u64,
    full: bool,
    m: Option<usize>,
    n: Option<usize>,
    ridge_in_prox: bool,
    out: &Path,
) -> Result<i32> {
    let manifest = match kind {
        GenKind::L1l2 => {
            let base = if full {
                L1L2Params::full(seed)
            } else {
                L1L2Params::desk(seed)
            };
            let params = L1L2Params {
                m: m.unwrap_or(base.m),
                n: n.unwrap_or(base.n),
                ridge: if ridge_in_prox {
                    RidgePlacement::Prox
                } else {
                    RidgePlacement::Smooth
                },
                ..base
            };
            let inst = gen_l1l2(&params)?;
            for w in &inst.warnings {
                eprintln!("warning: {w}");
            }
            save_l1l2(&inst, out)?
        }
        GenKind::Nnls => {
            let base = if full {
                NnlsParams::small(seed)
            } else {
                NnlsParams::desk(seed)
            };
            let params = NnlsParams {
                m: m.unwrap_or(base.m),
                n: n.unwrap_or(base.n),
                ..base
            };
            save_nnls(&gen_nnls(&params)?, out)?
        }
        GenKind::Qp => {
            let n = n.unwrap_or(20);
            let m = m.unwrap_or(n / 2);
            save_qp(&random_qp(seed, n, m, 0.1)?, seed, out)?
        }
    };
    println!("wrote {} to {}", manifest.name, out.join(MANIFEST_FILE).display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn solve(
    manifest: PathBuf,
    solver: SolverKind,
    iterations: usize,
    rule: RuleName,
    alpha: Option<f64>,
    beta0: f64,
    beta_power: Option<f64>,
    rho: f64,
    sigma: f64,
    step: Option<f64>,
    inner: InnerKind,
    subtol: Option<f64>,
    certify: bool,
    out: &Path,
) -> Result<i32> {
    let spec = match solver {
        SolverKind::Iapda => {
            let mut cfg = InnerSolverConfig {
                method: match inner {
                    InnerKind::Auto => InnerMethod::Auto,
                    InnerKind::Fista => InnerMethod::Fista,
                    InnerKind::Newton => InnerMethod::Newton,
                },
                ..InnerSolverConfig::default()
            };
            if let Some(t) = subtol {
                cfg.subtol = t;
            }
            SolverSpec::Iapda {
                rho,
                sigma,
                beta0,
                rule,
                alpha,
                beta_power,
                inner: Some(cfg),
                label: None,
            }
        }
        SolverKind::Fista => SolverSpec::Fista { step, label: None },
        SolverKind::Afbm => SolverSpec::Afbm {
            alpha: alpha.ok_or_else(|| Error::Config("afbm needs --alpha".into()))?,
            step,
            label: None,
        },
    };
    if let SolverSpec::Iapda { .. } = spec {
        spec.iapda_params(iterations)?;
    }
    let ctx = build_problem(&ProblemSpec::Custom { manifest }, 0)?;
    if certify && ctx.saddle.is_none() {
        return Err(Error::Config(
            "--certify needs x_star and lambda_star in the manifest".into(),
        ));
    }
    let run = run_solver(&spec, &ctx, iterations, certify);
    if let Some(e) = &run.error {
        eprintln!("error: {e}");
        return Ok(1);
    }
    let trace = run.trace.as_ref().expect("successful runs carry a trace");
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    trace.write_csv(fs::File::create(out)?)?;
    let last = trace.last().expect("non-empty trace");
    println!(
        "{}: k = {}, objective = {}, feas = {:.3e}, obj_residual = {:.3e}, certificate = {:?}",
        run.label, last.k, last.objective, last.feas_violation, last.obj_residual, run.certificate
    );
    for n in &run.notes {
        eprintln!("note: {n}");
    }
    Ok(if run.certificate == CertificateStatus::Fail {
        1
    } else {
        0
    })
}

fn bench(
    spec: Option<PathBuf>,
    preset: Option<String>,
    seed: u64,
    full: bool,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let mut spec = match (spec, preset) {
        (Some(path), _) => ExperimentSpec::load(&path)?,
        (None, Some(name)) => ExperimentSpec::preset(&name, seed, full)?,
        (None, None) => return Err(Error::Config("give --spec or --preset".into())),
    };
    if let Some(it) = iterations {
        spec.iterations = it;
    }
    let out = out.unwrap_or_else(|| default_output_dir(&spec));
    let outcome = run_experiment(&spec, &out)?;
    for row in &outcome.summary {
        println!(
            "{:<10} {:<8} k={:<6} feas={:<12.3e} obj_res={:<12.3e} feas_slope={:<8.3} gap_slope={:<8.3} cert={:?}",
            row.solver,
            row.status,
            row.iterations,
            row.final_feas,
            row.final_obj_residual,
            row.feas_slope,
            row.gap_slope,
            row.certificate
        );
    }
    println!("bundle written to {}", out.display());
    Ok(outcome.exit_code)
}

fn simulate(config: &Path, out: &Path) -> Result<i32> {
    let spec: SimulateSpec = serde_json::from_str(&fs::read_to_string(config)?)?;
    spec.ode.validate()?;
    let (problem, saddle) = match &spec.manifest {
        Some(path) => {
            let path = config.parent().unwrap_or(Path::new(".")).join(path);
            let loaded = ProblemManifest::load(&path)?;
            (loaded.problem, loaded.saddle)
        }
        None => {
            let (p, s) = scalar_instance(ProxFunction::L1 { weight: 1.0 })?;
            (p, Some(s))
        }
    };
    let (n, m) = (problem.dim_primal(), problem.dim_dual());
    let vec_or = |v: &Option<Vec<f64>>, len: usize, fill: f64, what: &'static str| -> Result<DVector<f64>> {
        match v {
            Some(v) if v.len() == len => Ok(DVector::from_vec(v.clone())),
            Some(v) => Err(Error::DimensionMismatch {
                context: what,
                expected: len,
                actual: v.len(),
            }),
            None => Ok(DVector::from_element(len, fill)),
        }
    };
    let x0 = vec_or(&spec.x0, n, 1.0, "x0")?;
    let lam0 = vec_or(&spec.lambda0, m, 0.0, "lambda0")?;
    let traj = integrate(
        &spec.ode,
        &problem,
        OdeState::at_rest(spec.ode.t0, x0, lam0),
        saddle.as_ref(),
    )?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_trajectory_csv(&traj.records, fs::File::create(out)?)?;
    if let Some(reason) = &traj.aborted {
        eprintln!("integration aborted: {reason}");
        return Ok(1);
    }
    if saddle.is_some() {
        let e0 = traj.records[0].energy;
        let tol = spec.energy_tol_rate.unwrap_or(1e-6 * e0.max(1.0));
        let excess = energy_excess(&traj.records, tol);
        println!(
            "records = {}, energy(t0) = {e0}, max energy excess = {excess:.3e}, sup t^2 beta gap = {:.6}, feasibility mass ratio = {:.4}",
            traj.records.len(),
            scaled_gap_sup(&traj.records, &spec.ode),
            feasibility_mass_ratio(&traj.records, &spec.ode)
        );
        if excess > 0.0 {
            return Ok(1);
        }
    } else {
        println!(
            "records = {} (no saddle point; energy not evaluated)",
            traj.records.len()
        );
    }
    Ok(0)
}

fn rates(trace: &Path, column: &str, x_column: &str, from: f64, to: f64, max_slope: Option<f64>) -> Result<i32> {
    let points = read_csv_columns(&fs::read_to_string(trace)?, x_column, column)?;
    let fit = fit_rate_slope(&points, from, to)?;
    println!(
        "slope = {:.4} over [{}, {}] ({} points, r^2 = {:.4}{})",
        fit.slope,
        fit.k_lo,
        fit.k_hi,
        fit.points,
        fit.r_squared,
        if fit.shrunk { ", window shrunk" } else { "" }
    );
    Ok(match max_slope {
        Some(limit) if !(fit.slope <= limit) => 1,
        _ => 0,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen {
            kind,
            seed,
            full,
            m,
            n,
            ridge_in_prox,
            out,
        } => gen(kind, seed, full, m, n, ridge_in_prox, &out),
        Command::Solve {
            manifest,
            solver,
            iterations,
            rule,
            alpha,
            beta0,
            beta_power,
            rho,
            sigma,
            step,
            inner,
            subtol,
            certify,
            out,
        } => solve(
            manifest, solver, iterations, rule, alpha, beta0, beta_power, rho, sigma, step, inner, subtol, certify,
            &out,
        ),
        Command::Bench {
            spec,
            preset,
            seed,
            full,
            iterations,
            out,
        } => bench(spec, preset, seed, full, iterations, out),
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Rates {
            trace,
            column,
            x_column,
            from,
            to,
            max_slope,
        } => rates(&trace, &column, &x_column, from, to, max_slope),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(Error::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
