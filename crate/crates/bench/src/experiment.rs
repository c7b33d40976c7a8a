//! Experiment specs, solver dispatch and result bundles.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use iapda::composite::{afbm_baseline, fista_baseline, BaselineConfig};
use iapda::io::ProblemManifest;
use iapda::solver::bound_certificates;
use iapda::{
    CompositeProblem, DVector, Error, ExtrapolationRule, IapdaParams, IapdaSolver, InnerMethod, InnerSolverConfig,
    MetricsTrace, ProxFunction, Result, SaddlePointCertificate, ScalingPolicy, SmoothFunction,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::generate::{gen_l1l2, gen_nnls, scalar_instance, L1L2Params, NnlsConstraint, NnlsParams, RidgePlacement};
use crate::rates::fit_trace_column;
use crate::svg::{loglog_svg, Series};

/// Extrapolation rule names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Nesterov,
    Cd,
    Ac,
}

impl std::str::FromStr for RuleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nesterov" => Ok(RuleName::Nesterov),
            "cd" => Ok(RuleName::Cd),
            "ac" => Ok(RuleName::Ac),
            other => Err(Error::Config(format!(
                "unknown rule {other:?} (expected nesterov, cd or ac)"
            ))),
        }
    }
}

pub fn make_rule(name: RuleName, alpha: Option<f64>) -> Result<ExtrapolationRule> {
    let need_alpha = || alpha.ok_or_else(|| Error::Config("this rule needs --alpha".into()));
    let rule = match name {
        RuleName::Nesterov => ExtrapolationRule::Nesterov,
        RuleName::Cd => ExtrapolationRule::ChambolleDossal { alpha: need_alpha()? },
        RuleName::Ac => ExtrapolationRule::AttouchCabot { alpha: need_alpha()? },
    };
    rule.validate()?;
    Ok(rule)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum SolverSpec {
    Iapda {
        rho: f64,
        sigma: f64,
        beta0: f64,
        rule: RuleName,
        #[serde(default)]
        alpha: Option<f64>,
        /// Growth exponent; absent means constant `β`.
        #[serde(default)]
        beta_power: Option<f64>,
        #[serde(default)]
        inner: Option<InnerSolverConfig>,
        #[serde(default)]
        label: Option<String>,
    },
    Fista {
        /// Defaults to `1/L_f`.
        #[serde(default)]
        step: Option<f64>,
        #[serde(default)]
        label: Option<String>,
    },
    Afbm {
        alpha: f64,
        #[serde(default)]
        step: Option<f64>,
        #[serde(default)]
        label: Option<String>,
    },
}

impl SolverSpec {
    pub fn label(&self) -> String {
        match self {
            SolverSpec::Iapda { label, .. } => label.clone().unwrap_or_else(|| "iapda".into()),
            SolverSpec::Fista { label, .. } => label.clone().unwrap_or_else(|| "fista".into()),
            SolverSpec::Afbm { label, .. } => label.clone().unwrap_or_else(|| "afbm".into()),
        }
    }

    pub fn iapda_params(&self, iterations: usize) -> Result<IapdaParams> {
        let SolverSpec::Iapda {
            rho,
            sigma,
            beta0,
            rule,
            alpha,
            beta_power,
            inner,
            ..
        } = self
        else {
            return Err(Error::Config("not an iapda solver spec".into()));
        };
        let scaling = match beta_power {
            Some(p) => ScalingPolicy::power(*beta0, *p),
            None => ScalingPolicy::constant(*beta0),
        };
        let mut params = IapdaParams::new(*rho, *sigma, make_rule(*rule, *alpha)?, scaling, iterations);
        if let Some(inner) = inner {
            params.inner = *inner;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    L1l2 {
        m: usize,
        n: usize,
        mu: f64,
        sparsity: f64,
        noise_norm: f64,
        #[serde(default)]
        ridge: RidgePlacement,
    },
    Nnls {
        m: usize,
        n: usize,
        density: f64,
        #[serde(default)]
        constraint: NnlsConstraint,
    },
    /// `min ½x² s.t. x = 0`, the hand-checked regression instance.
    Scalar,
    Custom {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub problem: ProblemSpec,
    pub seed: u64,
    pub iterations: usize,
    pub solvers: Vec<SolverSpec>,
    #[serde(default = "default_true")]
    pub certificates: bool,
    #[serde(default)]
    pub svg: bool,
    /// Rate-fit window; defaults to `[max(1, iterations/10), iterations]`.
    #[serde(default)]
    pub fit_window: Option<(usize, usize)>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::Config("experiment lists no solvers".into()));
        }
        let mut labels: Vec<String> = self.solvers.iter().map(SolverSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.solvers.len() {
            return Err(Error::Config("solver labels must be unique".into()));
        }
        match &self.problem {
            ProblemSpec::L1l2 { m, n, .. } | ProblemSpec::Nnls { m, n, .. } if *m == 0 || *n == 0 => {
                return Err(Error::Config("dimensions must be positive".into()))
            }
            _ => {}
        }
        for s in &self.solvers {
            if let SolverSpec::Iapda { .. } = s {
                s.iapda_params(self.iterations)?;
            }
        }
        Ok(())
    }

    /// Named presets: `example5.2`, `example5.3`, `scalar`; `full` selects full-size dimensions.
    pub fn preset(name: &str, seed: u64, full: bool) -> Result<Self> {
        let spec = match name {
            "example5.2" => {
                let p = if full {
                    L1L2Params::full(seed)
                } else {
                    L1L2Params::desk(seed)
                };
                Self {
                    name: name.into(),
                    problem: ProblemSpec::L1l2 {
                        m: p.m,
                        n: p.n,
                        mu: p.mu,
                        sparsity: p.sparsity,
                        noise_norm: p.noise_norm,
                        ridge: RidgePlacement::Prox,
                    },
                    seed,
                    iterations: 100,
                    solvers: vec![
                        SolverSpec::Iapda {
                            rho: 1e-4,
                            sigma: 10.0,
                            beta0: 2.0,
                            rule: RuleName::Cd,
                            alpha: Some(15.0),
                            beta_power: None,
                            inner: Some(InnerSolverConfig {
                                method: InnerMethod::Newton,
                                ..InnerSolverConfig::default()
                            }),
                            label: None,
                        },
                        SolverSpec::Fista {
                            step: None,
                            label: None,
                        },
                    ],
                    certificates: true,
                    svg: true,
                    fit_window: None,
                    output_dir: None,
                }
            }
            "example5.3" => {
                let p = if full {
                    NnlsParams::small(seed)
                } else {
                    NnlsParams::desk(seed)
                };
                Self {
                    name: name.into(),
                    problem: ProblemSpec::Nnls {
                        m: p.m,
                        n: p.n,
                        density: p.density,
                        constraint: NnlsConstraint::NonNeg,
                    },
                    seed,
                    iterations: 100,
                    solvers: vec![
                        SolverSpec::Iapda {
                            rho: 0.1,
                            sigma: 1.0,
                            beta0: 1.0,
                            rule: RuleName::Nesterov,
                            alpha: None,
                            beta_power: None,
                            inner: None,
                            label: None,
                        },
                        SolverSpec::Fista {
                            step: None,
                            label: None,
                        },
                        SolverSpec::Afbm {
                            alpha: 5.0,
                            step: None,
                            label: None,
                        },
                    ],
                    certificates: false,
                    svg: true,
                    fit_window: None,
                    output_dir: None,
                }
            }
            "scalar" => Self {
                name: name.into(),
                problem: ProblemSpec::Scalar,
                seed,
                iterations: 1,
                solvers: vec![SolverSpec::Iapda {
                    rho: 1.0,
                    sigma: 1.0,
                    beta0: 1.0,
                    rule: RuleName::Cd,
                    alpha: Some(3.0),
                    beta_power: None,
                    inner: None,
                    label: None,
                }],
                certificates: true,
                svg: false,
                fit_window: None,
                output_dir: None,
            },
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        Ok(spec)
    }
}

/// A generated or loaded problem plus what the solvers need around it.
#[derive(Debug, Clone)]
pub struct ProblemContext {
    pub problem: CompositeProblem,
    pub saddle: Option<SaddlePointCertificate>,
    /// Unconstrained reformulation used by the baselines when `m > 0`.
    pub penalty: Option<CompositeProblem>,
    /// Starting point `x_1` (`λ_1 = 0`).
    pub x1: DVector<f64>,
    pub scalar_regression: bool,
}

/// `f(x) + ½‖Ax − b‖²` built from a constrained problem; baselines run on this.
#[derive(Debug)]
struct QuadraticPenalty {
    base: CompositeProblem,
    lipschitz: f64,
}

impl SmoothFunction for QuadraticPenalty {
    fn dim(&self) -> Option<usize> {
        Some(self.base.dim_primal())
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.base.smooth().value(x) + 0.5 * self.base.residual(x).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base.smooth().gradient(x) + self.base.apply_adjoint(&self.base.residual(x))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub fn penalty_reformulation(problem: &CompositeProblem) -> Result<CompositeProblem> {
    let opnorm = problem.operator().clone().svd(false, false).singular_values.max();
    let f = QuadraticPenalty {
        base: problem.clone(),
        lipschitz: problem.lipschitz_f() + opnorm * opnorm,
    };
    CompositeProblem::unconstrained(Arc::new(f), *problem.nonsmooth(), problem.dim_primal())
}

pub fn build_problem(spec: &ProblemSpec, seed: u64) -> Result<ProblemContext> {
    match spec {
        ProblemSpec::L1l2 {
            m,
            n,
            mu,
            sparsity,
            noise_norm,
            ridge,
        } => {
            let inst = gen_l1l2(&L1L2Params {
                m: *m,
                n: *n,
                mu: *mu,
                sparsity: *sparsity,
                noise_norm: *noise_norm,
                seed,
                ridge: *ridge,
            })?;
            let saddle = inst.saddle()?;
            Ok(ProblemContext {
                penalty: Some(inst.penalty_problem()?),
                x1: DVector::zeros(*n),
                problem: inst.problem,
                saddle: Some(saddle),
                scalar_regression: false,
            })
        }
        ProblemSpec::Nnls {
            m,
            n,
            density,
            constraint,
        } => {
            let inst = gen_nnls(&NnlsParams {
                m: *m,
                n: *n,
                density: *density,
                seed,
                constraint: *constraint,
            })?;
            let penalty = match inst.problem.dim_dual() {
                0 => None,
                _ => Some(penalty_reformulation(&inst.problem)?),
            };
            Ok(ProblemContext {
                problem: inst.problem,
                saddle: None,
                penalty,
                x1: DVector::zeros(*n),
                scalar_regression: false,
            })
        }
        ProblemSpec::Scalar => {
            let (problem, saddle) = scalar_instance(ProxFunction::Zero)?;
            Ok(ProblemContext {
                problem,
                saddle: Some(saddle),
                penalty: None,
                x1: DVector::from_element(1, 1.0),
                scalar_regression: true,
            })
        }
        ProblemSpec::Custom { manifest } => {
            let loaded = ProblemManifest::load(manifest)?;
            let n = loaded.problem.dim_primal();
            let penalty = match loaded.problem.dim_dual() {
                0 => None,
                _ => Some(penalty_reformulation(&loaded.problem)?),
            };
            Ok(ProblemContext {
                problem: loaded.problem,
                saddle: loaded.saddle,
                penalty,
                x1: DVector::zeros(n),
                scalar_regression: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl CertificateStatus {
    fn as_str(self) -> &'static str {
        match self {
            CertificateStatus::Pass => "pass",
            CertificateStatus::Fail => "fail",
            CertificateStatus::NotApplicable => "n/a",
        }
    }
}

/// Outcome of one solver on one problem.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub label: String,
    pub trace: Option<MetricsTrace>,
    pub error: Option<String>,
    pub certificate: CertificateStatus,
    pub notes: Vec<String>,
}

/// Fills objective, residual and feasibility columns of a baseline trace against the original problem.
fn rescore_baseline(trace: &mut MetricsTrace, iterates: &[DVector<f64>], ctx: &ProblemContext) {
    for (row, x) in trace.rows.iter_mut().zip(iterates) {
        row.objective = ctx.problem.objective(x);
        row.feas_violation = if ctx.problem.dim_dual() > 0 {
            ctx.problem.feasibility(x)
        } else {
            f64::NAN
        };
        if let Some(s) = &ctx.saddle {
            row.obj_residual = (row.objective - s.opt_value).abs();
        }
    }
}

/// Hand-verified values of the scalar instance after one iteration.
fn scalar_regression_check(trace: &MetricsTrace) -> std::result::Result<(), String> {
    let first = trace.rows.first().ok_or("empty trace")?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    if !close(first.energy_total, 1.25) {
        return Err(format!("E(1) = {} (expected 1.25)", first.energy_total));
    }
    if let Some(second) = trace.row(2) {
        if !close(second.feas_violation, 3.0 / 17.0) {
            return Err(format!("|x_2| = {} (expected 3/17)", second.feas_violation));
        }
        if !close(second.lambda_norm, 4.0 / 17.0) {
            return Err(format!("|lambda_2| = {} (expected 4/17)", second.lambda_norm));
        }
    }
    Ok(())
}

pub fn run_solver(spec: &SolverSpec, ctx: &ProblemContext, iterations: usize, certificates: bool) -> SolverRun {
    let label = spec.label();
    let mut run = SolverRun {
        label: label.clone(),
        trace: None,
        error: None,
        certificate: CertificateStatus::NotApplicable,
        notes: Vec::new(),
    };
    let outcome: Result<MetricsTrace> = (|| match spec {
        SolverSpec::Iapda { .. } => {
            let params = spec.iapda_params(iterations)?;
            let solver = IapdaSolver::new(&ctx.problem, params)?;
            let lam1 = DVector::zeros(ctx.problem.dim_dual());
            solver.run(ctx.x1.clone(), lam1, ctx.saddle.as_ref(), &mut |_| {})
        }
        SolverSpec::Fista { step, .. } | SolverSpec::Afbm { step, .. } => {
            let base = match (&ctx.penalty, ctx.problem.dim_dual()) {
                (_, 0) => &ctx.problem,
                (Some(p), _) => p,
                (None, _) => {
                    return Err(Error::Config(
                        "baselines need an unconstrained problem or a penalty reformulation".into(),
                    ))
                }
            };
            let lf = base.lipschitz_f();
            let step = match step {
                Some(s) => *s,
                None if lf > 0.0 => 1.0 / lf,
                None => return Err(Error::Config("L_f = 0; give an explicit step".into())),
            };
            let config = BaselineConfig {
                step,
                max_iter: iterations,
                opt_value: None,
            };
            let mut iterates = Vec::with_capacity(iterations + 1);
            let mut record = |_: usize, x: &DVector<f64>| iterates.push(x.clone());
            let mut trace = match spec {
                SolverSpec::Afbm { alpha, .. } => afbm_baseline(base, &ctx.x1, *alpha, &config, &mut record)?,
                _ => fista_baseline(base, &ctx.x1, &config, &mut record)?,
            };
            rescore_baseline(&mut trace, &iterates, ctx);
            Ok(trace)
        }
    })();
    match outcome {
        Ok(trace) => {
            if certificates {
                if let (SolverSpec::Iapda { .. }, Some(saddle)) = (spec, &ctx.saddle) {
                    match bound_certificates(&trace, saddle) {
                        Ok(report) if report.passed() => run.certificate = CertificateStatus::Pass,
                        Ok(report) => {
                            run.certificate = CertificateStatus::Fail;
                            let v = report.violations[0];
                            run.notes.push(format!(
                                "{} bound violated at k = {}: {:.3e} > {:.3e} ({} violations)",
                                format!("{:?}", v.bound).to_lowercase(),
                                v.k,
                                v.value,
                                v.bound_value,
                                report.violations.len()
                            ));
                        }
                        Err(e) => {
                            run.certificate = CertificateStatus::Fail;
                            run.notes.push(e.to_string());
                        }
                    }
                }
                if ctx.scalar_regression {
                    if let Err(msg) = scalar_regression_check(&trace) {
                        run.certificate = CertificateStatus::Fail;
                        run.notes.push(format!("scalar regression: {msg}"));
                    }
                }
            }
            run.notes.extend(trace.warnings.iter().cloned());
            run.trace = Some(trace);
        }
        Err(e) => {
            run.error = Some(e.to_string());
            run.certificate = if certificates {
                CertificateStatus::Fail
            } else {
                CertificateStatus::NotApplicable
            };
        }
    }
    info!("{label}: certificate {}", run.certificate.as_str());
    run
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub solver: String,
    pub status: String,
    pub iterations: usize,
    pub final_obj_residual: f64,
    pub final_feas: f64,
    pub final_pd_gap: f64,
    pub feas_slope: f64,
    pub gap_slope: f64,
    pub certificate: CertificateStatus,
}

pub const SUMMARY_COLUMNS: &str =
    "solver,status,iterations,final_obj_residual,final_feas,final_pd_gap,feas_slope,gap_slope,certificate";

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

impl SummaryRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.solver,
            self.status,
            self.iterations,
            fmt(self.final_obj_residual),
            fmt(self.final_feas),
            fmt(self.final_pd_gap),
            fmt(self.feas_slope),
            fmt(self.gap_slope),
            self.certificate.as_str()
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<SolverRun>,
    pub summary: Vec<SummaryRow>,
    pub exit_code: i32,
}

fn summarize(run: &SolverRun, window: (usize, usize)) -> SummaryRow {
    let slope = |trace: &MetricsTrace, column: &str| {
        fit_trace_column(&trace.series(column), window.0, window.1)
            .map(|f| f.slope)
            .unwrap_or(f64::NAN)
    };
    match &run.trace {
        Some(trace) => {
            let last = trace.last().expect("traces always hold the initial row");
            let gap_column = if last.pd_gap.is_nan() { "obj_residual" } else { "pd_gap" };
            SummaryRow {
                solver: run.label.clone(),
                status: "ok".into(),
                iterations: trace.rows.len().saturating_sub(1),
                final_obj_residual: last.obj_residual,
                final_feas: last.feas_violation,
                final_pd_gap: last.pd_gap,
                feas_slope: slope(trace, "feas_violation"),
                gap_slope: slope(trace, gap_column),
                certificate: run.certificate,
            }
        }
        None => SummaryRow {
            solver: run.label.clone(),
            status: "aborted".into(),
            iterations: 0,
            final_obj_residual: f64::NAN,
            final_feas: f64::NAN,
            final_pd_gap: f64::NAN,
            feas_slope: f64::NAN,
            gap_slope: f64::NAN,
            certificate: run.certificate,
        },
    }
}

/// Runs every solver of `spec` (concurrently) and writes the bundle into `out_dir`:
/// `<label>.csv` per solver, `summary.csv`, and optional SVG plots.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let ctx = build_problem(&spec.problem, spec.seed)?;
    fs::create_dir_all(out_dir)?;

    let runs: Vec<SolverRun> = std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .solvers
            .iter()
            .map(|s| {
                let ctx = &ctx;
                scope.spawn(move || run_solver(s, ctx, spec.iterations, spec.certificates))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });

    let window = spec
        .fit_window
        .unwrap_or(((spec.iterations / 10).max(1), spec.iterations.max(2)));
    let mut summary = Vec::new();
    let mut exit_code = 0;
    let mut summary_text = String::from(SUMMARY_COLUMNS);
    summary_text.push('\n');
    for run in &runs {
        if let Some(trace) = &run.trace {
            trace.write_csv(fs::File::create(out_dir.join(format!("{}.csv", run.label)))?)?;
        }
        if run.error.is_some() || run.certificate == CertificateStatus::Fail {
            exit_code = 1;
        }
        let row = summarize(run, window);
        summary_text.push_str(&row.csv());
        summary_text.push('\n');
        summary.push(row);
    }
    fs::write(out_dir.join("summary.csv"), summary_text)?;

    let mut notes = String::new();
    for run in &runs {
        if let Some(e) = &run.error {
            notes.push_str(&format!("{}: error: {e}\n", run.label));
        }
        for n in &run.notes {
            notes.push_str(&format!("{}: {n}\n", run.label));
        }
    }
    if !notes.is_empty() {
        fs::write(out_dir.join("notes.txt"), notes)?;
    }

    if spec.svg {
        for (column, file) in [("feas_violation", "feas.svg"), ("obj_residual", "obj_residual.svg")] {
            let series: Vec<Series> = runs
                .iter()
                .filter_map(|r| {
                    r.trace.as_ref().map(|t| Series {
                        label: r.label.clone(),
                        points: t
                            .series(column)
                            .into_iter()
                            .map(|(k, v)| ((k.max(1)) as f64, v))
                            .collect(),
                    })
                })
                .collect();
            fs::write(out_dir.join(file), loglog_svg(&spec.name, "k", column, &series))?;
        }
    }
    Ok(ExperimentOutcome {
        runs,
        summary,
        exit_code,
    })
}

/// Where a bundle goes when neither the CLI nor the experiment file names a directory.
pub fn default_output_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name))
}
