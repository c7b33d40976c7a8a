//! Inertial accelerated primal-dual iteration with time scaling.
//!
//! One iteration, for `k ≥ 1`:
//!
//! ```text
//!   x̄   = x_k + (t_k − 1)/t_{k+1} (x_k − x_{k−1})
//!   s   = σ β_k t_{k+1}²,   ζ = s + ρ
//!   φ   = ((t_{k+1} − 1) A x_k + b) / t_{k+1}
//!   μ   = λ_k + (t_k − 1)/t_{k+1} (λ_k − λ_{k−1})
//!   ξ   = t_{k+1} μ − (t_{k+1} − 1) λ_k
//!   c   = (s φ + ρ b − ξ) / ζ
//!   x_{k+1} = argmin ⟨∇f(x̄), x⟩ + g(x) + ‖x − x̄‖²/(2β_k) + (ζ/2)‖Ax − c‖²
//!   u   = x_{k+1} + (t_{k+1} − 1)(x_{k+1} − x_k)
//!   λ_{k+1} = μ + σ β_k (A u − b)
//!   v   = ξ + s (A x_{k+1} − φ)
//! ```
//!
//! With a saddle point `(x*, λ*)` the energy
//! `E(k) = t_{k+1}(t_{k+1} − 1) β_k (𝓛_ρ(x_k, λ*) − 𝓛_ρ(x*, λ*)) + ½‖u_k − x*‖² + ‖v_k − λ*‖²/(2σ)`
//! is non-increasing when `L_f β_k ≤ 1` and the subproblem is solved exactly.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::composite::{
    estimate_opnorm, fista_solve, newton_solve, InnerMethod, InnerSolution, InnerSolverConfig,
    QuadraticCompositeSubproblem,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm, ShiftedGram};
use crate::problem::{CompositeProblem, SaddlePointCertificate};
use crate::schedule::{ExtrapolationRule, ScalingPolicy, Schedule};
use crate::trace::{BoundInputs, MetricsTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IapdaParams {
    pub rho: f64,
    pub sigma: f64,
    pub rule: ExtrapolationRule,
    pub scaling: ScalingPolicy,
    #[serde(default)]
    pub inner: InnerSolverConfig,
    pub max_iter: usize,
    /// Stop once the KKT residual drops to this value; `0` disables the test.
    #[serde(default)]
    pub stop_tol: f64,
    /// Abort if `L_f β_k > 1` at some `k`.
    #[serde(default)]
    pub require_energy_hypothesis: bool,
    /// Keep every `λ_k` in the trace.
    #[serde(default)]
    pub retain_lambda_history: bool,
    /// Fill the `wall_ms` column. Off by default so traces are reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl IapdaParams {
    pub fn new(rho: f64, sigma: f64, rule: ExtrapolationRule, scaling: ScalingPolicy, max_iter: usize) -> Self {
        Self {
            rho,
            sigma,
            rule,
            scaling,
            inner: InnerSolverConfig::default(),
            max_iter,
            stop_tol: 0.0,
            require_energy_hypothesis: false,
            retain_lambda_history: false,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::Config(format!("stop_tol must be >= 0, got {}", self.stop_tol)));
        }
        self.rule.validate()?;
        self.scaling.validate()?;
        self.inner.validate()
    }
}

/// Iterate pair and schedule values at iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IapdaState {
    pub k: usize,
    pub x_prev: DVector<f64>,
    pub x_cur: DVector<f64>,
    pub lam_prev: DVector<f64>,
    pub lam_cur: DVector<f64>,
    pub t_cur: f64,
    pub t_next: f64,
    pub beta_prev: f64,
    pub beta_cur: f64,
    /// `A x_k`
    pub ax_cur: DVector<f64>,
}

impl IapdaState {
    /// State at `k = 1` with `x_0 = x_1` and `λ_0 = λ_1`.
    pub fn initial(
        problem: &CompositeProblem,
        schedule: &Schedule,
        x1: DVector<f64>,
        lam1: DVector<f64>,
    ) -> Result<Self> {
        check_dim("initial primal point", problem.dim_primal(), x1.len())?;
        check_dim("initial dual point", problem.dim_dual(), lam1.len())?;
        let ax_cur = problem.apply(&x1);
        Ok(Self {
            k: schedule.k(),
            x_prev: x1.clone(),
            x_cur: x1,
            lam_prev: lam1.clone(),
            lam_cur: lam1,
            t_cur: schedule.t_cur(),
            t_next: schedule.t_next(),
            beta_prev: schedule.beta_prev(),
            beta_cur: schedule.beta_cur(),
            ax_cur,
        })
    }

    /// `u_k = x_k + (t_k − 1)(x_k − x_{k−1})`
    pub fn u(&self) -> DVector<f64> {
        &self.x_cur + (&self.x_cur - &self.x_prev) * (self.t_cur - 1.0)
    }

    /// `v_k = t_k λ_k − (t_k − 1) λ_{k−1}`
    pub fn v(&self) -> DVector<f64> {
        &self.lam_cur * self.t_cur - &self.lam_prev * (self.t_cur - 1.0)
    }
}

/// Quantities assembled before the primal step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationScratch {
    pub x_bar: DVector<f64>,
    pub grad_bar: DVector<f64>,
    pub s_next: f64,
    pub zeta_next: f64,
    pub phi_next: DVector<f64>,
    pub mu: DVector<f64>,
    pub xi_next: DVector<f64>,
    pub target_c: DVector<f64>,
}

/// Output of the dual step.
#[derive(Debug, Clone, PartialEq)]
pub struct DualUpdate {
    pub u_next: DVector<f64>,
    pub lam_next: DVector<f64>,
    pub v_next: DVector<f64>,
    pub ax_next: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub total: f64,
}

pub fn assemble_iteration(state: &IapdaState, params: &IapdaParams, problem: &CompositeProblem) -> IterationScratch {
    let (tk, tk1) = (state.t_cur, state.t_next);
    let momentum = (tk - 1.0) / tk1;
    let x_bar = &state.x_cur + (&state.x_cur - &state.x_prev) * momentum;
    let grad_bar = problem.smooth().gradient(&x_bar);
    let s_next = params.sigma * state.beta_cur * tk1 * tk1;
    let zeta_next = s_next + params.rho;
    let b = problem.rhs();
    let phi_next = (&state.ax_cur * (tk1 - 1.0) + b) / tk1;
    let mu = &state.lam_cur + (&state.lam_cur - &state.lam_prev) * momentum;
    let xi_next = &mu * tk1 - &state.lam_cur * (tk1 - 1.0);
    let target_c = (&phi_next * s_next + b * params.rho - &xi_next) / zeta_next;
    IterationScratch {
        x_bar,
        grad_bar,
        s_next,
        zeta_next,
        phi_next,
        mu,
        xi_next,
        target_c,
    }
}

/// Problem-level data reused across iterations: `‖A‖` and, when a closed form
/// applies, the Gram factorization input.
#[derive(Debug, Clone)]
pub struct SubproblemCache {
    pub opnorm: f64,
    pub gram: Option<ShiftedGram>,
}

impl SubproblemCache {
    pub fn new(problem: &CompositeProblem, inner: &InnerSolverConfig) -> Self {
        let a = problem.operator();
        let opnorm = estimate_opnorm(a, inner.opnorm_iters, inner.opnorm_tol, 0x5eed);
        let closed_form = problem.nonsmooth().quadratic_weight().is_some() && inner.method != InnerMethod::Fista;
        let gram = closed_form.then(|| ShiftedGram::new(a));
        Self { opnorm, gram }
    }
}

/// Primal subproblem. Returns the inner solution and, for the Newton path, the subproblem's dual variable.
pub fn solve_primal_subproblem(
    scratch: &IterationScratch,
    state: &IapdaState,
    params: &IapdaParams,
    problem: &CompositeProblem,
    cache: &SubproblemCache,
    dual_warm: Option<&DVector<f64>>,
) -> Result<(InnerSolution, Option<DVector<f64>>)> {
    let sub = QuadraticCompositeSubproblem {
        anchor: scratch.x_bar.clone(),
        grad_at_anchor: scratch.grad_bar.clone(),
        beta: state.beta_cur,
        zeta: scratch.zeta_next,
        target_c: scratch.target_c.clone(),
        a: problem.operator(),
        g: problem.nonsmooth(),
        opnorm: cache.opnorm,
    };
    if let Some(gram) = &cache.gram {
        if let Some(x) = sub.solve_closed_form(gram)? {
            return Ok((
                InnerSolution {
                    x,
                    iters: 1,
                    converged: true,
                },
                None,
            ));
        }
    }
    match params.inner.method {
        InnerMethod::Newton => {
            let (sol, y) = newton_solve(&sub, dual_warm, &params.inner)?;
            Ok((sol, Some(y)))
        }
        InnerMethod::Auto | InnerMethod::Fista => Ok((fista_solve(&sub, &state.x_cur, &params.inner)?, None)),
    }
}

/// Multiplier, `u` and `v` updates.
pub fn dual_update(
    scratch: &IterationScratch,
    x_next: &DVector<f64>,
    state: &IapdaState,
    params: &IapdaParams,
    problem: &CompositeProblem,
) -> DualUpdate {
    let tk1 = state.t_next;
    let u_next = x_next + (x_next - &state.x_cur) * (tk1 - 1.0);
    let ax_next = problem.apply(x_next);
    let au = &ax_next + (&ax_next - &state.ax_cur) * (tk1 - 1.0);
    let step = (au - problem.rhs()) * (params.sigma * state.beta_cur);
    let lam_next = &scratch.mu + &step;
    // s(Ax_{k+1} − φ) = t_{k+1}σβ_k(Au − b); the left form loses eps·s·‖Ax‖ to cancellation
    let v_next = &scratch.xi_next + step * tk1;
    DualUpdate {
        u_next,
        lam_next,
        v_next,
        ax_next,
    }
}

/// `E(k)` and its three parts at `state`.
pub fn energy(
    state: &IapdaState,
    saddle: &SaddlePointCertificate,
    params: &IapdaParams,
    problem: &CompositeProblem,
) -> Result<EnergyBreakdown> {
    let gap = problem.aug_lagrangian(params.rho, &state.x_cur, &saddle.lambda_star)?
        - problem.aug_lagrangian(params.rho, &saddle.x_star, &saddle.lambda_star)?;
    let e0 = state.t_next * (state.t_next - 1.0) * state.beta_cur * gap;
    let e1 = 0.5 * (state.u() - &saddle.x_star).norm_squared();
    let e2 = if problem.dim_dual() == 0 {
        0.0
    } else {
        (state.v() - &saddle.lambda_star).norm_squared() / (2.0 * params.sigma)
    };
    Ok(EnergyBreakdown {
        e0,
        e1,
        e2,
        total: e0 + e1 + e2,
    })
}

/// Everything an observer can inspect after one iteration.
#[derive(Debug)]
pub struct IterationEvent<'a> {
    pub state: &'a IapdaState,
    pub scratch: &'a IterationScratch,
    pub inner: &'a InnerSolution,
    pub update: &'a DualUpdate,
}

pub struct IapdaSolver<'p> {
    problem: &'p CompositeProblem,
    params: IapdaParams,
    cache: SubproblemCache,
}

impl<'p> IapdaSolver<'p> {
    pub fn new(problem: &'p CompositeProblem, params: IapdaParams) -> Result<Self> {
        params.validate()?;
        let cache = SubproblemCache::new(problem, &params.inner);
        Ok(Self { problem, params, cache })
    }

    pub fn params(&self) -> &IapdaParams {
        &self.params
    }

    /// Runs from `x_0 = x_1 = 0`, `λ_0 = λ_1 = 0`.
    pub fn run_from_zero(&self, saddle: Option<&SaddlePointCertificate>) -> Result<MetricsTrace> {
        let x1 = DVector::zeros(self.problem.dim_primal());
        let lam1 = DVector::zeros(self.problem.dim_dual());
        self.run(x1, lam1, saddle, &mut |_| {})
    }

    fn check_hypothesis(&self, state: &IapdaState) -> Result<()> {
        let lf = self.problem.lipschitz_f();
        if self.params.require_energy_hypothesis && lf * state.beta_cur > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "L_f * beta_k = {} exceeds 1 at k = {}",
                lf * state.beta_cur,
                state.k
            )));
        }
        Ok(())
    }

    fn make_row(
        &self,
        state: &IapdaState,
        saddle: Option<&SaddlePointCertificate>,
        started: Instant,
    ) -> Result<TraceRow> {
        let problem = self.problem;
        let mut row = TraceRow::empty(state.k);
        row.t_k = state.t_cur;
        row.t_next = state.t_next;
        row.beta_k = state.beta_cur;
        row.beta_prev = state.beta_prev;
        row.objective = problem.objective(&state.x_cur);
        row.feas_violation = norm(&(&state.ax_cur - problem.rhs()));
        row.kkt = problem
            .kkt_residual(&state.x_cur, &state.lam_cur, problem.default_probe_step())?
            .max();
        row.dual_jump = norm(&((&state.lam_cur - &state.lam_prev) * state.t_cur));
        row.lambda_norm = norm(&state.lam_cur);
        row.step_norm = (&state.x_cur - &state.x_prev).norm();
        if let Some(saddle) = saddle {
            row.obj_residual = (row.objective - saddle.opt_value).abs();
            let e = energy(state, saddle, &self.params, problem)?;
            row.pd_gap = problem.aug_lagrangian(self.params.rho, &state.x_cur, &saddle.lambda_star)?
                - problem.aug_lagrangian(self.params.rho, &saddle.x_star, &saddle.lambda_star)?;
            row.energy_total = e.total;
            row.energy_e0 = e.e0;
            row.energy_e1 = e.e1;
            row.energy_e2 = e.e2;
        }
        if self.params.record_wall_time {
            row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        Ok(row)
    }

    /// Runs from `x_0 = x_1`, `λ_0 = λ_1`. Row `k` of the trace describes `x_k`;
    /// `max_iter` iterations produce rows `1..=max_iter + 1`.
    pub fn run(
        &self,
        x1: DVector<f64>,
        lam1: DVector<f64>,
        saddle: Option<&SaddlePointCertificate>,
        observer: &mut dyn FnMut(&IterationEvent<'_>),
    ) -> Result<MetricsTrace> {
        let started = Instant::now();
        let problem = self.problem;
        let params = &self.params;
        if let Some(s) = saddle {
            check_dim("saddle primal", problem.dim_primal(), s.x_star.len())?;
            check_dim("saddle dual", problem.dim_dual(), s.lambda_star.len())?;
        }
        let mut schedule = Schedule::new(params.rule, params.scaling)?;
        let mut state = IapdaState::initial(problem, &schedule, x1, lam1)?;
        self.check_hypothesis(&state)?;

        let mut trace = MetricsTrace::new("iapda");
        trace.bound_inputs = Some(BoundInputs {
            rho: params.rho,
            sigma: params.sigma,
            beta0: params.scaling.beta0,
            t1: state.t_cur,
            feas1: norm(&(&state.ax_cur - problem.rhs())),
            lambda_jump1: norm(&(&state.lam_cur - &state.lam_prev)),
            lambda0_norm: norm(&state.lam_prev),
        });
        if params.retain_lambda_history {
            trace.lambda_history = Some(vec![state.lam_prev.clone(), state.lam_cur.clone()]);
        }
        let first = self.make_row(&state, saddle, started)?;
        let mut stop = params.stop_tol > 0.0 && first.kkt <= params.stop_tol;
        trace.rows.push(first);

        let mut dual_warm: Option<DVector<f64>> = None;
        let mut unconverged = 0usize;
        let mut iterations = 0usize;
        while iterations < params.max_iter && !stop {
            let scratch = assemble_iteration(&state, params, problem);
            let (inner, y) =
                solve_primal_subproblem(&scratch, &state, params, problem, &self.cache, dual_warm.as_ref())?;
            dual_warm = y;
            if !inner.converged {
                unconverged += 1;
            }
            if !inner.x.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite primal iterate at k = {}",
                    state.k + 1
                )));
            }
            let update = dual_update(&scratch, &inner.x, &state, params, problem);
            observer(&IterationEvent {
                state: &state,
                scratch: &scratch,
                inner: &inner,
                update: &update,
            });
            let expected_v = &update.lam_next * state.t_next - &state.lam_cur * (state.t_next - 1.0);
            let v_err = norm(&(&update.v_next - expected_v)) / norm(&update.v_next).max(1.0);

            schedule.advance()?;
            let DualUpdate { lam_next, ax_next, .. } = update;
            state.x_prev = std::mem::replace(&mut state.x_cur, inner.x);
            state.lam_prev = std::mem::replace(&mut state.lam_cur, lam_next);
            state.ax_cur = ax_next;
            state.k = schedule.k();
            state.t_cur = schedule.t_cur();
            state.t_next = schedule.t_next();
            state.beta_prev = schedule.beta_prev();
            state.beta_cur = schedule.beta_cur();
            self.check_hypothesis(&state)?;
            if let Some(history) = trace.lambda_history.as_mut() {
                history.push(state.lam_cur.clone());
            }

            let mut row = self.make_row(&state, saddle, started)?;
            row.inner_iters = inner.iters;
            row.inner_converged = inner.converged;
            row.v_identity_err = v_err;
            stop = params.stop_tol > 0.0 && row.kkt <= params.stop_tol;
            trace.rows.push(row);
            iterations += 1;
        }
        debug!("iapda finished after {iterations} iterations");
        if unconverged > 0 {
            let msg = format!("inner solver hit its budget in {unconverged} of {iterations} iterations");
            warn!("{msg}");
            trace.warnings.push(msg);
        }
        Ok(trace)
    }
}

/// One bound that failed at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub bound: BoundKind,
    pub k: usize,
    pub value: f64,
    pub bound_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    Gap,
    Feasibility,
    ObjectiveResidual,
    /// `a_k ∈ [0, 1)`
    ScheduleRatio,
}

/// Explicit non-asymptotic bounds checked along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `E(1)`
    pub energy1: f64,
    /// The constant `C` of the feasibility bound.
    pub c_const: f64,
    pub min_a_k: f64,
    pub max_a_k: f64,
    /// Smallest `(bound − value)/max(1, bound)` seen per bound: gap, feasibility, objective.
    pub min_relative_slack: [f64; 3],
    pub violations: Vec<BoundViolation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative tolerance of [`bound_certificates`].
pub const BOUND_TOL: f64 = 1e-8;

/// Checks, for every row `k` of an iapda trace,
///
/// ```text
///   𝓛_ρ(x_k, λ*) − 𝓛_ρ*     ≤ E(1) / (t_{k+1}(t_{k+1} − 1) β_k)
///   ‖Ax_k − b‖               ≤ (β_0 t_1² ‖Ax_1 − b‖ + 2C) / (β_k t_{k+1}(t_{k+1} − 1))
///   |F(x_k) − F*|            ≤ gap bound + ‖λ*‖ · feasibility bound
///   a_k = 1 − t_{k+1}(t_{k+1} − 1) β_k / (t_k² β_{k−1}) ∈ [0, 1)
/// ```
///
/// `C = ‖m_1‖ + (1/σ) max ‖t_{k+1}(λ_{k+1} − λ_k)‖ + (1/σ) t_1 ‖λ_1 − λ_0‖ + (1/σ) max ‖λ_k‖ + (1/σ) ‖λ_0‖`
/// with `m_1 = t_1² β_0 (Ax_1 − b)`; the maxima run over the trace.
pub fn bound_certificates(trace: &MetricsTrace, saddle: &SaddlePointCertificate) -> Result<BoundReport> {
    let inputs = trace
        .bound_inputs
        .ok_or_else(|| Error::Config("trace carries no bound inputs (not an iapda run?)".into()))?;
    let first = trace.rows.first().ok_or_else(|| Error::Config("empty trace".into()))?;
    let energy1 = first.energy_total;
    if !energy1.is_finite() {
        return Err(Error::Config(
            "trace has no energy column; run with a saddle certificate".into(),
        ));
    }
    let sigma = inputs.sigma;

    let (max_jump, max_lambda) = match &trace.lambda_history {
        Some(history) => {
            let mut max_jump = 0.0_f64;
            for (row, pair) in trace.rows.iter().zip(history.windows(2)).skip(1) {
                max_jump = max_jump.max(norm(&((&pair[1] - &pair[0]) * row.t_k)));
            }
            let max_lambda = history.iter().skip(1).map(norm).fold(0.0, f64::max);
            (max_jump, max_lambda)
        }
        None => (
            trace.rows.iter().skip(1).map(|r| r.dual_jump).fold(0.0, f64::max),
            trace.rows.iter().map(|r| r.lambda_norm).fold(0.0, f64::max),
        ),
    };
    let m1 = inputs.t1 * inputs.t1 * inputs.beta0 * inputs.feas1;
    let c_const = m1
        + max_jump / sigma
        + inputs.t1 * inputs.lambda_jump1 / sigma
        + max_lambda / sigma
        + inputs.lambda0_norm / sigma;
    let lambda_star = norm(&saddle.lambda_star);

    let mut report = BoundReport {
        energy1,
        c_const,
        min_a_k: f64::INFINITY,
        max_a_k: f64::NEG_INFINITY,
        min_relative_slack: [f64::INFINITY; 3],
        violations: Vec::new(),
    };
    for row in &trace.rows {
        let scale = row.t_next * (row.t_next - 1.0) * row.beta_k;
        let gap_bound = energy1 / scale;
        let feas_bound = (inputs.beta0 * inputs.t1 * inputs.t1 * inputs.feas1 + 2.0 * c_const) / scale;
        let obj_bound = gap_bound + lambda_star * feas_bound;
        let checks = [
            (BoundKind::Gap, row.pd_gap, gap_bound),
            (BoundKind::Feasibility, row.feas_violation, feas_bound),
            (BoundKind::ObjectiveResidual, row.obj_residual, obj_bound),
        ];
        for (slot, (kind, value, bound)) in checks.into_iter().enumerate() {
            let slack = (bound - value) / bound.max(1.0);
            report.min_relative_slack[slot] = report.min_relative_slack[slot].min(slack);
            if !(value <= bound + BOUND_TOL * bound.max(1.0)) {
                report.violations.push(BoundViolation {
                    bound: kind,
                    k: row.k,
                    value,
                    bound_value: bound,
                });
            }
        }
        let a_k = 1.0 - row.t_next * (row.t_next - 1.0) * row.beta_k / (row.t_k * row.t_k * row.beta_prev);
        report.min_a_k = report.min_a_k.min(a_k);
        report.max_a_k = report.max_a_k.max(a_k);
        if !(a_k >= -1e-12 && a_k < 1.0) {
            report.violations.push(BoundViolation {
                bound: BoundKind::ScheduleRatio,
                k: row.k,
                value: a_k,
                bound_value: 0.0,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::problem::SmoothTerm;
    use crate::prox::ProxFunction;

    fn scalar_problem() -> CompositeProblem {
        CompositeProblem::new(
            Arc::new(SmoothTerm::SqNorm { mu: 1.0 }),
            ProxFunction::Zero,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap()
    }

    fn scalar_params(max_iter: usize) -> IapdaParams {
        IapdaParams::new(
            1.0,
            1.0,
            ExtrapolationRule::ChambolleDossal { alpha: 3.0 },
            ScalingPolicy::constant(1.0),
            max_iter,
        )
    }

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn scalar_iteration_hand_values() {
        let problem = scalar_problem();
        let params = scalar_params(1);
        let schedule = Schedule::new(params.rule, params.scaling).unwrap();
        let state = IapdaState::initial(&problem, &schedule, one(1.0), one(0.0)).unwrap();
        assert_eq!((state.t_cur, state.t_next), (1.0, 1.5));
        let scratch = assemble_iteration(&state, &params, &problem);
        assert_eq!(scratch.s_next, 2.25);
        assert_eq!(scratch.zeta_next, 3.25);
        assert!((scratch.phi_next[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(scratch.mu[0], 0.0);
        assert_eq!(scratch.xi_next[0], 0.0);
        assert!((scratch.target_c[0] - 3.0 / 13.0).abs() < 1e-15);

        let cache = SubproblemCache::new(&problem, &params.inner);
        let (sol, _) = solve_primal_subproblem(&scratch, &state, &params, &problem, &cache, None).unwrap();
        assert!((sol.x[0] - 3.0 / 17.0).abs() < 1e-15);
        let upd = dual_update(&scratch, &sol.x, &state, &params, &problem);
        assert!((upd.u_next[0] + 4.0 / 17.0).abs() < 1e-15);
        assert!((upd.lam_next[0] + 4.0 / 17.0).abs() < 1e-15);
        assert!((upd.v_next[0] + 6.0 / 17.0).abs() < 1e-15);

        let saddle = SaddlePointCertificate::new(&problem, one(0.0), one(0.0)).unwrap();
        let e = energy(&state, &saddle, &params, &problem).unwrap();
        assert!((e.total - 1.25).abs() < 1e-15);
        assert!((e.e0 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_keep_only_the_initial_row() {
        let problem = scalar_problem();
        let solver = IapdaSolver::new(&problem, scalar_params(0)).unwrap();
        let trace = solver.run(one(1.0), one(0.0), None, &mut |_| {}).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].k, 1);
        assert!(trace.rows[0].energy_total.is_nan());
    }

    #[test]
    fn bad_params_are_rejected() {
        let problem = scalar_problem();
        let mut params = scalar_params(3);
        params.rho = 0.0;
        assert!(IapdaSolver::new(&problem, params).is_err());
        let mut params = scalar_params(3);
        params.sigma = -1.0;
        assert!(IapdaSolver::new(&problem, params).is_err());
        let mut params = scalar_params(3);
        params.scaling = ScalingPolicy::constant(2.0);
        params.require_energy_hypothesis = true;
        let solver = IapdaSolver::new(&problem, params).unwrap();
        assert!(solver.run_from_zero(None).is_err());
    }

    #[test]
    fn stop_tolerance_ends_early_at_a_saddle() {
        let problem = scalar_problem();
        let mut params = scalar_params(50);
        params.stop_tol = 1e-12;
        let solver = IapdaSolver::new(&problem, params).unwrap();
        let trace = solver.run_from_zero(None).unwrap();
        assert_eq!(trace.rows.len(), 1);
    }

    #[test]
    fn fista_and_closed_form_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, m) = (8, 4);
        let basis = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hessian = basis.transpose() * &basis / n as f64 + DMatrix::identity(n, n) * 0.1;
        let f = SmoothTerm::quadratic(hessian, DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let problem = CompositeProblem::new(Arc::new(f), ProxFunction::Zero, a, b).unwrap();
        let mut params = IapdaParams::new(0.5, 1.0, ExtrapolationRule::Nesterov, ScalingPolicy::constant(0.3), 5);
        let exact = IapdaSolver::new(&problem, params).unwrap().run_from_zero(None).unwrap();
        params.inner = InnerSolverConfig {
            subtol: 1e-13,
            max_inner: 1_000_000,
            method: InnerMethod::Fista,
            ..InnerSolverConfig::default()
        };
        let fista = IapdaSolver::new(&problem, params).unwrap().run_from_zero(None).unwrap();
        for (r1, r2) in exact.rows.iter().zip(&fista.rows) {
            assert!((r1.objective - r2.objective).abs() <= 1e-6 * r1.objective.abs().max(1.0));
        }
    }

    #[test]
    fn bound_report_needs_energy() {
        let problem = scalar_problem();
        let solver = IapdaSolver::new(&problem, scalar_params(3)).unwrap();
        let trace = solver.run(one(1.0), one(0.0), None, &mut |_| {}).unwrap();
        let saddle = SaddlePointCertificate::new(&problem, one(0.0), one(0.0)).unwrap();
        assert!(bound_certificates(&trace, &saddle).is_err());
        let trace = solver.run(one(1.0), one(0.0), Some(&saddle), &mut |_| {}).unwrap();
        let report = bound_certificates(&trace, &saddle).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.c_const >= 1.0);
        assert_eq!(report.energy1, 1.25);
    }
}
