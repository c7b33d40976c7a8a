//! Accelerated proximal-gradient machinery: the primal subproblem solvers,
//! the FISTA and inertial forward-backward baselines, and power iteration.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{convex_line_search, norm, ShiftedGram};
use crate::problem::CompositeProblem;
use crate::prox::ProxFunction;
use crate::trace::{MetricsTrace, TraceRow};

/// How the primal subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Closed form when `g` is quadratic, FISTA otherwise.
    #[default]
    Auto,
    /// FISTA even when a closed form exists.
    Fista,
    /// Closed form when `g` is quadratic, semismooth Newton on the dual otherwise.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverConfig {
    /// Relative-change tolerance of the inner iterations.
    pub subtol: f64,
    pub max_inner: usize,
    pub opnorm_iters: usize,
    pub opnorm_tol: f64,
    #[serde(default)]
    pub method: InnerMethod,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            subtol: 1e-8,
            max_inner: 150,
            opnorm_iters: 5000,
            opnorm_tol: 1e-10,
            method: InnerMethod::Auto,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subtol > 0.0) || self.max_inner == 0 || self.opnorm_iters == 0 || !(self.opnorm_tol > 0.0) {
            return Err(Error::Config(format!(
                "inner solver needs subtol > 0, max_inner >= 1, opnorm_iters >= 1, opnorm_tol > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Largest singular value of `a` by power iteration on `AᵀA` from a seeded start.
///
/// Stops when the Rayleigh quotient changes by at most `tol` (relative). The
/// result never exceeds the true norm by more than rounding.
pub fn estimate_opnorm(a: &DMatrix<f64>, iters: usize, tol: f64, seed: u64) -> f64 {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut v_norm = v.norm();
    if v_norm == 0.0 {
        v[0] = 1.0;
        v_norm = 1.0;
    }
    v /= v_norm;
    let mut eig = 0.0;
    for _ in 0..iters.max(1) {
        let av = a * &v;
        let w = a.tr_mul(&av);
        let next = av.norm_squared();
        let w_norm = w.norm();
        if w_norm == 0.0 {
            return next.sqrt();
        }
        v = w / w_norm;
        let converged = (next - eig).abs() <= tol * next;
        eig = next;
        if converged {
            break;
        }
    }
    eig.sqrt()
}

/// Primal subproblem
///
/// ```text
///   min_x  ⟨∇f(x̄), x⟩ + g(x) + ‖x − x̄‖²/(2β) + (ζ/2)‖Ax − c‖²
/// ```
#[derive(Debug, Clone)]
pub struct QuadraticCompositeSubproblem<'a> {
    pub anchor: DVector<f64>,
    pub grad_at_anchor: DVector<f64>,
    pub beta: f64,
    pub zeta: f64,
    pub target_c: DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub g: &'a ProxFunction,
    /// `‖A‖`, typically from [`estimate_opnorm`].
    pub opnorm: f64,
}

/// Result of an inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: DVector<f64>,
    pub iters: usize,
    pub converged: bool,
}

impl<'a> QuadraticCompositeSubproblem<'a> {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.ncols();
        check_dim("subproblem anchor", n, self.anchor.len())?;
        check_dim("subproblem gradient", n, self.grad_at_anchor.len())?;
        check_dim("subproblem target", self.a.nrows(), self.target_c.len())?;
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config(format!(
                "subproblem needs beta > 0 and zeta >= 0 (beta={}, zeta={})",
                self.beta, self.zeta
            )));
        }
        Ok(())
    }

    fn constraint_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a * x - &self.target_c
    }

    /// Smooth part `q(x)`.
    pub fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.anchor;
        self.grad_at_anchor.dot(x)
            + d.norm_squared() / (2.0 * self.beta)
            + 0.5 * self.zeta * self.constraint_residual(x).norm_squared()
    }

    /// `∇q(x) = ∇f(x̄) + (x − x̄)/β + ζ Aᵀ(Ax − c)`.
    pub fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut grad = &self.grad_at_anchor + (x - &self.anchor) / self.beta;
        if self.a.nrows() > 0 {
            let r = self.constraint_residual(x);
            grad.gemv_tr(self.zeta, self.a, &r, 1.0);
        }
        grad
    }

    /// `q(x) + g(x)`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.smooth_value(x) + self.g.value(x)
    }

    /// `L_q = 1/β + ζ ‖A‖² (1 + opnorm_tol)`.
    pub fn lipschitz(&self, opnorm_tol: f64) -> f64 {
        1.0 / self.beta + self.zeta * self.opnorm * self.opnorm * (1.0 + opnorm_tol)
    }

    /// Exact minimizer when `g` is zero or `(μ/2)‖x‖²`, from
    /// `((1/β + μ) I + ζ AᵀA) x = x̄/β − ∇f(x̄) + ζ Aᵀc`.
    pub fn solve_closed_form(&self, gram: &ShiftedGram) -> Result<Option<DVector<f64>>> {
        let Some(mu) = self.g.quadratic_weight() else {
            return Ok(None);
        };
        let mut rhs = &self.anchor / self.beta - &self.grad_at_anchor;
        if self.a.nrows() > 0 {
            rhs.gemv_tr(self.zeta, self.a, &self.target_c, 1.0);
        }
        gram.solve(self.a, 1.0 / self.beta + mu, self.zeta, &rhs).map(Some)
    }

    /// Proximal center `w = x̄ − β∇f(x̄)`; the subproblem is
    /// `g(x) + ‖x − w‖²/(2β) + (ζ/2)‖Ax − c‖²` up to a constant.
    fn prox_center(&self) -> DVector<f64> {
        &self.anchor - &self.grad_at_anchor * self.beta
    }
}

/// Accelerated proximal gradient on the subproblem with step `1/L_q`, stopped by
/// `‖z_k − z_{k−1}‖ / max(‖z_{k−1}‖, 1) ≤ subtol` or after `max_inner` iterations.
pub fn fista_solve(
    sub: &QuadraticCompositeSubproblem<'_>,
    warm_start: &DVector<f64>,
    config: &InnerSolverConfig,
) -> Result<InnerSolution> {
    sub.validate()?;
    config.validate()?;
    check_dim("warm start", sub.anchor.len(), warm_start.len())?;
    let step = 1.0 / sub.lipschitz(config.opnorm_tol);
    let mut z = warm_start.clone();
    let mut y = warm_start.clone();
    let mut t = 1.0_f64;
    for iter in 1..=config.max_inner {
        let grad = sub.smooth_gradient(&y);
        let z_next = sub.g.prox(&(&y - grad * step), step);
        let change = (&z_next - &z).norm() / z.norm().max(1.0);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &z_next + (&z_next - &z) * ((t - 1.0) / t_next);
        z = z_next;
        t = t_next;
        if change <= config.subtol {
            return Ok(InnerSolution {
                x: z,
                iters: iter,
                converged: true,
            });
        }
    }
    // out of budget: fall back to the better of the last iterate and the warm start
    let x = if sub.value(&z) <= sub.value(warm_start) {
        z
    } else {
        warm_start.clone()
    };
    Ok(InnerSolution {
        x,
        iters: config.max_inner,
        converged: false,
    })
}

/// Semismooth Newton on the strongly convex dual of the subproblem,
///
/// ```text
///   Φ(y) = −min_x [ g(x) + ‖x − w‖²/(2β) + ⟨y, Ax − c⟩ ] + ‖y‖²/(2ζ),
/// ```
///
/// whose minimizer gives `x = prox_{βg}(w − βAᵀy)`. Globalized by an exact line search.
/// `dual_start` warm-starts `y`; the final `y` is returned alongside the solution.
pub fn newton_solve(
    sub: &QuadraticCompositeSubproblem<'_>,
    dual_start: Option<&DVector<f64>>,
    config: &InnerSolverConfig,
) -> Result<(InnerSolution, DVector<f64>)> {
    sub.validate()?;
    let (m, n) = sub.a.shape();
    let beta = sub.beta;
    let w = sub.prox_center();
    if m == 0 || sub.zeta == 0.0 {
        let x = sub.g.prox(&w, beta);
        return Ok((
            InnerSolution {
                x,
                iters: 0,
                converged: true,
            },
            DVector::zeros(m),
        ));
    }
    let zeta = sub.zeta;
    let primal = |y: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let mut z = w.clone();
        z.gemv_tr(-beta, sub.a, y, 1.0);
        (sub.g.prox(&z, beta), z)
    };

    let mut y = match dual_start {
        Some(y0) => {
            check_dim("dual warm start", m, y0.len())?;
            y0.clone()
        }
        None => DVector::zeros(m),
    };
    let (mut x, mut z) = primal(&y);
    let tol = config.subtol.min(1e-12);
    let max_iter = config.max_inner.max(50);
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iter {
        let residual = sub.constraint_residual(&x);
        let grad = &y / zeta - &residual;
        let scale = (norm(&residual) + norm(&y) / zeta).max(norm(&sub.target_c)).max(1.0);
        if grad.norm() <= tol * scale {
            converged = true;
            break;
        }
        iters += 1;

        let jac = sub.g.prox_jacobian_diag(&z, beta);
        let active: Vec<usize> = (0..n).filter(|&j| jac[j] > 0.0).collect();
        let mut scaled = DMatrix::zeros(m, active.len());
        for (col, &j) in active.iter().enumerate() {
            let s = (beta * jac[j]).sqrt();
            scaled.set_column(col, &(sub.a.column(j) * s));
        }
        let mut hessian = &scaled * scaled.transpose();
        for i in 0..m {
            hessian[(i, i)] += 1.0 / zeta;
        }
        let direction = match Cholesky::new(hessian) {
            Some(factor) => -factor.solve(&grad),
            None => -&grad * zeta,
        };
        let slope = grad.dot(&direction);
        if !(slope < 0.0) {
            break;
        }

        // exact line search on the convex, piecewise-smooth Φ(y + s·d):
        // Φ' = ⟨y + s·d, d⟩/ζ − ⟨x(s), Aᵀd⟩ + ⟨c, d⟩ with x(s) = prox(z − sβAᵀd)
        let atd = sub.a.tr_mul(&direction);
        let q = &atd * beta;
        let (yd, dd, cd) = (
            y.dot(&direction),
            direction.norm_squared(),
            sub.target_c.dot(&direction),
        );
        let dphi = |s: f64| {
            let x_s = sub.g.prox(&(&z - &q * s), beta);
            (yd + s * dd) / zeta - x_s.dot(&atd) + cd
        };
        let Some(step) = convex_line_search(dphi, slope) else {
            break;
        };
        let y_trial = &y + &direction * step;
        if y_trial == y {
            converged = grad.norm() <= 1e-8 * scale;
            break;
        }
        y = y_trial;
        (x, z) = primal(&y);
    }
    Ok((InnerSolution { x, iters, converged }, y))
}

/// Settings shared by the unconstrained baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub step: f64,
    pub max_iter: usize,
    /// `F*`, when known, to fill the objective-residual column.
    pub opt_value: Option<f64>,
}

fn check_baseline(problem: &CompositeProblem, x0: &DVector<f64>, config: &BaselineConfig) -> Result<()> {
    if problem.dim_dual() != 0 {
        return Err(Error::Config(
            "baselines solve problems without equality constraints (m = 0)".into(),
        ));
    }
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::Config(format!("step must be > 0, got {}", config.step)));
    }
    check_dim("initial point", problem.dim_primal(), x0.len())
}

fn baseline_row(
    problem: &CompositeProblem,
    config: &BaselineConfig,
    k: usize,
    x: &DVector<f64>,
    step_norm: f64,
) -> TraceRow {
    let mut row = TraceRow::empty(k);
    row.objective = problem.objective(x);
    if let Some(opt) = config.opt_value {
        row.obj_residual = (row.objective - opt).abs();
    }
    row.step_norm = step_norm;
    row
}

/// FISTA on `f + g` with constant step `s`. Row `k` holds the iterate after `k` steps.
///
/// `observer` sees every iterate, including the initial one.
pub fn fista_baseline(
    problem: &CompositeProblem,
    x0: &DVector<f64>,
    config: &BaselineConfig,
    observer: &mut dyn FnMut(usize, &DVector<f64>),
) -> Result<MetricsTrace> {
    check_baseline(problem, x0, config)?;
    let s = config.step;
    let g = problem.nonsmooth();
    let mut trace = MetricsTrace::new("fista");
    let mut x = x0.clone();
    let mut y = x0.clone();
    let mut t = 1.0_f64;
    observer(0, &x);
    let mut row = baseline_row(problem, config, 0, &x, f64::NAN);
    row.t_k = t;
    trace.rows.push(row);
    for k in 1..=config.max_iter {
        let grad = problem.smooth().gradient(&y);
        let x_next = g.prox(&(&y - grad * s), s);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        let step_norm = (&x_next - &x).norm();
        x = x_next;
        t = t_next;
        observer(k, &x);
        let mut row = baseline_row(problem, config, k, &x, step_norm);
        row.t_k = t;
        trace.rows.push(row);
    }
    Ok(trace)
}

/// Momentum `(k − 1)/(k + α − 1)` of the inertial forward-backward baseline.
pub fn afbm_momentum(k: usize, alpha: f64) -> f64 {
    let k = k as f64;
    (k - 1.0) / (k + alpha - 1.0)
}

/// Inertial forward-backward: `y = x_k + θ_k (x_k − x_{k−1})`, `x_{k+1} = prox_{sg}(y − s∇f(y))`.
pub fn afbm_baseline(
    problem: &CompositeProblem,
    x0: &DVector<f64>,
    alpha: f64,
    config: &BaselineConfig,
    observer: &mut dyn FnMut(usize, &DVector<f64>),
) -> Result<MetricsTrace> {
    check_baseline(problem, x0, config)?;
    if !(alpha >= 3.0) {
        return Err(Error::Config(format!("AFBM needs alpha >= 3, got {alpha}")));
    }
    let s = config.step;
    let g = problem.nonsmooth();
    let mut trace = MetricsTrace::new("afbm");
    let mut x_prev = x0.clone();
    let mut x = x0.clone();
    observer(0, &x);
    trace.rows.push(baseline_row(problem, config, 0, &x, f64::NAN));
    for k in 1..=config.max_iter {
        let y = &x + (&x - &x_prev) * afbm_momentum(k, alpha);
        let grad = problem.smooth().gradient(&y);
        let x_next = g.prox(&(&y - grad * s), s);
        let step_norm = (&x_next - &x).norm();
        x_prev = std::mem::replace(&mut x, x_next);
        observer(k, &x);
        trace.rows.push(baseline_row(problem, config, k, &x, step_norm));
    }
    Ok(trace)
}
