//! Second-order primal-dual dynamics with vanishing damping and time scaling,
//! with `g` replaced by its Moreau envelope `g_γ`:
//!
//! ```text
//!   ẍ = −(α/t) ẋ − β(t) [∇f(x) + ∇g_γ(x) + Aᵀ(λ + t/(α−1) λ̇) + ρ Aᵀ(Ax − b)]
//!   λ̈ = −(α/t) λ̇ + β(t) [A(x + t/(α−1) ẋ) − b]
//! ```
//!
//! integrated by fixed-step classical Runge–Kutta, together with the energy
//!
//! ```text
//!   𝓔_γ(t) = t²β(t)/(α−1)² (𝓛_ρ^γ(x, λ*) − 𝓛_ρ^γ(x*, λ*))
//!          + ½‖x − x* + t/(α−1) ẋ‖² + ½‖λ − λ* + t/(α−1) λ̇‖².
//! ```

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::norm;
use crate::problem::{CompositeProblem, SaddlePointCertificate};
use crate::prox::{moreau_grad, moreau_value, MoreauParams, ProxFunction};
use crate::schedule::TimeScaling;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub alpha: f64,
    /// `ρ ≥ 0`; the rate statements need `ρ > 0`.
    pub rho: f64,
    pub scaling: TimeScaling,
    #[serde(default)]
    pub gamma: MoreauParams,
    pub t0: f64,
    pub t_end: f64,
    pub step_h: f64,
    /// Record every `record_stride` steps (the final time is always recorded).
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Split RK4 steps where a coordinate crosses a kink of `∇g_γ`; records stay on the fixed grid.
    #[serde(default = "default_true")]
    pub resolve_kinks: bool,
}

fn default_stride() -> usize {
    1
}

fn default_true() -> bool {
    true
}

const MAX_KINK_SPLITS: usize = 16;

/// Earliest (by linear interpolation) crossing of a kink by a primal coordinate between `y0` and `y1`.
fn first_crossing(y0: &DVector<f64>, y1: &DVector<f64>, n: usize, kinks: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n {
        for &k in kinks {
            let (a, b) = (y0[i] - k, y1[i] - k);
            if a * b < 0.0 {
                let frac = a / (a - b);
                if best.is_none_or(|(f, _, _)| frac < f) {
                    best = Some((frac, i, k));
                }
            }
        }
    }
    best.map(|(_, i, k)| (i, k))
}

/// RK4 over `[t, t + h]`, split wherever a primal coordinate crosses one of `kinks`, so that
/// every sub-step integrates a smooth vector field. Crossing times are located by bisection.
fn kink_resolved_step<F>(rhs: &mut F, t: f64, y: &DVector<f64>, h: f64, n: usize, kinks: &[f64]) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let (mut t_cur, mut y_cur, mut left) = (t, y.clone(), h);
    for _ in 0..MAX_KINK_SPLITS {
        let y_full = rk4_step(rhs, t_cur, &y_cur, left);
        let Some((i, k)) = first_crossing(&y_cur, &y_full, n, kinks) else {
            return y_full;
        };
        let side = y_cur[i] - k;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (rk4_step(rhs, t_cur, &y_cur, mid * left)[i] - k) * side > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let dt = hi * left;
        y_cur = rk4_step(rhs, t_cur, &y_cur, dt);
        t_cur += dt;
        left -= dt;
        if left <= 1e-14 * h {
            return y_cur;
        }
    }
    rk4_step(rhs, t_cur, &y_cur, left)
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 3.0) {
            return Err(Error::Config(format!("alpha must be >= 3, got {}", self.alpha)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        self.scaling.validate(self.alpha)?;
        MoreauParams::new(self.gamma.gamma)?;
        if !(self.t0 > 0.0 && self.t_end > self.t0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < t0 < t_end, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(self.step_h > 0.0 && self.step_h <= self.t_end - self.t0) {
            return Err(Error::Config(format!(
                "step must lie in (0, t_end - t0], got {}",
                self.step_h
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    fn extrapolation(&self, t: f64) -> f64 {
        t / (self.alpha - 1.0)
    }
}

/// Position and velocity of both variables at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeState {
    pub t: f64,
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
    pub lam: DVector<f64>,
    pub lamdot: DVector<f64>,
}

impl OdeState {
    /// Zero velocities at `t0`.
    pub fn at_rest(t0: f64, x: DVector<f64>, lam: DVector<f64>) -> Self {
        let (n, m) = (x.len(), lam.len());
        Self {
            t: t0,
            x,
            xdot: DVector::zeros(n),
            lam,
            lamdot: DVector::zeros(m),
        }
    }

    fn pack(&self) -> DVector<f64> {
        let (n, m) = (self.x.len(), self.lam.len());
        let mut y = DVector::zeros(2 * n + 2 * m);
        y.rows_mut(0, n).copy_from(&self.x);
        y.rows_mut(n, n).copy_from(&self.xdot);
        y.rows_mut(2 * n, m).copy_from(&self.lam);
        y.rows_mut(2 * n + m, m).copy_from(&self.lamdot);
        y
    }

    fn unpack(t: f64, y: &DVector<f64>, n: usize, m: usize) -> Self {
        Self {
            t,
            x: y.rows(0, n).into_owned(),
            xdot: y.rows(n, n).into_owned(),
            lam: y.rows(2 * n, m).into_owned(),
            lamdot: y.rows(2 * n + m, m).into_owned(),
        }
    }

    fn is_finite(&self) -> bool {
        [&self.x, &self.xdot, &self.lam, &self.lamdot]
            .iter()
            .all(|v| v.iter().all(|e| e.is_finite()))
    }
}

fn smoothed_grad(g: &ProxFunction, gamma: MoreauParams, x: &DVector<f64>) -> Option<DVector<f64>> {
    match g {
        ProxFunction::Zero => None,
        _ => Some(moreau_grad(g, gamma, x)),
    }
}

fn smoothed_value(g: &ProxFunction, gamma: MoreauParams, x: &DVector<f64>) -> f64 {
    match g {
        ProxFunction::Zero => 0.0,
        _ => moreau_value(g, gamma, x),
    }
}

/// Accelerations `(ẍ, λ̈)`.
pub fn ode_rhs(state: &OdeState, config: &OdeConfig, problem: &CompositeProblem) -> (DVector<f64>, DVector<f64>) {
    let t = state.t;
    let beta = config.scaling.value(t);
    let damping = config.alpha / t;
    let ext = config.extrapolation(t);
    let a = problem.operator();

    let mut force = problem.smooth().gradient(&state.x);
    if let Some(grad) = smoothed_grad(problem.nonsmooth(), config.gamma, &state.x) {
        force += grad;
    }
    let residual = problem.residual(&state.x);
    if problem.dim_dual() > 0 {
        let dual = &state.lam + &state.lamdot * ext + &residual * config.rho;
        force.gemv_tr(1.0, a, &dual, 1.0);
    }
    let xddot = -&state.xdot * damping - force * beta;

    let predicted = &residual + a * &state.xdot * ext;
    let lamddot = -&state.lamdot * damping + predicted * beta;
    (xddot, lamddot)
}

/// One classical fourth-order Runge–Kutta step of `y' = rhs(t, y)`.
pub fn rk4_step<F>(rhs: &mut F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `𝓛_ρ^γ(x, λ*) − 𝓛_ρ^γ(x*, λ*)` with the smoothed `g`.
pub fn smoothed_gap(
    x: &DVector<f64>,
    rho: f64,
    gamma: MoreauParams,
    problem: &CompositeProblem,
    saddle: &SaddlePointCertificate,
) -> f64 {
    let value = |p: &DVector<f64>| {
        let r = problem.residual(p);
        problem.smooth().value(p)
            + smoothed_value(problem.nonsmooth(), gamma, p)
            + saddle.lambda_star.dot(&r)
            + 0.5 * rho * r.norm_squared()
    };
    value(x) - value(&saddle.x_star)
}

/// `𝓔_γ(t)` at a state.
pub fn continuous_energy(
    state: &OdeState,
    config: &OdeConfig,
    problem: &CompositeProblem,
    saddle: &SaddlePointCertificate,
) -> f64 {
    let t = state.t;
    let ext = config.extrapolation(t);
    let gap = smoothed_gap(&state.x, config.rho, config.gamma, problem, saddle);
    let scale = t * t * config.scaling.value(t) / ((config.alpha - 1.0) * (config.alpha - 1.0));
    let primal = &state.x - &saddle.x_star + &state.xdot * ext;
    let dual = &state.lam - &saddle.lambda_star + &state.lamdot * ext;
    scale * gap + 0.5 * primal.norm_squared() + 0.5 * norm(&dual).powi(2)
}

/// One recorded point of a trajectory. Saddle-dependent fields are `NaN` without a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub state: OdeState,
    pub energy: f64,
    /// Smoothed gap.
    pub gap: f64,
    pub feas: f64,
    /// `|(f + g_γ)(x) − (f + g_γ)(x*)|`
    pub obj_residual_smoothed: f64,
    /// `|(f + g)(x) − (f + g)(x*)|`
    pub obj_residual: f64,
}

impl TrajectoryRecord {
    pub fn t(&self) -> f64 {
        self.state.t
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// Set when integration stopped at a non-finite state.
    pub aborted: Option<String>,
}

fn record(
    state: OdeState,
    config: &OdeConfig,
    problem: &CompositeProblem,
    saddle: Option<&SaddlePointCertificate>,
) -> TrajectoryRecord {
    let feas = problem.feasibility(&state.x);
    let (energy, gap, smoothed, plain) = match saddle {
        Some(s) => {
            let smooth_obj =
                |p: &DVector<f64>| problem.smooth().value(p) + smoothed_value(problem.nonsmooth(), config.gamma, p);
            (
                continuous_energy(&state, config, problem, s),
                smoothed_gap(&state.x, config.rho, config.gamma, problem, s),
                (smooth_obj(&state.x) - smooth_obj(&s.x_star)).abs(),
                (problem.objective(&state.x) - s.opt_value).abs(),
            )
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    TrajectoryRecord {
        state,
        energy,
        gap,
        feas,
        obj_residual_smoothed: smoothed,
        obj_residual: plain,
    }
}

/// Integrates from `initial` (at `config.t0`) to `config.t_end`.
pub fn integrate(
    config: &OdeConfig,
    problem: &CompositeProblem,
    initial: OdeState,
    saddle: Option<&SaddlePointCertificate>,
) -> Result<Trajectory> {
    config.validate()?;
    let (n, m) = (problem.dim_primal(), problem.dim_dual());
    check_dim("initial x", n, initial.x.len())?;
    check_dim("initial x velocity", n, initial.xdot.len())?;
    check_dim("initial lambda", m, initial.lam.len())?;
    check_dim("initial lambda velocity", m, initial.lamdot.len())?;

    let steps = ((config.t_end - config.t0) / config.step_h).round().max(1.0) as usize;
    let h = (config.t_end - config.t0) / steps as f64;
    let kinks = if config.resolve_kinks {
        problem.nonsmooth().moreau_kinks(config.gamma.gamma)
    } else {
        Vec::new()
    };
    let mut rhs = |t: f64, y: &DVector<f64>| -> DVector<f64> {
        let s = OdeState::unpack(t, y, n, m);
        let (xdd, ldd) = ode_rhs(&s, config, problem);
        let deriv = OdeState {
            t,
            x: s.xdot,
            xdot: xdd,
            lam: s.lamdot,
            lamdot: ldd,
        };
        deriv.pack()
    };

    let mut trajectory = Trajectory::default();
    let mut state = OdeState {
        t: config.t0,
        ..initial
    };
    let mut y = state.pack();
    trajectory.records.push(record(state.clone(), config, problem, saddle));
    for j in 0..steps {
        let t = config.t0 + j as f64 * h;
        let y_next = if kinks.is_empty() {
            rk4_step(&mut rhs, t, &y, h)
        } else {
            kink_resolved_step(&mut rhs, t, &y, h, n, &kinks)
        };
        let next = OdeState::unpack(config.t0 + (j + 1) as f64 * h, &y_next, n, m);
        if !next.is_finite() {
            trajectory.aborted = Some(format!("non-finite state at t = {}", next.t));
            if trajectory.records.last().map(|r| r.t()) != Some(state.t) {
                trajectory.records.push(record(state, config, problem, saddle));
            }
            return Ok(trajectory);
        }
        y = y_next;
        state = next;
        if (j + 1) % config.record_stride == 0 || j + 1 == steps {
            trajectory.records.push(record(state.clone(), config, problem, saddle));
        }
    }
    Ok(trajectory)
}

/// Largest `𝓔(t_{j+1}) − 𝓔(t_j) − tol_rate · (t_{j+1} − t_j)` over consecutive records;
/// non-positive means the energy never rose faster than `tol_rate`.
pub fn energy_excess(records: &[TrajectoryRecord], tol_rate: f64) -> f64 {
    records
        .windows(2)
        .map(|w| w[1].energy - w[0].energy - tol_rate * (w[1].t() - w[0].t()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sup_t t² β(t) gap(t)`.
pub fn scaled_gap_sup(records: &[TrajectoryRecord], config: &OdeConfig) -> f64 {
    records
        .iter()
        .map(|r| r.t() * r.t() * config.scaling.value(r.t()) * r.gap)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Trapezoidal mass of `t β(t) ‖Ax(t) − b‖²` over `[T, 2T]` divided by the mass over
/// `[t0, T]`, with `T = t_end / 2`.
pub fn feasibility_mass_ratio(records: &[TrajectoryRecord], config: &OdeConfig) -> f64 {
    let split = config.t_end / 2.0;
    let density = |r: &TrajectoryRecord| r.t() * config.scaling.value(r.t()) * r.feas * r.feas;
    let (mut early, mut late) = (0.0, 0.0);
    for w in records.windows(2) {
        let piece = 0.5 * (density(&w[0]) + density(&w[1])) * (w[1].t() - w[0].t());
        if w[1].t() <= split + 1e-12 {
            early += piece;
        } else {
            late += piece;
        }
    }
    late / early
}

/// `t,gap,feas,energy`
pub fn write_trajectory_csv<W: Write>(records: &[TrajectoryRecord], mut out: W) -> Result<()> {
    writeln!(out, "t,gap,feas,energy")?;
    let fmt = |v: f64| if v.is_nan() { "NaN".to_string() } else { format!("{v}") };
    for r in records {
        writeln!(out, "{},{},{},{}", fmt(r.t()), fmt(r.gap), fmt(r.feas), fmt(r.energy))?;
    }
    Ok(())
}
