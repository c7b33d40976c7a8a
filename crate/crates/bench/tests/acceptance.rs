//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness) so
//! that every criterion prints exactly one PASS/FAIL line.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use iapda::composite::{estimate_opnorm, fista_baseline, fista_solve, BaselineConfig, QuadraticCompositeSubproblem};
use iapda::dynamics::{energy_excess, feasibility_mass_ratio, integrate, scaled_gap_sup, OdeConfig, OdeState};
use iapda::linalg::ShiftedGram;
use iapda::schedule::TimeScaling;
use iapda::{
    DMatrix, DVector, ExtrapolationRule, IapdaParams, IapdaSolver, InnerMethod, InnerSolverConfig, MetricsTrace,
    MoreauParams, ProxFunction, SaddlePointCertificate, ScalingPolicy,
};
use iapda_bench::generate::{gen_l1l2, random_qp, scalar_instance, L1L2Params, QpInstance, RidgePlacement};
use iapda_bench::rates::fit_trace_column;
use iapda_bench::rng::StreamRng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Collects the worst v-identity error over every iapda trace produced here.
#[derive(Default)]
struct VIdentity {
    worst: f64,
    rows: usize,
    runs: usize,
}

impl VIdentity {
    fn absorb(&mut self, trace: &MetricsTrace) {
        self.runs += 1;
        for r in trace.rows.iter().skip(1) {
            self.rows += 1;
            // NaN must count as a failure
            self.worst = if r.v_identity_err.is_nan() {
                f64::INFINITY
            } else {
                self.worst.max(r.v_identity_err)
            };
        }
    }
}

const RULES: [ExtrapolationRule; 6] = [
    ExtrapolationRule::Nesterov,
    ExtrapolationRule::ChambolleDossal { alpha: 3.0 },
    ExtrapolationRule::ChambolleDossal { alpha: 4.0 },
    ExtrapolationRule::ChambolleDossal { alpha: 6.0 },
    ExtrapolationRule::AttouchCabot { alpha: 3.5 },
    ExtrapolationRule::AttouchCabot { alpha: 5.0 },
];

/// Random small QP with its exact KKT saddle and parameters satisfying `L_f β ≤ 1`.
fn qp_case(seed: u64) -> (QpInstance, IapdaParams) {
    let mut rng = StreamRng::new(seed, 99);
    let n = 2 + rng.below(19);
    let m = 1 + rng.below(n.min(10));
    let inst = random_qp(seed, n, m, 0.1).expect("random QP");
    let lf = inst.problem.lipschitz_f();
    let beta0 = rng.uniform_in(0.3, 1.0) / lf;
    let rho = rng.uniform_in(0.1, 2.0);
    let sigma = rng.uniform_in(0.5, 2.0);
    let rule = RULES[rng.below(RULES.len())];
    let mut params = IapdaParams::new(rho, sigma, rule, ScalingPolicy::constant(beta0), 0);
    params.require_energy_hypothesis = true;
    (inst, params)
}

fn criterion1(v: &mut VIdentity) -> Outcome {
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let (inst, mut params) = qp_case(seed);
        params.max_iter = 200;
        let solver = IapdaSolver::new(&inst.problem, params).unwrap();
        let s = &inst.saddle;
        let trace = solver
            .run(s.x_star.clone(), s.lambda_star.clone(), Some(s), &mut |ev| {
                let dx = (&ev.inner.x - &s.x_star).norm();
                let dl = (&ev.update.lam_next - &s.lambda_star).norm();
                worst = worst.max(dx).max(dl);
            })
            .unwrap();
        assert_eq!(trace.rows.len(), 201);
        v.absorb(&trace);
    }
    outcome(
        worst <= 1e-9,
        format!("max distance from saddle over 20 runs x 200 iterations = {worst:.2e}"),
    )
}

/// Shared suite for criteria 2 and 3.
fn energy_suite(v: &mut VIdentity) -> Vec<(QpInstance, MetricsTrace)> {
    (0..100)
        .map(|i| {
            let (inst, mut params) = qp_case(1000 + i);
            params.max_iter = 500;
            params.retain_lambda_history = true;
            let trace = IapdaSolver::new(&inst.problem, params)
                .unwrap()
                .run_from_zero(Some(&inst.saddle))
                .unwrap();
            v.absorb(&trace);
            (inst, trace)
        })
        .collect()
}

fn criterion2(suite: &[(QpInstance, MetricsTrace)]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    for (_, trace) in suite {
        let e1 = trace.rows[0].energy_total;
        let tol = 1e-9 * e1.max(1.0);
        for w in trace.rows.windows(2) {
            let rise = w[1].energy_total - w[0].energy_total;
            worst = worst.max(rise / e1.max(1.0));
            if !(rise <= tol) {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("100 instances x 500 iterations, max relative energy increase = {worst:.2e}, violations = {bad}"),
    )
}

/// Recomputes every bound from the trace and the dual history, independently of the library checker.
fn criterion3(suite: &[(QpInstance, MetricsTrace)]) -> Outcome {
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    let (mut min_a, mut max_a) = (f64::INFINITY, f64::NEG_INFINITY);
    for (inst, trace) in suite {
        let rows = &trace.rows;
        let lam = trace.lambda_history.as_ref().expect("history retained");
        let inputs = trace.bound_inputs.expect("bound inputs");
        let sigma = inputs.sigma;
        let (b0, t1) = (inputs.beta0, rows[0].t_k);
        let feas1 = rows[0].feas_violation;
        // lam[j] = λ_{j}, j = 0..=K+1; rows[i] describes k = i + 1
        let mut max_jump = 0.0_f64;
        for i in 1..rows.len() {
            let k = i + 1;
            max_jump = max_jump.max(((&lam[k] - &lam[k - 1]) * rows[i].t_k).norm());
        }
        let max_lam = lam.iter().skip(1).map(|l| l.norm()).fold(0.0, f64::max);
        let c = t1 * t1 * b0 * feas1
            + max_jump / sigma
            + t1 * (&lam[1] - &lam[0]).norm() / sigma
            + max_lam / sigma
            + lam[0].norm() / sigma;
        let e1 = rows[0].energy_total;
        let lam_star = inst.saddle.lambda_star.norm();
        for r in rows {
            let scale = r.t_next * (r.t_next - 1.0) * r.beta_k;
            let gap_b = e1 / scale;
            let feas_b = (b0 * t1 * t1 * feas1 + 2.0 * c) / scale;
            let obj_b = gap_b + lam_star * feas_b;
            for (value, bound) in [(r.pd_gap, gap_b), (r.feas_violation, feas_b), (r.obj_residual, obj_b)] {
                let slack = bound - value;
                min_slack = min_slack.min(slack / bound);
                if !(slack >= -1e-8 * bound) {
                    violations += 1;
                }
            }
            let a_k = 1.0 - r.t_next * (r.t_next - 1.0) * r.beta_k / (r.t_k * r.t_k * r.beta_prev);
            min_a = min_a.min(a_k);
            max_a = max_a.max(a_k);
            // a_k = 0 exactly for Nesterov; allow rounding only
            if !(a_k >= -1e-12 && a_k < 1.0) {
                violations += 1;
            }
        }
        let report = iapda::solver::bound_certificates(trace, &inst.saddle).unwrap();
        if !report.passed() {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("min relative slack = {min_slack:.3e}, a_k in [{min_a:.3e}, {max_a:.3e}], violations = {violations}"),
    )
}

fn desk_l1l2(seed: u64) -> (iapda_bench::generate::L1L2Instance, SaddlePointCertificate) {
    let inst = gen_l1l2(&L1L2Params {
        ridge: RidgePlacement::Prox,
        ..L1L2Params::desk(seed)
    })
    .unwrap();
    let saddle = inst.saddle().unwrap();
    (inst, saddle)
}

fn newton_inner() -> InnerSolverConfig {
    InnerSolverConfig {
        method: InnerMethod::Newton,
        ..InnerSolverConfig::default()
    }
}

fn criterion4(v: &mut VIdentity) -> Outcome {
    // loose inner tolerance, FISTA inner solver
    for seed in 0..5u64 {
        let inst = gen_l1l2(&L1L2Params {
            m: 20,
            n: 40,
            ..L1L2Params::desk(500 + seed)
        })
        .unwrap();
        let mut params = IapdaParams::new(
            1.0,
            1.0,
            RULES[seed as usize % RULES.len()],
            ScalingPolicy::constant(0.5),
            200,
        );
        params.inner = InnerSolverConfig {
            subtol: 1e-2,
            max_inner: 5,
            method: InnerMethod::Fista,
            ..InnerSolverConfig::default()
        };
        let trace = IapdaSolver::new(&inst.problem, params)
            .unwrap()
            .run_from_zero(None)
            .unwrap();
        v.absorb(&trace);
    }
    outcome(
        v.worst <= 1e-10,
        format!(
            "{} runs, {} iterations, worst relative v-identity error = {:.2e}",
            v.runs, v.rows, v.worst
        ),
    )
}

fn criterion5(v: &mut VIdentity) -> Outcome {
    let (inst, saddle) = desk_l1l2(7);
    let mut nesterov = IapdaParams::new(1.0, 1.0, ExtrapolationRule::Nesterov, ScalingPolicy::constant(1.0), 499);
    nesterov.inner = newton_inner();
    let trace_a = IapdaSolver::new(&inst.problem, nesterov)
        .unwrap()
        .run_from_zero(Some(&saddle))
        .unwrap();
    let feas = fit_trace_column(&trace_a.series("feas_violation"), 50, 500).unwrap();

    let mut grow = IapdaParams::new(
        1.0,
        1.0,
        ExtrapolationRule::ChambolleDossal { alpha: 6.0 },
        ScalingPolicy::power(1.0, 2.0),
        499,
    );
    grow.inner = newton_inner();
    let trace_b = IapdaSolver::new(&inst.problem, grow)
        .unwrap()
        .run_from_zero(Some(&saddle))
        .unwrap();
    let gap = fit_trace_column(&trace_b.series("pd_gap"), 50, 500).unwrap();
    v.absorb(&trace_a);
    v.absorb(&trace_b);
    outcome(
        feas.slope <= -1.5 && gap.slope <= -3.5,
        format!(
            "feasibility slope (Nesterov, constant beta) = {:.3}, gap slope (CD alpha=6, beta ~ k^2) = {:.3}",
            feas.slope, gap.slope
        ),
    )
}

fn iterate_decay(trace: &MetricsTrace) -> (f64, f64) {
    let weighted = |lo: usize, hi: usize| {
        trace
            .rows
            .iter()
            .filter(|r| r.k >= lo && r.k <= hi)
            .map(|r| r.k as f64 * r.step_norm)
            .fold(0.0, f64::max)
    };
    (weighted(500, 1000), weighted(2500, 5000))
}

fn criterion6(v: &mut VIdentity) -> Outcome {
    let configs = [
        (
            "nesterov, constant beta",
            ExtrapolationRule::Nesterov,
            ScalingPolicy::constant(1.0),
        ),
        (
            "cd alpha=6, beta ~ k^2",
            ExtrapolationRule::ChambolleDossal { alpha: 6.0 },
            ScalingPolicy::power(1.0, 2.0),
        ),
    ];
    let (scalar, scalar_saddle) = scalar_instance(ProxFunction::Zero).unwrap();
    let (inst, saddle) = desk_l1l2(11);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, rule, scaling) in configs {
        let params = IapdaParams::new(1.0, 1.0, rule, scaling, 4999);
        let trace_s = IapdaSolver::new(&scalar, params)
            .unwrap()
            .run(
                DVector::from_element(1, 1.0),
                DVector::zeros(1),
                Some(&scalar_saddle),
                &mut |_| {},
            )
            .unwrap();
        let mut params = params;
        params.inner = newton_inner();
        let trace_l = IapdaSolver::new(&inst.problem, params)
            .unwrap()
            .run_from_zero(Some(&saddle))
            .unwrap();
        let (early_s, late_s) = iterate_decay(&trace_s);
        let (early_l, late_l) = iterate_decay(&trace_l);
        pass &= late_s <= 2.0 * early_s && late_l <= 2.0 * early_l;
        parts.push(format!(
            "{name}: scalar {early_s:.2e} -> {late_s:.2e}, l1l2 {early_l:.2e} -> {late_l:.2e}"
        ));
        v.absorb(&trace_s);
        v.absorb(&trace_l);
    }
    outcome(
        pass,
        format!(
            "max k|x_k - x_(k-1)| over [500,1000] -> [2500,5000]; {}",
            parts.join("; ")
        ),
    )
}

/// One iteration of the method for scalars, written out independently of the library.
struct ScalarReference {
    s: f64,
    zeta: f64,
    phi: f64,
    x2: f64,
    u2: f64,
    lam2: f64,
    v2: f64,
    energy1: f64,
}

fn scalar_reference() -> ScalarReference {
    // f = ½x², g = 0, A = 1, b = 0, saddle (0, 0); x0 = x1 = 1, λ0 = λ1 = 0
    let (rho, sigma, beta) = (1.0, 1.0, 1.0);
    let alpha = 3.0;
    let t = |k: f64| (k + alpha - 2.0) / (alpha - 1.0);
    let (t1, t2) = (t(1.0), t(2.0));
    let (x0, x1, l0, l1) = (1.0, 1.0, 0.0, 0.0);
    let xbar = x1 + (t1 - 1.0) / t2 * (x1 - x0);
    let s = sigma * beta * t2 * t2;
    let zeta = s + rho;
    let phi = ((t2 - 1.0) * x1) / t2;
    let mu = l1 + (t1 - 1.0) / t2 * (l1 - l0);
    let xi = t2 * mu - (t2 - 1.0) * l1;
    let c = (s * phi - xi) / zeta;
    // argmin x·xbar + (x − xbar)²/(2β) + ζ/2 (x − c)²
    let x2 = (xbar / beta - xbar + zeta * c) / (1.0 / beta + zeta);
    let u2 = x2 + (t2 - 1.0) * (x2 - x1);
    let lam2 = mu + sigma * beta * u2;
    let v2 = xi + s * (x2 - phi);
    let u1 = x1 + (t1 - 1.0) * (x1 - x0);
    let v1 = t1 * l1 - (t1 - 1.0) * l0;
    let gap1 = 0.5 * x1 * x1 + 0.5 * rho * x1 * x1;
    let energy1 = t2 * (t2 - 1.0) * beta * gap1 + 0.5 * u1 * u1 + v1 * v1 / (2.0 * sigma);
    ScalarReference {
        s,
        zeta,
        phi,
        x2,
        u2,
        lam2,
        v2,
        energy1,
    }
}

fn criterion7() -> Outcome {
    let hand = [
        2.25,
        3.25,
        1.0 / 3.0,
        3.0 / 17.0,
        -4.0 / 17.0,
        -4.0 / 17.0,
        -6.0 / 17.0,
        1.25,
    ];
    let r = scalar_reference();
    let reference = [r.s, r.zeta, r.phi, r.x2, r.u2, r.lam2, r.v2, r.energy1];

    let (problem, saddle) = scalar_instance(ProxFunction::Zero).unwrap();
    let params = IapdaParams::new(
        1.0,
        1.0,
        ExtrapolationRule::ChambolleDossal { alpha: 3.0 },
        ScalingPolicy::constant(1.0),
        1,
    );
    let mut got = [f64::NAN; 8];
    let trace = IapdaSolver::new(&problem, params)
        .unwrap()
        .run(
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            Some(&saddle),
            &mut |ev| {
                got[..7].copy_from_slice(&[
                    ev.scratch.s_next,
                    ev.scratch.zeta_next,
                    ev.scratch.phi_next[0],
                    ev.inner.x[0],
                    ev.update.u_next[0],
                    ev.update.lam_next[0],
                    ev.update.v_next[0],
                ]);
            },
        )
        .unwrap();
    got[7] = trace.rows[0].energy_total;
    let worst = hand
        .iter()
        .zip(&reference)
        .zip(&got)
        .map(|((h, r), g)| (h - r).abs().max((h - g).abs()))
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!("max deviation from hand values (reference and solver) = {worst:.2e}"),
    )
}

fn criterion8() -> Outcome {
    let (problem, saddle) = scalar_instance(ProxFunction::L1 { weight: 1.0 }).unwrap();
    let config = OdeConfig {
        alpha: 4.0,
        rho: 1.0,
        scaling: TimeScaling { c: 1.0, p: 0.5 },
        gamma: MoreauParams::new(1e-3).unwrap(),
        t0: 1.0,
        t_end: 50.0,
        step_h: 1e-3,
        record_stride: 1,
        resolve_kinks: true,
    };
    let initial = OdeState::at_rest(1.0, DVector::from_element(1, 1.0), DVector::zeros(1));
    let traj = integrate(&config, &problem, initial, Some(&saddle)).unwrap();
    let e1 = traj.records[0].energy;
    let drift = energy_excess(&traj.records, 1e-6 * e1.max(1.0));
    let sup = scaled_gap_sup(&traj.records, &config);
    let cap = (config.alpha - 1.0).powi(2) * e1 * 1.001;
    let ratio = feasibility_mass_ratio(&traj.records, &config);
    outcome(
        traj.aborted.is_none() && drift <= 0.0 && sup <= cap && ratio < 1.0,
        format!(
            "energy(1) = {e1:.6}, max excess over drift allowance = {drift:.2e}, sup t^2 beta gap = {sup:.6} (cap {cap:.6}), mass ratio = {ratio:.4}"
        ),
    )
}

fn criterion9() -> Outcome {
    let mut worst = 0.0_f64;
    let config = InnerSolverConfig {
        subtol: 1e-8,
        max_inner: 1_000_000,
        method: InnerMethod::Fista,
        ..InnerSolverConfig::default()
    };
    for seed in 0..50u64 {
        let mut rng = StreamRng::new(seed, 77);
        let n = 2 + rng.below(19);
        let m = 1 + rng.below(10);
        let scale = 1.0 / (n as f64).sqrt();
        let a = DMatrix::from_fn(m, n, |_, _| rng.gaussian() * scale);
        let anchor = DVector::from_fn(n, |_, _| rng.gaussian());
        let grad = DVector::from_fn(n, |_, _| rng.gaussian());
        let target = DVector::from_fn(m, |_, _| rng.gaussian());
        let g = ProxFunction::Zero;
        let sub = QuadraticCompositeSubproblem {
            anchor,
            grad_at_anchor: grad,
            beta: rng.uniform_in(0.5, 2.0),
            zeta: rng.uniform_in(0.5, 5.0),
            target_c: target,
            a: &a,
            g: &g,
            opnorm: estimate_opnorm(&a, 5000, 1e-12, seed),
        };
        let exact = sub
            .solve_closed_form(&ShiftedGram::new(&a))
            .unwrap()
            .expect("closed form for g = 0");
        let approx = fista_solve(&sub, &DVector::zeros(n), &config).unwrap();
        worst = worst.max((&approx.x - &exact).norm() / exact.norm().max(1e-300));
    }
    outcome(
        worst <= 1e-6,
        format!("50 subproblems, worst relative error = {worst:.2e}"),
    )
}

fn criterion10() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (inst, saddle) = desk_l1l2(2000 + seed);
        let mut params = IapdaParams::new(
            1e-4,
            10.0,
            ExtrapolationRule::ChambolleDossal { alpha: 15.0 },
            ScalingPolicy::constant(2.0),
            100,
        );
        params.inner = newton_inner();
        let trace = IapdaSolver::new(&inst.problem, params)
            .unwrap()
            .run_from_zero(Some(&saddle))
            .unwrap();
        let ours = trace.row(101).expect("row 101").feas_violation;

        let penalty = inst.penalty_problem().unwrap();
        let config = BaselineConfig {
            step: 1.0 / penalty.lipschitz_f(),
            max_iter: 100,
            opt_value: None,
        };
        let mut last = DVector::zeros(inst.params.n);
        fista_baseline(&penalty, &DVector::zeros(inst.params.n), &config, &mut |_, x| {
            last = x.clone()
        })
        .unwrap();
        let theirs = inst.problem.feasibility(&last);
        if ours < theirs {
            wins += 1;
        }
        lines.push(format!("{ours:.1e}/{theirs:.1e}"));
    }
    outcome(
        wins >= 8,
        format!(
            "IAPDA below FISTA on {wins}/10 seeds (iapda/fista feasibility: {})",
            lines.join(" ")
        ),
    )
}

fn report(id: usize, name: &str, elapsed: Duration, out: Outcome, failures: &mut usize) {
    if !out.pass {
        *failures += 1;
    }
    println!(
        "criterion {id:>2} [{name}]: {} ({}; {:.2} s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
}

fn timed(limit: Option<Duration>, elapsed: Duration, mut out: Outcome) -> Outcome {
    if let Some(limit) = limit {
        if elapsed >= limit {
            out.pass = false;
            out.detail.push_str(&format!(
                ", runtime {:.1} s over {:.0} s limit",
                elapsed.as_secs_f64(),
                limit.as_secs_f64()
            ));
        }
    }
    out
}

fn run(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Duration, Outcome) {
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    (elapsed, timed(limit, elapsed, out))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut v = VIdentity::default();
    let secs = |s| Some(Duration::from_secs(s));

    let (d, out) = run(secs(5), || criterion1(&mut v));
    report(1, "saddle fixed point", d, out, &mut failures);

    let mut suite = Vec::new();
    let (d, out) = run(secs(60), || {
        suite = energy_suite(&mut v);
        criterion2(&suite)
    });
    report(2, "energy monotonicity", d, out, &mut failures);

    let (d, out) = run(None, || criterion3(&suite));
    report(3, "rate certificates", d, out, &mut failures);

    // 5 and 6 run first so that criterion 4 covers their traces too
    let (d5, out5) = run(secs(120), || criterion5(&mut v));
    let (d6, out6) = run(None, || criterion6(&mut v));
    let (d, out) = run(None, || criterion4(&mut v));
    report(4, "v identity", d, out, &mut failures);
    report(5, "desk-scale rates", d5, out5, &mut failures);
    report(6, "iterate-difference decay", d6, out6, &mut failures);

    let (d, out) = run(None, criterion7);
    report(7, "scalar regression", d, out, &mut failures);
    let (d, out) = run(secs(30), criterion8);
    report(8, "continuous-time energy", d, out, &mut failures);
    let (d, out) = run(None, criterion9);
    report(9, "inner-solver agreement", d, out, &mut failures);
    let (d, out) = run(None, criterion10);
    report(10, "feasibility ordering vs FISTA", d, out, &mut failures);

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
