//! Seeded problem generators.

use std::sync::Arc;

use iapda::composite::estimate_opnorm;
use iapda::linalg::convex_line_search;
use iapda::{CompositeProblem, DMatrix, DVector, Error, ProxFunction, Result, SaddlePointCertificate, SmoothTerm};
use log::warn;
use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, StreamRng};

/// Where the ridge term `(μ/2)‖x‖²` of the ℓ1–ℓ2 problem lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePlacement {
    /// `f = (μ/2)‖x‖²` (so `L_f = μ`), `g = ‖x‖₁`.
    #[default]
    Smooth,
    /// `f = 0`, `g = ‖x‖₁ + (μ/2)‖x‖²`; any `β_k` then satisfies `L_f β_k ≤ 1`.
    Prox,
}

/// `min (μ/2)‖x‖² + ‖x‖₁  s.t.  Ax = b` with `b = A x_true + ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1L2Params {
    pub m: usize,
    pub n: usize,
    pub mu: f64,
    pub sparsity: f64,
    pub noise_norm: f64,
    pub seed: u64,
    #[serde(default)]
    pub ridge: RidgePlacement,
}

impl L1L2Params {
    /// Full-size dimensions of the reference experiment.
    pub fn full(seed: u64) -> Self {
        Self {
            m: 1500,
            n: 2000,
            mu: 1.5,
            sparsity: 0.05,
            noise_norm: 1e-6,
            seed,
            ridge: RidgePlacement::Smooth,
        }
    }

    /// Same proportions at one tenth of the size.
    pub fn desk(seed: u64) -> Self {
        Self {
            m: 150,
            n: 200,
            ..Self::full(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity must lie in (0, 1], got {}",
                self.sparsity
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.noise_norm >= 0.0 && self.noise_norm.is_finite()) {
            return Err(Error::Config(format!(
                "noise_norm must be >= 0, got {}",
                self.noise_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct L1L2Instance {
    pub params: L1L2Params,
    pub problem: CompositeProblem,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ground_truth: DVector<f64>,
    pub noise: DVector<f64>,
    pub warnings: Vec<String>,
}

impl L1L2Instance {
    /// Exact saddle point of the generated problem.
    pub fn saddle(&self) -> Result<SaddlePointCertificate> {
        let (x, lambda) = l1l2_saddle(&self.a, &self.b, self.params.mu)?;
        SaddlePointCertificate::new(&self.problem, x, lambda)
    }

    /// Same data with the penalty reformulation `½‖Ax − b‖² + (μ/2)‖x‖² + ‖x‖₁` and no constraint.
    pub fn penalty_problem(&self) -> Result<CompositeProblem> {
        let f = SmoothTerm::least_squares(self.a.clone(), self.b.clone(), self.params.mu)?;
        CompositeProblem::unconstrained(Arc::new(f), ProxFunction::L1 { weight: 1.0 }, self.params.n)
    }
}

fn gaussian_matrix(rng: &mut StreamRng, m: usize, n: usize) -> DMatrix<f64> {
    // column-major fill keeps the draw order independent of nalgebra internals
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            a[(i, j)] = rng.gaussian();
        }
    }
    a
}

pub fn gen_l1l2(params: &L1L2Params) -> Result<L1L2Instance> {
    params.validate()?;
    let (m, n, seed) = (params.m, params.n, params.seed);
    let mut warnings = Vec::new();

    let a = gaussian_matrix(&mut StreamRng::new(seed, stream::MATRIX), m, n);

    let mut signal_rng = StreamRng::new(seed, stream::SIGNAL);
    let dense = DVector::from_fn(n, |_, _| (2.0 * signal_rng.gaussian()).clamp(-2.0, 2.0));
    let wanted = (params.sparsity * n as f64).round() as usize;
    if wanted < 1 {
        let msg = format!("sparsity * n = {} < 1; keeping one nonzero", params.sparsity * n as f64);
        warn!("{msg}");
        warnings.push(msg);
    }
    let support = StreamRng::new(seed, stream::SUPPORT).choose(n, wanted.max(1));
    let mut ground_truth = DVector::zeros(n);
    for &i in &support {
        ground_truth[i] = dense[i];
    }

    let mut noise_rng = StreamRng::new(seed, stream::NOISE);
    let raw = DVector::from_fn(m, |_, _| noise_rng.gaussian());
    let noise = if params.noise_norm == 0.0 {
        DVector::zeros(m)
    } else {
        &raw * (params.noise_norm / raw.norm())
    };
    let b = &a * &ground_truth + &noise;

    let (f, g) = match params.ridge {
        RidgePlacement::Smooth => (SmoothTerm::SqNorm { mu: params.mu }, ProxFunction::L1 { weight: 1.0 }),
        RidgePlacement::Prox => (SmoothTerm::Zero, ProxFunction::L1PlusSqL2 { l1: 1.0, sq: params.mu }),
    };
    let problem = CompositeProblem::new(Arc::new(f), g, a.clone(), b.clone())?;
    Ok(L1L2Instance {
        params: *params,
        problem,
        a,
        b,
        ground_truth,
        noise,
        warnings,
    })
}

fn soft(v: &DVector<f64>, threshold: f64) -> DVector<f64> {
    v.map(|e| e.signum() * (e.abs() - threshold).max(0.0))
}

/// Saddle point of `min (μ/2)‖x‖² + ‖x‖₁ s.t. Ax = b` by Newton's method on the dual
/// `Ψ(λ) = ‖soft(Aᵀλ, 1)‖²/(2μ) + ⟨λ, b⟩`, whose minimizer gives `x = −soft(Aᵀλ, 1)/μ`.
///
/// Near a sparse planted signal the generalized Hessian is rank deficient, so steps
/// are lightly regularized and followed by an exact line search: along a ray `Ψ` is
/// convex and piecewise quadratic, so its derivative is monotone and piecewise linear.
pub fn l1l2_saddle(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = a.nrows();
    let primal = |lambda: &DVector<f64>| -soft(&a.tr_mul(lambda), 1.0) / mu;
    let scale = (0..m).map(|i| a.row(i).norm_squared()).sum::<f64>() / (m.max(1) as f64 * mu);
    let target = 1e-13 * b.norm().max(1.0);

    let mut lambda = DVector::zeros(m);
    for _ in 0..5000 {
        let x = primal(&lambda);
        let grad = b - a * &x;
        let gnorm = grad.norm();
        if gnorm <= target {
            return Ok((x, lambda));
        }
        let z = a.tr_mul(&lambda);
        let active: Vec<usize> = (0..z.len()).filter(|&j| z[j].abs() > 1.0).collect();
        let mut h = DMatrix::zeros(m, m);
        if !active.is_empty() {
            let cols = a.select_columns(&active);
            h = &cols * cols.transpose() / mu;
        }
        let reg = scale * gnorm.clamp(1e-14, 1e-2).min(1e-8);
        for i in 0..m {
            h[(i, i)] += reg;
        }
        let dir = Cholesky::new(h)
            .ok_or_else(|| Error::Numerical("dual Newton matrix is not positive definite".into()))?
            .solve(&(-&grad));
        let w = a.tr_mul(&dir);
        let db = dir.dot(b);
        // φ'(s) for φ(s) = Ψ(λ + s·dir)
        let dphi = |s: f64| db + soft(&(&z + &w * s), 1.0).dot(&w) / mu;
        let d0 = dphi(0.0);
        if !(d0 < 0.0) {
            break;
        }
        let step = convex_line_search(dphi, d0)
            .ok_or_else(|| Error::Numerical("dual objective unbounded along the Newton direction".into()))?;
        let trial = &lambda + &dir * step;
        if (&trial - &lambda).norm() == 0.0 {
            break;
        }
        lambda = trial;
    }
    let x = primal(&lambda);
    let residual = (b - a * &x).norm();
    if residual <= 1e-9 * b.norm().max(1.0) {
        Ok((x, lambda))
    } else {
        Err(Error::Numerical(format!(
            "dual Newton stalled with feasibility residual {residual:.3e}"
        )))
    }
}

/// Whether the non-negative least-squares baseline keeps the sign constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnlsConstraint {
    #[default]
    NonNeg,
    Free,
}

/// `min ½‖Ax − b‖² (+ indicator of x ≥ 0)` with a sparse non-negative `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnlsParams {
    pub m: usize,
    pub n: usize,
    pub density: f64,
    pub seed: u64,
    #[serde(default)]
    pub constraint: NnlsConstraint,
}

impl NnlsParams {
    pub fn small(seed: u64) -> Self {
        Self {
            m: 500,
            n: 1000,
            density: 0.1,
            seed,
            constraint: NnlsConstraint::NonNeg,
        }
    }

    pub fn large(seed: u64) -> Self {
        Self {
            m: 1500,
            n: 2000,
            ..Self::small(seed)
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            m: 150,
            n: 200,
            ..Self::small(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NnlsInstance {
    pub params: NnlsParams,
    pub problem: CompositeProblem,
    pub matrix: DMatrix<f64>,
    pub target: DVector<f64>,
    /// `‖A‖²`
    pub lipschitz: f64,
}

pub fn gen_nnls(params: &NnlsParams) -> Result<NnlsInstance> {
    params.validate()?;
    let (m, n, seed) = (params.m, params.n, params.seed);
    let mut pattern = StreamRng::new(seed, stream::PATTERN);
    let mut values = StreamRng::new(seed, stream::MATRIX);
    let mut matrix = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            let keep = params.density >= 1.0 || pattern.uniform() < params.density;
            let v = values.uniform_in(0.0, 0.1);
            if keep {
                matrix[(i, j)] = v;
            }
        }
    }
    let mut target_rng = StreamRng::new(seed, stream::TARGET);
    let target = DVector::from_fn(m, |_, _| target_rng.uniform());
    let norm = estimate_opnorm(&matrix, 5000, 1e-12, seed);
    let f = SmoothTerm::least_squares(matrix.clone(), target.clone(), 0.0)?;
    let lipschitz = iapda::SmoothFunction::lipschitz(&f);
    debug_assert!(lipschitz >= norm * norm * (1.0 - 1e-6));
    let g = match params.constraint {
        NnlsConstraint::NonNeg => ProxFunction::NonNegIndicator,
        NnlsConstraint::Free => ProxFunction::Zero,
    };
    let problem = CompositeProblem::unconstrained(Arc::new(f), g, n)?;
    Ok(NnlsInstance {
        params: *params,
        problem,
        matrix,
        target,
        lipschitz,
    })
}

/// Random equality-constrained quadratic program with its exact saddle point.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub problem: CompositeProblem,
    pub saddle: SaddlePointCertificate,
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
}

/// `min ½xᵀQx + ⟨c, x⟩ s.t. Ax = b` with `Q = BᵀB/n + δI` and Gaussian `A`, `b`, `c`.
pub fn random_qp(seed: u64, n: usize, m: usize, delta: f64) -> Result<QpInstance> {
    if n == 0 || m > n {
        return Err(Error::Config(format!(
            "random QP needs 0 < n and m <= n, got n={n}, m={m}"
        )));
    }
    let basis = gaussian_matrix(&mut StreamRng::new(seed, stream::PATTERN), n, n);
    let hessian = basis.transpose() * &basis / n as f64 + DMatrix::identity(n, n) * delta;
    let mut rng = StreamRng::new(seed, stream::SIGNAL);
    let linear = DVector::from_fn(n, |_, _| rng.gaussian());
    let a = gaussian_matrix(&mut StreamRng::new(seed, stream::MATRIX), m, n);
    let mut rng = StreamRng::new(seed, stream::TARGET);
    let b = DVector::from_fn(m, |_, _| rng.gaussian());
    let (x, lambda) = SaddlePointCertificate::from_quadratic_kkt(&hessian, &linear, &a, &b)?;
    let f = SmoothTerm::quadratic(hessian.clone(), linear.clone())?;
    let problem = CompositeProblem::new(Arc::new(f), ProxFunction::Zero, a, b)?;
    let saddle = SaddlePointCertificate::new(&problem, x, lambda)?;
    Ok(QpInstance {
        problem,
        saddle,
        hessian,
        linear,
    })
}

/// `min ½x² (+ g) s.t. x = 0`, saddle `(0, 0)`.
pub fn scalar_instance(g: ProxFunction) -> Result<(CompositeProblem, SaddlePointCertificate)> {
    let problem = CompositeProblem::new(
        Arc::new(SmoothTerm::SqNorm { mu: 1.0 }),
        g,
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
    )?;
    let saddle = SaddlePointCertificate::new(&problem, DVector::zeros(1), DVector::zeros(1))?;
    Ok((problem, saddle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_l1l2(seed: u64) -> L1L2Params {
        L1L2Params {
            m: 20,
            n: 30,
            ..L1L2Params::desk(seed)
        }
    }

    #[test]
    fn l1l2_presets() {
        let p = L1L2Params::full(0);
        assert_eq!(
            (p.m, p.n, p.mu, p.sparsity, p.noise_norm),
            (1500, 2000, 1.5, 0.05, 1e-6)
        );
        let d = L1L2Params::desk(0);
        assert_eq!((d.m, d.n), (150, 200));
    }

    #[test]
    fn l1l2_is_deterministic_with_exact_noise_norm() {
        let p = tiny_l1l2(9);
        let a = gen_l1l2(&p).unwrap();
        let b = gen_l1l2(&p).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert!((a.noise.norm() - 1e-6).abs() <= 1e-18);
        let other = gen_l1l2(&tiny_l1l2(10)).unwrap();
        assert_ne!(a.a, other.a);
    }

    #[test]
    fn l1l2_support_and_range() {
        let inst = gen_l1l2(&L1L2Params::desk(3)).unwrap();
        let nnz = inst.ground_truth.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nnz, 10);
        assert!(inst.ground_truth.iter().all(|v| v.abs() <= 2.0));
        let sparse = gen_l1l2(&L1L2Params {
            sparsity: 0.001,
            ..tiny_l1l2(3)
        })
        .unwrap();
        assert_eq!(sparse.ground_truth.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(sparse.warnings.len(), 1);
        assert!(gen_l1l2(&L1L2Params {
            sparsity: 0.0,
            ..tiny_l1l2(3)
        })
        .is_err());
    }

    #[test]
    fn l1l2_saddle_satisfies_kkt() {
        for ridge in [RidgePlacement::Smooth, RidgePlacement::Prox] {
            let inst = gen_l1l2(&L1L2Params { ridge, ..tiny_l1l2(4) }).unwrap();
            let saddle = inst.saddle().unwrap();
            saddle.verify(&inst.problem, 1e-9).unwrap();
        }
    }

    #[test]
    fn nnls_ranges_and_density() {
        let dense = gen_nnls(&NnlsParams {
            m: 30,
            n: 40,
            density: 1.0,
            seed: 1,
            constraint: NnlsConstraint::NonNeg,
        })
        .unwrap();
        assert!(dense.matrix.iter().all(|v| *v >= 0.0 && *v < 0.1));
        assert!(dense.matrix.iter().filter(|v| **v == 0.0).count() <= 1);

        let p = NnlsParams {
            m: 300,
            n: 400,
            density: 0.2,
            seed: 2,
            constraint: NnlsConstraint::Free,
        };
        let inst = gen_nnls(&p).unwrap();
        let frac = inst.matrix.iter().filter(|v| **v != 0.0).count() as f64 / (300.0 * 400.0);
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
        assert_eq!(inst.problem.dim_dual(), 0);
        assert_eq!(*inst.problem.nonsmooth(), ProxFunction::Zero);

        let small = NnlsParams::small(0);
        assert_eq!((small.m, small.n), (500, 1000));
        let large = NnlsParams::large(0);
        assert_eq!((large.m, large.n), (1500, 2000));
    }

    #[test]
    fn random_qp_saddle_is_exact() {
        for seed in 0..10 {
            let qp = random_qp(seed, 12, 5, 0.1).unwrap();
            qp.saddle.verify(&qp.problem, 1e-10).unwrap();
        }
        assert!(random_qp(0, 3, 5, 0.1).is_err());
    }
}
