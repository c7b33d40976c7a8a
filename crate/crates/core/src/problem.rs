//! Linearly constrained composite problems `min f(x) + g(x) s.t. Ax = b`,
//! their (augmented) Lagrangians and optimality residuals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composite::estimate_opnorm;
use crate::error::{check_dim, Error, Result};
use crate::linalg::norm;
use crate::prox::ProxFunction;

/// Differentiable convex `f` with an `L_f`-Lipschitz gradient.
///
/// Implementations must be re-entrant: one problem is shared by concurrent solver runs.
pub trait SmoothFunction: Send + Sync + fmt::Debug {
    /// Input dimension, when the function is tied to one.
    fn dim(&self) -> Option<usize> {
        None
    }
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn lipschitz(&self) -> f64;
}

/// The built-in smooth terms.
#[derive(Debug, Clone)]
pub enum SmoothTerm {
    Zero,
    /// `⟨c, x⟩`
    Linear {
        c: DVector<f64>,
    },
    /// `(μ/2) ‖x‖²`
    SqNorm {
        mu: f64,
    },
    /// `½ xᵀQx + ⟨c, x⟩` with `Q` symmetric positive semidefinite.
    Quadratic {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        lipschitz: f64,
    },
    /// `½ ‖Mx − d‖² + (ridge/2) ‖x‖²`
    LeastSquares {
        matrix: DMatrix<f64>,
        target: DVector<f64>,
        ridge: f64,
        lipschitz: f64,
    },
}

/// Largest dimension for which Lipschitz constants come from a dense eigendecomposition.
const EXACT_SPECTRUM_LIMIT: usize = 400;

fn top_eigenvalue_psd(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v))
}

impl SmoothTerm {
    pub fn quadratic(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        if !hessian.is_square() {
            return Err(Error::Config("quadratic hessian must be square".into()));
        }
        check_dim("quadratic linear term", hessian.nrows(), linear.len())?;
        let sym = (&hessian + hessian.transpose()) * 0.5;
        let lipschitz = top_eigenvalue_psd(&sym);
        Ok(SmoothTerm::Quadratic {
            hessian: sym,
            linear,
            lipschitz,
        })
    }

    pub fn least_squares(matrix: DMatrix<f64>, target: DVector<f64>, ridge: f64) -> Result<Self> {
        check_dim("least-squares target", matrix.nrows(), target.len())?;
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge weight must be >= 0, got {ridge}")));
        }
        let (m, n) = matrix.shape();
        let sq_norm = if m.min(n) <= EXACT_SPECTRUM_LIMIT {
            let gram = if m < n {
                &matrix * matrix.transpose()
            } else {
                matrix.transpose() * &matrix
            };
            top_eigenvalue_psd(&gram)
        } else {
            // power iteration under-estimates slightly; pad it
            let est = estimate_opnorm(&matrix, 5000, 1e-12, 0x5eed);
            est * est * (1.0 + 1e-6)
        };
        Ok(SmoothTerm::LeastSquares {
            matrix,
            target,
            ridge,
            lipschitz: sq_norm + ridge,
        })
    }
}

impl SmoothFunction for SmoothTerm {
    fn dim(&self) -> Option<usize> {
        match self {
            SmoothTerm::Zero | SmoothTerm::SqNorm { .. } => None,
            SmoothTerm::Linear { c } => Some(c.len()),
            SmoothTerm::Quadratic { hessian, .. } => Some(hessian.ncols()),
            SmoothTerm::LeastSquares { matrix, .. } => Some(matrix.ncols()),
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::Linear { c } => c.dot(x),
            SmoothTerm::SqNorm { mu } => 0.5 * mu * x.norm_squared(),
            SmoothTerm::Quadratic { hessian, linear, .. } => 0.5 * x.dot(&(hessian * x)) + linear.dot(x),
            SmoothTerm::LeastSquares {
                matrix, target, ridge, ..
            } => 0.5 * (matrix * x - target).norm_squared() + 0.5 * ridge * x.norm_squared(),
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SmoothTerm::Zero => DVector::zeros(x.len()),
            SmoothTerm::Linear { c } => c.clone(),
            SmoothTerm::SqNorm { mu } => x * *mu,
            SmoothTerm::Quadratic { hessian, linear, .. } => hessian * x + linear,
            SmoothTerm::LeastSquares {
                matrix, target, ridge, ..
            } => {
                let r = matrix * x - target;
                let mut grad = x * *ridge;
                grad.gemv_tr(1.0, matrix, &r, 1.0);
                grad
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            SmoothTerm::Zero | SmoothTerm::Linear { .. } => 0.0,
            SmoothTerm::SqNorm { mu } => *mu,
            SmoothTerm::Quadratic { lipschitz, .. } | SmoothTerm::LeastSquares { lipschitz, .. } => *lipschitz,
        }
    }
}

/// `min f(x) + g(x)  s.t.  Ax = b`, with `A: ℝⁿ → ℝᵐ`.
///
/// `m = 0` is allowed and means the problem is unconstrained.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    f: Arc<dyn SmoothFunction>,
    g: ProxFunction,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Stationarity and feasibility parts of the KKT residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility)
    }
}

impl CompositeProblem {
    pub fn new(f: Arc<dyn SmoothFunction>, g: ProxFunction, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.ncols();
        if n == 0 {
            return Err(Error::Config("primal dimension must be positive".into()));
        }
        check_dim("right-hand side b", a.nrows(), b.len())?;
        if let Some(dim) = f.dim() {
            check_dim("smooth term", n, dim)?;
        }
        g.validate()?;
        let lf = f.lipschitz();
        if !(lf.is_finite() && lf >= 0.0) {
            return Err(Error::Config(format!(
                "Lipschitz constant of f must be finite, got {lf}"
            )));
        }
        Ok(Self { f, g, a, b })
    }

    /// A problem without equality constraints (`m = 0`).
    pub fn unconstrained(f: Arc<dyn SmoothFunction>, g: ProxFunction, n: usize) -> Result<Self> {
        Self::new(f, g, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim_primal(&self) -> usize {
        self.a.ncols()
    }

    pub fn dim_dual(&self) -> usize {
        self.a.nrows()
    }

    pub fn smooth(&self) -> &dyn SmoothFunction {
        self.f.as_ref()
    }

    pub fn nonsmooth(&self) -> &ProxFunction {
        &self.g
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lipschitz_f(&self) -> f64 {
        self.f.lipschitz()
    }

    /// Same data with a different nonsmooth term.
    pub fn with_nonsmooth(&self, g: ProxFunction) -> Result<Self> {
        g.validate()?;
        Ok(Self { g, ..self.clone() })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(y)
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn feasibility(&self, x: &DVector<f64>) -> f64 {
        norm(&self.residual(x))
    }

    /// `f(x) + g(x)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x) + self.g.value(x)
    }

    fn check_point(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<()> {
        check_dim("primal point", self.dim_primal(), x.len())?;
        check_dim("dual point", self.dim_dual(), lambda.len())
    }

    /// `𝓛(x, λ) = f(x) + g(x) + ⟨λ, Ax − b⟩`.
    pub fn lagrangian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<f64> {
        self.check_point(x, lambda)?;
        let r = self.residual(x);
        Ok(self.objective(x) + lambda.dot(&r))
    }

    /// `𝓛_ρ(x, λ) = 𝓛(x, λ) + (ρ/2) ‖Ax − b‖²`; `+∞` when `g(x) = +∞`.
    pub fn aug_lagrangian(&self, rho: f64, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<f64> {
        if !(rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {rho}")));
        }
        let plain = self.lagrangian(x, lambda)?;
        let r = self.residual(x);
        Ok(plain + 0.5 * rho * r.norm_squared())
    }

    /// Default probe step `1 / max(L_f, 1)` for [`kkt_residual`](Self::kkt_residual).
    pub fn default_probe_step(&self) -> f64 {
        1.0 / self.lipschitz_f().max(1.0)
    }

    /// Prox-gradient fixed-point residual; stationarity is zero iff
    /// `0 ∈ ∇f(x) + ∂g(x) + A*λ`.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>, probe_step: f64) -> Result<KktResidual> {
        self.check_point(x, lambda)?;
        if !(probe_step > 0.0) {
            return Err(Error::Config(format!("probe step must be > 0, got {probe_step}")));
        }
        let mut direction = self.f.gradient(x);
        if self.dim_dual() > 0 {
            direction.gemv_tr(1.0, &self.a, lambda, 1.0);
        }
        let trial = x - direction * probe_step;
        let moved = self.g.prox(&trial, probe_step);
        Ok(KktResidual {
            stationarity: (x - moved).norm() / probe_step,
            feasibility: self.feasibility(x),
        })
    }
}

/// A known saddle point `(x*, λ*)` of the Lagrangian with `opt_value = f(x*) + g(x*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePointCertificate {
    pub x_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
    pub opt_value: f64,
}

impl SaddlePointCertificate {
    pub fn new(problem: &CompositeProblem, x_star: DVector<f64>, lambda_star: DVector<f64>) -> Result<Self> {
        problem.check_point(&x_star, &lambda_star)?;
        let opt_value = problem.objective(&x_star);
        Ok(Self {
            x_star,
            lambda_star,
            opt_value,
        })
    }

    /// KKT residual at the certificate.
    pub fn residual(&self, problem: &CompositeProblem) -> Result<KktResidual> {
        problem.kkt_residual(&self.x_star, &self.lambda_star, problem.default_probe_step())
    }

    /// Errors unless both KKT components are within `tol`.
    pub fn verify(&self, problem: &CompositeProblem, tol: f64) -> Result<KktResidual> {
        let res = self.residual(problem)?;
        if res.stationarity <= tol && res.feasibility <= tol {
            Ok(res)
        } else {
            Err(Error::Numerical(format!(
                "saddle certificate fails KKT check: stationarity {:.3e}, feasibility {:.3e}, tol {tol:.1e}",
                res.stationarity, res.feasibility
            )))
        }
    }

    /// Saddle point of `½xᵀQx + ⟨c,x⟩` subject to `Ax = b` from the KKT system
    /// `[Q Aᵀ; A 0] [x; λ] = [−c; b]`.
    pub fn from_quadratic_kkt(
        hessian: &DMatrix<f64>,
        linear: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (m, n) = a.shape();
        check_dim("KKT hessian", n, hessian.nrows())?;
        check_dim("KKT linear term", n, linear.len())?;
        check_dim("KKT right-hand side", m, b.len())?;
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(hessian);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-linear));
        rhs.rows_mut(n, m).copy_from(b);
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("KKT system is singular".into()))?;
        Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
    }
}
