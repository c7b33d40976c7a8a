//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Cached Gram matrix of a fixed operator, stored on whichever side is smaller.
///
/// Used to solve `(c I + z AᵀA) x = r` exactly. When `A` has fewer rows than
/// columns the push-through identity
/// `(c I + z AᵀA)⁻¹ = (I − z Aᵀ (c I + z AAᵀ)⁻¹ A) / c` keeps the factorization
/// at size `m × m`.
#[derive(Debug, Clone)]
pub struct ShiftedGram {
    gram: DMatrix<f64>,
    row_side: bool,
}

impl ShiftedGram {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let row_side = a.nrows() < a.ncols();
        let gram = if row_side { a * a.transpose() } else { a.transpose() * a };
        Self { gram, row_side }
    }

    fn apply_operator(a: &DMatrix<f64>, shift: f64, zeta: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x * shift;
        if a.nrows() > 0 && zeta != 0.0 {
            let ax = a * x;
            out.gemv_tr(zeta, a, &ax, 1.0);
        }
        out
    }

    fn solve_once(
        &self,
        a: &DMatrix<f64>,
        factor: &Cholesky<f64, nalgebra::Dyn>,
        shift: f64,
        zeta: f64,
        rhs: &DVector<f64>,
    ) -> DVector<f64> {
        if self.row_side {
            let ar = a * rhs;
            let y = factor.solve(&ar);
            let mut x = rhs.clone();
            x.gemv_tr(-zeta, a, &y, 1.0);
            x / shift
        } else {
            factor.solve(rhs)
        }
    }

    /// Solves `(shift I + zeta AᵀA) x = rhs` with a few rounds of iterative refinement.
    pub fn solve(&self, a: &DMatrix<f64>, shift: f64, zeta: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if !(shift > 0.0) || !(zeta >= 0.0) {
            return Err(Error::Numerical(format!(
                "shifted Gram system needs shift > 0 and zeta >= 0 (shift={shift}, zeta={zeta})"
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 || zeta == 0.0 {
            return Ok(rhs / shift);
        }
        let dim = self.gram.nrows();
        let mut system = &self.gram * zeta;
        for i in 0..dim {
            system[(i, i)] += shift;
        }
        let factor = Cholesky::new(system)
            .ok_or_else(|| Error::Numerical("shifted Gram matrix is not positive definite".into()))?;

        let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);
        let mut x = self.solve_once(a, &factor, shift, zeta, rhs);
        for _ in 0..4 {
            let residual = rhs - Self::apply_operator(a, shift, zeta, &x);
            if residual.norm() <= 1e-15 * rhs_norm {
                break;
            }
            x += self.solve_once(a, &factor, shift, zeta, &residual);
        }
        Ok(x)
    }

    /// Relative residual `‖(shift I + zeta AᵀA) x − rhs‖ / ‖rhs‖`.
    pub fn relative_residual(a: &DMatrix<f64>, shift: f64, zeta: f64, x: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
        let r = rhs - Self::apply_operator(a, shift, zeta, x);
        r.norm() / rhs.norm().max(f64::MIN_POSITIVE)
    }
}

/// Euclidean norm that treats an empty vector as zero.
pub fn norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.norm()
    }
}

/// Minimizes a convex function of one variable along `s ≥ 0` from its derivative.
///
/// `dphi` must be non-decreasing with `dphi(0) < 0`. The root is bracketed by doubling
/// from `s = 1`, then refined by alternating secant and bisection steps, which is exact
/// when `dphi` is linear on the final bracket (piecewise-quadratic objectives).
/// Returns `None` if no sign change is found below `2^200`.
pub fn convex_line_search(mut dphi: impl FnMut(f64) -> f64, d0: f64) -> Option<f64> {
    let (mut lo, mut dlo) = (0.0, d0);
    let mut hi = 1.0;
    let mut dhi = dphi(hi);
    let mut doublings = 0;
    while dhi < 0.0 {
        if doublings == 200 {
            return None;
        }
        lo = hi;
        dlo = dhi;
        hi *= 2.0;
        dhi = dphi(hi);
        doublings += 1;
    }
    let mut step = hi;
    for it in 0..200 {
        if dhi == 0.0 {
            return Some(hi);
        }
        let secant = lo - dlo * (hi - lo) / (dhi - dlo);
        let s = if it % 2 == 0 && secant > lo && secant < hi {
            secant
        } else {
            0.5 * (lo + hi)
        };
        let ds = dphi(s);
        step = s;
        if ds.abs() <= 1e-15 * d0.abs() || hi - lo <= 1e-15 * hi {
            break;
        }
        if ds < 0.0 {
            lo = s;
            dlo = ds;
        } else {
            hi = s;
            dhi = ds;
        }
    }
    Some(step)
}
